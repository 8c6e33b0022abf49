//! Acceptance gate: one PASS/FAIL line per criterion, each at its stated
//! tolerance and runtime budget.
//!
//! Criteria 2 and 9 cannot be met by a faithful implementation; they are run
//! unchanged and reported as FAIL, and only an unexpected failure makes this
//! target exit nonzero. The README explains both gaps.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subsidy_search::equilibrium::envelope_max_error;
use subsidy_search::platform::{evaluate_price, optimize_price, platform_sweep};
use subsidy_search::search::plan_value;
use subsidy_search::welfare::{
    comparative_statics_sweep, default_sweep_grid, producer_surplus_identity_check,
    transfer_virtual_value_check, welfare_decomposition_residual, SweepAxis,
};
use subsidy_search::{
    brute_force_consumer_value, check_incentive_compatibility, dsir_order, lower_cutoff, q_pool,
    sigma_sep, simulate_market, solve_reasonable_equilibrium, welfare_report, MarketParams,
    TypeDistribution,
};

/// Criteria with a documented, analysed gap.
const KNOWN_GAPS: &[u32] = &[2, 9];

struct Outcome {
    passed: bool,
    detail: String,
}

fn market(n: usize, c: f64, p: f64) -> MarketParams {
    MarketParams::new(n, c, p, 1.0).expect("admissible market")
}

fn uniform() -> TypeDistribution {
    TypeDistribution::uniform()
}

/// Composite Simpson rule with `m` (even) intervals.
fn simpson(a: f64, b: f64, m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Uniform prior: `1 − ∫_t^1 x dx = (1 + t²)/2`.
fn uniform_q_sep(t: f64, t0: f64, n: usize) -> f64 {
    if t < t0 {
        0.0
    } else {
        ((1.0 + t * t) / 2.0).powi(n as i32 - 1)
    }
}

/// Pooled attention by exhaustive enumeration: every subset of the other
/// firms that lands in the pool, and every ordering of the pool.
fn enumerated_q_pool(x: f64, n: usize) -> f64 {
    let in_pool = 1.0 - x;
    let tau = (1.0 + x) / 2.0;
    let others = n - 1;
    let mut total = 0.0;
    for mask in 0u32..(1 << others) {
        let k = mask.count_ones() as usize;
        let weight = in_pool.powi(k as i32) * (1.0 - in_pool).powi((others - k) as i32);
        // orderings of the k + 1 pooled firms, recorded by the focal firm's position
        let mut order: Vec<usize> = (0..=k).collect();
        let (mut reached, mut count) = (0.0, 0u64);
        permute(&mut order, 0, &mut |perm| {
            let pos = perm
                .iter()
                .position(|&f| f == 0)
                .expect("focal firm present");
            reached += (1.0 - tau).powi(pos as i32);
            count += 1;
        });
        total += weight * reached / count as f64;
    }
    total
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

fn regime_split() -> Outcome {
    let d = uniform();
    let separating = market(10, 0.5, 1.8);
    let sol = solve_reasonable_equilibrium(&separating, &d).unwrap();
    let (t0, _) = lower_cutoff(&separating).unwrap();
    let top = sigma_sep(1.0, t0, &separating, &d).unwrap();
    let pooled = solve_reasonable_equilibrium(&market(10, 0.5, 1.0), &d).unwrap();
    let passed = !sol.pooling_active
        && top <= 0.5
        && pooled.pooling_active
        && pooled.t_upper > 0.5
        && pooled.t_cap.is_some_and(|cap| pooled.t_upper < cap);
    Outcome {
        passed,
        detail: format!(
            "p=1.8: pooling={} sigma_sep(1)={top:.8}; p=1: pooling={} t_bar={:.6} t_cap={:?}",
            sol.pooling_active, pooled.pooling_active, pooled.t_upper, pooled.t_cap
        ),
    }
}

fn cutoff_pin() -> Outcome {
    let sol = solve_reasonable_equilibrium(&market(10, 0.5, 1.0), &uniform()).unwrap();
    Outcome {
        passed: (sol.t_upper - 0.5375).abs() <= 0.005,
        detail: format!("t_bar = {:.10}, target 0.5375 +/- 0.005", sol.t_upper),
    }
}

fn envelope_identity() -> Outcome {
    let d = uniform();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in [0.5, 1.0, 1.8] {
        for c in [0.3, 0.5, 0.8] {
            for n in [2, 5, 10] {
                let sol = solve_reasonable_equilibrium(&market(n, c, p), &d).unwrap();
                worst = worst.max(envelope_max_error(&sol, 200));
                count += 1;
            }
        }
    }
    Outcome {
        passed: worst <= 1e-8,
        detail: format!("max residual {worst:.3e} over {count} markets"),
    }
}

fn monte_carlo_attention() -> Outcome {
    let d = uniform();
    let params = market(10, 0.5, 1.0);
    let sol = solve_reasonable_equilibrium(&params, &d).unwrap();
    let report = simulate_market(&sol, &d, 100_000, 42).unwrap();
    let t0 = sol.t0();
    let pool = if sol.pooling_active {
        q_pool(sol.t_upper, &params, &d).unwrap()
    } else {
        1.0
    };
    let q = |t: f64| {
        if t >= sol.t_upper && sol.pooling_active {
            pool
        } else {
            uniform_q_sep(t, t0, params.n)
        }
    };
    let bins = report.attention_by_type_bin.len();
    let width = 1.0 / bins as f64;
    let mut worst: f64 = 0.0;
    for (i, bin) in report.attention_by_type_bin.iter().enumerate() {
        let (a, b) = (i as f64 * width, (i + 1) as f64 * width);
        // split at the kinks so Simpson sees smooth pieces
        let mut cuts = vec![a];
        cuts.extend([t0, sol.t_upper].into_iter().filter(|&k| k > a && k < b));
        cuts.push(b);
        let oracle = cuts
            .windows(2)
            .map(|w| simpson(w[0], w[1], 200, |t| q(t).min(1.0)))
            .sum::<f64>()
            / width;
        let model_se = (oracle * (1.0 - oracle) / bin.observations.max(1) as f64).sqrt();
        let se = bin.stderr.max(model_se);
        let gap = (bin.empirical - oracle).abs();
        let z = if se > 0.0 {
            gap / se
        } else if gap < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    let closed = 1.0 - (1.0 - 0.5 * (1.0 - t0 * t0)).powi(params.n as i32);
    let m_z = (report.match_rate.mean - closed).abs() / report.match_rate.stderr;
    Outcome {
        passed: worst <= 3.0 && m_z <= 3.0,
        detail: format!(
            "worst bin {worst:.2} SE; match rate {:.5} vs {closed:.5} ({m_z:.2} SE)",
            report.match_rate.mean
        ),
    }
}

fn consumer_policy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..=5);
        let c = rng.random_range(0.05..1.5);
        let u = rng.random_range(0.2..2.0);
        let params = MarketParams::new(n, c, 0.0, u).unwrap();
        let subsidies: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    c
                } else {
                    rng.random_range(0.0..=c)
                }
            })
            .collect();
        let posteriors: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let plan = dsir_order(&subsidies, &posteriors, &params, &mut rng).unwrap();
        let dsir = plan_value(&plan, &subsidies, &posteriors, &params);
        let (best, _) = brute_force_consumer_value(&subsidies, &posteriors, &params).unwrap();
        worst = worst.max((best - dsir).abs());
    }
    Outcome {
        passed: worst <= 1e-12,
        detail: format!("max |DSIR - brute force| = {worst:.3e} over 500 instances"),
    }
}

fn incentive_compatibility() -> Outcome {
    let cases = [
        (uniform(), market(10, 0.5, 1.0)),
        (uniform(), market(10, 0.5, 1.8)),
        (
            TypeDistribution::beta(2.0, 3.0).unwrap(),
            market(6, 0.6, 1.2),
        ),
    ];
    let mut worst = f64::NEG_INFINITY;
    let mut regimes = Vec::new();
    for (d, params) in &cases {
        let sol = solve_reasonable_equilibrium(params, d).unwrap();
        regimes.push(sol.pooling_active);
        worst = worst.max(check_incentive_compatibility(&sol, d, 500, 500));
    }
    let both = regimes.contains(&true) && regimes.contains(&false);
    Outcome {
        passed: worst <= 1e-6 && both,
        detail: format!("max deviation gain {worst:.3e}; pooling regimes {regimes:?}"),
    }
}

fn welfare_identities() -> Outcome {
    let d = uniform();
    let params = market(10, 0.5, 1.0);
    let sol = solve_reasonable_equilibrium(&params, &d).unwrap();
    let r = welfare_report(&sol, &d).unwrap();
    let cost_gap = (r.cost - (params.c * r.q - r.phi / params.p)).abs();
    let w = welfare_decomposition_residual(&sol, &d).unwrap();
    let ps = producer_surplus_identity_check(&sol, &d).unwrap();
    let tr = transfer_virtual_value_check(&sol, &d).unwrap();
    Outcome {
        passed: cost_gap <= 4.0 * f64::EPSILON && w <= 1e-8 && ps <= 1e-6 && tr <= 1e-6,
        detail: format!("C gap {cost_gap:.1e}; W {w:.1e}; PS {ps:.1e}; transfers {tr:.1e}"),
    }
}

fn comparative_statics() -> Outcome {
    let d = uniform();
    let base = market(10, 0.5, 1.0);
    let mut failures = Vec::new();
    let mut per_firm_q = String::new();
    for axis in [SweepAxis::Price, SweepAxis::Cost, SweepAxis::Firms] {
        let grid = default_sweep_grid(&base, axis);
        let sweep = comparative_statics_sweep(&base, &d, axis, &grid).unwrap();
        let claims: &[&str] = match axis {
            SweepAxis::Firms => &["Q_total", "m", "CS", "PS/n"],
            _ => &["Q", "m", "CS"],
        };
        if axis != SweepAxis::Firms && grid.len() != 5 {
            failures.push(format!("{axis}: {}-point grid", grid.len()));
        }
        for name in claims {
            let v = sweep.verdict(name).expect("quantity reported");
            if v.holds != Some(true) {
                failures.push(format!("{axis}: {name} {:?}", v.expected));
            }
        }
        if axis == SweepAxis::Firms {
            let q = &sweep.verdict("Q").expect("Q reported").observed;
            per_firm_q = format!("per-firm Q from {:.4} to {:.4}", q[0], q[q.len() - 1]);
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("all claimed directions hold; {per_firm_q}")
        } else {
            format!("violations: {}", failures.join(", "))
        },
    }
}

fn platform_excess_search() -> Outcome {
    let d = uniform();
    let base = market(10, 0.5, 1.0);
    let opt = optimize_price(&base, &d, None, 64).unwrap();
    let sweep = platform_sweep(&base, &d, Some(opt.bracket), 100, 64).unwrap();
    let dominates = sweep.revenue.iter().all(|&r| opt.revenue >= r - 1e-12);
    let mut decomposition: f64 = 0.0;
    for &p in &sweep.prices {
        let pt = evaluate_price(p, &base, &d).unwrap();
        let n = base.n as f64;
        let gap = (n * (pt.sep_branch + pt.pool_branch) - n * p * pt.demand).abs();
        decomposition = decomposition.max(gap);
    }
    let passed = opt.interior
        && dominates
        && opt.t_bar_at_star < 1.0
        && opt.t_bar_at_star < opt.t_psi
        && (opt.t_psi - 0.5).abs() < 1e-9
        && decomposition <= 1e-6;
    Outcome {
        passed,
        detail: format!(
            "p*={:.4} in ({:.0e}, {:.1}) interior={}; R(p*)>=sweep {dominates}; t_bar(p*)={:.4}; t_psi={:.4}; decomposition {decomposition:.1e}",
            opt.p_star, opt.bracket.0, opt.bracket.1, opt.interior, opt.t_bar_at_star, opt.t_psi
        ),
    }
}

fn q_pool_enumeration() -> Outcome {
    let d = uniform();
    let mut worst: f64 = 0.0;
    for n in 1..=6 {
        let params = market(n, 0.5, 1.0);
        for k in 0..40 {
            let x = k as f64 / 40.0;
            let closed = q_pool(x, &params, &d).unwrap();
            worst = worst.max((closed - enumerated_q_pool(x, n)).abs());
        }
    }
    Outcome {
        passed: worst <= 1e-12,
        detail: format!("max gap {worst:.3e} over n <= 6, 40 cutoffs in [0, 1)"),
    }
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (
            1,
            "regime split at p = 1.8 and p = 1",
            Duration::from_secs(1),
            regime_split,
        ),
        (2, "pooling cutoff pin", Duration::from_secs(1), cutoff_pin),
        (
            3,
            "envelope identity on a 3x3x3 grid",
            Duration::from_secs(10),
            envelope_identity,
        ),
        (
            4,
            "closed-form vs Monte Carlo attention",
            Duration::from_secs(60),
            monte_carlo_attention,
        ),
        (
            5,
            "consumer-policy oracle",
            Duration::from_secs(30),
            consumer_policy_oracle,
        ),
        (
            6,
            "incentive compatibility",
            Duration::from_secs(30),
            incentive_compatibility,
        ),
        (
            7,
            "welfare identities",
            Duration::from_secs(5),
            welfare_identities,
        ),
        (
            8,
            "comparative statics",
            Duration::from_secs(60),
            comparative_statics,
        ),
        (
            9,
            "platform excess search",
            Duration::from_secs(120),
            platform_excess_search,
        ),
        (
            10,
            "q_pool enumeration oracle",
            Duration::from_secs(10),
            q_pool_enumeration,
        ),
    ];
    let mut unexpected = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let passed = outcome.passed && elapsed <= budget;
        let tag = if passed { "PASS" } else { "FAIL" };
        let note = if !passed && KNOWN_GAPS.contains(&id) {
            " [known gap]"
        } else {
            ""
        };
        println!(
            "criterion {id:>2} {tag}{note}: {name}: {} ({:.2}s, budget {}s)",
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed && !KNOWN_GAPS.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
