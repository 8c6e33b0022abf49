//! The invariant suite behind the `verify` command.
//!
//! Each check records the measured quantity, its tolerance and a verdict; the
//! suite passes only if every check does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{q_pool_at, q_sep_at, MarketParams};
use crate::dist::TypeDistribution;
use crate::equilibrium::{
    check_incentive_compatibility, envelope_max_error, lower_cutoff, solve_reasonable_equilibrium,
    EquilibriumSolution, ROOT_TOLERANCE,
};
use crate::error::Result;
use crate::platform::evaluate_price;
use crate::quadrature;
use crate::search::{brute_force_consumer_value, dsir_order, plan_value, simulate_market};
use crate::welfare::{
    comparative_statics_sweep, default_sweep_grid, producer_surplus_identity_check,
    transfer_virtual_value_check, welfare_decomposition_residual, welfare_report, SweepAxis,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured residual or violation; 0/1 for boolean checks.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn within(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: String::new(),
        }
    }

    fn holds(name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub replications: u64,
    /// Random consumer-policy instances compared against brute force.
    pub policy_instances: usize,
    /// Type and deviation grid size for the incentive check.
    pub ic_grid: usize,
    /// Run the comparative-statics sweeps around the base market.
    pub sweeps: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            replications: 100_000,
            policy_instances: 500,
            ic_grid: 500,
            sweeps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub params: MarketParams,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run_verification(
    params: &MarketParams,
    d: &TypeDistribution,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let sol = solve_reasonable_equilibrium(params, d)?;
    let mut checks = Vec::new();
    checks.extend(distribution_checks(d));
    checks.extend(attention_checks(&sol, d));
    checks.extend(equilibrium_checks(&sol, d, opts));
    checks.extend(search_checks(&sol, d, opts)?);
    checks.extend(welfare_checks(&sol, d)?);
    if params.p > 0.0 {
        let pt = evaluate_price(params.p, params, d)?;
        checks.push(Check::within(
            "platform: phi/p = D",
            pt.phi_demand_residual,
            1e-8,
        ));
        let gap = (pt.sep_branch + pt.pool_branch - pt.revenue / params.n as f64).abs();
        checks.push(Check::within(
            "platform: decomposition sums to R/n",
            gap,
            1e-6,
        ));
    }
    if opts.sweeps {
        checks.extend(sweep_checks(params, d)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport {
        params: *params,
        passed,
        checks,
    })
}

fn unit_grid(k: usize) -> impl Iterator<Item = f64> {
    (0..k).map(move |i| i as f64 / (k - 1) as f64)
}

fn distribution_checks(d: &TypeDistribution) -> Vec<Check> {
    let mut bounds_ok = true;
    let mut pm_monotone = true;
    let mut tm_monotone = true;
    let (mut last_pm, mut last_tm) = (f64::INFINITY, 0.0);
    for t in unit_grid(100) {
        let pm = d.partial_moment_at(t);
        let tail = d.survival_at(t);
        bounds_ok &= pm >= 0.0 && pm <= tail + 1e-15 && tail <= 1.0;
        pm_monotone &= pm <= last_pm + 1e-15;
        last_pm = pm;
        if let Ok(tm) = d.truncated_mean_at(t) {
            tm_monotone &= tm >= last_tm - 1e-12 && tm >= t && tm <= 1.0;
            last_tm = tm;
        }
    }
    let route_gap = unit_grid(50)
        .map(|t| {
            (d.partial_moment_at(t) - d.partial_moment_by_quadrature(t).unwrap_or(f64::NAN)).abs()
        })
        .fold(0.0, f64::max);
    vec![
        Check::holds("dist: 0 <= PM <= 1 - F <= 1", bounds_ok, ""),
        Check::holds("dist: partial moment nonincreasing", pm_monotone, ""),
        Check::holds(
            "dist: truncated mean nondecreasing in [t, 1]",
            tm_monotone,
            "",
        ),
        Check::within(
            "dist: closed form vs quadrature",
            route_gap,
            10.0 * d.quadrature_tolerance(),
        ),
    ]
}

fn attention_checks(sol: &EquilibriumSolution, d: &TypeDistribution) -> Vec<Check> {
    let n = sol.params.n;
    let t0 = sol.t0();
    let grid: Vec<f64> = unit_grid(200).collect();
    let q: Vec<f64> = grid.iter().map(|&t| q_sep_at(t, t0, n, d)).collect();
    let sep_ok = grid.windows(2).zip(q.windows(2)).all(|(t, w)| {
        if n >= 2 && t[0] > t0 && t[1] < 1.0 {
            w[1] > w[0]
        } else {
            w[1] >= w[0]
        }
    });
    let fewer = grid
        .iter()
        .filter(|&&t| t > t0 && t < 1.0)
        .all(|&t| q_sep_at(t, t0, n + 1, d) < q_sep_at(t, t0, n, d));
    let pool_grid: Vec<f64> = (0..200)
        .map(|k| k as f64 / 200.0)
        .filter(|&x| d.survival_at(x) > 1e-9)
        .collect();
    let pool: Vec<f64> = pool_grid
        .iter()
        .map(|&x| q_pool_at(x, n, d).unwrap_or(f64::NAN))
        .collect();
    let pool_ok = n == 1 || pool.windows(2).all(|w| w[1] > w[0]);
    let dominance = pool_grid
        .iter()
        .step_by(10)
        .zip(pool.iter().step_by(10))
        .all(|(&x, &qp)| {
            let avg =
                quadrature::composite(x, 1.0, 16, 20, |t| q_sep_at(t, 0.0, n, d) * d.density_at(t))
                    / d.survival_at(x);
            qp >= avg - 1e-12 && (n == 1 || qp < 1.0)
        });
    vec![
        Check::holds("attention: q_sep monotone in type", sep_ok, ""),
        Check::holds("attention: q_sep decreasing in n", fewer, ""),
        Check::holds("attention: q_pool strictly increasing", pool_ok, ""),
        Check::holds(
            "attention: q_pool above pooled average of q_sep",
            dominance,
            "",
        ),
    ]
}

/// Largest `|p d/dt[σ q] − t q'|` over interior points, by centered differences.
fn ode_residual(sol: &EquilibriumSolution) -> f64 {
    let (lo, hi) = sol.separating_range();
    let h = 1e-4;
    if sol.params.n < 2 || sol.params.p == 0.0 || hi - lo <= 4.0 * h {
        return 0.0;
    }
    let p = sol.params.p;
    let g = |t: f64| sol.sigma(t) * sol.attention(t);
    (1..100)
        .map(|k| {
            let t = lo + 2.0 * h + (hi - lo - 4.0 * h) * k as f64 / 100.0;
            let dg = (g(t + h) - g(t - h)) / (2.0 * h);
            let dq = (sol.attention(t + h) - sol.attention(t - h)) / (2.0 * h);
            (p * dg - t * dq).abs()
        })
        .fold(0.0, f64::max)
}

fn equilibrium_checks(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
    opts: &VerifyOptions,
) -> Vec<Check> {
    let params = sol.params;
    let mut out = vec![
        Check::within(
            "equilibrium: envelope identity",
            envelope_max_error(sol, 200),
            1e-8,
        ),
        Check::within("equilibrium: ODE consistency", ode_residual(sol), 1e-6),
        Check::within(
            "equilibrium: incentive compatibility",
            check_incentive_compatibility(sol, d, opts.ic_grid, opts.ic_grid).max(0.0),
            1e-6,
        ),
        Check::within(
            "equilibrium: boundary indifference",
            sol.diagnostics["boundary_residual"],
            ROOT_TOLERANCE,
        ),
        Check::within(
            "equilibrium: grid interpolation",
            sol.diagnostics["interpolation_max_error"],
            1e-8,
        ),
    ];
    if params.p > 0.0 {
        let grid = &sol.schedule.grid;
        let increasing = grid
            .windows(2)
            .all(|w| w[1][0] > w[0][0] && (params.n < 2 || w[1][1] > w[0][1]));
        let corridor = grid
            .iter()
            .all(|g| g[1] >= 0.0 && g[1] <= params.c.min(g[0] / params.p) + 1e-12);
        let anchor = grid
            .first()
            .map_or(0.0, |g| (g[1] - sol.t0() / params.p).abs());
        out.push(Check::holds(
            "equilibrium: schedule increasing",
            increasing,
            "",
        ));
        out.push(Check::holds(
            "equilibrium: feasibility corridor",
            corridor,
            "",
        ));
        out.push(Check::within(
            "equilibrium: sigma(t0) = t0/p",
            anchor,
            1e-12,
        ));
        if sol.pooling_active && sol.t_upper > sol.t0() {
            let pc = params.p * params.c;
            let inside = sol
                .t_cap
                .is_some_and(|tc| sol.t_upper > pc && sol.t_upper < tc);
            out.push(Check::holds(
                "equilibrium: t_upper in (pc, t_cap)",
                inside,
                format!("t_upper = {}", sol.t_upper),
            ));
        }
        let positive = unit_grid(200)
            .filter(|&t| t > sol.t0() + 1e-9)
            .all(|t| sol.payoff(t) > 0.0);
        out.push(Check::holds(
            "equilibrium: only t0 earns zero profit",
            positive,
            "",
        ));
        let shifted = |dp: f64, dc: f64| {
            MarketParams::new(params.n, params.c + dc, params.p + dp, params.u)
                .and_then(|m| lower_cutoff(&m))
                .map(|x| x.0)
        };
        let t = sol.t_lower;
        let monotone = match (shifted(0.01, 0.0), shifted(0.0, 0.01)) {
            (Ok(tp), Ok(tc)) => tp > t && tc > t,
            _ => true,
        };
        out.push(Check::holds(
            "equilibrium: t_lower increasing in p and c",
            monotone,
            "",
        ));
    }
    out
}

fn search_checks(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
    opts: &VerifyOptions,
) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let report = simulate_market(sol, d, opts.replications, opts.seed)?;
    let worst = report
        .attention_by_type_bin
        .iter()
        .map(|b| {
            let gap = (b.empirical - b.closed_form).abs();
            // Bins near t = 1 can show zero sample variance; fall back to the model's binomial SE.
            let model_se =
                (b.closed_form * (1.0 - b.closed_form) / b.observations.max(1) as f64).sqrt();
            let se = b.stderr.max(model_se);
            if se > 0.0 {
                gap / se
            } else if gap < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    out.push(Check::within(
        "search: attention by type bin (SE units)",
        worst,
        3.0,
    ));
    let m_gap = (report.match_rate.mean - report.match_rate_closed_form).abs()
        / report.match_rate.stderr.max(1e-300);
    out.push(Check::within("search: match rate (SE units)", m_gap, 3.0));
    let bins: Vec<_> = report
        .attention_by_subsidy_bin
        .iter()
        .filter(|b| b.observations > 0)
        .collect();
    let sorted = bins
        .windows(2)
        .all(|w| w[1].empirical + 3.0 * (w[0].stderr + w[1].stderr) >= w[0].empirical);
    out.push(Check::holds(
        "search: attention nondecreasing in subsidy",
        sorted,
        "",
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..opts.policy_instances {
        let n = rng.random_range(1..=5);
        let c = rng.random_range(0.05..2.0);
        let m = MarketParams {
            n,
            c,
            p: 1.0,
            u: rng.random_range(0.2..2.0),
        };
        let s: Vec<f64> = (0..n).map(|_| c * rng.random::<f64>()).collect();
        let tau: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let plan = dsir_order(&s, &tau, &m, &mut rng)?;
        let (best, _) = brute_force_consumer_value(&s, &tau, &m)?;
        worst_gap = worst_gap.max((plan_value(&plan, &s, &tau, &m) - best).abs());
    }
    out.push(Check::within(
        "search: DSIR attains the brute-force optimum",
        worst_gap,
        1e-12,
    ));
    Ok(out)
}

fn welfare_checks(sol: &EquilibriumSolution, d: &TypeDistribution) -> Result<Vec<Check>> {
    let r = welfare_report(sol, d)?;
    let p = sol.params.p;
    let identity = if p > 0.0 {
        (r.cost - (sol.params.c * r.q - r.phi / p)).abs()
    } else {
        0.0
    };
    Ok(vec![
        Check::within("welfare: C = cQ - phi/p", identity, 0.0),
        Check::within(
            "welfare: W decomposition",
            welfare_decomposition_residual(sol, d)?,
            1e-8,
        ),
        Check::within(
            "welfare: producer surplus identity",
            producer_surplus_identity_check(sol, d)?,
            1e-6,
        ),
        Check::within(
            "welfare: transfer virtual-value identity",
            transfer_virtual_value_check(sol, d)?,
            1e-6,
        ),
        Check::holds(
            "welfare: 0 <= m, Q <= 1 and PS >= 0",
            (0.0..=1.0).contains(&r.m) && (0.0..=1.0).contains(&r.q) && r.ps >= 0.0,
            "",
        ),
    ])
}

fn sweep_checks(params: &MarketParams, d: &TypeDistribution) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for axis in [SweepAxis::Price, SweepAxis::Cost, SweepAxis::Firms] {
        let grid = default_sweep_grid(params, axis);
        if grid.len() < 2 {
            continue;
        }
        let sweep = comparative_statics_sweep(params, d, axis, &grid)?;
        for v in sweep.verdicts.iter().filter(|v| v.holds.is_some()) {
            out.push(Check::holds(
                &format!(
                    "sweep {axis}: {} {:?}",
                    v.quantity,
                    v.expected.expect("claimed")
                ),
                v.holds == Some(true),
                format!("{:?}", v.observed),
            ));
        }
        let t_upper: Vec<f64> = sweep
            .points
            .iter()
            .filter_map(|p| p.report.map(|r| r.t_upper))
            .collect();
        match axis {
            SweepAxis::Price => out.push(Check::holds(
                "sweep price: t_upper nondecreasing",
                t_upper.windows(2).all(|w| w[1] >= w[0]),
                format!("{t_upper:?}"),
            )),
            SweepAxis::Firms => out.push(Check::holds(
                "sweep firms: t_upper nonincreasing",
                t_upper.windows(2).all(|w| w[1] <= w[0]),
                format!("{t_upper:?}"),
            )),
            SweepAxis::Cost => {}
        }
    }
    Ok(out)
}
