//! Consumer search: the descending-subsidy index rule (DSIR), an exhaustive
//! policy oracle for small markets, and a Monte Carlo market simulator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attention::{reservation_index, MarketParams};
use crate::dist::TypeDistribution;
use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::quadrature;

/// Largest market the brute-force oracle enumerates.
pub const BRUTE_FORCE_MAX_FIRMS: usize = 8;
/// Equal-width type bins used for attention estimates.
pub const TYPE_BINS: usize = 50;
/// Equal-width subsidy bins on `[0, c]`.
pub const SUBSIDY_BINS: usize = 20;
/// Replications per parallel work unit; fixed so results do not depend on
/// the thread count.
const CHUNK: u64 = 1024;

/// One consumer's realized search path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Firms in the order they were inspected.
    pub inspected: Vec<usize>,
    pub matched_firm: Option<usize>,
    /// `Σ (c − s_j)` over inspected firms.
    pub consumer_net_cost: f64,
    /// `(j, p s_j)` for each inspected firm.
    pub transfers_paid: Vec<(usize, f64)>,
}

/// Inspection plan under the DSIR: firms with a positive index, sorted by
/// index in descending order, ties broken uniformly at random.
pub fn dsir_order<R: Rng + ?Sized>(
    subsidies: &[f64],
    posteriors: &[f64],
    params: &MarketParams,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_lengths(subsidies, posteriors)?;
    let mut firms: Vec<usize> = (0..subsidies.len()).collect();
    firms.shuffle(rng);
    let index = |j: usize| reservation_index(posteriors[j], params.c - subsidies[j], params.u);
    // stable sort keeps the shuffled order among equal indices
    firms.sort_by_key(|&j| std::cmp::Reverse(index(j)));
    firms.retain(|&j| index(j).worth_inspecting());
    Ok(firms)
}

/// Exact expected utility of inspecting `plan` in order until the first match:
/// `Σ_j Π_{i before j} (1 − τ_i) · (u τ_j − (c − s_j))`.
pub fn plan_value(
    plan: &[usize],
    subsidies: &[f64],
    posteriors: &[f64],
    params: &MarketParams,
) -> f64 {
    let mut survive = 1.0;
    let mut value = 0.0;
    for &j in plan {
        value += survive * (params.u * posteriors[j] - (params.c - subsidies[j]));
        survive *= 1.0 - posteriors[j];
    }
    value
}

/// Best expected utility over every ordered inspection plan (all permutations
/// with all stopping points), together with a maximizing plan.
pub fn brute_force_consumer_value(
    subsidies: &[f64],
    posteriors: &[f64],
    params: &MarketParams,
) -> Result<(f64, Vec<usize>)> {
    check_lengths(subsidies, posteriors)?;
    let n = subsidies.len();
    if n > BRUTE_FORCE_MAX_FIRMS {
        return Err(Error::TooManyFirms {
            n,
            max: BRUTE_FORCE_MAX_FIRMS,
        });
    }
    struct Search<'a> {
        s: &'a [f64],
        tau: &'a [f64],
        params: &'a MarketParams,
        used: Vec<bool>,
        prefix: Vec<usize>,
        best: (f64, Vec<usize>),
    }
    impl Search<'_> {
        fn visit(&mut self, value: f64, survive: f64) {
            if value > self.best.0 {
                self.best = (value, self.prefix.clone());
            }
            for j in 0..self.s.len() {
                if self.used[j] {
                    continue;
                }
                let gain = survive * (self.params.u * self.tau[j] - (self.params.c - self.s[j]));
                self.used[j] = true;
                self.prefix.push(j);
                self.visit(value + gain, survive * (1.0 - self.tau[j]));
                self.prefix.pop();
                self.used[j] = false;
            }
        }
    }
    let mut search = Search {
        s: subsidies,
        tau: posteriors,
        params,
        used: vec![false; n],
        prefix: Vec::with_capacity(n),
        best: (0.0, Vec::new()),
    };
    search.visit(0.0, 1.0);
    Ok(search.best)
}

/// Follows `plan` until the first firm whose product matches.
pub fn run_search(
    plan: &[usize],
    matches: &[bool],
    subsidies: &[f64],
    params: &MarketParams,
) -> SearchOutcome {
    let mut outcome = SearchOutcome {
        inspected: Vec::with_capacity(plan.len()),
        matched_firm: None,
        consumer_net_cost: 0.0,
        transfers_paid: Vec::with_capacity(plan.len()),
    };
    for &j in plan {
        outcome.inspected.push(j);
        outcome.consumer_net_cost += params.c - subsidies[j];
        outcome.transfers_paid.push((j, params.p * subsidies[j]));
        if matches[j] {
            outcome.matched_firm = Some(j);
            break;
        }
    }
    outcome
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeBinEstimate {
    pub bin_center: f64,
    /// Firm draws that landed in the bin.
    pub observations: u64,
    pub empirical: f64,
    pub stderr: f64,
    /// `E[q*(t) | t in bin]` from the closed forms.
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsidyBinEstimate {
    pub bin_center: f64,
    pub observations: u64,
    pub empirical: f64,
    pub stderr: f64,
}

/// Monte Carlo summary of the equilibrium market.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub replications: u64,
    pub rng_seed: u64,
    pub attention_by_type_bin: Vec<TypeBinEstimate>,
    pub attention_by_subsidy_bin: Vec<SubsidyBinEstimate>,
    pub match_rate: Estimate,
    /// `1 − (1 − ∫_{t0}^1 x dF)^n`.
    pub match_rate_closed_form: f64,
    pub mean_consumer_cost: Estimate,
    pub mean_transfer_per_firm: Estimate,
}

impl SimulationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Attention by type bin with columns `bin_center, empirical, closed_form, stderr`.
    pub fn attention_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_center", "empirical", "closed_form", "stderr"])?;
        for b in &self.attention_by_type_bin {
            w.serialize((b.bin_center, b.empirical, b.closed_form, b.stderr))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    type_seen: Vec<u64>,
    type_hits: Vec<u64>,
    sub_seen: Vec<u64>,
    sub_hits: Vec<u64>,
    matches: u64,
    cost: f64,
    cost_sq: f64,
    transfer: f64,
    transfer_sq: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            type_seen: vec![0; TYPE_BINS],
            type_hits: vec![0; TYPE_BINS],
            sub_seen: vec![0; SUBSIDY_BINS],
            sub_hits: vec![0; SUBSIDY_BINS],
            ..Self::default()
        }
    }

    fn merge(mut self, other: &Tally) -> Self {
        for (a, b) in [
            (&mut self.type_seen, &other.type_seen),
            (&mut self.type_hits, &other.type_hits),
            (&mut self.sub_seen, &other.sub_seen),
            (&mut self.sub_hits, &other.sub_hits),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.matches += other.matches;
        self.cost += other.cost;
        self.cost_sq += other.cost_sq;
        self.transfer += other.transfer;
        self.transfer_sq += other.transfer_sq;
        self
    }
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// One market draw from the replication's own RNG stream.
fn replicate(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
    seed: u64,
    rep: u64,
    tally: &mut Tally,
) {
    let params = &sol.params;
    let n = params.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    let types: Vec<f64> = (0..n).map(|_| d.quantile(rng.random())).collect();
    let matches: Vec<bool> = types.iter().map(|&t| rng.random::<f64>() < t).collect();
    let subsidies: Vec<f64> = types.iter().map(|&t| sol.schedule.interpolate(t)).collect();
    let posteriors: Vec<f64> = subsidies
        .iter()
        .map(|&s| sol.schedule.posterior(s, d))
        .collect();
    let plan = dsir_order(&subsidies, &posteriors, params, &mut rng).expect("equal lengths");
    let outcome = run_search(&plan, &matches, &subsidies, params);
    if let Some(m) = outcome.matched_firm {
        assert_eq!(
            outcome.inspected.last(),
            Some(&m),
            "inspection continued after a match"
        );
    }

    let mut seen = vec![false; n];
    for &j in &outcome.inspected {
        seen[j] = true;
    }
    for j in 0..n {
        let tb = bin_of(types[j], 0.0, 1.0, TYPE_BINS);
        let sb = bin_of(subsidies[j], 0.0, params.c, SUBSIDY_BINS);
        tally.type_seen[tb] += 1;
        tally.sub_seen[sb] += 1;
        if seen[j] {
            tally.type_hits[tb] += 1;
            tally.sub_hits[sb] += 1;
        }
    }
    tally.matches += u64::from(outcome.matched_firm.is_some());
    let transfer = outcome.transfers_paid.iter().map(|t| t.1).sum::<f64>() / n as f64;
    tally.cost += outcome.consumer_net_cost;
    tally.cost_sq += outcome.consumer_net_cost * outcome.consumer_net_cost;
    tally.transfer += transfer;
    tally.transfer_sq += transfer * transfer;
}

/// Bin average of the closed-form attention, `∫_bin q* dF / ∫_bin dF`.
fn closed_form_bin(sol: &EquilibriumSolution, d: &TypeDistribution, lo: f64, hi: f64) -> f64 {
    let mut knots = vec![lo];
    let jumps = [sol.t0(), if sol.pooling_active { sol.t_upper } else { 1.0 }];
    knots.extend(jumps.iter().copied().filter(|&x| x > lo && x < hi));
    if let crate::dist::DistKind::Piecewise { knots: k } = d.kind() {
        knots.extend(k.iter().map(|k| k[0]).filter(|&x| x > lo && x < hi));
    }
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    let mass = d.cdf_at(hi) - d.cdf_at(lo);
    let total: f64 = knots
        .windows(2)
        .map(|w| quadrature::composite(w[0], w[1], 4, 20, |t| sol.attention(t) * d.density_at(t)))
        .sum();
    total / mass
}

fn bernoulli(hits: u64, seen: u64) -> (f64, f64) {
    if seen == 0 {
        return (0.0, 0.0);
    }
    let f = hits as f64 / seen as f64;
    (f, (f * (1.0 - f) / seen as f64).sqrt())
}

fn sample(sum: f64, sum_sq: f64, count: u64) -> Estimate {
    let k = count as f64;
    let mean = sum / k;
    let var = if count > 1 {
        ((sum_sq - k * mean * mean) / (k - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        stderr: (var / k).sqrt(),
    }
}

/// Simulates `replications` independent markets under `sol`.
///
/// Replication `r` draws from the ChaCha stream `(seed, r)`, and partial sums
/// are reduced in replication order, so the report is bit-identical for any
/// thread count.
pub fn simulate_market(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
    replications: u64,
    seed: u64,
) -> Result<SimulationReport> {
    if replications == 0 {
        return Err(Error::InvalidParams(
            "replications must be at least 1".into(),
        ));
    }
    let chunks = replications.div_ceil(CHUNK);
    let partials: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = Tally::new();
            for rep in c * CHUNK..((c + 1) * CHUNK).min(replications) {
                replicate(sol, d, seed, rep, &mut tally);
            }
            tally
        })
        .collect();
    let tally = partials.iter().fold(Tally::new(), Tally::merge);

    let width = 1.0 / TYPE_BINS as f64;
    let attention_by_type_bin = (0..TYPE_BINS)
        .map(|b| {
            let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
            let (empirical, stderr) = bernoulli(tally.type_hits[b], tally.type_seen[b]);
            TypeBinEstimate {
                bin_center: 0.5 * (lo + hi),
                observations: tally.type_seen[b],
                empirical,
                stderr,
                closed_form: closed_form_bin(sol, d, lo, hi),
            }
        })
        .collect();
    let sub_width = sol.params.c / SUBSIDY_BINS as f64;
    let attention_by_subsidy_bin = (0..SUBSIDY_BINS)
        .map(|b| {
            let (empirical, stderr) = bernoulli(tally.sub_hits[b], tally.sub_seen[b]);
            SubsidyBinEstimate {
                bin_center: (b as f64 + 0.5) * sub_width,
                observations: tally.sub_seen[b],
                empirical,
                stderr,
            }
        })
        .collect();
    let (rate, rate_se) = bernoulli(tally.matches, replications);
    let participation = d.partial_moment_at(sol.t0());
    Ok(SimulationReport {
        replications,
        rng_seed: seed,
        attention_by_type_bin,
        attention_by_subsidy_bin,
        match_rate: Estimate {
            mean: rate,
            stderr: rate_se,
        },
        match_rate_closed_form: 1.0 - (1.0 - participation).powi(sol.params.n as i32),
        mean_consumer_cost: sample(tally.cost, tally.cost_sq, replications),
        mean_transfer_per_firm: sample(tally.transfer, tally.transfer_sq, replications),
    })
}

fn check_lengths(subsidies: &[f64], posteriors: &[f64]) -> Result<()> {
    if subsidies.len() != posteriors.len() {
        return Err(Error::Mismatch(format!(
            "{} subsidies but {} posteriors",
            subsidies.len(),
            posteriors.len()
        )));
    }
    Ok(())
}
