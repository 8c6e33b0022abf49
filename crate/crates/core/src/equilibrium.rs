//! Step–increasing–step (SIS) equilibria.
//!
//! Types below the participation cutoff `t0` offer nothing. Types in
//! `[t0, t1)` reveal themselves through the separating schedule
//!
//! ```text
//! σ_sep(t; t0) = t/p − I(t) / (p · q_sep(t; t0)),   I(t) = ∫_{t0}^t q_sep(x; t0) dx,
//! ```
//!
//! and types in `[t1, 1]` pool at the cap `c`. The pooling cutoff `t1` solves
//! the boundary indifference condition `H(t1) = 0` with
//! `H(x) = q_pool(x)(x − pc) − I(x)`. The reasonable equilibrium anchors the
//! family at the lowest admissible cutoff `t̲ = pc/(1 + up)`.
//!
//! The cumulative integral `I` is cached on a uniform table, so evaluating
//! `σ_sep` at any point costs one Gauss–Legendre panel.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::attention::{q_pool_at, q_sep_at, MarketParams};
use crate::dist::{TypeDistribution, TRUNCATION_FLOOR};
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::quadrature;
use crate::roots::bisect;

/// Cells in the cumulative-attention table on `[t0, 1]`.
pub const BRANCH_CELLS: usize = 2048;
/// Points on the stored `(t, σ(t))` grid over `[t0, t1]`.
pub const SCHEDULE_POINTS: usize = 2048;
/// Weight of uniform spacing in the otherwise cosine-clustered schedule grid.
const GRID_UNIFORM_SHARE: f64 = 0.01;
/// Bracket width at which the pooling-cutoff bisection stops.
pub const ROOT_TOLERANCE: f64 = 1e-10;
/// Offset of the lower end of the `H` bracket above `pc`.
const BRACKET_OFFSET: f64 = 1e-9;
/// Grid sizes used for the diagnostics attached by the solver.
const DIAGNOSTIC_POINTS: usize = 200;

/// The separating branch anchored at `t0`, with `I(t)` cached cell by cell.
#[derive(Debug, Clone)]
pub(crate) struct SeparatingBranch {
    t0: f64,
    p: f64,
    n: usize,
    dist: TypeDistribution,
    h: f64,
    cumulative: Vec<f64>,
}

impl SeparatingBranch {
    pub(crate) fn new(t0: f64, params: &MarketParams, dist: &TypeDistribution) -> Self {
        let h = (1.0 - t0) / BRANCH_CELLS as f64;
        let mut cumulative = Vec::with_capacity(BRANCH_CELLS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..BRANCH_CELLS {
            let a = t0 + k as f64 * h;
            let b = if k + 1 == BRANCH_CELLS { 1.0 } else { a + h };
            acc += quadrature::panel(a, b, |x| q_sep_at(x, t0, params.n, dist));
            cumulative.push(acc);
        }
        Self {
            t0,
            p: params.p,
            n: params.n,
            dist: dist.clone(),
            h,
            cumulative,
        }
    }

    pub(crate) fn q(&self, t: f64) -> f64 {
        q_sep_at(t, self.t0, self.n, &self.dist)
    }

    /// `I(t) = ∫_{t0}^t q_sep`.
    pub(crate) fn integral(&self, t: f64) -> f64 {
        if t <= self.t0 || self.h <= 0.0 {
            return 0.0;
        }
        let t = t.min(1.0);
        let k = (((t - self.t0) / self.h) as usize).min(BRANCH_CELLS - 1);
        let a = self.t0 + k as f64 * self.h;
        self.cumulative[k] + quadrature::panel(a, t, |x| self.q(x))
    }

    pub(crate) fn sigma(&self, t: f64) -> f64 {
        if self.n == 1 || t <= self.t0 {
            return self.t0 / self.p;
        }
        (t - self.integral(t) / self.q(t)) / self.p
    }

    /// `H(x) = q_pool(x)(x − pc) − I(x)`.
    pub(crate) fn gap(&self, x: f64, pc: f64) -> Result<f64> {
        Ok(q_pool_at(x, self.n, &self.dist)? * (x - pc) - self.integral(x))
    }
}

/// The equilibrium subsidy policy `σ*(·; t0)`.
#[derive(Debug, Clone, Serialize)]
pub struct SubsidySchedule {
    /// Participation cutoff; types below offer no subsidy.
    pub t0: f64,
    /// Pooling cutoff; types at or above it offer the cap when `t1 < 1`.
    pub t1: f64,
    /// `(t, σ(t))` samples of the separating branch on `[t0, t1]`.
    pub grid: Vec<[f64; 2]>,
    /// The cap, equal to the inspection cost `c`.
    pub cap: f64,
    #[serde(skip)]
    interp: Option<MonotoneCubic>,
}

impl SubsidySchedule {
    fn new(t0: f64, t1: f64, cap: f64, grid: Vec<[f64; 2]>) -> Self {
        let interp = (grid.len() >= 2).then(|| {
            let (xs, ys) = grid.iter().map(|g| (g[0], g[1])).unzip();
            MonotoneCubic::new(xs, ys)
        });
        Self {
            t0,
            t1,
            grid,
            cap,
            interp,
        }
    }

    pub fn pooling_active(&self) -> bool {
        self.t1 < 1.0
    }

    fn pooled(&self, t: f64) -> bool {
        self.pooling_active() && t >= self.t1
    }

    /// `σ*(t)` from the stored grid (monotone cubic between grid points).
    pub fn interpolate(&self, t: f64) -> f64 {
        if t < self.t0 {
            0.0
        } else if self.pooled(t) {
            self.cap
        } else if let Some(m) = &self.interp {
            m.eval(t)
        } else {
            self.grid.first().map_or(self.cap, |g| g[1])
        }
    }

    /// The type on the separating branch that offers `s`, if any.
    pub fn invert(&self, s: f64) -> Option<f64> {
        let m = self.interp.as_ref()?;
        let ys = m.ys();
        let (lo, hi) = (ys[0], ys[ys.len() - 1]);
        if !(hi > lo) || s < lo || s > hi {
            return None;
        }
        let xs = m.xs();
        let k = ys.partition_point(|&y| y < s).clamp(1, ys.len() - 1);
        let (mut a, mut b) = (xs[k - 1], xs[k]);
        for _ in 0..64 {
            let mid = 0.5 * (a + b);
            if m.eval(mid) < s {
                a = mid;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Consumer posterior `E[t | σ*(t) = s]` on the equilibrium path.
    /// Off-path subsidies get the pessimistic posterior 0.
    pub fn posterior(&self, s: f64, d: &TypeDistribution) -> f64 {
        if self.pooled(1.0) && s == self.cap {
            return d.truncated_mean_at(self.t1).unwrap_or(1.0);
        }
        if s == 0.0 && self.t0 > 0.0 {
            return d.lower_mean_at(self.t0);
        }
        let flat = self.grid.len() >= 2 && self.grid[0][1] == self.grid[self.grid.len() - 1][1];
        if flat || self.grid.len() == 1 {
            // a single firm's constant branch pools [t0, t1]
            if s != self.grid[0][1] {
                return 0.0;
            }
            let upper = d.partial_moment_at(self.t0) - d.partial_moment_at(self.t1);
            let mass = d.cdf_at(self.t1) - d.cdf_at(self.t0);
            return if mass > 0.0 { upper / mass } else { self.t0 };
        }
        self.invert(s).unwrap_or(0.0)
    }
}

/// A solved SIS equilibrium with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSolution {
    pub params: MarketParams,
    pub distribution: TypeDistribution,
    pub schedule: SubsidySchedule,
    /// `t̲(p, c)`, the lowest admissible participation cutoff.
    pub t_lower: f64,
    /// The pooling cutoff `t̄`; equal to 1 when nobody pools.
    pub t_upper: f64,
    /// Where the uncapped separating schedule reaches `c`, if it does.
    pub t_cap: Option<f64>,
    /// `q_pool(t̄)`; 1 when the pool is empty.
    pub pool_attention: f64,
    pub pooling_active: bool,
    /// Residuals: `boundary_residual`, `envelope_max_error`,
    /// `interpolation_max_error`, `ic_max_violation`.
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip)]
    branch: Option<SeparatingBranch>,
}

impl EquilibriumSolution {
    pub fn t0(&self) -> f64 {
        self.schedule.t0
    }

    /// Exact `σ*(t)`, computed from the cached branch rather than the grid.
    pub fn sigma(&self, t: f64) -> f64 {
        if t < self.t0() {
            0.0
        } else if self.schedule.pooled(t) {
            self.params.c
        } else {
            self.branch.as_ref().map_or(self.params.c, |b| b.sigma(t))
        }
    }

    /// `q*(t)`: attention a type-`t` firm receives in equilibrium.
    pub fn attention(&self, t: f64) -> f64 {
        if t < self.t0() {
            0.0
        } else if self.schedule.pooled(t) {
            self.pool_attention
        } else {
            q_sep_at(t, self.t0(), self.params.n, &self.distribution)
        }
    }

    /// `I(t) = ∫_{t0}^t q_sep`, zero without a separating branch.
    pub fn separating_integral(&self, t: f64) -> f64 {
        self.branch.as_ref().map_or(0.0, |b| b.integral(t))
    }

    /// Equilibrium profit `(t − p σ*(t)) q*(t)`.
    pub fn payoff(&self, t: f64) -> f64 {
        (t - self.params.p * self.sigma(t)) * self.attention(t)
    }

    /// Lower end of the separating range, `t0`, and its upper end.
    pub fn separating_range(&self) -> (f64, f64) {
        let hi = if self.pooling_active {
            self.t_upper
        } else {
            1.0
        };
        (self.t0(), hi.max(self.t0()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column `t σ(t)` text; each jump appears as two rows sharing one abscissa.
    pub fn plot_data(&self) -> String {
        let mut out = String::new();
        let mut row = |t: f64, s: f64| {
            let _ = writeln!(out, "{t} {s}");
        };
        let t0 = self.t0();
        if t0 > 0.0 {
            row(0.0, 0.0);
            row(t0, 0.0);
        }
        for g in &self.schedule.grid {
            row(g[0], g[1]);
        }
        if self.pooling_active {
            row(self.t_upper, self.params.c);
            if self.t_upper < 1.0 {
                row(1.0, self.params.c);
            }
        }
        out
    }
}

/// `(t̲, s̲)` with `t̲ = pc/(1 + up)` and `s̲ = t̲/p`; `(0, 0)` at `p = 0`.
pub fn lower_cutoff(params: &MarketParams) -> Result<(f64, f64)> {
    params.validate()?;
    if params.p == 0.0 {
        return Ok((0.0, 0.0));
    }
    let t = params.p * params.c / (1.0 + params.u * params.p);
    Ok((t, t / params.p))
}

/// Separating subsidy `σ_sep(t; t0)` for `t ≥ t0`.
pub fn sigma_sep(t: f64, t0: f64, params: &MarketParams, d: &TypeDistribution) -> Result<f64> {
    params.validate()?;
    check_unit("t", t)?;
    check_unit("t0", t0)?;
    if params.p == 0.0 {
        return Err(Error::PriceZero);
    }
    if t < t0 {
        return Err(Error::InvalidParams(format!(
            "t = {t} lies below t0 = {t0}"
        )));
    }
    Ok(SeparatingBranch::new(t0, params, d).sigma(t))
}

/// Boundary indifference gap `H(x; t0) = q_pool(x)(x − pc) − ∫_{t0}^x q_sep`.
pub fn boundary_gap(x: f64, t0: f64, params: &MarketParams, d: &TypeDistribution) -> Result<f64> {
    params.validate()?;
    check_unit("x", x)?;
    check_unit("t0", t0)?;
    if params.p == 0.0 {
        return Err(Error::PriceZero);
    }
    SeparatingBranch::new(t0, params, d).gap(x, params.p * params.c)
}

/// `(t1, pooling_active)` for the SIS schedule anchored at `t0`.
pub fn upper_cutoff(t0: f64, params: &MarketParams, d: &TypeDistribution) -> Result<(f64, bool)> {
    let sol = sis_schedule(t0, params, d)?;
    Ok((sol.t_upper, sol.pooling_active))
}

/// The reasonable equilibrium: the SIS schedule anchored at `t̲`.
pub fn solve_reasonable_equilibrium(
    params: &MarketParams,
    d: &TypeDistribution,
) -> Result<EquilibriumSolution> {
    let (t_lower, _) = lower_cutoff(params)?;
    build(t_lower, t_lower, params, d)
}

/// The SIS family member anchored at `t0 ∈ [t̲, 1]`.
pub fn sis_schedule(
    t0: f64,
    params: &MarketParams,
    d: &TypeDistribution,
) -> Result<EquilibriumSolution> {
    let (t_lower, _) = lower_cutoff(params)?;
    check_unit("t0", t0)?;
    if t0 < t_lower {
        return Err(Error::CutoffOutOfRange { t0, t_lower });
    }
    build(t0, t_lower, params, d)
}

struct Cutoffs {
    t1: f64,
    t_cap: Option<f64>,
}

fn locate_upper(branch: &SeparatingBranch, t0: f64, params: &MarketParams) -> Result<Cutoffs> {
    let c = params.c;
    if branch.sigma(1.0) <= c {
        return Ok(Cutoffs {
            t1: 1.0,
            t_cap: None,
        });
    }
    if branch.sigma(t0) >= c {
        // even the marginal participant would need the cap: everyone pools
        return Ok(Cutoffs {
            t1: t0,
            t_cap: Some(t0),
        });
    }
    let t_cap = bisect(|t| branch.sigma(t) - c, t0, 1.0, 1e-14)?;
    let pc = params.p * c;
    let gap = |x: f64| branch.gap(x, pc).unwrap_or(f64::NAN);
    let lo = (pc + BRACKET_OFFSET).max(t0);
    // with many firms q_sep is so small below pc that H turns positive
    // within the offset; the root then lies in [pc, pc + offset]
    let t1 = if gap(lo) > 0.0 {
        bisect(gap, pc.max(t0), lo, ROOT_TOLERANCE)?
    } else {
        bisect(gap, lo, t_cap, ROOT_TOLERANCE)?
    };
    Ok(Cutoffs {
        t1,
        t_cap: Some(t_cap),
    })
}

fn build(
    t0: f64,
    t_lower: f64,
    params: &MarketParams,
    d: &TypeDistribution,
) -> Result<EquilibriumSolution> {
    let c = params.c;
    let nobody = 1.0 - d.cdf_at(t0) < TRUNCATION_FLOOR;
    if params.p == 0.0 || nobody {
        // free subsidies: every participant pools at the cap
        let (t1, pooling) = if nobody { (1.0, false) } else { (t0, true) };
        let pool_attention = if pooling {
            q_pool_at(t0, params.n, d)?
        } else {
            1.0
        };
        let grid = if nobody && params.p > 0.0 {
            vec![[t0, t0 / params.p]]
        } else {
            Vec::new()
        };
        let mut sol = EquilibriumSolution {
            params: *params,
            distribution: d.clone(),
            schedule: SubsidySchedule::new(t0, t1, c, grid),
            t_lower,
            t_upper: t1,
            t_cap: None,
            pool_attention,
            pooling_active: pooling,
            diagnostics: BTreeMap::new(),
            branch: None,
        };
        attach_diagnostics(&mut sol, d);
        return Ok(sol);
    }

    let branch = SeparatingBranch::new(t0, params, d);
    let Cutoffs { t1, t_cap } = locate_upper(&branch, t0, params)?;
    let pooling_active = t1 < 1.0;
    let pool_attention = if pooling_active {
        q_pool_at(t1, params.n, d)?
    } else {
        1.0
    };
    let grid = if t1 > t0 {
        let last = (SCHEDULE_POINTS - 1) as f64;
        (0..SCHEDULE_POINTS)
            .map(|k| {
                // Mostly cosine spacing clusters nodes at both ends, where sigma bends hardest.
                // The small uniform share keeps steps near t0 (where sigma is flat) above rounding.
                let x = k as f64 / last;
                let g = (1.0 - GRID_UNIFORM_SHARE) * 0.5 * (1.0 - (std::f64::consts::PI * x).cos())
                    + GRID_UNIFORM_SHARE * x;
                let t = if k + 1 == SCHEDULE_POINTS {
                    t1
                } else {
                    t0 + (t1 - t0) * g
                };
                [t, branch.sigma(t)]
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut sol = EquilibriumSolution {
        params: *params,
        distribution: d.clone(),
        schedule: SubsidySchedule::new(t0, t1, c, grid),
        t_lower,
        t_upper: t1,
        t_cap,
        pool_attention,
        pooling_active,
        diagnostics: BTreeMap::new(),
        branch: Some(branch),
    };
    attach_diagnostics(&mut sol, d);
    Ok(sol)
}

fn attach_diagnostics(sol: &mut EquilibriumSolution, d: &TypeDistribution) {
    let boundary = match (&sol.branch, sol.pooling_active && sol.t_upper > sol.t0()) {
        (Some(b), true) => b
            .gap(sol.t_upper, sol.params.p * sol.params.c)
            .map_or(f64::NAN, f64::abs),
        _ => 0.0,
    };
    let envelope = envelope_max_error(sol, DIAGNOSTIC_POINTS);
    let interpolation = interpolation_max_error(sol);
    let ic = check_incentive_compatibility(sol, d, DIAGNOSTIC_POINTS, DIAGNOSTIC_POINTS);
    sol.diagnostics.insert("boundary_residual".into(), boundary);
    sol.diagnostics
        .insert("envelope_max_error".into(), envelope);
    sol.diagnostics
        .insert("interpolation_max_error".into(), interpolation);
    sol.diagnostics.insert("ic_max_violation".into(), ic);
}

/// Largest `|q_sep(t)(t − pσ(t)) − ∫_{t0}^t q_sep|` over `points` types of the
/// separating range, with the integral recomputed from scratch.
pub fn envelope_max_error(sol: &EquilibriumSolution, points: usize) -> f64 {
    let Some(branch) = &sol.branch else {
        return 0.0;
    };
    let (lo, hi) = sol.separating_range();
    if hi <= lo || points < 2 {
        return 0.0;
    }
    let p = sol.params.p;
    (0..points)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let direct = quadrature::composite(lo, t, 16, 20, |x| branch.q(x));
            (branch.q(t) * (t - p * branch.sigma(t)) - direct).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest gap between the grid interpolant and the exact branch at cell midpoints.
fn interpolation_max_error(sol: &EquilibriumSolution) -> f64 {
    let Some(branch) = &sol.branch else {
        return 0.0;
    };
    sol.schedule
        .grid
        .windows(2)
        .map(|w| {
            let t = 0.5 * (w[0][0] + w[1][0]);
            (sol.schedule.interpolate(t) - branch.sigma(t)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest profitable deviation `max_s (t − ps) q(s) − (t − pσ*(t)) q*(t)`
/// over a uniform type grid.
///
/// Deviations range over `deviation_grid_size` on-path separating subsidies
/// plus zero and the cap; a separating subsidy `σ(x)` earns `q_sep(x)`.
pub fn check_incentive_compatibility(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
    type_grid_size: usize,
    deviation_grid_size: usize,
) -> f64 {
    let params = &sol.params;
    let mut deviations: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    if let Some(branch) = &sol.branch {
        let (lo, hi) = sol.separating_range();
        if hi > lo && deviation_grid_size >= 2 {
            for k in 0..deviation_grid_size {
                let x = lo + (hi - lo) * k as f64 / (deviation_grid_size - 1) as f64;
                deviations.push((branch.sigma(x), q_sep_at(x, lo, params.n, d)));
            }
        } else if hi > lo {
            deviations.push((branch.sigma(lo), q_sep_at(lo, lo, params.n, d)));
        }
    }
    if sol.pooling_active {
        deviations.push((params.c, sol.pool_attention));
    }
    let types = type_grid_size.max(2);
    (0..types)
        .map(|i| {
            let t = i as f64 / (types - 1) as f64;
            let best = deviations
                .iter()
                .map(|&(s, q)| (t - params.p * s) * q)
                .fold(f64::NEG_INFINITY, f64::max);
            best - sol.payoff(t)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}
