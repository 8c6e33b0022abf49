//! The token platform: subsidy demand `D(p) = E[σ*(t; p) q*(t; p)]`, revenue
//! `R(p) = n p D(p)`, its virtual-value decomposition and the revenue-maximizing
//! price.

use rayon::prelude::*;
use serde::Serialize;

use crate::attention::MarketParams;
use crate::dist::TypeDistribution;
use crate::equilibrium::{solve_reasonable_equilibrium, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::roots::{bisect, golden_max};
use crate::welfare::{branch_segments, finish, virtual_value_split, welfare_report};

/// Lower end of the default price bracket.
pub const DEFAULT_PRICE_FLOOR: f64 = 1e-3;
/// Price tolerance of the golden-section refinement.
pub const PRICE_TOLERANCE: f64 = 1e-6;
/// Points on which `ψ` is checked for strict monotonicity.
const REGULARITY_POINTS: usize = 200;
const PANELS: usize = 32;

/// Per-firm demand `E[σ* q*]`, integrating the schedule itself on the
/// separating branch and adding `c q_pool(t̄)(1 − F(t̄))` for the pool.
pub fn subsidy_demand(p: f64, params_base: &MarketParams, d: &TypeDistribution) -> Result<f64> {
    let params = params_base.with_price(p)?;
    let sol = solve_reasonable_equilibrium(&params, d)?;
    Ok(demand_of(&sol, d))
}

fn demand_of(sol: &EquilibriumSolution, d: &TypeDistribution) -> f64 {
    let mut sep = 0.0;
    if sol.params.p > 0.0 && sol.separating_range().1 > sol.t0() {
        for seg in branch_segments(sol, d).windows(2) {
            sep += quadrature::refined_nodes(seg[0], seg[1], PANELS)
                .into_iter()
                .map(|(t, w)| w * sol.sigma(t) * sol.attention(t) * d.density_at(t))
                .sum::<f64>();
        }
    }
    let pool = if sol.pooling_active {
        sol.params.c * sol.pool_attention * d.survival_at(sol.t_upper)
    } else {
        0.0
    };
    sep + pool
}

/// `(∫ ψ q_sep dF, t̄ q_pool(t̄)(1 − F(t̄)))`, whose sum is `R(p)/n`.
pub fn revenue_decomposition(
    p: f64,
    params_base: &MarketParams,
    d: &TypeDistribution,
) -> Result<(f64, f64)> {
    let params = params_base.with_price(p)?;
    if p == 0.0 {
        return Ok((0.0, 0.0));
    }
    let sol = solve_reasonable_equilibrium(&params, d)?;
    Ok(virtual_value_split(&sol, d))
}

/// Everything the platform sees at one price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PricePoint {
    pub p: f64,
    pub demand: f64,
    pub revenue: f64,
    pub sep_branch: f64,
    pub pool_branch: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub pooling_active: bool,
    /// `|φ/p − D|`, comparing the envelope-based transfer with direct demand.
    pub phi_demand_residual: f64,
}

pub fn evaluate_price(
    p: f64,
    params_base: &MarketParams,
    d: &TypeDistribution,
) -> Result<PricePoint> {
    let params = params_base.with_price(p)?;
    let sol = solve_reasonable_equilibrium(&params, d)?;
    let demand = demand_of(&sol, d);
    let (sep_branch, pool_branch, residual) = if p > 0.0 {
        let (s, b) = virtual_value_split(&sol, d);
        let phi = welfare_report(&sol, d)?.phi;
        (s, b, (phi / p - demand).abs())
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(PricePoint {
        p,
        demand,
        revenue: params.n as f64 * p * demand,
        sep_branch,
        pool_branch,
        t_lower: sol.t_lower,
        t_upper: sol.t_upper,
        pooling_active: sol.pooling_active,
        phi_demand_residual: residual,
    })
}

/// Default bracket: from [`DEFAULT_PRICE_FLOOR`] up to the price at which the
/// participation cutoff reaches 99% of its supremum `min(1, c/u)`.
pub fn default_price_bracket(params_base: &MarketParams) -> (f64, f64) {
    let (c, u) = (params_base.c, params_base.u);
    let target = 0.99 * (c / u).min(1.0);
    (DEFAULT_PRICE_FLOOR, target / (c - u * target))
}

/// Root of the virtual value `ψ(t) = t − (1 − F)/f` on `(0, 1)`.
pub fn virtual_value_root(d: &TypeDistribution) -> Result<f64> {
    bisect(|t| d.virtual_value_at(t), 1e-9, 1.0, 1e-13)
}

/// Whether `ψ` is strictly increasing on a uniform interior grid.
pub fn is_regular(d: &TypeDistribution) -> bool {
    let psi: Vec<f64> = (0..REGULARITY_POINTS)
        .map(|k| d.virtual_value_at((k as f64 + 0.5) / REGULARITY_POINTS as f64))
        .collect();
    psi.windows(2).all(|w| w[1] > w[0])
}

/// Result of the revenue maximization with the excess-search diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceOptimum {
    pub p_star: f64,
    pub revenue: f64,
    pub bracket: (f64, f64),
    pub t_lower_at_star: f64,
    pub t_bar_at_star: f64,
    pub t_psi: f64,
    /// `p*` lies strictly inside the bracket rather than at an end.
    pub interior: bool,
    pub pooling_active: bool,
    /// `t̄(p*) < t_ψ`: some negative-virtual-value types are inspected with the cap.
    pub pool_below_psi_root: bool,
    /// `t̲(p*) < t_ψ`: negative-virtual-value types participate.
    pub participation_below_psi_root: bool,
    /// `ψ` strictly increasing on the check grid, so the maximizer is unique.
    pub regular: bool,
}

/// Revenue-maximizing price: a geometric coarse grid on the bracket, then
/// golden-section refinement around the best grid point.
pub fn optimize_price(
    params_base: &MarketParams,
    d: &TypeDistribution,
    bracket: Option<(f64, f64)>,
    coarse_grid: usize,
) -> Result<PriceOptimum> {
    let (lo, hi) = bracket.unwrap_or_else(|| default_price_bracket(params_base));
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParams(format!(
            "price bracket ({lo}, {hi}) must satisfy 0 < lo < hi"
        )));
    }
    let k = coarse_grid.max(3);
    let grid: Vec<f64> = (0..k)
        .map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64))
        .collect();
    let revenue =
        |p: f64| evaluate_price(p, params_base, d).map_or(f64::NEG_INFINITY, |pt| pt.revenue);
    let values: Vec<f64> = grid.par_iter().map(|&p| revenue(p)).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    if !values[best].is_finite() {
        return Err(Error::Bracket(format!(
            "revenue undefined on every price in ({lo}, {hi})"
        )));
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(k - 1)];
    let (mut p_star, mut r_star) = golden_max(revenue, a, b, PRICE_TOLERANCE);
    if values[best] > r_star {
        (p_star, r_star) = (grid[best], values[best]);
    }
    let at_star = evaluate_price(p_star, params_base, d)?;
    let t_psi = virtual_value_root(d)?;
    let edge = 10.0 * PRICE_TOLERANCE;
    Ok(PriceOptimum {
        p_star,
        revenue: r_star,
        bracket: (lo, hi),
        t_lower_at_star: at_star.t_lower,
        t_bar_at_star: at_star.t_upper,
        t_psi,
        interior: p_star - lo > edge && hi - p_star > edge,
        pooling_active: at_star.pooling_active,
        pool_below_psi_root: at_star.t_upper < t_psi,
        participation_below_psi_root: at_star.t_lower < t_psi,
        regular: is_regular(d),
    })
}

/// Price sweep with the optimum attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformSweep {
    pub prices: Vec<f64>,
    pub demand: Vec<f64>,
    pub revenue: Vec<f64>,
    /// `(separating branch, pooling branch)` per price.
    pub decomposition: Vec<(f64, f64)>,
    pub t_lower: Vec<f64>,
    pub t_upper: Vec<f64>,
    pub phi_demand_residual: Vec<f64>,
    pub p_star: f64,
    pub t_bar_at_star: f64,
    pub t_psi: f64,
    pub optimum: PriceOptimum,
    /// Pooling-branch value nondecreasing in `p` wherever pooling is active.
    pub pool_branch_monotone: bool,
}

impl PlatformSweep {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns `p, D, R, sep_branch, pool_branch, t_lower, t_upper`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "p",
            "D",
            "R",
            "sep_branch",
            "pool_branch",
            "t_lower",
            "t_upper",
        ])?;
        for i in 0..self.prices.len() {
            w.serialize((
                self.prices[i],
                self.demand[i],
                self.revenue[i],
                self.decomposition[i].0,
                self.decomposition[i].1,
                self.t_lower[i],
                self.t_upper[i],
            ))?;
        }
        finish(w)
    }
}

/// Evaluates `points` equally spaced prices on the bracket and optimizes.
pub fn platform_sweep(
    params_base: &MarketParams,
    d: &TypeDistribution,
    bracket: Option<(f64, f64)>,
    points: usize,
    coarse_grid: usize,
) -> Result<PlatformSweep> {
    let optimum = optimize_price(params_base, d, bracket, coarse_grid)?;
    let (lo, hi) = optimum.bracket;
    let k = points.max(2);
    let rows: Vec<PricePoint> = (0..k)
        .into_par_iter()
        .map(|i| evaluate_price(lo + (hi - lo) * i as f64 / (k - 1) as f64, params_base, d))
        .collect::<Result<_>>()?;
    let pool_branch_monotone = rows
        .windows(2)
        .filter(|w| w[0].pooling_active && w[1].pooling_active)
        .all(|w| w[1].pool_branch >= w[0].pool_branch);
    Ok(PlatformSweep {
        prices: rows.iter().map(|r| r.p).collect(),
        demand: rows.iter().map(|r| r.demand).collect(),
        revenue: rows.iter().map(|r| r.revenue).collect(),
        decomposition: rows.iter().map(|r| (r.sep_branch, r.pool_branch)).collect(),
        t_lower: rows.iter().map(|r| r.t_lower).collect(),
        t_upper: rows.iter().map(|r| r.t_upper).collect(),
        phi_demand_residual: rows.iter().map(|r| r.phi_demand_residual).collect(),
        p_star: optimum.p_star,
        t_bar_at_star: optimum.t_bar_at_star,
        t_psi: optimum.t_psi,
        optimum,
        pool_branch_monotone,
    })
}
