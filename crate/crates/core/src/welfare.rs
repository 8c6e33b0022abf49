//! Surplus accounting for a solved equilibrium and comparative-statics sweeps.
//!
//! Branch integrals run over `[t0, t̄]` with the cached `I(t) = ∫_{t0}^t q_sep`;
//! the pool contributes closed-form terms weighted by `1 − F(t̄)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::MarketParams;
use crate::dist::{DistKind, TypeDistribution};
use crate::equilibrium::{solve_reasonable_equilibrium, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::quadrature;

/// Equal panels per segment of the separating range.
const PANELS: usize = 32;

/// Market-level welfare in the equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelfareReport {
    pub n: usize,
    pub u: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    /// Average inspection probability per firm, `E[q*(t)]`.
    #[serde(rename = "Q")]
    pub q: f64,
    /// Expected transfer per firm, `p E[σ*(t) q*(t)]`.
    pub phi: f64,
    /// Probability that the consumer finds a match.
    pub m: f64,
    /// Consumer's expected net inspection cost per firm, `cQ − φ/p`.
    #[serde(rename = "C")]
    pub cost: f64,
    /// Consumer surplus `u m − n C`.
    #[serde(rename = "CS")]
    pub cs: f64,
    /// Producer surplus `n (E[t q*] − φ)`.
    #[serde(rename = "PS")]
    pub ps: f64,
    /// Total welfare `CS + PS`.
    #[serde(rename = "W")]
    pub w: f64,
}

impl WelfareReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["Q", "phi", "m", "C", "CS", "PS", "W", "t_lower", "t_upper"])?;
        w.serialize((
            self.q,
            self.phi,
            self.m,
            self.cost,
            self.cs,
            self.ps,
            self.w,
            self.t_lower,
            self.t_upper,
        ))?;
        finish(w)
    }
}

/// Integrals over the separating branch, each against `dF` unless noted.
#[derive(Debug, Clone, Copy, Default)]
struct BranchIntegrals {
    q: f64,
    tq: f64,
    big_i: f64,
    psi_q: f64,
    /// `∫ (1 − F) q_sep dt`
    survival_q: f64,
    /// `∫ (t − c) q_sep dF`
    net_q: f64,
}

/// Pool quantities: attention, cutoff and mass `1 − F(t̄)`.
struct Pool {
    q: f64,
    t1: f64,
    mass: f64,
}

fn pool(sol: &EquilibriumSolution, d: &TypeDistribution) -> Pool {
    if sol.pooling_active {
        Pool {
            q: sol.pool_attention,
            t1: sol.t_upper,
            mass: d.survival_at(sol.t_upper),
        }
    } else {
        Pool {
            q: 0.0,
            t1: 1.0,
            mass: 0.0,
        }
    }
}

pub(crate) fn branch_segments(sol: &EquilibriumSolution, d: &TypeDistribution) -> Vec<f64> {
    let (lo, hi) = sol.separating_range();
    let mut knots = vec![lo];
    if let DistKind::Piecewise { knots: k } = d.kind() {
        knots.extend(k.iter().map(|k| k[0]).filter(|&x| x > lo && x < hi));
    }
    knots.push(hi);
    knots
}

fn branch_integrals(sol: &EquilibriumSolution, d: &TypeDistribution) -> BranchIntegrals {
    let mut acc = BranchIntegrals::default();
    if sol.separating_range().1 <= sol.t0() || sol.params.p == 0.0 {
        return acc;
    }
    let c = sol.params.c;
    for seg in branch_segments(sol, d).windows(2) {
        for (t, w) in quadrature::refined_nodes(seg[0], seg[1], PANELS) {
            let q = sol.attention(t);
            let f = d.density_at(t);
            let surv = d.survival_at(t);
            acc.q += w * q * f;
            acc.tq += w * t * q * f;
            acc.big_i += w * sol.separating_integral(t) * f;
            acc.psi_q += w * d.virtual_value_at(t) * q * f;
            acc.survival_q += w * surv * q;
            acc.net_q += w * (t - c) * q * f;
        }
    }
    acc
}

/// All seven welfare quantities of the equilibrium.
pub fn welfare_report(sol: &EquilibriumSolution, d: &TypeDistribution) -> Result<WelfareReport> {
    let MarketParams { n, c, p, u } = sol.params;
    let b = branch_integrals(sol, d);
    let pool = pool(sol, d);
    let q = b.q + pool.q * pool.mass;
    // envelope: p σ q_sep = t q_sep − I on the branch
    let phi = (b.tq - b.big_i) + p * c * pool.q * pool.mass;
    let participation = d.partial_moment_at(sol.t0());
    let m = 1.0 - (1.0 - participation).powi(n as i32);
    let cost = if p > 0.0 {
        c * q - phi / p
    } else {
        // free subsidies cover every inspection in full
        c * q - c * pool.q * pool.mass
    };
    let cs = u * m - n as f64 * cost;
    let pool_tq = if sol.pooling_active {
        pool.q * d.partial_moment_at(pool.t1)
    } else {
        0.0
    };
    let ps = n as f64 * (b.tq + pool_tq - phi);
    let report = WelfareReport {
        n,
        u,
        t_lower: sol.t_lower,
        t_upper: sol.t_upper,
        q,
        phi,
        m,
        cost,
        cs,
        ps,
        w: cs + ps,
    };
    if !report.values().iter().all(|v| v.is_finite()) {
        return Err(Error::Mismatch(format!(
            "non-finite welfare quantity in {report:?}"
        )));
    }
    Ok(report)
}

impl WelfareReport {
    fn values(&self) -> [f64; 7] {
        [
            self.q, self.phi, self.m, self.cost, self.cs, self.ps, self.w,
        ]
    }
}

/// `|W − (u m + n E[(t − c) q*] − n (1 − 1/p) φ)|`, with `E[(t − c) q*]`
/// integrated separately. Zero at `p = 0`, where the wedge is undefined.
pub fn welfare_decomposition_residual(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
) -> Result<f64> {
    let report = welfare_report(sol, d)?;
    let MarketParams { n, c, p, u } = sol.params;
    if p == 0.0 {
        return Ok(0.0);
    }
    let b = branch_integrals(sol, d);
    let pool = pool(sol, d);
    let pool_net = if sol.pooling_active {
        pool.q * (d.partial_moment_at(pool.t1) - c * pool.mass)
    } else {
        0.0
    };
    let nf = n as f64;
    let displayed = u * report.m + nf * (b.net_q + pool_net) - nf * (1.0 - 1.0 / p) * report.phi;
    Ok((report.w - displayed).abs())
}

/// `|PS − n ∫_{t0}^1 (1 − F(t)) q*(t) dt|`.
pub fn producer_surplus_identity_check(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
) -> Result<f64> {
    let report = welfare_report(sol, d)?;
    let b = branch_integrals(sol, d);
    let pool = pool(sol, d);
    let pool_part = if sol.pooling_active {
        pool.q * d.upper_survival_integral(pool.t1)
    } else {
        0.0
    };
    Ok((report.ps - sol.params.n as f64 * (b.survival_q + pool_part)).abs())
}

/// `|φ − (∫ ψ q_sep dF + t̄ q_pool(t̄)(1 − F(t̄)))|` with `ψ = t − (1 − F)/f`.
///
/// Piecewise priors use the one-sided density on each linear segment; the
/// quadrature nodes never sit on a knot.
pub fn transfer_virtual_value_check(
    sol: &EquilibriumSolution,
    d: &TypeDistribution,
) -> Result<f64> {
    let report = welfare_report(sol, d)?;
    let b = branch_integrals(sol, d);
    let pool = pool(sol, d);
    Ok((report.phi - (b.psi_q + pool.t1 * pool.q * pool.mass)).abs())
}

/// Revenue split `(∫ ψ q_sep dF, t̄ q_pool(t̄)(1 − F(t̄)))` of `φ`.
pub(crate) fn virtual_value_split(sol: &EquilibriumSolution, d: &TypeDistribution) -> (f64, f64) {
    let b = branch_integrals(sol, d);
    let pool = pool(sol, d);
    (b.psi_q, pool.t1 * pool.q * pool.mass)
}

/// Parameter varied by a comparative-statics sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Price,
    Cost,
    Firms,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "price" | "p" => Ok(Self::Price),
            "cost" | "c" => Ok(Self::Cost),
            "firms" | "n" => Ok(Self::Firms),
            other => Err(Error::InvalidParams(format!(
                "unknown sweep axis `{other}`"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Price => "price",
            Self::Cost => "cost",
            Self::Firms => "firms",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: Option<WelfareReport>,
    pub pooling_active: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub quantity: String,
    /// Direction the model predicts, if any.
    pub expected: Option<Direction>,
    /// Whether the observed sequence is strictly monotone in that direction.
    pub holds: Option<bool>,
    pub observed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub base: MarketParams,
    pub points: Vec<SweepPoint>,
    pub verdicts: Vec<Verdict>,
}

impl SweepReport {
    pub fn verdict(&self, quantity: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.quantity == quantity)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per grid point with all seven welfare fields plus the cutoffs.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            &self.axis.to_string(),
            "Q",
            "phi",
            "m",
            "C",
            "CS",
            "PS",
            "W",
            "t_lower",
            "t_upper",
        ])?;
        for pt in &self.points {
            let mut row = vec![pt.value.to_string()];
            match &pt.report {
                Some(r) => row.extend(
                    r.values()
                        .iter()
                        .chain(&[r.t_lower, r.t_upper])
                        .map(|v| v.to_string()),
                ),
                None => row.extend(std::iter::repeat_n(String::new(), 9)),
            }
            w.write_record(&row)?;
        }
        finish(w)
    }
}

/// Default sweep values: the base price or cost scaled by 0.6 to 1.4 in five
/// steps (inadmissible values dropped), or `n = 2..=12` on the firm axis.
pub fn default_sweep_grid(base: &MarketParams, axis: SweepAxis) -> Vec<f64> {
    const SCALE: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];
    match axis {
        SweepAxis::Price => SCALE
            .iter()
            .map(|k| k * base.p)
            .filter(|&v| v > 0.0 && base.with_price(v).is_ok())
            .collect(),
        SweepAxis::Cost => SCALE
            .iter()
            .map(|k| k * base.c)
            .filter(|&v| base.with_cost(v).is_ok())
            .collect(),
        SweepAxis::Firms => (2..=12).map(f64::from).collect(),
    }
}

/// Solves the reasonable equilibrium at each grid value of `axis` and checks
/// the comparative-statics directions.
///
/// On the price and cost axes every quantity should fall. On the firm axis
/// total search intensity `Q_total = n Q`, `m` and `CS` should rise while
/// `PS/n` falls; per-firm `Q` and aggregate `PS` are reported without a claim.
pub fn comparative_statics_sweep(
    base: &MarketParams,
    d: &TypeDistribution,
    axis: SweepAxis,
    grid: &[f64],
) -> Result<SweepReport> {
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&value| {
            let solved = point_params(base, axis, value).and_then(|params| {
                let sol = solve_reasonable_equilibrium(&params, d)?;
                Ok((welfare_report(&sol, d)?, sol.pooling_active))
            });
            match solved {
                Ok((report, pooling)) => SweepPoint {
                    value,
                    report: Some(report),
                    pooling_active: Some(pooling),
                    error: None,
                },
                Err(e) => SweepPoint {
                    value,
                    report: None,
                    pooling_active: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    use Direction::{Decreasing, Increasing};
    type Getter = fn(&WelfareReport) -> f64;
    let claims: Vec<(&str, Option<Direction>, Getter)> = match axis {
        SweepAxis::Price | SweepAxis::Cost => vec![
            ("Q", Some(Decreasing), |r| r.q),
            ("m", Some(Decreasing), |r| r.m),
            ("CS", Some(Decreasing), |r| r.cs),
            ("PS", Some(Decreasing), |r| r.ps),
            ("PS/n", Some(Decreasing), |r| r.ps / r.n as f64),
        ],
        SweepAxis::Firms => vec![
            ("Q_total", Some(Increasing), |r| r.q * r.n as f64),
            ("Q", None, |r| r.q),
            ("m", Some(Increasing), |r| r.m),
            ("CS", Some(Increasing), |r| r.cs),
            ("PS", None, |r| r.ps),
            ("PS/n", Some(Decreasing), |r| r.ps / r.n as f64),
        ],
    };
    let solved: Vec<&WelfareReport> = points.iter().filter_map(|p| p.report.as_ref()).collect();
    let complete = solved.len() == points.len();
    let verdicts = claims
        .into_iter()
        .map(|(name, expected, get)| {
            let observed: Vec<f64> = solved.iter().map(|r| get(r)).collect();
            let holds = expected.map(|dir| complete && strictly_monotone(&observed, dir));
            Verdict {
                quantity: name.to_string(),
                expected,
                holds,
                observed,
            }
        })
        .collect();
    Ok(SweepReport {
        axis,
        base: *base,
        points,
        verdicts,
    })
}

fn point_params(base: &MarketParams, axis: SweepAxis, value: f64) -> Result<MarketParams> {
    match axis {
        SweepAxis::Price => base.with_price(value),
        SweepAxis::Cost => base.with_cost(value),
        SweepAxis::Firms => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "firm count must be a positive integer, got {value}"
                )));
            }
            base.with_firms(value as usize)
        }
    }
}

pub(crate) fn strictly_monotone(xs: &[f64], dir: Direction) -> bool {
    xs.windows(2).all(|w| match dir {
        Direction::Increasing => w[1] > w[0],
        Direction::Decreasing => w[1] < w[0],
    })
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::sis_schedule;
    use approx::assert_abs_diff_eq;

    fn solve(n: usize, c: f64, p: f64) -> (EquilibriumSolution, TypeDistribution) {
        let d = TypeDistribution::uniform();
        let sol =
            solve_reasonable_equilibrium(&MarketParams::new(n, c, p, 1.0).unwrap(), &d).unwrap();
        (sol, d)
    }

    /// Simpson oracle over the uniform prior, using `q_sep = ((1 + t²)/2)^{n−1}`.
    fn simpson(a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
        let m = 20_000;
        let h = (b - a) / m as f64;
        let mut s = g(a) + g(b);
        for k in 1..m {
            s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn pooling_market_matches_oracle() {
        let (sol, d) = solve(10, 0.5, 1.0);
        let r = welfare_report(&sol, &d).unwrap();
        let (t0, t1) = (0.25, sol.t_upper);
        let qs = |t: f64| ((1.0 + t * t) / 2.0).powi(9);
        let i = |t: f64| simpson(t0, t, qs);
        let qp = sol.pool_attention;
        let q = simpson(t0, t1, qs) + qp * (1.0 - t1);
        let tq = simpson(t0, t1, |t| t * qs(t));
        // σ q_sep integrated through its definition rather than the envelope
        let phi = simpson(t0, t1, |t| (t - i(t) / qs(t)) * qs(t)) + 0.5 * qp * (1.0 - t1);
        assert_abs_diff_eq!(r.q, q, epsilon = 1e-10);
        assert_abs_diff_eq!(r.phi, phi, epsilon = 1e-9);
        assert_abs_diff_eq!(r.q, 0.133_330_91, epsilon = 1e-8);
        assert_abs_diff_eq!(r.phi, 0.066_310_98, epsilon = 1e-8);
        assert_abs_diff_eq!(r.m, 0.998_209_44, epsilon = 1e-8);
        assert_abs_diff_eq!(r.cost, 0.000_354_48, epsilon = 1e-8);
        assert_abs_diff_eq!(r.cs, 0.994_664_64, epsilon = 1e-7);
        assert_abs_diff_eq!(r.ps, 0.335_099_68, epsilon = 1e-7);
        let pool_tq = qp * (1.0 - t1 * t1) / 2.0;
        assert_abs_diff_eq!(r.ps, 10.0 * (tq + pool_tq - phi), epsilon = 1e-8);
        assert_eq!(r.cost, 0.5 * r.q - r.phi / 1.0);
        assert_eq!(r.w, r.cs + r.ps);
        assert!(r.m <= 1.0 && r.q <= 1.0 && r.ps >= 0.0);
    }

    #[test]
    fn single_firm_examples() {
        let (sol, d) = solve(1, 0.5, 1.0);
        let r = welfare_report(&sol, &d).unwrap();
        assert_abs_diff_eq!(r.m, 0.468_75, epsilon = 1e-15);
        assert_abs_diff_eq!(r.phi, 0.1875, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ps, 0.75 * 0.75 / 2.0, epsilon = 1e-12);
        assert!(producer_surplus_identity_check(&sol, &d).unwrap() < 1e-12);
        assert!(transfer_virtual_value_check(&sol, &d).unwrap() < 1e-12);
    }

    #[test]
    fn identities_hold_across_regimes() {
        for (n, c, p) in [(10, 0.5, 1.0), (10, 0.5, 1.8), (3, 0.4, 0.7), (6, 0.8, 2.0)] {
            let (sol, d) = solve(n, c, p);
            assert!(welfare_decomposition_residual(&sol, &d).unwrap() < 1e-8);
            assert!(producer_surplus_identity_check(&sol, &d).unwrap() < 1e-6);
            assert!(transfer_virtual_value_check(&sol, &d).unwrap() < 1e-6);
        }
        let d = TypeDistribution::beta(2.0, 3.0).unwrap();
        let sol = solve_reasonable_equilibrium(&MarketParams::new(8, 0.5, 1.0, 1.0).unwrap(), &d)
            .unwrap();
        assert!(producer_surplus_identity_check(&sol, &d).unwrap() < 1e-6);
        assert!(transfer_virtual_value_check(&sol, &d).unwrap() < 1e-6);
        let pw = TypeDistribution::piecewise(vec![[0.0, 0.0], [0.4, 0.3], [0.7, 0.8], [1.0, 1.0]])
            .unwrap();
        let sol = solve_reasonable_equilibrium(&MarketParams::new(5, 0.6, 1.0, 1.0).unwrap(), &pw)
            .unwrap();
        assert!(producer_surplus_identity_check(&sol, &pw).unwrap() < 1e-6);
        assert!(transfer_virtual_value_check(&sol, &pw).unwrap() < 1e-6);
    }

    #[test]
    fn unit_price_welfare_has_no_transfer_wedge() {
        let (sol, d) = solve(10, 0.5, 1.0);
        let r = welfare_report(&sol, &d).unwrap();
        let b = branch_integrals(&sol, &d);
        let qp = sol.pool_attention;
        let t1 = sol.t_upper;
        let pool_net = qp * ((1.0 - t1 * t1) / 2.0 - 0.5 * (1.0 - t1));
        assert_abs_diff_eq!(r.w, r.m + 10.0 * (b.net_q + pool_net), epsilon = 1e-10);
    }

    #[test]
    fn no_participation_limit() {
        // c just below the admissibility bound (1 + p u)/p = 2
        let (sol, d) = solve(4, 1.999_999, 1.0);
        let r = welfare_report(&sol, &d).unwrap();
        assert!(r.m < 1e-5 && r.q < 1e-5, "{r:?}");
        assert!(producer_surplus_identity_check(&sol, &d).unwrap() < 1e-9);
    }

    #[test]
    fn zero_price_market() {
        let (sol, d) = solve(4, 0.5, 0.0);
        let r = welfare_report(&sol, &d).unwrap();
        assert_eq!(r.phi, 0.0);
        assert_eq!(r.cost, 0.0);
        assert_abs_diff_eq!(r.m, 1.0 - 0.5f64.powi(4), epsilon = 1e-15);
    }

    #[test]
    fn sis_family_reports_are_finite() {
        let d = TypeDistribution::uniform();
        let m = MarketParams::new(10, 0.5, 1.0, 1.0).unwrap();
        let sol = sis_schedule(0.35, &m, &d).unwrap();
        let r = welfare_report(&sol, &d).unwrap();
        assert!(r.q > 0.0 && r.w.is_finite());
    }

    #[test]
    fn price_sweep_directions() {
        let d = TypeDistribution::uniform();
        let base = MarketParams::new(10, 0.5, 1.0, 1.0).unwrap();
        let sweep =
            comparative_statics_sweep(&base, &d, SweepAxis::Price, &[0.6, 0.8, 1.0, 1.2, 1.4])
                .unwrap();
        for q in ["Q", "m", "CS", "PS", "PS/n"] {
            assert_eq!(sweep.verdict(q).unwrap().holds, Some(true), "{q}");
        }
        let csv = sweep.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("price,Q,phi,m,C,CS,PS,W,t_lower,t_upper\n"));
    }

    #[test]
    fn failed_points_are_recorded() {
        let d = TypeDistribution::uniform();
        let base = MarketParams::new(10, 0.5, 1.0, 1.0).unwrap();
        let sweep = comparative_statics_sweep(&base, &d, SweepAxis::Cost, &[0.3, 2.5]).unwrap();
        assert!(sweep.points[1].error.is_some());
        assert_eq!(sweep.verdict("Q").unwrap().holds, Some(false));
        assert!("prices".parse::<SweepAxis>().is_err());
    }
}
