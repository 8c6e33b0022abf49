//! Market primitives and the closed-form attention functions.
//!
//! `q_sep` is the probability that a firm of type `t` on a fully revealing
//! schedule gets inspected; `q_pool` is the same probability for a firm
//! hidden in the top pool at the cap. The consumer ranks firms by the
//! Weitzman-style reservation index `r(τ, κ) = u − κ/τ`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::dist::{TypeDistribution, TRUNCATION_FLOOR};
use crate::error::{Error, Result};

/// Below this posterior the pooled term switches to its series expansion.
const SMALL_TAU: f64 = 1e-8;

/// The primitive tuple `(n, c, p, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Number of firms.
    pub n: usize,
    /// Inspection cost.
    pub c: f64,
    /// Price per unit of subsidy.
    pub p: f64,
    /// Consumer's benefit from a match.
    pub u: f64,
}

impl MarketParams {
    pub fn new(n: usize, c: f64, p: f64, u: f64) -> Result<Self> {
        let params = Self { n, c, p, u };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return bad(format!("u must be positive, got {}", self.u));
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return bad(format!("p must be nonnegative, got {}", self.p));
        }
        // c < (1 + pu)/p, i.e. the participation cutoff lies below 1
        if self.p > 0.0 && self.p * self.c >= 1.0 + self.p * self.u {
            return bad(format!(
                "c = {} must be below (1 + p u)/p = {} so that some types can subsidize",
                self.c,
                (1.0 + self.p * self.u) / self.p
            ));
        }
        Ok(())
    }

    pub fn with_price(&self, p: f64) -> Result<Self> {
        Self::new(self.n, self.c, p, self.u)
    }

    pub fn with_cost(&self, c: f64) -> Result<Self> {
        Self::new(self.n, c, self.p, self.u)
    }

    pub fn with_firms(&self, n: usize) -> Result<Self> {
        Self::new(n, self.c, self.p, self.u)
    }

    /// Supremum of admissible prices: `1/(c − u)` when `c > u`, otherwise unbounded.
    pub fn price_bound(&self) -> f64 {
        if self.c > self.u {
            1.0 / (self.c - self.u)
        } else {
            f64::INFINITY
        }
    }
}

/// Attention of a type-`t` firm when every participating type separates
/// above `t0`: `(1 − ∫_t^1 x dF)^{n−1}` for `t ≥ t0`, zero below.
pub fn q_sep(t: f64, t0: f64, params: &MarketParams, d: &TypeDistribution) -> Result<f64> {
    unit("t", t)?;
    unit("t0", t0)?;
    Ok(q_sep_at(t, t0, params.n, d))
}

pub(crate) fn q_sep_at(t: f64, t0: f64, n: usize, d: &TypeDistribution) -> f64 {
    if t < t0 {
        return 0.0;
    }
    (1.0 - d.partial_moment_at(t)).powi(n as i32 - 1)
}

/// Attention of a firm pooled at the cap with every type in `[x, 1]`.
///
/// Sums exactly over the number `K ~ Bin(n−1, 1−F(x))` of pooled rivals; a
/// pool of `m = K + 1` firms with uniform tie-breaking inspects the focal firm
/// with probability `(1 − (1−τ)^m)/(mτ)` where `τ = E[t | t ≥ x]`.
pub fn q_pool(x: f64, params: &MarketParams, d: &TypeDistribution) -> Result<f64> {
    unit("x", x)?;
    q_pool_at(x, params.n, d)
}

pub(crate) fn q_pool_at(x: f64, n: usize, d: &TypeDistribution) -> Result<f64> {
    let tail = d.survival_at(x);
    if tail < TRUNCATION_FLOOR {
        return Err(Error::DegenerateTruncation(x));
    }
    if n == 1 {
        return Ok(1.0);
    }
    let tau = d.truncated_mean_at(x)?;
    let rivals = (n - 1) as u64;
    let below = d.cdf_at(x);
    if tail >= 1.0 || below <= 0.0 {
        return Ok(pooled_term(n, tau));
    }
    let (ln_in, ln_out) = (tail.ln(), below.ln());
    let total = (0..=rivals)
        .map(|k| {
            let ln_pmf = ln_binomial(rivals, k) + k as f64 * ln_in + (rivals - k) as f64 * ln_out;
            ln_pmf.exp() * pooled_term(k as usize + 1, tau)
        })
        .sum::<f64>();
    Ok(total.min(1.0))
}

/// `(1 − (1−τ)^m)/(mτ)`: inspection probability of one member of an
/// `m`-firm pool searched in uniformly random order.
pub(crate) fn pooled_term(m: usize, tau: f64) -> f64 {
    let mf = m as f64;
    if tau < SMALL_TAU {
        return 1.0 - (mf - 1.0) * tau / 2.0;
    }
    // -expm1(m ln(1−τ)) keeps precision when τ is small but above the switch
    let miss_all = if tau >= 1.0 {
        -1.0
    } else {
        (mf * (-tau).ln_1p()).exp_m1()
    };
    -miss_all / (mf * tau)
}

/// Reservation index of a firm with posterior `τ` and net inspection cost `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationIndex {
    /// A sure non-match: `τ = 0`.
    NegInfinity,
    Value(f64),
}

impl ReservationIndex {
    /// Whether inspecting beats the outside option; indifference means stop.
    pub fn worth_inspecting(&self) -> bool {
        matches!(self, Self::Value(r) if *r > 0.0)
    }

    pub fn value(&self) -> f64 {
        match self {
            Self::NegInfinity => f64::NEG_INFINITY,
            Self::Value(r) => *r,
        }
    }
}

impl Eq for ReservationIndex {}

impl PartialOrd for ReservationIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReservationIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Self::NegInfinity, Self::NegInfinity) => Ordering::Equal,
            (Self::NegInfinity, Self::Value(_)) => Ordering::Less,
            (Self::Value(_), Self::NegInfinity) => Ordering::Greater,
            (Self::Value(a), Self::Value(b)) => a.total_cmp(b),
        }
    }
}

/// `r(τ, κ) = u − κ/τ`, with the tagged `NegInfinity` value at `τ = 0`.
pub fn reservation_index(tau: f64, kappa: f64, u: f64) -> ReservationIndex {
    if tau <= 0.0 {
        ReservationIndex::NegInfinity
    } else {
        ReservationIndex::Value(u - kappa / tau)
    }
}

fn unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}
