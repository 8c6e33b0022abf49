//! The type prior `F` on `[0, 1]`.
//!
//! Every integral the equilibrium and welfare code needs reduces to the CDF,
//! the density and the upper partial first moment `∫_t^1 x dF(x)`. Uniform and
//! Beta priors use closed forms; a piecewise-linear CDF integrates exactly
//! with one Gauss–Legendre panel per linear segment.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::quadrature;

/// Floor applied to `1 - F(t)` before conditioning on `t' >= t`.
pub const TRUNCATION_FLOOR: f64 = 1e-12;
/// Floor applied to the density when it appears in a denominator.
pub const DENSITY_FLOOR: f64 = 1e-12;
pub const DEFAULT_QUADRATURE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistKind {
    Uniform,
    Beta {
        alpha: f64,
        beta: f64,
    },
    /// Knots `(t, F(t))`, starting at `(0, 0)` and ending at `(1, 1)`.
    Piecewise {
        knots: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, Deserialize)]
struct DistSpec {
    #[serde(flatten)]
    kind: DistKind,
    #[serde(default = "default_tolerance")]
    quadrature_tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_QUADRATURE_TOLERANCE
}

/// A validated prior with full support on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistSpec")]
pub struct TypeDistribution {
    #[serde(flatten)]
    kind: DistKind,
    quadrature_tolerance: f64,
    #[serde(skip)]
    ln_beta_ab: f64,
}

impl TryFrom<DistSpec> for TypeDistribution {
    type Error = Error;

    fn try_from(raw: DistSpec) -> Result<Self> {
        Self::with_tolerance(raw.kind, raw.quadrature_tolerance)
    }
}

impl TypeDistribution {
    pub fn new(kind: DistKind) -> Result<Self> {
        Self::with_tolerance(kind, DEFAULT_QUADRATURE_TOLERANCE)
    }

    pub fn with_tolerance(kind: DistKind, quadrature_tolerance: f64) -> Result<Self> {
        if !(quadrature_tolerance > 0.0 && quadrature_tolerance.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "quadrature tolerance must be positive, got {quadrature_tolerance}"
            )));
        }
        let mut ln_beta_ab = 0.0;
        match &kind {
            DistKind::Uniform => {}
            DistKind::Beta { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidDistribution(format!(
                        "Beta parameters must be positive, got ({alpha}, {beta})"
                    )));
                }
                ln_beta_ab = ln_beta(*alpha, *beta);
            }
            DistKind::Piecewise { knots } => validate_knots(knots)?,
        }
        Ok(Self {
            kind,
            quadrature_tolerance,
            ln_beta_ab,
        })
    }

    pub fn uniform() -> Self {
        Self::new(DistKind::Uniform).expect("uniform prior is valid")
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(DistKind::Beta { alpha, beta })
    }

    pub fn piecewise(knots: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(DistKind::Piecewise { knots })
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn quadrature_tolerance(&self) -> f64 {
        self.quadrature_tolerance
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        Ok(self.cdf_at(t))
    }

    pub fn density(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        Ok(self.density_at(t))
    }

    /// `∫_t^1 x dF(x)`.
    pub fn partial_moment(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        Ok(self.partial_moment_at(t))
    }

    /// `E[t' | t' >= t]`.
    pub fn truncated_mean(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        self.truncated_mean_at(t)
    }

    pub fn mean(&self) -> f64 {
        self.partial_moment_at(0.0)
    }

    /// `ψ(t) = t − (1 − F(t)) / f(t)`, with the density floored.
    pub fn virtual_value(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        Ok(self.virtual_value_at(t))
    }

    /// Inverse CDF, used to draw types from uniform variates.
    pub fn quantile(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match &self.kind {
            DistKind::Uniform => v,
            DistKind::Beta { alpha, beta } => inv_beta_reg(*alpha, *beta, v),
            DistKind::Piecewise { knots } => {
                let k = knots
                    .partition_point(|kn| kn[1] <= v)
                    .clamp(1, knots.len() - 1);
                let ([t0, f0], [t1, f1]) = (knots[k - 1], knots[k]);
                t0 + (v - f0) * (t1 - t0) / (f1 - f0)
            }
        }
    }

    /// Same quantity as [`partial_moment`](Self::partial_moment) through the
    /// integration-by-parts route `1 − t F(t) − ∫_t^1 F(x) dx`.
    pub fn partial_moment_by_quadrature(&self, t: f64) -> Result<f64> {
        check_unit("t", t)?;
        let integral_cdf = match &self.kind {
            DistKind::Piecewise { knots } => {
                let mut pts = vec![t];
                pts.extend(knots.iter().map(|k| k[0]).filter(|&x| x > t && x < 1.0));
                pts.push(1.0);
                quadrature::over_segments(&pts, 4, |x| self.cdf_at(x))
            }
            _ => quadrature::graded(t, 1.0, 20, |x| self.cdf_at(x)),
        };
        Ok(1.0 - t * self.cdf_at(t) - integral_cdf)
    }

    /// `1 − F(t)`, evaluated without cancellation near `t = 1`.
    pub(crate) fn survival_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        match &self.kind {
            DistKind::Uniform => 1.0 - t,
            DistKind::Beta { alpha, beta } => beta_reg(*beta, *alpha, 1.0 - t),
            DistKind::Piecewise { .. } => 1.0 - self.cdf_at(t),
        }
    }

    pub(crate) fn cdf_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        match &self.kind {
            DistKind::Uniform => t,
            DistKind::Beta { alpha, beta } => beta_reg(*alpha, *beta, t),
            DistKind::Piecewise { knots } => {
                let k = knots
                    .partition_point(|kn| kn[0] <= t)
                    .clamp(1, knots.len() - 1);
                let ([t0, f0], [t1, f1]) = (knots[k - 1], knots[k]);
                f0 + (t - t0) * (f1 - f0) / (t1 - t0)
            }
        }
    }

    /// Density; right-sided slope at interior knots of a piecewise prior.
    pub(crate) fn density_at(&self, t: f64) -> f64 {
        match &self.kind {
            DistKind::Uniform => 1.0,
            DistKind::Beta { alpha, beta } => {
                if t <= 0.0 || t >= 1.0 {
                    let edge = if t <= 0.0 { *alpha } else { *beta };
                    return if edge < 1.0 {
                        f64::INFINITY
                    } else if edge > 1.0 {
                        0.0
                    } else {
                        // alpha or beta equal to one: finite boundary density
                        (-self.ln_beta_ab).exp()
                    };
                }
                ((alpha - 1.0) * t.ln() + (beta - 1.0) * (1.0 - t).ln() - self.ln_beta_ab).exp()
            }
            DistKind::Piecewise { knots } => {
                let k = if t >= 1.0 {
                    knots.len() - 1
                } else {
                    knots
                        .partition_point(|kn| kn[0] <= t)
                        .clamp(1, knots.len() - 1)
                };
                let ([t0, f0], [t1, f1]) = (knots[k - 1], knots[k]);
                (f1 - f0) / (t1 - t0)
            }
        }
    }

    pub(crate) fn partial_moment_at(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let t = t.max(0.0);
        match &self.kind {
            DistKind::Uniform => 0.5 * (1.0 - t) * (1.0 + t),
            DistKind::Beta { alpha, beta } => {
                let m = alpha / (alpha + beta);
                if t == 0.0 {
                    m
                } else {
                    // 1 − I_t(a+1, b) = I_{1−t}(b, a+1)
                    m * beta_reg(*beta, alpha + 1.0, 1.0 - t)
                }
            }
            DistKind::Piecewise { knots } => {
                let mut pts = vec![t];
                pts.extend(knots.iter().map(|k| k[0]).filter(|&x| x > t && x < 1.0));
                pts.push(1.0);
                // x·f(x) is linear on each segment, so one 4-node panel is exact
                quadrature::over_segments(&pts, 4, |x| x * self.density_at(x))
            }
        }
    }

    pub(crate) fn truncated_mean_at(&self, t: f64) -> Result<f64> {
        let tail = self.survival_at(t);
        if tail < TRUNCATION_FLOOR {
            return Err(Error::DegenerateTruncation(t));
        }
        Ok((self.partial_moment_at(t) / tail).clamp(t, 1.0))
    }

    /// `E[t' | t' < t]`; zero when `F(t) = 0`.
    pub(crate) fn lower_mean_at(&self, t: f64) -> f64 {
        let mass = self.cdf_at(t);
        if mass <= 0.0 {
            return 0.0;
        }
        ((self.mean() - self.partial_moment_at(t)) / mass).clamp(0.0, t)
    }

    pub(crate) fn virtual_value_at(&self, t: f64) -> f64 {
        t - self.survival_at(t) / self.density_at(t).max(DENSITY_FLOOR)
    }

    /// `∫_x^1 (1 − F(t)) dt = E[(t − x)^+]`.
    pub(crate) fn upper_survival_integral(&self, x: f64) -> f64 {
        (self.partial_moment_at(x) - x * self.survival_at(x)).max(0.0)
    }
}

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}

fn validate_knots(knots: &[[f64; 2]]) -> Result<()> {
    let bad = |msg: &str| {
        Err(Error::InvalidDistribution(format!(
            "piecewise knots: {msg}"
        )))
    };
    if knots.len() < 2 {
        return bad("need at least two knots");
    }
    if knots[0] != [0.0, 0.0] || knots[knots.len() - 1] != [1.0, 1.0] {
        return bad("must start at (0, 0) and end at (1, 1)");
    }
    for w in knots.windows(2) {
        if !(w[1][0] > w[0][0]) {
            return bad("abscissae must be strictly increasing");
        }
        if !(w[1][1] > w[0][1]) {
            // a flat segment is a gap in the support; a jump is an atom
            return bad("CDF must be strictly increasing (full support, no atoms)");
        }
    }
    Ok(())
}
