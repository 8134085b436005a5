//! The scalar p-th power loss `ℓ_p(t) = |t|^p / (p(p-1))`, its derivatives,
//! the piecewise approximation `γ_p` used for `p ∈ (1, 2)`, and executable
//! forms of the pointwise inequalities that tie the loss to its second-order
//! Taylor expansion.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|t|^e` with an explicit zero short-circuit so that `ln(0)` never appears.
#[inline]
pub(crate) fn abs_pow(t: f64, e: f64) -> f64 {
    let a = t.abs();
    if a == 0.0 {
        if e == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        a.powf(e)
    }
}

/// Relative slack used by the inequality checkers to absorb rounding.
pub const CHECK_SLACK: f64 = 1e-12;

fn slack(lhs: f64, rhs: f64) -> f64 {
    CHECK_SLACK * 1f64.max(lhs.abs()).max(rhs.abs())
}

/// Both sides of a checked inequality `lhs ≥ rhs` (or `lhs ≤ rhs`), with the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl Witness {
    /// Signed distance to violation; negative means violated.
    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Witness pair for the `p ∈ (1, 2)` upper bounds:
/// `γ_p(|s|, |t-s|) ≤ ℓ''(s)(t-s)²` and
/// `remainder ≤ 4/(p(p-1)) · γ_p(|s|, |t-s|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaUpperWitness {
    pub holds: bool,
    pub gamma: f64,
    pub curvature_term: f64,
    pub remainder: f64,
    pub remainder_bound: f64,
}

/// The loss `ℓ_p` for a fixed exponent `p > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossKernel {
    p: f64,
}

impl LossKernel {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::InvalidExponent(p));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    /// `|t|^p / (p(p-1))`.
    #[inline]
    pub fn loss(&self, t: f64) -> f64 {
        abs_pow(t, self.p) / (self.p * (self.p - 1.0))
    }

    /// `sign(t) |t|^{p-1} / (p-1)`.
    #[inline]
    pub fn grad(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        t.signum() * abs_pow(t, self.p - 1.0) / (self.p - 1.0)
    }

    /// `|t|^{p-2}`. Undefined (unbounded) at `t = 0` when `p < 2`.
    #[inline]
    pub fn hess(&self, t: f64) -> Result<f64> {
        if self.p < 2.0 && t == 0.0 {
            return Err(Error::Singularity { p: self.p, t });
        }
        Ok(self.hess_clamped(t, 0.0))
    }

    /// `max(|t|, floor)^{p-2}`; total for `floor > 0`.
    #[inline]
    pub fn hess_clamped(&self, t: f64, floor: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        abs_pow(t.abs().max(floor), self.p - 2.0)
    }

    /// The approximation `γ_p(t, x)` to `x^p`, defined for `p ∈ (1, 2)`:
    /// `(p/2) t^{p-2} x²` when `x ≤ t`, else `x^p - (1 - p/2) t^p`.
    pub fn gamma(&self, t: f64, x: f64) -> Result<f64> {
        if !(self.p < 2.0) {
            return Err(Error::Domain(format!(
                "gamma_p is defined for p in (1, 2), got p = {}",
                self.p
            )));
        }
        if t < 0.0 || x < 0.0 || t.is_nan() || x.is_nan() {
            return Err(Error::Domain(format!(
                "gamma_p needs nonnegative arguments, got t = {t}, x = {x}"
            )));
        }
        Ok(gamma_unchecked(self.p, t, x))
    }

    /// `ℓ(t) - ℓ(s) - ℓ'(s)(t - s)`.
    #[inline]
    pub fn taylor_remainder(&self, s: f64, t: f64) -> f64 {
        self.loss(t) - self.loss(s) - self.grad(s) * (t - s)
    }

    /// Quadratic lower bound for `p ≥ 2`:
    /// `remainder ≥ ℓ''(s)(t-s)² / (8(p-1))`.
    pub fn check_sandwich_pgeq2(&self, s: f64, t: f64) -> Result<Witness> {
        if self.p < 2.0 {
            return Err(Error::Domain(format!(
                "sandwich check needs p >= 2, got p = {}",
                self.p
            )));
        }
        let lhs = self.taylor_remainder(s, t);
        let d = t - s;
        let rhs = self.hess_clamped(s, 0.0) * d * d / (8.0 * (self.p - 1.0));
        Ok(Witness {
            holds: lhs >= rhs - slack(lhs, rhs),
            lhs,
            rhs,
        })
    }

    /// Upper bounds for `p ∈ (1, 2)` at a nonzero anchor `s`.
    pub fn check_gamma_upper_pleq2(&self, s: f64, t: f64) -> Result<GammaUpperWitness> {
        if s == 0.0 {
            return Err(Error::Domain("anchor s must be nonzero".into()));
        }
        let d = t - s;
        let gamma = self.gamma(s.abs(), d.abs())?;
        let curvature_term = self.hess(s)? * d * d;
        let remainder = self.taylor_remainder(s, t);
        let remainder_bound = 4.0 / (self.p * (self.p - 1.0)) * gamma;
        let first = gamma <= curvature_term + slack(gamma, curvature_term);
        let second = remainder <= remainder_bound + slack(remainder, remainder_bound);
        Ok(GammaUpperWitness {
            holds: first && second,
            gamma,
            curvature_term,
            remainder,
            remainder_bound,
        })
    }
}

/// `γ_p(t, x)` without argument validation; callers guarantee `t, x ≥ 0`.
#[inline]
pub(crate) fn gamma_unchecked(p: f64, t: f64, x: f64) -> f64 {
    if x <= t {
        if x == 0.0 {
            return 0.0;
        }
        0.5 * p * abs_pow(t, p - 2.0) * x * x
    } else {
        abs_pow(x, p) - (1.0 - 0.5 * p) * abs_pow(t, p)
    }
}
