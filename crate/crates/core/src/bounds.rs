//! Closed-form sample-size thresholds and excess-risk bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!(
            "confidence level δ must lie in (0, 1], got {delta}"
        )));
    }
    Ok(())
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    Ok(())
}

fn check_v(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!(
            "V must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// `⌈196 σ² (d + 2 ln(4/δ))⌉`, the sample size above which the empirical
/// curvature is at least half the population curvature.
pub fn threshold(sigma_sq: f64, d: usize, delta: f64) -> Result<u64> {
    check_delta(delta)?;
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(sigma_sq >= 1.0) || !sigma_sq.is_finite() {
        return Err(Error::Domain(format!(
            "σ² must be finite and at least 1, got {sigma_sq}"
        )));
    }
    Ok((196.0 * sigma_sq * (d as f64 + 2.0 * (4.0 / delta).ln())).ceil() as u64)
}

/// A bound split into its `Θ(1/n)` leading term and its `o(1/n)` remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub leading: f64,
    pub higher_order: f64,
    pub total: f64,
}

impl BoundTerms {
    fn new(leading: f64, higher_order: f64) -> Self {
        Self {
            leading,
            higher_order,
            total: leading + higher_order,
        }
    }
}

/// `16 V / (n δ)`.
pub fn bound_p2(v: f64, n: u64, delta: f64) -> Result<BoundTerms> {
    check_v(v)?;
    check_n(n)?;
    check_delta(delta)?;
    Ok(BoundTerms::new(16.0 * v / (n as f64 * delta), 0.0))
}

/// `2048 p² V/(nδ) + (512 p⁴ c² V/(nδ))^{p/2}` with `c = C_{L^p→(L²,p)}`.
pub fn bound_pgeq2(v: f64, n: u64, delta: f64, p: f64, c_lp: f64) -> Result<BoundTerms> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::Domain(format!("this bound needs p > 2, got {p}")));
    }
    check_v(v)?;
    check_n(n)?;
    check_delta(delta)?;
    let base = v / (n as f64 * delta);
    let leading = 2048.0 * p * p * base;
    let higher = (512.0 * p.powi(4) * c_lp * c_lp * base).powf(p / 2.0);
    Ok(BoundTerms::new(leading, higher))
}

/// `(8192/(p-1)) V/(nδ) + (1/(p-1)) (524288 V σ_p^{6-2p} d^{2-p} c^{2-p} c*/(nδ))^{1/(p-1)}`
/// with `c = C²_{L²→(L²,p)}`.
#[allow(clippy::too_many_arguments)]
pub fn bound_pleq2(
    v: f64,
    n: u64,
    delta: f64,
    p: f64,
    sigma_p: f64,
    d: usize,
    c_l2: f64,
    c_star: f64,
) -> Result<BoundTerms> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Domain(format!(
            "this bound needs p in (1, 2), got {p}"
        )));
    }
    check_v(v)?;
    check_n(n)?;
    check_delta(delta)?;
    let base = v / (n as f64 * delta);
    let leading = 8192.0 / (p - 1.0) * base;
    let inner = 524288.0
        * base
        * sigma_p.powf(6.0 - 2.0 * p)
        * (d as f64).powf(2.0 - p)
        * c_l2.powf(2.0 - p)
        * c_star;
    let higher = inner.powf(1.0 / (p - 1.0)) / (p - 1.0);
    Ok(BoundTerms::new(leading, higher))
}

fn check_tail_args(n: u64, d: usize, rho: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if n < d as u64 {
        return Err(Error::Domain(format!("need n ≥ d, got n = {n}, d = {d}")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("ρ must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

/// `min(1, C(n, d-1) ρ^{n-d+1})`. Evaluated as an exact product while the
/// binomial coefficient and the power are representable, in log space
/// otherwise.
pub fn realizable_tail(n: u64, d: usize, rho: f64) -> Result<f64> {
    check_tail_args(n, d, rho)?;
    let k = (d - 1) as u64;
    let m = n - k;
    if rho == 0.0 {
        return Ok(0.0);
    }
    let mut binom = 1.0f64;
    for i in 0..k {
        binom = binom * (n - i) as f64 / (i + 1) as f64;
    }
    let pow = if m <= i32::MAX as u64 {
        rho.powi(m as i32)
    } else {
        0.0
    };
    let value = if binom.is_finite() && binom < 9.0e15 && pow.is_normal() {
        binom * pow
    } else {
        (ln_binomial(n, k) + m as f64 * rho.ln()).exp()
    };
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoRegime {
    /// `0 ≤ ρ < e^{-1}`
    Low,
    /// `e^{-1} ≤ ρ < e^{-1/e}`
    Middle,
    /// `e^{-1/e} ≤ ρ < 1`
    High,
}

impl RhoRegime {
    pub fn of(rho: f64) -> Self {
        let e = std::f64::consts::E;
        if rho < (-1.0f64).exp() {
            Self::Low
        } else if rho < (-1.0 / e).exp() {
            Self::Middle
        } else {
            Self::High
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Low => "0 <= rho < e^-1",
            Self::Middle => "e^-1 <= rho < e^-1/e",
            Self::High => "e^-1/e <= rho < 1",
        }
    }
}

/// Smallest `n ≥ d` with `realizable_tail(n, d, ρ) ≤ δ`, and the regime of `ρ`.
///
/// The tail is log-concave in `n`, so it rises to a single peak and then
/// decreases. If `tail(d) ≤ δ` the sequence is already decreasing at `d`
/// (a rise at `d` forces `tail(d) = dρ > 1`), so `d` is the answer. Otherwise
/// the answer lies past the peak, where the tail is monotone and an
/// exponential-then-binary search applies.
pub fn realizable_sample_size(d: usize, delta: f64, rho: f64) -> Result<(u64, RhoRegime)> {
    check_delta(delta)?;
    check_tail_args(d as u64, d, rho)?;
    let regime = RhoRegime::of(rho);
    let tail = |n: u64| realizable_tail(n, d, rho);
    let d64 = d as u64;
    if tail(d64)? <= delta {
        return Ok((d64, regime));
    }
    // Past the peak: tail(n+1)/tail(n) = (n+1)ρ/(n-d+2) ≤ 1.
    let peak = ((d as f64 - 2.0 + rho) / (1.0 - rho)).ceil().max(d as f64) as u64;
    let mut lo = peak;
    if tail(lo)? <= delta {
        // Only possible when the peak itself is at d, handled above.
        return Ok((lo, regime));
    }
    let mut step = 1u64;
    let mut hi = lo + step;
    while tail(hi)? > delta {
        lo = hi;
        step = step.saturating_mul(2);
        hi = hi
            .checked_add(step)
            .ok_or_else(|| Error::Domain("sample size search overflowed".into()))?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail(mid)? <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, regime))
}

/// `(d + ln(1/δ)) / (1 - ρ)²` with unit constant, for comparison only.
pub fn vc_threshold_shape(d: usize, delta: f64, rho: f64) -> Result<f64> {
    check_delta(delta)?;
    check_tail_args(d as u64, d, rho)?;
    Ok((d as f64 + (1.0 / delta).ln()) / (1.0 - rho).powi(2))
}

/// `1 - 7 σ sqrt((d + 2 ln(2/δ)) / n)`; nonpositive values are vacuous.
pub fn lower_tail_factor(sigma: f64, d: usize, delta: f64, n: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(n > 0.0) || !(sigma > 0.0) || d == 0 {
        return Err(Error::Domain(
            "lower tail factor needs positive σ, d and n".into(),
        ));
    }
    Ok(1.0 - 7.0 * sigma * ((d as f64 + 2.0 * (2.0 / delta).ln()) / n).sqrt())
}

/// `sqrt(2V/(nδ))`, the `1 - δ/2` quantile bound on `‖∇R_{p,n}(w*_p)‖_{H_p⁻¹}`.
pub fn markov_grad_bound(v: f64, n: u64, delta: f64) -> Result<f64> {
    check_v(v)?;
    check_n(n)?;
    check_delta(delta)?;
    Ok((2.0 * v / (n as f64 * delta)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// `p = 2`.
    T1,
    /// Realizable recovery.
    T3,
    /// `p > 2`.
    T4,
    /// `p ∈ (1, 2)`.
    T5,
}

impl Theorem {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Self::T1),
            3 => Ok(Self::T3),
            4 => Ok(Self::T4),
            5 => Ok(Self::T5),
            _ => Err(Error::Domain(format!(
                "no bound for theorem {k}; expected 1, 3, 4 or 5"
            ))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::T1 => 1,
            Self::T3 => 3,
            Self::T4 => 4,
            Self::T5 => 5,
        }
    }

    /// The bound that applies to exponent `p` in the noisy case.
    pub fn for_exponent(p: f64) -> Result<Self> {
        if p == 2.0 {
            Ok(Self::T1)
        } else if p > 2.0 {
            Ok(Self::T4)
        } else if p > 1.0 {
            Ok(Self::T5)
        } else {
            Err(Error::InvalidExponent(p))
        }
    }
}

/// Constants a bound may need; fields unused by a theorem are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundInputs {
    pub v: f64,
    pub sigma_p_sq: f64,
    pub c_p_lp: f64,
    pub c_p_l2: f64,
    pub c_star_p: f64,
    pub rho: f64,
}

/// One evaluated bound. Flat, so it serializes to a one-row CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: u8,
    pub p: f64,
    pub d: usize,
    pub n: u64,
    pub delta: f64,
    pub v: f64,
    pub sigma_p_sq: f64,
    pub c_p_lp: f64,
    pub c_p_l2: f64,
    pub c_star_p: f64,
    pub rho: f64,
    pub threshold_n: u64,
    pub threshold_met: bool,
    pub bound_value: f64,
    pub leading_term: f64,
    pub higher_order_term: f64,
    pub regime: Option<String>,
    pub vc_threshold_shape: Option<f64>,
}

impl BoundReport {
    /// Evaluate `theorem`. For the realizable theorem the bound is the
    /// failure probability and the threshold is the sample size reaching δ.
    pub fn evaluate(
        theorem: Theorem,
        p: f64,
        d: usize,
        n: u64,
        delta: f64,
        c: &BoundInputs,
    ) -> Result<Self> {
        let mut report = Self {
            theorem: theorem.number(),
            p,
            d,
            n,
            delta,
            v: c.v,
            sigma_p_sq: c.sigma_p_sq,
            c_p_lp: c.c_p_lp,
            c_p_l2: c.c_p_l2,
            c_star_p: c.c_star_p,
            rho: c.rho,
            threshold_n: 0,
            threshold_met: false,
            bound_value: 0.0,
            leading_term: 0.0,
            higher_order_term: 0.0,
            regime: None,
            vc_threshold_shape: None,
        };
        let terms = match theorem {
            Theorem::T3 => {
                let tail = realizable_tail(n, d, c.rho)?;
                let (needed, regime) = realizable_sample_size(d, delta, c.rho)?;
                report.threshold_n = needed;
                report.regime = Some(regime.label().into());
                report.vc_threshold_shape = Some(vc_threshold_shape(d, delta, c.rho)?);
                BoundTerms::new(tail, 0.0)
            }
            Theorem::T1 => {
                report.threshold_n = threshold(c.sigma_p_sq, d, delta)?;
                bound_p2(c.v, n, delta)?
            }
            Theorem::T4 => {
                report.threshold_n = threshold(c.sigma_p_sq, d, delta)?;
                bound_pgeq2(c.v, n, delta, p, c.c_p_lp)?
            }
            Theorem::T5 => {
                report.threshold_n = threshold(c.sigma_p_sq, d, delta)?;
                bound_pleq2(
                    c.v,
                    n,
                    delta,
                    p,
                    c.sigma_p_sq.sqrt(),
                    d,
                    c.c_p_l2,
                    c.c_star_p,
                )?
            }
        };
        report.threshold_met = n >= report.threshold_n;
        report.bound_value = terms.total;
        report.leading_term = terms.leading;
        report.higher_order_term = terms.higher_order;
        Ok(report)
    }

    /// Header plus one data row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.serialize(self)?;
        w.flush()?;
        Ok(())
    }
}
