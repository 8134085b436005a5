//! Seeded random suites for the scalar inequalities of the loss and `γ_p`.
//! Each suite counts violations beyond a relative slack of `1e-12`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{LossKernel, CHECK_SLACK};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub draws: usize,
    pub violations: usize,
    /// Smallest `(lhs - rhs) / max(1, |lhs|, |rhs|)` seen, oriented so that
    /// negative means violated.
    pub worst_relative_margin: f64,
    /// `(p, a, b)` at the worst margin.
    pub worst_input: [f64; 3],
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

struct Tally {
    report: SuiteReport,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            report: SuiteReport {
                name: name.into(),
                draws: 0,
                violations: 0,
                worst_relative_margin: f64::INFINITY,
                worst_input: [f64::NAN; 3],
            },
        }
    }

    /// Record `big ≥ small`.
    fn ge(&mut self, big: f64, small: f64, input: [f64; 3]) {
        let scale = 1f64.max(big.abs()).max(small.abs());
        let margin = (big - small) / scale;
        if !(margin >= -CHECK_SLACK) {
            self.report.violations += 1;
        }
        if margin < self.report.worst_relative_margin || margin.is_nan() {
            self.report.worst_relative_margin = margin;
            self.report.worst_input = input;
        }
    }
}

/// Standard normal times `Uniform(0.01, 100)`.
fn scaled_normal<R: Rng>(rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * rng.random_range(0.01..100.0)
}

/// `ℓ(t) - ℓ(s) - ℓ'(s)(t-s) ≥ ℓ''(s)(t-s)² / (8(p-1))` for `p ~ U(2, 6]`.
pub fn sandwich_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded(seed);
    let mut tally = Tally::new("sandwich_pgeq2");
    for _ in 0..draws {
        let p = 6.0 - rng.random_range(0.0..4.0);
        let (s, t) = (scaled_normal(&mut rng), scaled_normal(&mut rng));
        let w = LossKernel::new(p)?.check_sandwich_pgeq2(s, t)?;
        tally.ge(w.lhs, w.rhs, [p, s, t]);
        tally.report.draws += 1;
    }
    Ok(tally.report)
}

/// `γ_p(|s|, |t-s|) ≤ ℓ''(s)(t-s)²` and
/// `ℓ(t) - ℓ(s) - ℓ'(s)(t-s) ≤ 4/(p(p-1)) γ_p(|s|, |t-s|)` for
/// `p ~ U(1.05, 1.95)`, `s ≠ 0`.
pub fn gamma_upper_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded(seed);
    let mut tally = Tally::new("gamma_upper_pleq2");
    while tally.report.draws < draws {
        let p = rng.random_range(1.05..1.95);
        let (s, t) = (scaled_normal(&mut rng), scaled_normal(&mut rng));
        if s == 0.0 {
            continue;
        }
        let w = LossKernel::new(p)?.check_gamma_upper_pleq2(s, t)?;
        tally.ge(w.curvature_term, w.gamma, [p, s, t]);
        tally.ge(w.remainder_bound, w.remainder, [p, s, t]);
        tally.report.draws += 1;
    }
    Ok(tally.report)
}

/// `γ_p(t, λx) ≥ min{λ², λ^p} γ_p(t, x)` for `λ ≥ 0`, with equality at
/// `λ ∈ {0, 1}`.
pub fn gamma_scaling_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded(seed);
    let mut tally = Tally::new("gamma_scaling");
    for k in 0..draws {
        let p = rng.random_range(1.05..1.95);
        let kernel = LossKernel::new(p)?;
        let t = scaled_normal(&mut rng).abs();
        let x = scaled_normal(&mut rng).abs();
        let lambda = match k % 50 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..10.0),
        };
        let base = kernel.gamma(t, x)?;
        let scaled = kernel.gamma(t, lambda * x)?;
        let factor = (lambda * lambda).min(lambda.powf(p));
        tally.ge(scaled, factor * base, [p, t, lambda * x]);
        if lambda == 0.0 || lambda == 1.0 {
            tally.ge(factor * base, scaled, [p, t, lambda * x]);
        }
        tally.report.draws += 1;
    }
    Ok(tally.report)
}

/// `γ_p(t, x)` nonincreasing in `t`, nondecreasing in `x`, and continuous
/// across `x = t` where both branches equal `(p/2) t^p`.
pub fn gamma_monotone_suite(draws: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = seeded(seed);
    let mut tally = Tally::new("gamma_monotone");
    for _ in 0..draws {
        let p = rng.random_range(1.05..1.95);
        let kernel = LossKernel::new(p)?;
        let (a, b) = (scaled_normal(&mut rng).abs(), scaled_normal(&mut rng).abs());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let x = scaled_normal(&mut rng).abs();
        tally.ge(kernel.gamma(lo, x)?, kernel.gamma(hi, x)?, [p, lo, hi]);
        let t = scaled_normal(&mut rng).abs();
        tally.ge(kernel.gamma(t, hi)?, kernel.gamma(t, lo)?, [p, t, lo]);
        let quad = 0.5 * p * t.powf(p);
        let power = t.powf(p) - (1.0 - 0.5 * p) * t.powf(p);
        tally.ge(quad, power, [p, t, t]);
        tally.ge(power, quad, [p, t, t]);
        tally.report.draws += 1;
    }
    Ok(tally.report)
}

/// Run every suite with `draws` draws each.
pub fn run_selftest(draws: usize, seed: u64) -> Result<SelftestReport> {
    let suites = vec![
        sandwich_suite(draws, derive_seed(seed, &[1]))?,
        gamma_upper_suite(draws, derive_seed(seed, &[2]))?,
        gamma_scaling_suite(draws, derive_seed(seed, &[3]))?,
        gamma_monotone_suite(draws, derive_seed(seed, &[4]))?,
    ];
    let passed = suites.iter().all(SuiteReport::passed);
    Ok(SelftestReport {
        seed,
        suites,
        passed,
    })
}
