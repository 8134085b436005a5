//! Monte Carlo population risk and excess risk.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::loss::LossKernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Sample mean with its standard error. For a plain mean the jackknife
/// standard error reduces to `s / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// A difference of risks must not be materially negative.
    pub fn check_nonnegative(self) -> Result<Self> {
        if self.mean < -3.0 * self.std_err {
            return Err(Error::EstimatorInconsistency {
                estimate: self.mean,
                std_err: self.std_err,
            });
        }
        Ok(self)
    }
}

fn require_risk_moments(spec: &DistributionSpec, p: f64) -> Result<()> {
    let report = spec.moment_exists(p);
    if !report.all() {
        return Err(Error::MomentViolation(format!(
            "the risk needs finite moments of order {p} for every coordinate and the response ({report:?})"
        )));
    }
    Ok(())
}

fn check_weights(spec: &DistributionSpec, w: &DVector<f64>) -> Result<()> {
    if w.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "weights have length {} but the spec has d = {}",
            w.len(),
            spec.dim()
        )));
    }
    Ok(())
}

/// `R_p(w) = E ℓ_p(⟨w, X⟩ - Y)` on a fresh stream of `opts.samples` draws.
pub fn population_risk(
    spec: &DistributionSpec,
    p: f64,
    w: &DVector<f64>,
    opts: &McOptions,
) -> Result<McEstimate> {
    let kernel = LossKernel::new(p)?;
    check_weights(spec, w)?;
    require_risk_moments(spec, p)?;
    let ds = spec.sample(opts.samples, opts.seed)?;
    let r = ds.residuals(w);
    let values: Vec<f64> = r.iter().map(|&t| kernel.loss(t)).collect();
    Ok(McEstimate::from_values(&values))
}

/// Per-row Bregman terms `ℓ(r* + u) - ℓ(r*) - ℓ'(r*) u` with `r*` the residual
/// at `w_star` and `u = ⟨w - w_star, X⟩`. Their mean is an unbiased estimate
/// of `R_p(w) - R_p(w*_p)` because `E[ℓ'(r*) X] = 0` at the minimizer, and
/// every term is nonnegative by convexity.
pub fn bregman_terms(
    kernel: &LossKernel,
    eval: &Dataset,
    w: &DVector<f64>,
    w_star: &DVector<f64>,
) -> Vec<f64> {
    let r_star = eval.residuals(w_star);
    let u = &eval.design * (w - w_star);
    r_star
        .iter()
        .zip(u.iter())
        .map(|(&rs, &ui)| {
            let b = kernel.loss(rs + ui) - kernel.loss(rs) - kernel.grad(rs) * ui;
            b.max(0.0)
        })
        .collect()
}

/// `R_p(w) - R_p(w*_p)` using common random numbers, with `w*_p = w*`
/// (the noise is symmetric and independent of `X`).
pub fn excess_risk(
    spec: &DistributionSpec,
    p: f64,
    w: &DVector<f64>,
    opts: &McOptions,
) -> Result<McEstimate> {
    let kernel = LossKernel::new(p)?;
    check_weights(spec, w)?;
    require_risk_moments(spec, p)?;
    let eval = spec.sample(opts.samples, opts.seed)?;
    McEstimate::from_values(&bregman_terms(&kernel, &eval, w, &spec.target())).check_nonnegative()
}

/// `½ ‖w - w*‖²_Σ` with `Σ = E[X Xᵀ]`, the exact excess risk at `p = 2`.
pub fn excess_risk_p2_closed_form(spec: &DistributionSpec, w: &DVector<f64>) -> Option<f64> {
    let sigma = spec.second_moment_matrix()?;
    let delta = w - spec.target();
    Some(0.5 * delta.dot(&(sigma * &delta)))
}

/// `½ (‖w - w*‖²_Σ + Var ε)`, the exact risk at `p = 2`.
pub fn population_risk_p2_closed_form(spec: &DistributionSpec, w: &DVector<f64>) -> Option<f64> {
    Some(excess_risk_p2_closed_form(spec, w)? + 0.5 * spec.noise_variance()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{CovariateFamily, NoiseFamily};

    fn opts(seed: u64) -> McOptions {
        McOptions {
            samples: 200_000,
            seed,
        }
    }

    #[test]
    fn risk_at_target_is_half_noise_variance() {
        let spec = DistributionSpec::gaussian_identity(
            3,
            vec![1.0, 2.0, 3.0],
            NoiseFamily::Gaussian { sd: 1.0 },
        );
        let est = population_risk(&spec, 2.0, &spec.target(), &opts(1)).unwrap();
        assert!((est.mean - 0.5).abs() < 3.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn noiseless_risk_is_half_squared_shift() {
        let spec = DistributionSpec::gaussian_identity(2, vec![0.0, 0.0], NoiseFamily::None);
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let est = population_risk(&spec, 2.0, &w, &opts(2)).unwrap();
        assert!((est.mean - 0.5).abs() < 3.0 * est.std_err, "{est:?}");
        assert_eq!(population_risk_p2_closed_form(&spec, &w), Some(0.5));
    }

    #[test]
    fn heavy_covariates_reject_high_order_risk() {
        let spec = DistributionSpec {
            covariates: CovariateFamily::StudentT {
                dof: 3.0,
                scale: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            },
            intercept: false,
            target_weights: vec![1.0, 1.0],
            noise: NoiseFamily::Gaussian { sd: 1.0 },
        };
        let err = population_risk(&spec, 4.0, &spec.target(), &opts(3)).unwrap_err();
        assert!(matches!(err, Error::MomentViolation(_)));
        assert!(population_risk(&spec, 2.0, &spec.target(), &opts(3)).is_ok());
    }

    #[test]
    fn excess_risk_zero_at_target_and_quadratic_at_p2() {
        let spec =
            DistributionSpec::gaussian_identity(4, vec![1.0; 4], NoiseFamily::Gaussian { sd: 1.0 });
        let at = excess_risk(&spec, 1.5, &spec.target(), &opts(4)).unwrap();
        assert_eq!(at.mean, 0.0);
        let w = spec.target() + DVector::from_vec(vec![0.1, -0.2, 0.0, 0.3]);
        let est = excess_risk(&spec, 2.0, &w, &opts(5)).unwrap();
        let exact = excess_risk_p2_closed_form(&spec, &w).unwrap();
        assert!((exact - 0.07).abs() < 1e-15);
        assert!(
            (est.mean - exact).abs() < 3.0 * est.std_err,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn excess_risk_matches_difference_of_risks() {
        let spec = DistributionSpec::gaussian_identity(
            2,
            vec![1.0, -1.0],
            NoiseFamily::Laplace { scale: 1.0 },
        );
        let w = spec.target() + DVector::from_vec(vec![0.5, 0.5]);
        for p in [1.5, 3.0] {
            let o = opts(6);
            let diff = population_risk(&spec, p, &w, &o).unwrap().mean
                - population_risk(&spec, p, &spec.target(), &o).unwrap().mean;
            let est = excess_risk(&spec, p, &w, &o).unwrap();
            // Same stream, so the difference differs from the Bregman mean
            // only by the sample average of ℓ'(r*)u, which is O(1/sqrt(N)).
            assert!((diff - est.mean).abs() < 0.02 * est.mean.max(0.1), "p={p}");
        }
    }

    #[test]
    fn negative_estimates_beyond_three_standard_errors_are_flagged() {
        let bad = McEstimate {
            mean: -1e-3,
            std_err: 1e-4,
            samples: 10,
        };
        assert!(matches!(
            bad.check_nonnegative(),
            Err(Error::EstimatorInconsistency { .. })
        ));
        let ok = McEstimate {
            mean: -1e-4,
            std_err: 1e-4,
            samples: 10,
        };
        assert!(ok.check_nonnegative().is_ok());
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        let e = McEstimate::from_values(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.std_err, 0.0);
    }
}
