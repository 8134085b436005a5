//! Monte Carlo gradient and Hessian of `R_p` against central finite
//! differences on the same draws.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::loss::LossKernel;
use crate::par;
use crate::risk::McOptions;
use crate::rng::{derive_seed, seeded};

pub const DERIVATIVE_TOL: f64 = 1e-3;
const PROBE_RADIUS: f64 = 0.01;
const GRAD_STEP: f64 = 1e-4;
const HESS_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCheck {
    pub weights: Vec<f64>,
    pub grad_rel_err: f64,
    pub hess_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub p: f64,
    pub samples: usize,
    pub probes: Vec<ProbeCheck>,
    pub max_grad_rel_err: f64,
    pub max_hess_rel_err: f64,
    /// Largest `|∂_j R_p(w*_p)| / s.e.` over coordinates.
    pub grad_at_target_max_z: f64,
    /// `‖H_mc(w*) - E[X Xᵀ]‖_F / ‖E[X Xᵀ]‖_F` at `p = 2` when `E[X Xᵀ]` is
    /// known; limited by Monte Carlo error.
    pub p2_hessian_rel_err: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

struct Stream<'a> {
    kernel: LossKernel,
    ds: &'a Dataset,
}

impl Stream<'_> {
    fn n(&self) -> usize {
        self.ds.n()
    }

    fn residual(&self, i: usize, w: &DVector<f64>) -> f64 {
        self.ds.design.row(i).transpose().dot(w) - self.ds.response[i]
    }

    fn risk(&self, w: &DVector<f64>) -> f64 {
        par::sum_f64(self.n(), |i| self.kernel.loss(self.residual(i, w))) / self.n() as f64
    }

    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        let d = w.len();
        let s = par::sum_vec(self.n(), d, |i, acc| {
            let g = self.kernel.grad(self.residual(i, w));
            for (j, a) in acc.iter_mut().enumerate() {
                *a += g * self.ds.design[(i, j)];
            }
        });
        DVector::from_vec(s) / self.n() as f64
    }

    /// Per-coordinate standard errors of the gradient mean.
    fn grad_std_err(&self, w: &DVector<f64>) -> DVector<f64> {
        let d = w.len();
        let n = self.n() as f64;
        let g = self.grad(w);
        let s = par::sum_vec(self.n(), d, |i, acc| {
            let gi = self.kernel.grad(self.residual(i, w));
            for (j, a) in acc.iter_mut().enumerate() {
                *a += (gi * self.ds.design[(i, j)]).powi(2);
            }
        });
        DVector::from_fn(d, |j, _| {
            ((s[j] / n - g[j] * g[j]).max(0.0) / (n - 1.0).max(1.0)).sqrt()
        })
    }

    /// Typical size of a gradient component, for relative errors near `w*`.
    fn grad_scale(&self, w: &DVector<f64>) -> f64 {
        par::sum_f64(self.n(), |i| {
            self.kernel.grad(self.residual(i, w)).abs() * self.ds.design.row(i).norm()
        }) / self.n() as f64
    }

    fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = w.len();
        let r = self.ds.residuals(w);
        let mut weights = Vec::with_capacity(r.len());
        for &t in r.iter() {
            weights.push(self.kernel.hess(t)?);
        }
        let s = par::sum_vec(self.n(), d * d, |i, acc| {
            let x = self.ds.design.row(i);
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b] += weights[i] * x[a] * x[b];
                }
            }
        });
        Ok(DMatrix::from_row_slice(d, d, &s) / self.n() as f64)
    }

    fn fd_grad(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(w.len(), |j, _| {
            let mut a = w.clone();
            let mut b = w.clone();
            a[j] += GRAD_STEP;
            b[j] -= GRAD_STEP;
            (self.risk(&a) - self.risk(&b)) / (2.0 * GRAD_STEP)
        })
    }

    fn fd_hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let d = w.len();
        let mut h = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut a = w.clone();
            let mut b = w.clone();
            a[j] += HESS_STEP;
            b[j] -= HESS_STEP;
            let col = (self.grad(&a) - self.grad(&b)) / (2.0 * HESS_STEP);
            h.set_column(j, &col);
        }
        crate::linalg::symmetrize(&h)
    }
}

fn require_hypotheses(spec: &DistributionSpec, p: f64) -> Result<()> {
    let report = spec.moment_exists(p);
    if !report.all() {
        return Err(Error::MomentViolation(format!(
            "R_p needs finite moments of order {p} ({report:?})"
        )));
    }
    if p < 2.0 && !spec.residual_moment_exists(p - 2.0) {
        return Err(Error::MomentViolation(format!(
            "the Hessian needs E|r*|^{} finite",
            p - 2.0
        )));
    }
    Ok(())
}

/// Compare the Monte Carlo gradient and Hessian of `R_p` with finite
/// differences at `w*_p` and at `probes - 1` points within about `0.01` of it.
pub fn derivative_check_campaign(
    spec: &DistributionSpec,
    p: f64,
    probes: usize,
    mc: &McOptions,
    seed: u64,
) -> Result<DerivativeReport> {
    let kernel = LossKernel::new(p)?;
    require_hypotheses(spec, p)?;
    if probes == 0 {
        return Err(Error::Domain("probes must be at least 1".into()));
    }
    let stream_seed = if mc.seed != 0 {
        mc.seed
    } else {
        derive_seed(seed, &[0xd1])
    };
    let ds = spec.sample(mc.samples, stream_seed)?;
    let stream = Stream { kernel, ds: &ds };
    let w_star = spec.target();
    let d = w_star.len();
    let mut rng = seeded(derive_seed(seed, &[0xd2]));
    let mut points = vec![w_star.clone()];
    for _ in 1..probes {
        let u = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        points.push(&w_star + u.normalize() * PROBE_RADIUS);
    }

    let mut checks = Vec::with_capacity(probes);
    for w in &points {
        let g = stream.grad(w);
        let g_fd = stream.fd_grad(w);
        let g_scale = g_fd.norm().max(stream.grad_scale(w));
        let h = stream.hessian(w)?;
        let h_fd = stream.fd_hessian(w);
        checks.push(ProbeCheck {
            weights: w.iter().copied().collect(),
            grad_rel_err: (&g - &g_fd).norm() / g_scale,
            hess_rel_err: (&h - &h_fd).norm() / h_fd.norm(),
        });
    }

    let g0 = stream.grad(&w_star);
    let se = stream.grad_std_err(&w_star);
    let grad_at_target_max_z = g0
        .iter()
        .zip(se.iter())
        .map(|(g, s)| if *s > 0.0 { g.abs() / s } else { 0.0 })
        .fold(0.0, f64::max);
    let p2_hessian_rel_err = if p == 2.0 {
        spec.second_moment_matrix().map(|s| {
            let h = stream.hessian(&w_star).expect("p = 2 Hessian is total");
            (h - &s).norm() / s.norm()
        })
    } else {
        None
    };
    let max_grad_rel_err = checks.iter().map(|c| c.grad_rel_err).fold(0.0, f64::max);
    let max_hess_rel_err = checks.iter().map(|c| c.hess_rel_err).fold(0.0, f64::max);
    Ok(DerivativeReport {
        p,
        samples: mc.samples,
        probes: checks,
        max_grad_rel_err,
        max_hess_rel_err,
        grad_at_target_max_z,
        p2_hessian_rel_err,
        tolerance: DERIVATIVE_TOL,
        passed: max_grad_rel_err <= DERIVATIVE_TOL && max_hess_rel_err <= DERIVATIVE_TOL,
    })
}
