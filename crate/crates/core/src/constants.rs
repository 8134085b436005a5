//! Estimators for the distribution-dependent constants: the curvature
//! matrix `H_p`, the rate functional `V_p`, the norm-equivalence constants
//! `σ_p²`, `C_{L^p→(L²,p)}`, `C²_{L²→(L²,p)}`, the negative moment `c*_p`, and
//! the truncation constants `ε`, `T*` used for `p < 2`.
//!
//! Every estimate built by [`estimate_constants`] comes from one shared
//! sample ([`MomentStream`]), so identities that hold pathwise, such as
//! `‖w‖_{L²,p} = ‖w‖_{H_p}`, also hold exactly for the estimates.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loss::{abs_pow, LossKernel};
use crate::par;
use crate::risk::McEstimate;
use crate::rng::{derive_seed, seeded};

/// Largest condition number accepted for an estimated `H_p`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantOptions {
    pub samples: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for ConstantOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            restarts: 32,
        }
    }
}

/// Covariates together with the residuals `r* = ⟨w*_p, X⟩ - Y` at the
/// population minimizer, drawn once and shared by every estimator.
#[derive(Debug, Clone)]
pub struct MomentStream {
    pub x: DMatrix<f64>,
    pub r: DVector<f64>,
    pub seed: u64,
}

impl MomentStream {
    pub fn new(spec: &DistributionSpec, samples: usize, seed: u64) -> Result<Self> {
        let ds = spec.sample(samples, seed)?;
        let r = ds.residuals(&spec.target());
        Ok(Self {
            x: ds.design,
            r,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `E[|⟨w, X⟩|^p]^{1/p}`.
    pub fn lp_norm(&self, w: &DVector<f64>, p: f64) -> f64 {
        let a = &self.x * w;
        (a.iter().map(|&v| abs_pow(v, p)).sum::<f64>() / self.len() as f64).powf(1.0 / p)
    }

    /// `E[(|r*|^{p-2} ⟨w, X⟩²)^{q/2}]^{1/q}`.
    pub fn lqp_norm(&self, w: &DVector<f64>, q: f64, p: f64) -> f64 {
        let a = &self.x * w;
        let s: f64 = a
            .iter()
            .zip(self.r.iter())
            .map(|(&ai, &ri)| abs_pow(abs_pow(ri, p - 2.0) * ai * ai, q / 2.0))
            .sum();
        (s / self.len() as f64).powf(1.0 / q)
    }

    /// `E[X Xᵀ]`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(self.x.tr_mul(&self.x) / self.len() as f64))
    }

    /// `E[|r*|^{p-2} X Xᵀ]`.
    pub fn curvature(&self, p: f64) -> Result<DMatrix<f64>> {
        let kernel = LossKernel::new(p)?;
        let mut scaled = self.x.clone();
        for mut col in scaled.column_iter_mut() {
            for (v, &ri) in col.iter_mut().zip(self.r.iter()) {
                *v *= kernel.hess(ri)?;
            }
        }
        Ok(linalg::symmetrize(
            &(self.x.tr_mul(&scaled) / self.len() as f64),
        ))
    }

    /// `E|r*|^{2(p-2)}`.
    pub fn c_star(&self, p: f64) -> McEstimate {
        let values: Vec<f64> = self
            .r
            .iter()
            .map(|&v| abs_pow(v, 2.0 * (p - 2.0)))
            .collect();
        McEstimate::from_values(&values)
    }
}

/// Result of a multi-start maximization on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSearch {
    pub value: f64,
    pub argmax: DVector<f64>,
    /// Value reached from each start, in start order.
    pub per_restart: Vec<f64>,
}

impl SphereSearch {
    /// Best value over the first `k` starts.
    pub fn best_of(&self, k: usize) -> f64 {
        self.per_restart[..k.min(self.per_restart.len())]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Projected gradient ascent of `f` on the unit sphere from `restarts`
/// starts: the coordinate frame first, then seeded Gaussian directions.
/// `f` returns the value and the Euclidean gradient.
pub fn maximize_on_sphere<F>(d: usize, restarts: usize, seed: u64, f: F) -> SphereSearch
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>) + Sync,
{
    let restarts = restarts.max(1);
    let runs: Vec<(f64, DVector<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let start = if k < d {
                let mut e = DVector::zeros(d);
                e[k] = 1.0;
                e
            } else {
                let mut rng = seeded(derive_seed(seed, &[k as u64]));
                let v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                v.normalize()
            };
            ascend(start, &f)
        })
        .collect();
    let per_restart: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (value, argmax) = runs
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one restart");
    SphereSearch {
        value,
        argmax,
        per_restart,
    }
}

/// One Riemannian Newton step on the sphere, with the Euclidean Hessian
/// taken by forward differences of `f`'s gradient. Curvature is replaced by
/// its absolute value so the step also escapes saddles; the step is halved
/// until `f` improves. `None` if it never does.
fn newton_step<F>(
    v: &DVector<f64>,
    fv: f64,
    g: &DVector<f64>,
    f: &F,
) -> Option<(f64, DVector<f64>, DVector<f64>)>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let d = v.len();
    if d < 2 {
        return None;
    }
    let h = 1e-6;
    let mut hess = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = v.clone();
        e[j] += h;
        hess.set_column(j, &((f(&e).1 - g) / h));
    }
    let lambda = g.dot(v);
    let mut frame = DMatrix::identity(d, d + 1);
    frame.set_column(0, v);
    let q = frame.qr().q();
    let u = q.columns(1, d - 1);
    let mut tangent = u.transpose() * linalg::symmetrize(&hess) * u;
    for i in 0..d - 1 {
        tangent[(i, i)] -= lambda;
    }
    let eig = nalgebra::SymmetricEigen::new(tangent);
    let scale = eig.eigenvalues.amax();
    if !(scale > 0.0) {
        return None;
    }
    let rg = u.transpose() * g;
    let mut coef = eig.eigenvectors.transpose() * rg;
    for (c, &l) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= l.abs().max(1e-8 * scale);
    }
    let mut xi = u * (&eig.eigenvectors * coef);
    for _ in 0..30 {
        let cand = (v + &xi).normalize();
        let (fc, gc) = f(&cand);
        if fc > fv {
            return Some((fc, cand, gc));
        }
        xi *= 0.5;
    }
    None
}

fn ascend<F>(mut v: DVector<f64>, f: &F) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (mut fv, mut g) = f(&v);
    let mut eta = 1.0 / fv.abs().max(1e-300);
    for _ in 0..2000 {
        let rg = &g - &v * g.dot(&v);
        let rn2 = rg.norm_squared();
        // The value error is quadratic in this residual.
        if rn2.sqrt() <= 1e-7 * g.norm().max(1e-300) {
            break;
        }
        if let Some((fc, cand, gc)) = newton_step(&v, fv, &g, f) {
            v = cand;
            fv = fc;
            g = gc;
            continue;
        }
        // For a convex objective the normalized gradient maximizes the
        // linearization over the sphere, so this step never decreases it.
        if g.dot(&v) > 0.0 {
            let cand = g.normalize();
            let (fc, gc) = f(&cand);
            if fc > fv {
                v = cand;
                fv = fc;
                g = gc;
                continue;
            }
        }
        let mut moved = false;
        while eta > 1e-20 {
            let cand = (&v + &rg * eta).normalize();
            let (fc, gc) = f(&cand);
            if fc >= fv + 1e-4 * eta * rn2 {
                v = cand;
                fv = fc;
                g = gc;
                eta *= 2.0;
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (fv, v)
}

/// Symmetric fourth-moment tensor `E[z_a z_b z_c z_e]`, stored densely.
struct Quartic {
    d: usize,
    t: Vec<f64>,
}

impl Quartic {
    /// `z` holds one sample per column.
    fn from_columns(z: &DMatrix<f64>) -> Self {
        let d = z.nrows();
        let n = z.ncols();
        let mut tuples = Vec::new();
        for a in 0..d {
            for b in a..d {
                for c in b..d {
                    for e in c..d {
                        tuples.push([a, b, c, e]);
                    }
                }
            }
        }
        let sums = par::sum_vec(n, tuples.len(), |i, acc| {
            let col = z.column(i);
            for (slot, &[a, b, c, e]) in acc.iter_mut().zip(&tuples) {
                *slot += col[a] * col[b] * col[c] * col[e];
            }
        });
        let mut t = vec![0.0; d * d * d * d];
        for (&[a, b, c, e], &s) in tuples.iter().zip(&sums) {
            let m = s / n as f64;
            for [i, j, k, l] in permutations([a, b, c, e]) {
                t[((i * d + j) * d + k) * d + l] = m;
            }
        }
        Self { d, t }
    }

    /// Value `Σ T v v v v` and gradient `4 T v v v`.
    fn eval(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let base = (i * d + j) * d * d;
                let mut s = 0.0;
                for k in 0..d {
                    let row = &self.t[base + k * d..base + k * d + d];
                    s += v[k] * row.iter().zip(v.iter()).map(|(t, x)| t * x).sum::<f64>();
                }
                m[(i, j)] = s;
            }
        }
        let mv = &m * v;
        (v.dot(&mv), mv * 4.0)
    }
}

fn permutations(x: [usize; 4]) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for e in 0..4 {
                    if a != b && a != c && a != e && b != c && b != e && c != e {
                        out.push([x[a], x[b], x[c], x[e]]);
                    }
                }
            }
        }
    }
    out
}

/// `H_p` with its Cholesky factor, and the stream whitened by it.
pub struct CurvatureModel<'a> {
    pub p: f64,
    pub stream: &'a MomentStream,
    pub h: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    /// `L⁻¹ X_i` for each sample, one per column.
    whitened: DMatrix<f64>,
}

impl<'a> CurvatureModel<'a> {
    pub fn new(stream: &'a MomentStream, p: f64) -> Result<Self> {
        let h = stream.curvature(p)?;
        let chol = linalg::checked_cholesky(&h, MAX_CONDITION, "estimated H_p")?;
        let whitened = chol
            .solve_lower_triangular(&stream.x.transpose())
            .ok_or_else(|| Error::NonPositiveDefinite("singular Cholesky factor".into()))?;
        Ok(Self {
            p,
            stream,
            h,
            chol,
            whitened,
        })
    }

    /// `V_p = E[ℓ'_p(r*)² ‖X‖²_{H_p⁻¹}]`.
    pub fn rate_functional(&self) -> McEstimate {
        let kernel = LossKernel::new(self.p).expect("validated exponent");
        let values: Vec<f64> = self
            .whitened
            .column_iter()
            .zip(self.stream.r.iter())
            .map(|(z, &ri)| kernel.grad(ri).powi(2) * z.norm_squared())
            .collect();
        McEstimate::from_values(&values)
    }

    /// `σ_p² = sup E⟨w, Z⟩⁴ / (E⟨w, Z⟩²)²` with `Z = |r*|^{(p-2)/2} X`.
    pub fn sigma_p_sq(&self, restarts: usize, seed: u64) -> SphereSearch {
        let mut z = self.whitened.clone();
        for (mut col, &ri) in z.column_iter_mut().zip(self.stream.r.iter()) {
            col *= abs_pow(ri, (self.p - 2.0) / 2.0);
        }
        let tensor = Quartic::from_columns(&z);
        maximize_on_sphere(self.stream.d(), restarts, seed, |v| tensor.eval(v))
    }

    /// `C_{L^p→(L²,p)} = sup ‖w‖_{L^p} / ‖w‖_{H_p}`; the search runs on
    /// `E|⟨v, L⁻¹X⟩|^p` and the value is reported as its `1/p` power.
    pub fn c_lp(&self, restarts: usize, seed: u64) -> SphereSearch {
        let p = self.p;
        let n = self.stream.len() as f64;
        let mut search = maximize_on_sphere(self.stream.d(), restarts, seed, |v| {
            let a = self.whitened.tr_mul(v);
            let value = a.iter().map(|&t| abs_pow(t, p)).sum::<f64>() / n;
            let s = a.map(|t| p * t.signum() * abs_pow(t, p - 1.0) / n);
            (value, &self.whitened * s)
        });
        search.value = search.value.powf(1.0 / p);
        search
            .per_restart
            .iter_mut()
            .for_each(|v| *v = v.powf(1.0 / p));
        search
    }

    /// `C²_{L²→(L²,p)}`: the largest generalized eigenvalue of `(E[XXᵀ], H_p)`.
    pub fn c_l2(&self) -> Result<f64> {
        linalg::max_generalized_eigenvalue(&self.stream.second_moment(), &self.h)
    }

    /// The same constant from the restart optimizer, as a cross-check.
    pub fn c_l2_by_restarts(&self, restarts: usize, seed: u64) -> SphereSearch {
        let a = linalg::whiten(&self.stream.second_moment(), &self.chol);
        maximize_on_sphere(self.stream.d(), restarts, seed, |v| {
            let av = &a * v;
            (v.dot(&av), av * 2.0)
        })
    }
}

fn moment_violation(msg: String) -> Error {
    Error::MomentViolation(msg)
}

/// Moment hypotheses needed for `H_p`, `V_p` and `σ_p²` to be finite.
pub fn check_hypotheses(spec: &DistributionSpec, p: f64) -> Result<()> {
    LossKernel::new(p)?;
    let coords = spec.moment_exists(p.max(4.0));
    if !coords.coordinates.iter().all(|&b| b) {
        return Err(moment_violation(format!(
            "covariates need finite moments of order {}",
            p.max(4.0)
        )));
    }
    if !spec.moment_exists(p).response {
        return Err(moment_violation(format!("E|Y|^{p} is infinite")));
    }
    if !spec.residual_moment_exists(2.0 * (p - 1.0)) {
        return Err(moment_violation(format!(
            "E|r*|^{} is infinite, so V_p is infinite",
            2.0 * (p - 1.0)
        )));
    }
    if p < 2.0 && spec.is_realizable() {
        return Err(moment_violation(
            "the residual at the minimizer is zero, so c*_p is infinite".into(),
        ));
    }
    if !spec.residual_moment_exists(2.0 * (p - 2.0)) {
        return Err(moment_violation(format!(
            "c*_p = E|r*|^{} is infinite",
            2.0 * (p - 2.0)
        )));
    }
    Ok(())
}

pub fn lp_norm(
    spec: &DistributionSpec,
    w: &DVector<f64>,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !spec.moment_exists(p).coordinates.iter().all(|&b| b) {
        return Err(moment_violation(format!(
            "covariate moments of order {p} are infinite"
        )));
    }
    Ok(MomentStream::new(spec, samples, seed)?.lp_norm(w, p))
}

pub fn lqp_norm(
    spec: &DistributionSpec,
    w: &DVector<f64>,
    q: f64,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !spec.moment_exists(q).coordinates.iter().all(|&b| b)
        || !spec.residual_moment_exists(q * (p - 2.0) / 2.0)
    {
        return Err(moment_violation(format!(
            "the (L^{q}, p) norm needs E|r*|^{} and covariate moments of order {q}",
            q * (p - 2.0) / 2.0
        )));
    }
    Ok(MomentStream::new(spec, samples, seed)?.lqp_norm(w, q, p))
}

/// `(H_p, V_p)` at the population minimizer.
pub fn hessian_at_minimizer(
    spec: &DistributionSpec,
    p: f64,
    opts: &ConstantOptions,
) -> Result<(DMatrix<f64>, McEstimate)> {
    check_hypotheses(spec, p)?;
    let stream = MomentStream::new(spec, opts.samples, opts.seed)?;
    let model = CurvatureModel::new(&stream, p)?;
    let v = model.rate_functional();
    Ok((model.h, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    SigmaP,
    CLp,
    CL2,
}

pub fn equivalence_constant(
    spec: &DistributionSpec,
    p: f64,
    kind: ConstantKind,
    opts: &ConstantOptions,
) -> Result<f64> {
    check_hypotheses(spec, p)?;
    let stream = MomentStream::new(spec, opts.samples, opts.seed)?;
    let model = CurvatureModel::new(&stream, p)?;
    let seed = derive_seed(opts.seed, &[0x5ea2c4]);
    Ok(match kind {
        ConstantKind::SigmaP => model.sigma_p_sq(opts.restarts, seed).value,
        ConstantKind::CLp => model.c_lp(opts.restarts, seed).value,
        ConstantKind::CL2 => model.c_l2()?,
    })
}

/// `ε` and `T*` for `p ∈ (1, 2)`:
/// `ε^{p-2} = 8 σ_p^{3-p} (d c)^{(2-p)/2} sqrt(c*)` and
/// `T* = (d c / (c* (2-p)))^{1/(6-2p)}`, where `c = C²_{L²→(L²,p)}`.
pub fn prop2_constants(
    sigma_p: f64,
    d: usize,
    c_l2: f64,
    c_star: f64,
    p: f64,
) -> Result<(f64, f64)> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Domain(format!(
            "truncation constants need p in (1, 2), got {p}"
        )));
    }
    if !(sigma_p > 0.0 && c_l2 > 0.0 && c_star > 0.0 && d >= 1) {
        return Err(Error::Domain(
            "truncation constants need positive inputs".into(),
        ));
    }
    let dc = d as f64 * c_l2;
    let eps_pow = 8.0 * sigma_p.powf(3.0 - p) * dc.powf((2.0 - p) / 2.0) * c_star.sqrt();
    let epsilon = eps_pow.powf(1.0 / (p - 2.0));
    let t_star = (dc / (c_star * (2.0 - p))).powf(1.0 / (6.0 - 2.0 * p));
    Ok((epsilon, t_star))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimates {
    pub p: f64,
    pub d: usize,
    pub h_p: Vec<Vec<f64>>,
    pub v_p: f64,
    pub v_p_std_err: f64,
    pub sigma_p_sq: f64,
    /// `C_{L^p→(L²,p)}`, the constant in the `p > 2` bound.
    pub c_p_lp: f64,
    /// `C²_{L²→(L²,p)}`, the constant in the `p < 2` bound.
    pub c_p_l2: f64,
    pub c_star_p: Option<f64>,
    pub c_star_p_std_err: Option<f64>,
    pub epsilon: Option<f64>,
    pub t_star: Option<f64>,
    pub rho: Option<f64>,
    pub mc_samples: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl ConstantEstimates {
    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.d, |i, j| self.h_p[i][j])
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p_sq.sqrt()
    }
}

/// Estimate every constant for `(spec, p)` from one shared stream.
pub fn estimate_constants(
    spec: &DistributionSpec,
    p: f64,
    opts: &ConstantOptions,
) -> Result<ConstantEstimates> {
    check_hypotheses(spec, p)?;
    let stream = MomentStream::new(spec, opts.samples, opts.seed)?;
    let model = CurvatureModel::new(&stream, p)?;
    let v = model.rate_functional();
    let seed = derive_seed(opts.seed, &[0x5ea2c4]);
    let sigma_p_sq = model.sigma_p_sq(opts.restarts, seed).value;
    let c_p_lp = model.c_lp(opts.restarts, seed).value;
    let c_p_l2 = model.c_l2()?;
    let c_star = stream.c_star(p);
    let d = stream.d();
    let (epsilon, t_star) = if p < 2.0 {
        let (e, t) = prop2_constants(sigma_p_sq.sqrt(), d, c_p_l2, c_star.mean, p)?;
        (Some(e), Some(t))
    } else {
        (None, None)
    };
    let rho = crate::smallball::small_ball(spec, &[], 0.0, 2.0, 0, 0)
        .ok()
        .map(|r| r.rho_sup);
    Ok(ConstantEstimates {
        p,
        d,
        h_p: (0..d)
            .map(|i| model.h.row(i).iter().copied().collect())
            .collect(),
        v_p: v.mean,
        v_p_std_err: v.std_err,
        sigma_p_sq,
        c_p_lp,
        c_p_l2,
        c_star_p: Some(c_star.mean),
        c_star_p_std_err: Some(c_star.std_err),
        epsilon,
        t_star,
        rho,
        mc_samples: opts.samples,
        restarts: opts.restarts,
        seed: opts.seed,
    })
}
