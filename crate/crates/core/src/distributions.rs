//! Generative models for `(X, Y)`: covariate families with controllable
//! moment existence, a ground-truth weight vector, and symmetric noise that is
//! independent of the covariates. Because the noise is symmetric and
//! independent, the population minimizer `w*_p` equals `target_weights` for
//! every exponent `p`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::row_rng;

/// A one-dimensional law, used coordinate-wise by [`CovariateFamily::Product`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFamily {
    Normal { sd: f64 },
    StudentT { dof: f64, scale: f64 },
    Laplace { scale: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateFamily {
    Gaussian {
        covariance: Vec<Vec<f64>>,
    },
    /// Multivariate t: `L z · sqrt(dof / W)` with `W ~ χ²(dof)` and `scale = L Lᵀ`.
    StudentT {
        dof: f64,
        scale: Vec<Vec<f64>>,
    },
    Discrete {
        atoms: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
    Product {
        coordinates: Vec<ScalarFamily>,
    },
}

/// Noise added to `⟨w*, X⟩`. Every family is symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFamily {
    None,
    Gaussian {
        sd: f64,
    },
    StudentT {
        dof: f64,
        scale: f64,
    },
    Laplace {
        scale: f64,
    },
    /// `±(shift + scale·|T|)`, `T ~ t(dof)`, random sign: bounded away from zero.
    ShiftedStudentT {
        dof: f64,
        shift: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub covariates: CovariateFamily,
    #[serde(default)]
    pub intercept: bool,
    pub target_weights: Vec<f64>,
    pub noise: NoiseFamily,
}

/// Which moments of a given order exist, per coordinate of `X` and for `Y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MomentReport {
    pub coordinates: Vec<bool>,
    pub response: bool,
}

impl MomentReport {
    pub fn all(&self) -> bool {
        self.response && self.coordinates.iter().all(|&b| b)
    }
}

impl DistributionSpec {
    /// `X ~ N(0, I_d)` without intercept.
    pub fn gaussian_identity(d: usize, target_weights: Vec<f64>, noise: NoiseFamily) -> Self {
        let covariance = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            covariates: CovariateFamily::Gaussian { covariance },
            intercept: false,
            target_weights,
            noise,
        }
    }

    pub fn with_intercept(mut self) -> Self {
        self.intercept = true;
        self
    }

    /// Dimension of the covariate family before the optional intercept.
    pub fn base_dim(&self) -> usize {
        match &self.covariates {
            CovariateFamily::Gaussian { covariance } => covariance.len(),
            CovariateFamily::StudentT { scale, .. } => scale.len(),
            CovariateFamily::Discrete { atoms, .. } => atoms.first().map_or(0, Vec::len),
            CovariateFamily::Product { coordinates } => coordinates.len(),
        }
    }

    /// Dimension `d` of `X`, including the intercept coordinate.
    pub fn dim(&self) -> usize {
        self.base_dim() + usize::from(self.intercept)
    }

    pub fn target(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.target_weights)
    }

    pub fn is_realizable(&self) -> bool {
        matches!(self.noise, NoiseFamily::None)
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json)[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    fn prepare(&self) -> Result<Prepared> {
        let base = self.base_dim();
        if base == 0 {
            return Err(Error::InvalidSpec("covariate dimension is zero".into()));
        }
        if self.target_weights.len() != self.dim() {
            return Err(Error::InvalidSpec(format!(
                "target_weights has length {} but X has dimension {}",
                self.target_weights.len(),
                self.dim()
            )));
        }
        if self.target_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidSpec("target_weights must be finite".into()));
        }
        let covariates = match &self.covariates {
            CovariateFamily::Gaussian { covariance } => PreparedCov::Gaussian {
                chol: cholesky_of(covariance, "covariance")?,
            },
            CovariateFamily::StudentT { dof, scale } => {
                check_dof(*dof)?;
                PreparedCov::StudentT {
                    chol: cholesky_of(scale, "scale")?,
                    chi: ChiSquared::new(*dof).map_err(|e| Error::InvalidSpec(e.to_string()))?,
                    dof: *dof,
                }
            }
            CovariateFamily::Discrete { atoms, probs } => {
                if atoms.len() != probs.len() {
                    return Err(Error::InvalidSpec(
                        "atoms and probs differ in length".into(),
                    ));
                }
                if atoms.iter().any(|a| a.len() != base) {
                    return Err(Error::InvalidSpec(
                        "atoms have inconsistent dimension".into(),
                    ));
                }
                let index = weighted_index(probs)?;
                // Support must not lie in a hyperplane: the atoms (with the
                // intercept prepended) must span R^d.
                let rows: Vec<Vec<f64>> =
                    atoms.iter().map(|a| self.with_intercept_coord(a)).collect();
                let m = DMatrix::from_fn(rows.len(), self.dim(), |i, j| rows[i][j]);
                if m.rank(1e-10 * m.norm().max(1.0)) < self.dim() {
                    return Err(Error::InvalidSpec(
                        "discrete atoms lie in a hyperplane (rank-deficient support)".into(),
                    ));
                }
                PreparedCov::Discrete {
                    atoms: atoms.clone(),
                    index,
                }
            }
            CovariateFamily::Product { coordinates } => PreparedCov::Product(
                coordinates
                    .iter()
                    .map(PreparedScalar::new)
                    .collect::<Result<_>>()?,
            ),
        };
        let noise = PreparedNoise::new(&self.noise)?;
        Ok(Prepared {
            covariates,
            noise,
            intercept: self.intercept,
            target: self.target_weights.clone(),
        })
    }

    fn with_intercept_coord(&self, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        if self.intercept {
            v.push(1.0);
        }
        v.extend_from_slice(x);
        v
    }

    /// Decide analytically whether `E|X^j|^order` and `E|Y|^order` are finite.
    pub fn moment_exists(&self, order: f64) -> MomentReport {
        let base: Vec<bool> = match &self.covariates {
            CovariateFamily::Gaussian { covariance } => vec![true; covariance.len()],
            CovariateFamily::StudentT { dof, scale } => vec![order < *dof; scale.len()],
            CovariateFamily::Discrete { atoms, .. } => {
                vec![true; atoms.first().map_or(0, Vec::len)]
            }
            CovariateFamily::Product { coordinates } => coordinates
                .iter()
                .map(|c| match c {
                    ScalarFamily::StudentT { dof, .. } => order < *dof,
                    _ => true,
                })
                .collect(),
        };
        let mut coordinates = Vec::with_capacity(self.dim());
        if self.intercept {
            coordinates.push(true);
        }
        coordinates.extend(base);
        let signal = coordinates
            .iter()
            .zip(&self.target_weights)
            .all(|(&ok, &w)| ok || w == 0.0);
        let noise = match &self.noise {
            NoiseFamily::StudentT { dof, .. } | NoiseFamily::ShiftedStudentT { dof, .. } => {
                order < *dof
            }
            _ => true,
        };
        MomentReport {
            coordinates,
            response: signal && noise,
        }
    }

    /// Whether `E|r*|^order` is finite, where `r* = ⟨w*, X⟩ - Y = -ε`.
    /// Negative orders probe the behaviour of the noise density near zero.
    pub fn residual_moment_exists(&self, order: f64) -> bool {
        if order >= 0.0 {
            return match &self.noise {
                NoiseFamily::StudentT { dof, .. } | NoiseFamily::ShiftedStudentT { dof, .. } => {
                    order < *dof
                }
                _ => true,
            };
        }
        match &self.noise {
            NoiseFamily::None => false,
            NoiseFamily::ShiftedStudentT { shift, .. } => *shift > 0.0,
            // Densities that are positive and bounded at zero.
            _ => -order < 1.0,
        }
    }

    /// Variance of the noise, when it has a closed form.
    pub fn noise_variance(&self) -> Option<f64> {
        match &self.noise {
            NoiseFamily::None => Some(0.0),
            NoiseFamily::Gaussian { sd } => Some(sd * sd),
            NoiseFamily::Laplace { scale } => Some(2.0 * scale * scale),
            NoiseFamily::StudentT { dof, scale } if *dof > 2.0 => {
                Some(scale * scale * dof / (dof - 2.0))
            }
            _ => None,
        }
    }

    /// `E[X Xᵀ]` when it has a closed form.
    pub fn second_moment_matrix(&self) -> Option<DMatrix<f64>> {
        let base = self.base_dim();
        let (mean, second): (Vec<f64>, DMatrix<f64>) = match &self.covariates {
            CovariateFamily::Gaussian { covariance } => (vec![0.0; base], to_matrix(covariance)),
            CovariateFamily::StudentT { dof, scale } => {
                if *dof <= 2.0 {
                    return None;
                }
                (vec![0.0; base], to_matrix(scale) * (dof / (dof - 2.0)))
            }
            CovariateFamily::Discrete { atoms, probs } => {
                let mut mean = vec![0.0; base];
                let mut s = DMatrix::zeros(base, base);
                for (a, &pr) in atoms.iter().zip(probs) {
                    let v = DVector::from_column_slice(a);
                    s += &v * v.transpose() * pr;
                    mean.iter_mut().zip(a).for_each(|(m, x)| *m += pr * x);
                }
                (mean, s)
            }
            CovariateFamily::Product { coordinates } => {
                let moments: Option<Vec<(f64, f64)>> = coordinates
                    .iter()
                    .map(ScalarFamily::mean_and_second)
                    .collect();
                let moments = moments?;
                let mean: Vec<f64> = moments.iter().map(|m| m.0).collect();
                let s = DMatrix::from_fn(base, base, |i, j| {
                    if i == j {
                        moments[i].1
                    } else {
                        mean[i] * mean[j]
                    }
                });
                (mean, s)
            }
        };
        if !self.intercept {
            return Some(second);
        }
        let d = base + 1;
        Some(DMatrix::from_fn(d, d, |i, j| match (i, j) {
            (0, 0) => 1.0,
            (0, j) => mean[j - 1],
            (i, 0) => mean[i - 1],
            (i, j) => second[(i - 1, j - 1)],
        }))
    }

    /// Draw `n` rows. Row `i` is generated from its own stream keyed by
    /// `(seed, i)`, so the result does not depend on the thread count and
    /// samples of different sizes share prefixes.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let prepared = self.prepare()?;
        let d = self.dim();
        let width = d + 1;
        let mut buf = vec![0.0; n * width];
        buf.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
            let mut rng = row_rng(seed, i as u64);
            prepared.draw_row(&mut rng, row);
        });
        let design = DMatrix::from_fn(n, d, |i, j| buf[i * width + j]);
        let response = DVector::from_fn(n, |i, _| buf[i * width + d]);
        Dataset::new(design, response, seed, self.fingerprint())
    }
}

impl ScalarFamily {
    fn mean_and_second(&self) -> Option<(f64, f64)> {
        match self {
            ScalarFamily::Normal { sd } => Some((0.0, sd * sd)),
            ScalarFamily::Laplace { scale } => Some((0.0, 2.0 * scale * scale)),
            ScalarFamily::StudentT { dof, scale } if *dof > 2.0 => {
                Some((0.0, scale * scale * dof / (dof - 2.0)))
            }
            ScalarFamily::StudentT { .. } => None,
            ScalarFamily::Discrete { values, probs } => {
                let m = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                let s = values.iter().zip(probs).map(|(v, p)| v * v * p).sum();
                Some((m, s))
            }
        }
    }
}

fn check_dof(dof: f64) -> Result<()> {
    if !(dof.is_finite() && dof > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "degrees of freedom must be positive, got {dof}"
        )));
    }
    Ok(())
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "{what} must be positive, got {x}"
        )));
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn cholesky_of(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidSpec(format!("{what} matrix is not square")));
    }
    let m = to_matrix(rows);
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidSpec(format!(
            "{what} matrix is not symmetric"
        )));
    }
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidSpec(format!("{what} matrix is not positive definite")))
}

fn weighted_index(probs: &[f64]) -> Result<WeightedIndex<f64>> {
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidSpec(
            "probabilities must be nonnegative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidSpec(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    WeightedIndex::new(probs).map_err(|e| Error::InvalidSpec(e.to_string()))
}

struct Prepared {
    covariates: PreparedCov,
    noise: PreparedNoise,
    intercept: bool,
    target: Vec<f64>,
}

enum PreparedCov {
    Gaussian {
        chol: DMatrix<f64>,
    },
    StudentT {
        chol: DMatrix<f64>,
        chi: ChiSquared<f64>,
        dof: f64,
    },
    Discrete {
        atoms: Vec<Vec<f64>>,
        index: WeightedIndex<f64>,
    },
    Product(Vec<PreparedScalar>),
}

enum PreparedScalar {
    Normal(f64),
    StudentT(StudentT<f64>, f64),
    Laplace(f64),
    Discrete(Vec<f64>, WeightedIndex<f64>),
}

impl PreparedScalar {
    fn new(f: &ScalarFamily) -> Result<Self> {
        Ok(match f {
            ScalarFamily::Normal { sd } => {
                check_positive(*sd, "sd")?;
                Self::Normal(*sd)
            }
            ScalarFamily::StudentT { dof, scale } => {
                check_dof(*dof)?;
                check_positive(*scale, "scale")?;
                Self::StudentT(
                    StudentT::new(*dof).map_err(|e| Error::InvalidSpec(e.to_string()))?,
                    *scale,
                )
            }
            ScalarFamily::Laplace { scale } => {
                check_positive(*scale, "scale")?;
                Self::Laplace(*scale)
            }
            ScalarFamily::Discrete { values, probs } => {
                if values.len() != probs.len() {
                    return Err(Error::InvalidSpec(
                        "values and probs differ in length".into(),
                    ));
                }
                let support = values
                    .iter()
                    .zip(probs)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(v, _)| *v)
                    .collect::<Vec<_>>();
                if support.iter().all(|v| *v == support[0]) {
                    return Err(Error::InvalidSpec(
                        "discrete coordinate is a point mass (degenerate support)".into(),
                    ));
                }
                Self::Discrete(values.clone(), weighted_index(probs)?)
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Normal(sd) => sd * rng.sample::<f64, _>(StandardNormal),
            Self::StudentT(t, scale) => scale * t.sample(rng),
            Self::Laplace(b) => laplace(rng, *b),
            Self::Discrete(values, index) => values[index.sample(rng)],
        }
    }
}

enum PreparedNoise {
    None,
    Gaussian(f64),
    StudentT(StudentT<f64>, f64),
    Laplace(f64),
    Shifted(StudentT<f64>, f64, f64),
}

impl PreparedNoise {
    fn new(f: &NoiseFamily) -> Result<Self> {
        let t = |dof: f64| -> Result<StudentT<f64>> {
            check_dof(dof)?;
            StudentT::new(dof).map_err(|e| Error::InvalidSpec(e.to_string()))
        };
        Ok(match f {
            NoiseFamily::None => Self::None,
            NoiseFamily::Gaussian { sd } => {
                check_positive(*sd, "noise sd")?;
                Self::Gaussian(*sd)
            }
            NoiseFamily::StudentT { dof, scale } => {
                check_positive(*scale, "noise scale")?;
                Self::StudentT(t(*dof)?, *scale)
            }
            NoiseFamily::Laplace { scale } => {
                check_positive(*scale, "noise scale")?;
                Self::Laplace(*scale)
            }
            NoiseFamily::ShiftedStudentT { dof, shift, scale } => {
                check_positive(*scale, "noise scale")?;
                if !(shift.is_finite() && *shift >= 0.0) {
                    return Err(Error::InvalidSpec("noise shift must be nonnegative".into()));
                }
                Self::Shifted(t(*dof)?, *shift, *scale)
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Gaussian(sd) => sd * rng.sample::<f64, _>(StandardNormal),
            Self::StudentT(t, scale) => scale * t.sample(rng),
            Self::Laplace(b) => laplace(rng, *b),
            Self::Shifted(t, shift, scale) => {
                let mag = shift + scale * t.sample(rng).abs();
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

fn laplace(rng: &mut ChaCha8Rng, b: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    if rng.random::<bool>() {
        b * e
    } else {
        -b * e
    }
}

impl Prepared {
    /// Fill `row[..d]` with `X` and `row[d]` with `Y`.
    fn draw_row(&self, rng: &mut ChaCha8Rng, row: &mut [f64]) {
        let d = row.len() - 1;
        let off = usize::from(self.intercept);
        if self.intercept {
            row[0] = 1.0;
        }
        let x = &mut row[off..d];
        match &self.covariates {
            PreparedCov::Gaussian { chol } => correlated_normal(rng, chol, x, 1.0),
            PreparedCov::StudentT { chol, chi, dof } => {
                let w: f64 = chi.sample(rng);
                correlated_normal(rng, chol, x, (dof / w).sqrt());
            }
            PreparedCov::Discrete { atoms, index } => {
                x.copy_from_slice(&atoms[index.sample(rng)]);
            }
            PreparedCov::Product(coords) => {
                for (xj, c) in x.iter_mut().zip(coords) {
                    *xj = c.draw(rng);
                }
            }
        }
        let signal: f64 = row[..d].iter().zip(&self.target).map(|(a, b)| a * b).sum();
        row[d] = signal + self.noise.draw(rng);
    }
}

fn correlated_normal(rng: &mut ChaCha8Rng, chol: &DMatrix<f64>, out: &mut [f64], scale: f64) {
    let k = out.len();
    let mut z = [0.0f64; 64];
    let mut zv;
    let z: &mut [f64] = if k <= 64 {
        &mut z[..k]
    } else {
        zv = vec![0.0; k];
        &mut zv
    };
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[(i, j)] * z[j];
        }
        *o = acc * scale;
    }
}
