//! Small-ball functions `ρ₀(w) = P(⟨w, X⟩ = 0)`,
//! `ρ_q(w, κ) = P(|⟨w, X⟩| > κ ‖w‖_{L^q})` and `ρ = sup_{w ≠ 0} ρ₀(w)`.
//!
//! Only the discrete coordinates of `X` can put mass on a hyperplane: if `w`
//! touches a coordinate with a continuous law, `⟨w, X⟩` has no atoms (the
//! coordinates of product families are independent, and the Gaussian and t
//! families are absolutely continuous). So `ρ` is computed exactly on the
//! joint support of the discrete coordinates. A hyperplane through the
//! origin with maximal mass can always be taken to be spanned by `k - 1`
//! support points (extend any spanning set greedily), so enumerating those
//! subsets is exhaustive.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constants::MomentStream;
use crate::distributions::{CovariateFamily, DistributionSpec, ScalarFamily};
use crate::error::{Error, Result};
use crate::experiments::orthogonal_complement;

/// Enumeration budget for `(k-1)`-subsets of the support.
const MAX_SUBSETS: u128 = 5_000_000;
const MAX_SUPPORT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallBallMethod {
    ExactEnumeration,
    /// No discrete coordinates: `⟨w, X⟩` has a continuous law and `ρ = 0`.
    ContinuousLaw,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rho0Value {
    pub w: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoQValue {
    pub w: Vec<f64>,
    pub kappa: f64,
    pub q: f64,
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub rho_sup: f64,
    pub rho_sup_at: Option<Vec<f64>>,
    pub rho0_at: Vec<Rho0Value>,
    pub rho_q_at: Vec<RhoQValue>,
    pub method: SmallBallMethod,
}

/// Joint law of the discrete coordinates: their indices in `X` and the
/// distinct support points with probabilities.
#[derive(Debug, Clone)]
pub struct DiscretePart {
    pub coords: Vec<usize>,
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl DiscretePart {
    pub fn of(spec: &DistributionSpec) -> Result<Self> {
        let off = usize::from(spec.intercept);
        let mut coords: Vec<usize> = Vec::new();
        let mut factors: Vec<Vec<(f64, f64)>> = Vec::new();
        if spec.intercept {
            coords.push(0);
            factors.push(vec![(1.0, 1.0)]);
        }
        let mut atoms: Vec<(Vec<f64>, f64)> = match &spec.covariates {
            CovariateFamily::Discrete { atoms, probs } => {
                coords.extend((0..spec.base_dim()).map(|j| j + off));
                let prefix: Vec<f64> = if spec.intercept { vec![1.0] } else { vec![] };
                atoms
                    .iter()
                    .zip(probs)
                    .map(|(a, &pr)| {
                        let mut v = prefix.clone();
                        v.extend_from_slice(a);
                        (v, pr)
                    })
                    .collect()
            }
            CovariateFamily::Product { coordinates } => {
                for (j, c) in coordinates.iter().enumerate() {
                    if let ScalarFamily::Discrete { values, probs } = c {
                        coords.push(j + off);
                        factors.push(values.iter().copied().zip(probs.iter().copied()).collect());
                    }
                }
                cartesian(&factors)?
            }
            _ => cartesian(&factors)?,
        };
        merge_duplicates(&mut atoms);
        Ok(Self { coords, atoms })
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }
}

fn cartesian(factors: &[Vec<(f64, f64)>]) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for f in factors {
        if out.len() * f.len() > MAX_SUPPORT {
            return Err(Error::Domain(
                "discrete support too large to enumerate".into(),
            ));
        }
        out = out
            .iter()
            .flat_map(|(v, p)| {
                f.iter().map(move |&(x, q)| {
                    let mut v = v.clone();
                    v.push(x);
                    (v, p * q)
                })
            })
            .collect();
    }
    if factors.is_empty() {
        out.clear();
    }
    Ok(out)
}

fn merge_duplicates(atoms: &mut Vec<(Vec<f64>, f64)>) {
    atoms.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    atoms.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
}

fn on_hyperplane(normal: &[f64], atom: &[f64]) -> bool {
    let dot: f64 = normal.iter().zip(atom).map(|(a, b)| a * b).sum();
    let scale = normal.iter().map(|v| v * v).sum::<f64>().sqrt()
        * atom.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot.abs() <= 1e-10 * scale
}

/// `ρ₀(w)`, exact.
pub fn rho0(part: &DiscretePart, w: &DVector<f64>) -> f64 {
    let d = w.len();
    let touches_continuous = (0..d).any(|j| w[j] != 0.0 && !part.coords.contains(&j));
    if touches_continuous || part.atoms.is_empty() {
        return if w.iter().all(|&v| v == 0.0) {
            1.0
        } else {
            0.0
        };
    }
    let wd: Vec<f64> = part.coords.iter().map(|&j| w[j]).collect();
    part.atoms
        .iter()
        .filter(|(a, _)| on_hyperplane(&wd, a))
        .map(|(_, pr)| pr)
        .sum::<f64>()
        .min(1.0)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| {
        acc.saturating_mul((n - i) as u128) / (i as u128 + 1)
    })
}

/// `ρ` and a maximizing direction, restricted to the discrete coordinates.
pub fn rho_sup(part: &DiscretePart, d: usize) -> Result<(f64, Option<DVector<f64>>)> {
    let k = part.k();
    if part.atoms.is_empty() || k == 0 {
        return Ok((0.0, None));
    }
    let embed = |normal: &[f64]| {
        let mut w = DVector::zeros(d);
        for (&j, &v) in part.coords.iter().zip(normal) {
            w[j] = v;
        }
        w
    };
    if k == 1 {
        let mass: f64 = part
            .atoms
            .iter()
            .filter(|(a, _)| a[0] == 0.0)
            .map(|x| x.1)
            .sum();
        return Ok((mass, Some(embed(&[1.0]))));
    }
    let zero_mass: f64 = part
        .atoms
        .iter()
        .filter(|(a, _)| a.iter().all(|&v| v == 0.0))
        .map(|x| x.1)
        .sum();
    let nonzero: Vec<DVector<f64>> = part
        .atoms
        .iter()
        .filter(|(a, _)| a.iter().any(|&v| v != 0.0))
        .map(|(a, _)| DVector::from_column_slice(a))
        .collect();
    let m = k - 1;
    if nonzero.len() < m {
        return Ok((1.0, None));
    }
    if binomial(nonzero.len(), m) > MAX_SUBSETS {
        return Err(Error::Domain(
            "too many support subsets to enumerate".into(),
        ));
    }
    let basis: Vec<DVector<f64>> = (0..k)
        .map(|i| {
            let mut e = DVector::zeros(k);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut best = (zero_mass, None);
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let subset: Vec<DVector<f64>> = idx.iter().map(|&i| nonzero[i].clone()).collect();
        let rank = nalgebra::DMatrix::from_columns(&subset).rank(1e-10);
        if rank == m {
            let normal = orthogonal_complement(&subset, &basis)?;
            let mass = rho0_on(part, normal.as_slice());
            if mass > best.0 {
                best = (mass, Some(embed(normal.as_slice())));
            }
        }
        // Next combination in lexicographic order.
        let mut i = m;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            if idx[i] < nonzero.len() - m + i {
                idx[i] += 1;
                for j in i + 1..m {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn rho0_on(part: &DiscretePart, normal: &[f64]) -> f64 {
    part.atoms
        .iter()
        .filter(|(a, _)| on_hyperplane(normal, a))
        .map(|(_, pr)| pr)
        .sum::<f64>()
        .min(1.0)
}

/// Build the report. `ρ₀` and `ρ` are exact; each `ρ_q(w, κ)` is estimated
/// from `mc_samples` draws (skipped when zero).
pub fn small_ball(
    spec: &DistributionSpec,
    probes: &[DVector<f64>],
    kappa: f64,
    q: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    spec.validate()?;
    let d = spec.dim();
    if probes.iter().any(|w| w.len() != d) {
        return Err(Error::Dimension("probe weights must have length d".into()));
    }
    let part = DiscretePart::of(spec)?;
    let (rho, at) = rho_sup(&part, d)?;
    let method = if part.atoms.is_empty() {
        SmallBallMethod::ContinuousLaw
    } else {
        SmallBallMethod::ExactEnumeration
    };
    let rho0_at = probes
        .iter()
        .map(|w| Rho0Value {
            w: w.iter().copied().collect(),
            value: rho0(&part, w),
        })
        .collect();
    let mut rho_q_at = Vec::new();
    if mc_samples > 0 && !probes.is_empty() {
        if !spec.moment_exists(q).coordinates.iter().all(|&b| b) {
            return Err(Error::MomentViolation(format!(
                "ρ_q needs moments of order {q}"
            )));
        }
        let stream = MomentStream::new(spec, mc_samples, seed)?;
        for w in probes {
            let norm = stream.lp_norm(w, q);
            let a = &stream.x * w;
            let hits = a.iter().filter(|&&v| v.abs() > kappa * norm).count() as f64;
            let n = mc_samples as f64;
            let value = hits / n;
            rho_q_at.push(RhoQValue {
                w: w.iter().copied().collect(),
                kappa,
                q,
                value,
                std_err: (value * (1.0 - value) / n).sqrt(),
            });
        }
    }
    Ok(SmallBallReport {
        rho_sup: rho,
        rho_sup_at: at.map(|w| w.iter().copied().collect()),
        rho0_at,
        rho_q_at,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::NoiseFamily;

    fn two_atoms() -> DistributionSpec {
        DistributionSpec {
            covariates: CovariateFamily::Discrete {
                atoms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                probs: vec![0.5, 0.5],
            },
            intercept: false,
            target_weights: vec![1.0, -1.0],
            noise: NoiseFamily::None,
        }
    }

    /// Independent oracle: maximize ρ₀ over a dense grid of directions plus
    /// every normal of a pair of atoms, for d ≤ 3.
    fn brute_rho(atoms: &[(Vec<f64>, f64)]) -> f64 {
        let mut best = 0.0f64;
        let d = atoms[0].0.len();
        let mut normals: Vec<Vec<f64>> = Vec::new();
        for a in atoms {
            for b in atoms {
                if d == 3 {
                    let (x, y) = (&a.0, &b.0);
                    normals.push(vec![
                        x[1] * y[2] - x[2] * y[1],
                        x[2] * y[0] - x[0] * y[2],
                        x[0] * y[1] - x[1] * y[0],
                    ]);
                } else {
                    normals.push(vec![-a.0[1], a.0[0]]);
                }
            }
        }
        for n in normals {
            if n.iter().all(|v| v.abs() < 1e-12) {
                continue;
            }
            let mass: f64 = atoms
                .iter()
                .filter(|(a, _)| n.iter().zip(a).map(|(x, y)| x * y).sum::<f64>().abs() < 1e-9)
                .map(|x| x.1)
                .sum();
            best = best.max(mass);
        }
        best
    }

    #[test]
    fn two_atoms_have_rho_half() {
        let spec = two_atoms();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let r = small_ball(&spec, std::slice::from_ref(&e1), 0.0, 2.0, 20_000, 1).unwrap();
        assert_eq!(r.rho_sup, 0.5);
        assert_eq!(r.method, SmallBallMethod::ExactEnumeration);
        assert_eq!(r.rho0_at[0].value, 0.5);
        // ρ_q(w, 0) = 1 - ρ₀(w).
        let rq = &r.rho_q_at[0];
        assert!((rq.value - 0.5).abs() < 4.0 * rq.std_err);
    }

    #[test]
    fn gaussian_has_rho_zero() {
        let spec = DistributionSpec::gaussian_identity(3, vec![1.0; 3], NoiseFamily::None);
        let r = small_ball(
            &spec,
            &[DVector::from_vec(vec![1.0, 0.0, 0.0])],
            0.5,
            2.0,
            10_000,
            2,
        )
        .unwrap();
        assert_eq!(r.rho_sup, 0.0);
        assert_eq!(r.method, SmallBallMethod::ContinuousLaw);
        assert_eq!(r.rho0_at[0].value, 0.0);
        // P(|Z| > 0.5) for a standard normal is 0.617.
        assert!((r.rho_q_at[0].value - 0.617).abs() < 0.02);
    }

    #[test]
    fn rho0_is_scale_invariant() {
        let part = DiscretePart::of(&two_atoms()).unwrap();
        let w = DVector::from_vec(vec![0.0, 3.0]);
        for c in [-7.0, 1e-6, 2.0, 1e6] {
            assert_eq!(rho0(&part, &(&w * c)), rho0(&part, &w));
        }
    }

    #[test]
    fn enumeration_agrees_with_brute_force() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(3);
        for trial in 0..40 {
            let d = 2 + trial % 2;
            let m = rng.random_range(d + 1..d + 6);
            // Small integer atoms make coplanar subsets common.
            let mut atoms: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..d).map(|_| rng.random_range(-2..=2) as f64).collect())
                .collect();
            for (i, a) in atoms.iter_mut().enumerate().take(d) {
                a.iter_mut().for_each(|v| *v = 0.0);
                a[i] = 1.0;
            }
            let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.1).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let spec = DistributionSpec {
                covariates: CovariateFamily::Discrete {
                    atoms: atoms.clone(),
                    probs: probs.clone(),
                },
                intercept: false,
                target_weights: vec![1.0; d],
                noise: NoiseFamily::None,
            };
            let part = DiscretePart::of(&spec).unwrap();
            let (rho, at) = rho_sup(&part, d).unwrap();
            let oracle = brute_rho(&part.atoms);
            assert!(
                (rho - oracle).abs() < 1e-12,
                "trial {trial}: {rho} vs {oracle}"
            );
            assert!(rho < 1.0);
            let at = at.unwrap();
            assert!((rho0(&part, &at) - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_with_discrete_product_coordinate() {
        // X = (1, B, Z) with B ∈ {0, 1} and Z Gaussian: the heaviest
        // hyperplane is {1 - B = 0}, with mass P(B = 1).
        let spec = DistributionSpec {
            covariates: CovariateFamily::Product {
                coordinates: vec![
                    ScalarFamily::Discrete {
                        values: vec![0.0, 1.0],
                        probs: vec![0.3, 0.7],
                    },
                    ScalarFamily::Normal { sd: 1.0 },
                ],
            },
            intercept: true,
            target_weights: vec![0.0, 1.0, 1.0],
            noise: NoiseFamily::None,
        };
        let r = small_ball(&spec, &[], 0.0, 2.0, 0, 0).unwrap();
        assert!((r.rho_sup - 0.7).abs() < 1e-12, "{}", r.rho_sup);
        let part = DiscretePart::of(&spec).unwrap();
        assert_eq!(rho0(&part, &DVector::from_vec(vec![0.0, 1.0, 0.0])), 0.3);
        assert_eq!(rho0(&part, &DVector::from_vec(vec![0.0, 1.0, 1.0])), 0.0);
    }
}
