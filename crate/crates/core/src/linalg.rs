//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Lower Cholesky factor of an SPD matrix whose condition number is at most
/// `max_cond`; anything worse is rejected rather than regularized.
pub fn checked_cholesky(m: &DMatrix<f64>, max_cond: f64, what: &str) -> Result<DMatrix<f64>> {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) || !(hi.is_finite()) {
        return Err(Error::NonPositiveDefinite(format!(
            "{what} has eigenvalue {lo:.3e}"
        )));
    }
    if hi / lo > max_cond {
        return Err(Error::NonPositiveDefinite(format!(
            "{what} has condition number {:.3e}",
            hi / lo
        )));
    }
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NonPositiveDefinite(format!("{what}: Cholesky failed")))
}

/// Solve `L y = b` for lower-triangular `L`.
pub fn lower_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("nonsingular triangular factor")
}

/// `L⁻¹ M L⁻ᵀ` for lower-triangular `L`.
pub fn whiten(m: &DMatrix<f64>, l: &DMatrix<f64>) -> DMatrix<f64> {
    let a = l
        .solve_lower_triangular(m)
        .expect("nonsingular triangular factor");
    let b = l
        .solve_lower_triangular(&a.transpose())
        .expect("nonsingular triangular factor");
    symmetrize(&b)
}

/// Largest `λ` with `A v = λ B v`, for symmetric `A` and SPD `B`.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let l = symmetrize(b)
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite("generalized eigenproblem: B".into()))?
        .l();
    let ev = sym_eigenvalues(&whiten(a, &l));
    Ok(ev[ev.len() - 1])
}

/// `xᵀ M⁻¹ x` through a Cholesky factor `M = L Lᵀ`.
pub fn inv_quad_form(l: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    lower_solve(l, x).norm_squared()
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Serde adapters that write vectors as plain lists and matrices as lists of
/// rows.
pub mod serde_dense {
    use nalgebra::{DMatrix, DVector};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            Vec::<f64>::deserialize(d).map(DVector::from_vec)
        }
    }

    pub mod matrix {
        use super::*;

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            let cols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != cols) {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
        }
    }
}
