use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A nonzero vector orthogonal to every point, built as `(I - A⁺A) b_k` where
/// the rows of `A` are the points and `b_k` is the first basis vector whose
/// projection onto the orthogonal complement of the row space is not
/// negligible.
///
/// A projection counts as nonzero when it keeps at least `1/(2 sqrt(d))` of
/// the basis vector's norm. For an orthonormal basis at least one vector
/// keeps `1/sqrt(d)`, since the squared projections sum to `d - rank(A) ≥ 1`.
/// For other bases the largest projection is used if none passes.
pub fn orthogonal_complement(
    points: &[DVector<f64>],
    basis: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let d = basis.len();
    let m = points.len();
    if m == 0 || m >= d {
        return Err(Error::Domain(format!(
            "need between 1 and d - 1 = {} points, got {m}",
            d.saturating_sub(1)
        )));
    }
    if points.iter().chain(basis).any(|v| v.len() != d) {
        return Err(Error::Dimension(
            "points and basis vectors must have length d".into(),
        ));
    }
    let a = DMatrix::from_fn(m, d, |i, j| points[i][j]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * d as f64 * 4.0;
    let row_space: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    let project = |b: &DVector<f64>| {
        let mut r = b.clone();
        for v in &row_space {
            r -= v * v.dot(&r);
        }
        r
    };
    let threshold = 0.5 / (d as f64).sqrt();
    let mut best: Option<DVector<f64>> = None;
    let mut best_ratio = -1.0;
    for b in basis {
        let bn = b.norm();
        if bn == 0.0 {
            continue;
        }
        let r = project(b);
        let ratio = r.norm() / bn;
        if ratio >= threshold {
            best = Some(r);
            break;
        }
        if ratio > best_ratio {
            best_ratio = ratio;
            best = Some(r);
        }
    }
    let n = best.ok_or_else(|| Error::Domain("basis has no nonzero vector".into()))?;
    // A second projection removes the rounding left by the first.
    let n = project(&n);
    if n.norm() == 0.0 {
        return Err(Error::NumericalBreakdown(
            "orthogonal complement vanished".into(),
        ));
    }
    Ok(n)
}

/// `max_j |⟨x_j, n⟩| / (‖x_j‖ ‖n‖)`.
pub fn max_scaled_dot(points: &[DVector<f64>], n: &DVector<f64>) -> f64 {
    points
        .iter()
        .map(|x| {
            let scale = x.norm() * n.norm();
            if scale == 0.0 {
                0.0
            } else {
                x.dot(n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
