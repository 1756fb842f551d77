//! Orthonormal bases for the row span of token-embedding matrices and
//! row-wise projection onto them.
//!
//! A frame part `A` is `L × d` with one token embedding per row, so the
//! subspace it induces is the span of its rows in `R^d`. Projection of a
//! `K × d` matrix `B` maps every row `b` to `b Vᵀ V`, where the rows of `V`
//! are an orthonormal basis of that span.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value cutoff used when none is given.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-6;

/// Orthonormal basis of the row span of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    /// `rank × d`, orthonormal rows ordered by decreasing singular value.
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// Row count of the matrix the basis was computed from.
    pub source_rows: usize,
    pub tolerance_used: f64,
}

impl ProjectionBasis {
    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.rank == 0
    }

    /// The `d × d` orthogonal projector `Vᵀ V`.
    pub fn projector(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.basis
    }
}

pub fn to_f64(m: &DMatrix<f32>) -> DMatrix<f64> {
    m.map(f64::from)
}

pub fn to_f32(m: &DMatrix<f64>) -> DMatrix<f32> {
    m.map(|v| v as f32)
}

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some((i, v)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        let (r, c) = (i % m.nrows(), i / m.nrows());
        return Err(Error::Numeric(format!(
            "{what} has non-finite entry {v} at row {r}, column {c}"
        )));
    }
    Ok(())
}

/// Computes an orthonormal basis of the span of `a`'s rows.
///
/// The numerical rank is the number of singular values strictly greater
/// than `rank_tolerance * σ_max`. An all-zero (or empty) matrix yields a
/// rank-0 basis.
pub fn orthonormal_basis(a: &DMatrix<f64>, rank_tolerance: f64) -> Result<ProjectionBasis> {
    if !rank_tolerance.is_finite() || rank_tolerance < 0.0 {
        return Err(Error::Numeric(format!(
            "rank tolerance must be a finite non-negative number, got {rank_tolerance}"
        )));
    }
    ensure_finite(a, "matrix")?;
    let (rows, d) = a.shape();
    let empty = ProjectionBasis {
        basis: DMatrix::zeros(0, d),
        rank: 0,
        source_rows: rows,
        tolerance_used: rank_tolerance,
    };
    if rows == 0 || d == 0 || a.iter().all(|&v| v == 0.0) {
        return Ok(empty);
    }

    let (sigma, v_t) = right_singular_vectors(a);

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let sigma_max = sigma[order[0]];
    if sigma_max == 0.0 {
        return Ok(empty);
    }
    let cutoff = rank_tolerance * sigma_max;
    let kept: Vec<usize> = order.into_iter().filter(|&i| sigma[i] > cutoff).collect();

    let mut basis = DMatrix::zeros(kept.len(), d);
    for (k, &i) in kept.iter().enumerate() {
        basis.set_row(k, &v_t.row(i));
    }
    Ok(ProjectionBasis {
        rank: kept.len(),
        basis,
        source_rows: rows,
        tolerance_used: rank_tolerance,
    })
}

/// Singular values and right singular vectors (as rows) of `a`.
///
/// Wide inputs go through a thin QR of `aᵀ` first, so the SVD only sees an
/// `L × L` factor: with `aᵀ = QR` and `Rᵀ = U Σ Wᵀ`, `a = U Σ (QW)ᵀ`.
fn right_singular_vectors(a: &DMatrix<f64>) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    if a.nrows() >= a.ncols() {
        let svd = a.clone().svd(false, true);
        return (
            svd.singular_values,
            svd.v_t.expect("right singular vectors were requested"),
        );
    }
    let qr = a.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let svd = r.transpose().svd(false, true);
    let w_t = svd.v_t.expect("right singular vectors were requested");
    (svd.singular_values, w_t * q.transpose())
}

/// Projects every row of `b` onto the span held by `basis`.
pub fn project_rows(b: &DMatrix<f64>, basis: &ProjectionBasis) -> Result<DMatrix<f64>> {
    if b.ncols() != basis.dim() {
        return Err(Error::Shape(format!(
            "cannot project rows of width {} onto a basis in dimension {}",
            b.ncols(),
            basis.dim()
        )));
    }
    if basis.is_empty() {
        return Ok(DMatrix::zeros(b.nrows(), b.ncols()));
    }
    let coefficients = b * basis.basis.transpose();
    Ok(coefficients * &basis.basis)
}
