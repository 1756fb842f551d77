//! Cross-frame interference measurement.
//!
//! The overlap of frame part `A` with frame part `B` is the fraction of
//! `A`'s Frobenius energy that lies in the row span of `B`:
//! `‖Proj_B(A)‖_F / ‖A‖_F`. It is not symmetric.
//!
//! Both overlap matrices in a report are measured against the spans of the
//! *input* frame parts, since those are the spans the reorganization
//! subtracts: `before[n][m] = overlap(E_n, E_m)` and
//! `after[n][m] = overlap(Ẽ_n, E_m)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ProjectionBasis};
use crate::reorganizer::{slice_frame, ReorganizerConfig};
use crate::story::StoryEmbeddingBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub frame_count: usize,
    pub embedding_dim: usize,
    pub config: ReorganizerConfig,
    pub overlap_before: Vec<Vec<f64>>,
    pub overlap_after: Vec<Vec<f64>>,
    pub mean_offdiag_before: f64,
    pub mean_offdiag_after: f64,
    /// `‖Ẽ_n‖_F / ‖E_n‖_F` per frame; 0 for frames whose input part is zero.
    pub per_frame_energy_ratio: Vec<f64>,
    /// Ordered pairs `[n, m]` whose overlap grew. Possible for three or more
    /// frames because the subtraction averages projections.
    pub increased_pairs: Vec<[usize; 2]>,
}

impl InterferenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn overlap_with_basis(a: &DMatrix<f64>, basis: &ProjectionBasis) -> Result<f64> {
    let norm = a.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(linalg::project_rows(a, basis)?.norm() / norm)
}

/// Relative projected energy of `a` on the row span of `b`.
pub fn subspace_overlap(a: &DMatrix<f32>, b: &DMatrix<f32>, rank_tolerance: f64) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "frame parts have widths {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let basis = linalg::orthonormal_basis(&linalg::to_f64(b), rank_tolerance)?;
    overlap_with_basis(&linalg::to_f64(a), &basis)
}

fn mean_offdiag(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .sum();
    sum / (n * (n - 1)) as f64
}

pub fn build_report(
    before: &StoryEmbeddingBundle,
    after: &StoryEmbeddingBundle,
    config: &ReorganizerConfig,
) -> Result<InterferenceReport> {
    let n = before.frame_count();
    if after.frame_count() != n {
        return Err(Error::Shape(format!(
            "before has {n} frames, after has {}",
            after.frame_count()
        )));
    }
    let parts = |b: &StoryEmbeddingBundle| -> Vec<DMatrix<f64>> {
        b.frames()
            .iter()
            .map(|f| linalg::to_f64(&slice_frame(f).frame_part))
            .collect()
    };
    let (src, out) = (parts(before), parts(after));
    for (i, (a, b)) in src.iter().zip(&out).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "frame part shapes differ: {:?} before, {:?} after",
                a.shape(),
                b.shape()
            ))
            .in_frame(i));
        }
    }
    let bases = src
        .iter()
        .enumerate()
        .map(|(i, a)| linalg::orthonormal_basis(a, config.rank_tolerance).map_err(|e| e.in_frame(i)))
        .collect::<Result<Vec<_>>>()?;

    let matrix = |rows: &[DMatrix<f64>]| -> Result<Vec<Vec<f64>>> {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = if i == j {
                    if rows[i].norm() > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    overlap_with_basis(&rows[i], &bases[j])?
                };
            }
        }
        Ok(m)
    };
    let overlap_before = matrix(&src)?;
    let overlap_after = matrix(&out)?;

    let per_frame_energy_ratio = src
        .iter()
        .zip(&out)
        .map(|(a, b)| {
            let na = a.norm();
            if na == 0.0 {
                0.0
            } else {
                b.norm() / na
            }
        })
        .collect();
    let increased_pairs = (0..n)
        .flat_map(|i| (0..n).map(move |j| [i, j]))
        .filter(|&[i, j]| i != j && overlap_after[i][j] > overlap_before[i][j])
        .collect();

    Ok(InterferenceReport {
        frame_count: n,
        embedding_dim: before.embedding_dim(),
        config: *config,
        mean_offdiag_before: mean_offdiag(&overlap_before),
        mean_offdiag_after: mean_offdiag(&overlap_after),
        overlap_before,
        overlap_after,
        per_frame_energy_ratio,
        increased_pairs,
    })
}
