//! Test-only oracles, independent of the SVD path in the library.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use story_reorg::{SpanLayout, StoryEmbeddingBundle, TokenEmbeddingMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_f32(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f32> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `‖a − b‖_F / ‖b‖_F`, or the absolute error when `b` is zero.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_f32(a: &DMatrix<f32>, b: &DMatrix<f32>) -> f64 {
    rel_err(&a.map(f64::from), &b.map(f64::from))
}

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
fn solve(mut m: DMatrix<f64>, mut rhs: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        m.swap_rows(col, pivot);
        rhs.swap_rows(col, pivot);
        for row in col + 1..n {
            let f = m[(row, col)] / m[(col, col)];
            for k in col..n {
                m[(row, k)] -= f * m[(col, k)];
            }
            for k in 0..rhs.ncols() {
                rhs[(row, k)] -= f * rhs[(col, k)];
            }
        }
    }
    let mut x = DMatrix::zeros(n, rhs.ncols());
    for k in 0..rhs.ncols() {
        for row in (0..n).rev() {
            let mut acc = rhs[(row, k)];
            for j in row + 1..n {
                acc -= m[(row, j)] * x[(j, k)];
            }
            x[(row, k)] = acc / m[(row, row)];
        }
    }
    x
}

/// Indices of a maximal linearly independent subset of `a`'s rows, found by
/// greedy elimination with a relative threshold.
fn independent_rows(a: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let scale = a.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let mut reduced: Vec<nalgebra::RowDVector<f64>> = Vec::new();
    let mut picked = Vec::new();
    for (i, row) in a.row_iter().enumerate() {
        let mut r = row.clone_owned();
        for q in &reduced {
            let c = r.dot(q);
            r -= q * c;
        }
        let norm = r.norm();
        if norm > rel_tol * scale {
            reduced.push(r / norm);
            picked.push(i);
        }
    }
    picked
}

/// Brute-force row projection: for every row `b`, solve the normal
/// equations of `min_x ‖x A − b‖` over a maximal independent row subset
/// of `A` and return `x A`.
pub fn normal_equations_projection(b: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let keep = independent_rows(a, 1e-9);
    if keep.is_empty() {
        return DMatrix::zeros(b.nrows(), b.ncols());
    }
    let a_s = a.select_rows(&keep);
    let gram = &a_s * a_s.transpose();
    // x_kᵀ solves gram · x_kᵀ = A_s b_kᵀ, for all rows at once
    let rhs = &a_s * b.transpose();
    let x = solve(gram, rhs);
    x.transpose() * a_s
}

/// Random orthogonal matrix via classical Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = gaussian(rng, d, d);
    let mut q = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let mut v = g.row(i).clone_owned();
        for _ in 0..2 {
            for j in 0..i {
                let c = v.dot(&q.row(j));
                v -= q.row(j) * c;
            }
        }
        let n = v.norm();
        q.set_row(i, &(v / n));
    }
    q
}

/// A story whose frames consist of the given frame parts, plus one special
/// row before and after and an identity block of `lid` rows.
pub fn story_from_parts(parts: &[DMatrix<f32>], lid: usize, seed: u64) -> StoryEmbeddingBundle {
    let mut r = rng(seed);
    let d = parts[0].ncols();
    let frames = parts
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let lf = p.nrows();
            let rows = lid + lf + 2;
            let mut v = gaussian_f32(&mut r, rows, d);
            v.rows_mut(1 + lid, lf).copy_from(p);
            TokenEmbeddingMatrix::new(
                format!("frame_{n}"),
                v,
                SpanLayout::new(1..1 + lid, 1 + lid..1 + lid + lf),
                n,
            )
            .unwrap()
        })
        .collect();
    StoryEmbeddingBundle::new(frames).unwrap()
}

pub fn frame_part(b: &StoryEmbeddingBundle, n: usize) -> DMatrix<f32> {
    story_reorg::slice_frame(b.frame(n)).frame_part
}
