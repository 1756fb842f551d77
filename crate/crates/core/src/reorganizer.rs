//! Story-level embedding reorganization.
//!
//! Each frame matrix is split into its identity rows and frame rows. Every
//! frame part `E_n` is then decorrelated against the others:
//!
//! ```text
//! Ẽ_n = E_n − w / (N − 1) · Σ_{m ≠ n} Proj_{E_m}(E_n)
//! ```
//!
//! where `Proj_{E_m}` projects rows onto the span of `E_m`'s rows, and the
//! frame is reassembled with a (possibly shared) identity block. Special and
//! padding rows are copied through unchanged.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ProjectionBasis, DEFAULT_RANK_TOLERANCE};
use crate::story::{StoryEmbeddingBundle, TokenEmbeddingMatrix};

/// Rows whose residual falls below this fraction of the input row norm are
/// set to exactly zero. This is far below float32 resolution of the input,
/// so only cancellation roundoff is affected.
pub const RESIDUAL_FLOOR: f64 = 1e-9;

/// Where the identity rows of every output frame come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum IdSource {
    /// Every frame receives frame 0's identity rows.
    #[default]
    FirstFrame,
    /// Every frame keeps its own identity rows.
    PerFrame,
    /// Every frame receives the element-wise mean of all identity slices.
    MeanOverFrames,
}

impl fmt::Display for IdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdSource::FirstFrame => "first_frame",
            IdSource::PerFrame => "per_frame",
            IdSource::MeanOverFrames => "mean_over_frames",
        })
    }
}

impl FromStr for IdSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_frame" => Ok(IdSource::FirstFrame),
            "per_frame" => Ok(IdSource::PerFrame),
            "mean_over_frames" => Ok(IdSource::MeanOverFrames),
            other => Err(Error::Layout(format!(
                "unknown id source {other:?}; expected first_frame, per_frame or mean_over_frames"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReorganizerConfig {
    pub rank_tolerance: f64,
    pub id_source: IdSource,
    /// Scales the subtracted projection term; 1.0 is the full method and
    /// 0.0 leaves frame rows untouched.
    pub interference_weight: f64,
}

impl Default for ReorganizerConfig {
    fn default() -> Self {
        Self {
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            id_source: IdSource::FirstFrame,
            interference_weight: 1.0,
        }
    }
}

impl ReorganizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rank_tolerance >= 0.0 && self.rank_tolerance.is_finite()) {
            return Err(Error::Numeric(format!(
                "rank_tolerance must be finite and non-negative, got {}",
                self.rank_tolerance
            )));
        }
        if !(0.0..=1.0).contains(&self.interference_weight) {
            return Err(Error::Numeric(format!(
                "interference_weight must lie in [0, 1], got {}",
                self.interference_weight
            )));
        }
        Ok(())
    }
}

/// A frame matrix split by its span layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedFrame {
    pub identity_part: DMatrix<f32>,
    pub frame_part: DMatrix<f32>,
    /// Rows outside both spans, in the order of `untouched_rows`.
    pub untouched_part: DMatrix<f32>,
    pub untouched_rows: Vec<usize>,
}

impl DecomposedFrame {
    pub fn total_rows(&self) -> usize {
        self.identity_part.nrows() + self.frame_part.nrows() + self.untouched_part.nrows()
    }
}

/// Identity rows chosen for the output frames.
#[derive(Debug, Clone, PartialEq)]
pub enum IdentitySelection {
    /// One `L_id × d` block written into every frame.
    Shared(DMatrix<f32>),
    /// Each frame keeps the identity rows it came with.
    PerFrame,
}

pub fn slice_frame(frame: &TokenEmbeddingMatrix) -> DecomposedFrame {
    let layout = frame.layout;
    let id = layout.identity_rows;
    let fr = layout.frame_rows;
    let untouched_rows = layout.untouched_rows(frame.rows());
    DecomposedFrame {
        identity_part: frame.values.rows(id.start, id.len()).into_owned(),
        frame_part: frame.values.rows(fr.start, fr.len()).into_owned(),
        untouched_part: frame.values.select_rows(&untouched_rows),
        untouched_rows,
    }
}

pub fn select_identity(bundle: &StoryEmbeddingBundle, config: &ReorganizerConfig) -> IdentitySelection {
    let slice = |n: usize| {
        let f = bundle.frame(n);
        let span = f.layout.identity_rows;
        f.values.rows(span.start, span.len())
    };
    match config.id_source {
        IdSource::PerFrame => IdentitySelection::PerFrame,
        IdSource::FirstFrame => IdentitySelection::Shared(slice(0).into_owned()),
        IdSource::MeanOverFrames => {
            let mut sum = DMatrix::<f64>::zeros(bundle.identity_length(), bundle.embedding_dim());
            for n in 0..bundle.frame_count() {
                sum += slice(n).map(f64::from);
            }
            let count = bundle.frame_count() as f64;
            IdentitySelection::Shared(sum.map(|v| (v / count) as f32))
        }
    }
}

/// Decorrelates one frame part against all other frames' frame parts.
///
/// `others` holds the frame parts of every `m ≠ n`; the story has
/// `others.len() + 1` frames.
pub fn decorrelate_frame(
    target: &DMatrix<f32>,
    others: &[DMatrix<f32>],
    config: &ReorganizerConfig,
) -> Result<DMatrix<f32>> {
    config.validate()?;
    let bases = others
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.ncols() != target.ncols() {
                return Err(Error::Shape(format!(
                    "other frame part {i} has width {}, target has {}",
                    m.ncols(),
                    target.ncols()
                )));
            }
            linalg::orthonormal_basis(&linalg::to_f64(m), config.rank_tolerance)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ProjectionBasis> = bases.iter().collect();
    decorrelate_with_bases(target, &refs, config.interference_weight)
}

/// Core of [`decorrelate_frame`] with precomputed bases of the other frames.
pub fn decorrelate_with_bases(
    target: &DMatrix<f32>,
    others: &[&ProjectionBasis],
    interference_weight: f64,
) -> Result<DMatrix<f32>> {
    if others.is_empty() || interference_weight == 0.0 {
        return Ok(target.clone());
    }
    let e = linalg::to_f64(target);
    let mut shared = DMatrix::<f64>::zeros(e.nrows(), e.ncols());
    for basis in others {
        shared += linalg::project_rows(&e, basis)?;
    }
    let scale = interference_weight / others.len() as f64;
    let mut out = &e - shared * scale;
    for (mut row, input) in out.row_iter_mut().zip(e.row_iter()) {
        if row.norm() <= RESIDUAL_FLOOR * input.norm() {
            row.fill(0.0);
        }
    }
    Ok(linalg::to_f32(&out))
}

/// Writes `identity` and `frame_part` back into a copy of `original`.
pub fn reassemble_frame(
    identity: &DMatrix<f32>,
    frame_part: &DMatrix<f32>,
    original: &TokenEmbeddingMatrix,
) -> Result<TokenEmbeddingMatrix> {
    let layout = original.layout;
    let d = original.dim();
    if identity.shape() != (layout.identity_rows.len(), d) {
        return Err(Error::Shape(format!(
            "identity block is {}x{}, layout expects {}x{d}",
            identity.nrows(),
            identity.ncols(),
            layout.identity_rows.len()
        )));
    }
    if frame_part.shape() != (layout.frame_rows.len(), d) {
        return Err(Error::Shape(format!(
            "frame block is {}x{}, layout expects {}x{d}",
            frame_part.nrows(),
            frame_part.ncols(),
            layout.frame_rows.len()
        )));
    }
    let mut values = original.values.clone();
    values
        .rows_mut(layout.identity_rows.start, layout.identity_rows.len())
        .copy_from(identity);
    values
        .rows_mut(layout.frame_rows.start, layout.frame_rows.len())
        .copy_from(frame_part);
    Ok(TokenEmbeddingMatrix {
        name: original.name.clone(),
        values,
        layout,
        frame_index: original.frame_index,
    })
}

/// Reorganizes every frame of a story. Pure and deterministic.
pub fn reorganize_story(bundle: &StoryEmbeddingBundle, config: &ReorganizerConfig) -> Result<StoryEmbeddingBundle> {
    config.validate()?;
    let n_frames = bundle.frame_count();
    if n_frames == 1 {
        return Ok(bundle.clone());
    }
    for frame in bundle.frames() {
        if let Some((r, c)) = frame.first_non_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value {} at row {r}, column {c}",
                frame.values[(r, c)]
            ))
            .in_frame(frame.frame_index));
        }
    }

    let parts: Vec<DecomposedFrame> = bundle.frames().iter().map(slice_frame).collect();
    let identity = select_identity(bundle, config);

    let bases = if config.interference_weight == 0.0 {
        Vec::new()
    } else {
        parts
            .iter()
            .enumerate()
            .map(|(m, p)| {
                linalg::orthonormal_basis(&linalg::to_f64(&p.frame_part), config.rank_tolerance)
                    .map_err(|e| e.in_frame(m))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let mut values = Vec::with_capacity(n_frames);
    for (n, (frame, part)) in bundle.frames().iter().zip(&parts).enumerate() {
        let reorganized = if bases.is_empty() {
            part.frame_part.clone()
        } else {
            let others: Vec<&ProjectionBasis> = bases
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != n)
                .map(|(_, b)| b)
                .collect();
            decorrelate_with_bases(&part.frame_part, &others, config.interference_weight).map_err(|e| e.in_frame(n))?
        };
        let id_block = match &identity {
            IdentitySelection::Shared(block) => block,
            IdentitySelection::PerFrame => &part.identity_part,
        };
        let out = reassemble_frame(id_block, &reorganized, frame).map_err(|e| e.in_frame(n))?;
        values.push(out.values);
    }
    bundle.replace_values(values)
}
