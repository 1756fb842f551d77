//! In-memory story representation: per-frame token-embedding matrices and
//! the span layouts that say which rows belong to the identity prompt and
//! which to the frame prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Half-open row interval `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct RowSpan {
    pub start: usize,
    pub end: usize,
}

impl RowSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of rows; zero for empty or inverted intervals.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, row: usize) -> bool {
        self.start <= row && row < self.end
    }

    fn overlaps(&self, other: &RowSpan) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for RowSpan {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<RowSpan> for [usize; 2] {
    fn from(s: RowSpan) -> Self {
        [s.start, s.end]
    }
}

impl From<Range<usize>> for RowSpan {
    fn from(r: Range<usize>) -> Self {
        Self::new(r.start, r.end)
    }
}

impl fmt::Display for RowSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Which rows of a frame matrix hold identity tokens and which hold frame
/// tokens. Every other row (special and padding tokens) is left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanLayout {
    pub identity_rows: RowSpan,
    pub frame_rows: RowSpan,
}

impl SpanLayout {
    pub fn new(identity_rows: impl Into<RowSpan>, frame_rows: impl Into<RowSpan>) -> Self {
        Self {
            identity_rows: identity_rows.into(),
            frame_rows: frame_rows.into(),
        }
    }

    /// Checks the layout against a matrix with `rows` rows.
    pub fn validate(&self, rows: usize) -> Result<()> {
        for (label, span) in [("identity_rows", self.identity_rows), ("frame_rows", self.frame_rows)] {
            if span.start > span.end {
                return Err(Error::Layout(format!("{label} {span} has start after end")));
            }
            if span.end > rows {
                return Err(Error::Layout(format!("{label} {span} exceeds matrix row count {rows}")));
            }
        }
        if self.identity_rows.overlaps(&self.frame_rows) {
            return Err(Error::Layout(format!(
                "identity_rows {} and frame_rows {} overlap",
                self.identity_rows, self.frame_rows
            )));
        }
        Ok(())
    }

    /// Row indices outside both spans, in ascending order.
    pub fn untouched_rows(&self, rows: usize) -> Vec<usize> {
        (0..rows)
            .filter(|&r| !self.identity_rows.contains(r) && !self.frame_rows.contains(r))
            .collect()
    }
}

/// One frame's `L × d` token-embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingMatrix {
    /// Tensor name used in the container file.
    pub name: String,
    pub values: DMatrix<f32>,
    pub layout: SpanLayout,
    pub frame_index: usize,
}

impl TokenEmbeddingMatrix {
    pub fn new(name: impl Into<String>, values: DMatrix<f32>, layout: SpanLayout, frame_index: usize) -> Result<Self> {
        layout.validate(values.nrows())?;
        Ok(Self {
            name: name.into(),
            values,
            layout,
            frame_index,
        })
    }

    /// Builds a frame from row-major data.
    pub fn from_rows(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: &[f32],
        layout: SpanLayout,
        frame_index: usize,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(name, DMatrix::from_row_slice(rows, cols, data), layout, frame_index)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Row-major copy of the values.
    pub fn to_row_major(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.values.len());
        for row in self.values.row_iter() {
            out.extend(row.iter());
        }
        out
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let (rows, cols) = self.values.shape();
        (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .find(|&(r, c)| !self.values[(r, c)].is_finite())
    }
}

/// The `N` frames of one story. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryEmbeddingBundle {
    frames: Vec<TokenEmbeddingMatrix>,
    identity_length: usize,
    embedding_dim: usize,
    provenance: BTreeMap<String, Value>,
}

impl StoryEmbeddingBundle {
    pub fn new(frames: Vec<TokenEmbeddingMatrix>) -> Result<Self> {
        Self::with_provenance(frames, BTreeMap::new())
    }

    pub fn with_provenance(frames: Vec<TokenEmbeddingMatrix>, provenance: BTreeMap<String, Value>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Layout("a story needs at least one frame".into()))?;
        let embedding_dim = first.dim();
        let identity_length = first.layout.identity_rows.len();
        if embedding_dim == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        let mut names = std::collections::HashSet::new();
        for (n, frame) in frames.iter().enumerate() {
            if frame.frame_index != n {
                return Err(Error::Layout(format!(
                    "frame at position {n} carries frame_index {}",
                    frame.frame_index
                )));
            }
            if frame.dim() != embedding_dim {
                return Err(Error::Shape(format!(
                    "frame {n} has embedding dimension {}, expected {embedding_dim}",
                    frame.dim()
                )));
            }
            frame.layout.validate(frame.rows()).map_err(|e| e.in_frame(n))?;
            if frame.layout.identity_rows.len() != identity_length {
                return Err(Error::Layout(format!(
                    "frame {n} identity span has length {}, frame 0 has {identity_length}",
                    frame.layout.identity_rows.len()
                )));
            }
            if frame.name.is_empty() || !names.insert(frame.name.as_str()) {
                return Err(Error::Layout(format!(
                    "frame {n} tensor name {:?} is empty or duplicated",
                    frame.name
                )));
            }
        }
        Ok(Self {
            frames,
            identity_length,
            embedding_dim,
            provenance,
        })
    }

    pub fn frames(&self) -> &[TokenEmbeddingMatrix] {
        &self.frames
    }

    pub fn frame(&self, n: usize) -> &TokenEmbeddingMatrix {
        &self.frames[n]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn identity_length(&self) -> usize {
        self.identity_length
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn provenance(&self) -> &BTreeMap<String, Value> {
        &self.provenance
    }

    pub fn into_frames(self) -> Vec<TokenEmbeddingMatrix> {
        self.frames
    }

    /// Builds a new bundle with the same layouts, names and provenance but
    /// different values.
    pub(crate) fn replace_values(&self, values: Vec<DMatrix<f32>>) -> Result<Self> {
        if values.len() != self.frames.len() {
            return Err(Error::Shape(format!(
                "expected {} frame matrices, got {}",
                self.frames.len(),
                values.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(values)
            .map(|(f, v)| TokenEmbeddingMatrix {
                name: f.name.clone(),
                values: v,
                layout: f.layout,
                frame_index: f.frame_index,
            })
            .collect();
        Self::with_provenance(frames, self.provenance.clone())
    }
}
