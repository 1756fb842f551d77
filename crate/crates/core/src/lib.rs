//! Inference-time reorganization of jointly encoded multi-frame prompt
//! embeddings.
//!
//! A story is `N` token-embedding matrices, one per frame, each holding an
//! identity span (tokens of the shared subject prompt) and a frame span
//! (tokens of that frame's prompt). [`reorganize_story`] removes from every
//! frame span the averaged projection onto the other frames' spans, unifies
//! the identity rows, and leaves every other row alone.
//! [`build_report`] measures cross-frame subspace overlap before and after.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod reorganizer;
pub mod story;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use linalg::{orthonormal_basis, project_rows, ProjectionBasis, DEFAULT_RANK_TOLERANCE};
pub use metrics::{build_report, subspace_overlap, InterferenceReport};
pub use reorganizer::{
    decorrelate_frame, reassemble_frame, reorganize_story, select_identity, slice_frame, DecomposedFrame, IdSource,
    IdentitySelection, ReorganizerConfig,
};
pub use story::{RowSpan, SpanLayout, StoryEmbeddingBundle, TokenEmbeddingMatrix};
pub use synth::{synth_story, SynthParams};
pub use tensor_io::{read_story, write_story};
