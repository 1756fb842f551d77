//! Seeded synthetic stories with a controllable shared component.
//!
//! Every frame has the row layout `[bos | identity | frame | eos]`. Frame
//! parts are `s·S + (1 − s)·D_n` where `S` is shared by all frames, `D_n` is
//! drawn independently per frame, and all entries are unit Gaussian. The
//! identity block is a shared Gaussian block plus a small per-frame
//! perturbation, mimicking a contextual encoder.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::error::{Error, Result};
use crate::story::{SpanLayout, StoryEmbeddingBundle, TokenEmbeddingMatrix};

const IDENTITY_JITTER: f32 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub frames: usize,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub identity_tokens: usize,
    pub shared_strength: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            frames: 4,
            dim: 64,
            tokens_per_frame: 8,
            identity_tokens: 4,
            shared_strength: 0.5,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Layout("synthetic story needs at least one frame".into()));
        }
        if self.dim == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::Layout("tokens_per_frame must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_strength) {
            return Err(Error::Numeric(format!(
                "shared_strength must lie in [0, 1], got {}",
                self.shared_strength
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f32> {
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn synth_story(params: &SynthParams) -> Result<StoryEmbeddingBundle> {
    params.validate()?;
    let SynthParams {
        frames,
        dim,
        tokens_per_frame: lf,
        identity_tokens: lid,
        shared_strength,
        seed,
    } = *params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let specials = gaussian(&mut rng, 2, dim);
    let identity = gaussian(&mut rng, lid, dim);
    let shared = gaussian(&mut rng, lf, dim);

    let rows = lid + lf + 2;
    let layout = SpanLayout::new(1..1 + lid, 1 + lid..1 + lid + lf);
    let s = shared_strength as f32;
    let mut out = Vec::with_capacity(frames);
    for n in 0..frames {
        let jitter = gaussian(&mut rng, lid, dim);
        let own = gaussian(&mut rng, lf, dim);
        let mut values = DMatrix::zeros(rows, dim);
        values.set_row(0, &specials.row(0));
        values
            .rows_mut(1, lid)
            .copy_from(&(&identity + jitter * IDENTITY_JITTER));
        values.rows_mut(1 + lid, lf).copy_from(&(&shared * s + own * (1.0 - s)));
        values.set_row(rows - 1, &specials.row(1));
        out.push(TokenEmbeddingMatrix::new(format!("frame_{n:03}"), values, layout, n)?);
    }

    let provenance = BTreeMap::from([
        ("generator".to_string(), json!("synth")),
        ("seed".to_string(), json!(seed)),
        ("shared_strength".to_string(), json!(shared_strength)),
    ]);
    StoryEmbeddingBundle::with_provenance(out, provenance)
}
