//! Question/answer goodness classifier in the QANet style.
//!
//! Both sides are embedded (word vectors, two highway layers, a width-1
//! convolution to `d_model`, positional encodings) and passed through
//! encoder blocks. Trilinear attention links answer positions to question
//! positions; the fused representation feeds two model blocks whose
//! pooled outputs go through a final linear layer and a sigmoid.

mod checkpoint;
mod model;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD_ID};
use crate::text::{TokenSequence, DEFAULT_MAX_ANSWER_LEN, DEFAULT_MAX_QUESTION_LEN};
use crate::{Error, Result};

pub use model::{highway, Mode, Qanet, Side};
pub use params::{AttentionLayout, BlockLayout, ConvLayout, FfnLayout, HighwayLayout, Layout, SideLayout};
pub use train::{batch_mean_loss, evaluate_accuracy, train, Accuracy, EpochRecord, TrainConfig, TrainOutcome};

/// How the model-block outputs are reduced to fixed-size vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over unpadded answer positions.
    Mean,
    /// The first answer position.
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub conv_kernel: usize,
    pub convs_per_block: usize,
    pub encoder_blocks: usize,
    pub model_blocks: usize,
    pub dropout: f64,
    pub word_dim: usize,
    pub max_q_len: usize,
    pub max_a_len: usize,
    pub positional_encoding: bool,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            num_heads: 8,
            conv_kernel: 7,
            convs_per_block: 4,
            encoder_blocks: 1,
            model_blocks: 2,
            dropout: 0.1,
            word_dim: 200,
            max_q_len: DEFAULT_MAX_QUESTION_LEN,
            max_a_len: DEFAULT_MAX_ANSWER_LEN,
            positional_encoding: true,
            pooling: Pooling::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.num_heads == 0 || self.word_dim == 0 {
            return bad("d_model, num_heads and word_dim must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!("d_model {} is not divisible by num_heads {}", self.d_model, self.num_heads));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.model_blocks == 0 {
            return bad("at least one model block is required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_q_len == 0 || self.max_a_len == 0 {
            return bad("maximum lengths must be positive".into());
        }
        Ok(())
    }
}

/// Token ids for one side of an example. Positions from `len` onward are
/// padding and never influence the output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub len: usize,
}

impl Encoded {
    /// Trims `ids` to `max_len`, then pads with [`PAD_ID`] up to `pad_to`.
    pub fn new(ids: &[usize], max_len: usize, pad_to: Option<usize>) -> Result<Self> {
        let len = ids.len().min(max_len);
        if len == 0 {
            return Err(Error::Data("empty token sequence cannot be scored".into()));
        }
        let mut ids = ids[..len].to_vec();
        if let Some(target) = pad_to {
            ids.resize(target.max(len), PAD_ID);
        }
        Ok(Self { ids, len })
    }

    pub fn from_tokens(vocab: &Vocabulary, tokens: &TokenSequence, max_len: usize) -> Result<Self> {
        Self::new(&vocab.encode(tokens), max_len, None)
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.len).collect()
    }
}
