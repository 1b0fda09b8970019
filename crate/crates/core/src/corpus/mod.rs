//! Dialog reconstruction, splitting, QA pair extraction and negative sampling.

mod dialogs;
mod pairs;
mod sampling;
mod twcs;
mod vocab;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::text::TokenSequence;

pub use dialogs::{
    build_dialogs, filter_redirects, time_split, BuildSummary, RedirectFilter, Split,
    DEFAULT_REDIRECT_PATTERNS,
};
pub use pairs::{extract_all_pairs, extract_pairs, question_id};
pub use sampling::{bow_cosine, negative_sample, SamplingSummary, DEFAULT_RELABEL_THRESHOLD};
pub use twcs::{parse_timestamp, read_twcs, read_twcs_from, write_twcs, write_twcs_to, TwcsRead, TwcsRecord};
pub use vocab::{Vocabulary, DEFAULT_MIN_FREQ, PAD, PAD_ID, UNK, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Support,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub tweet_id: String,
    pub role: Role,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub tokens: TokenSequence,
}

/// A linear conversation rooted at a customer turn; at least two turns,
/// timestamps non-decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn start(&self) -> DateTime<Utc> {
        self.turns[0].timestamp
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question_id: String,
    pub dialog_id: String,
    /// Index of the customer turn inside its dialog.
    pub turn_index: usize,
    pub question: TokenSequence,
    pub answer: TokenSequence,
    pub timestamp: DateTime<Utc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    Sampled,
    SampledRelabeled,
}

impl Provenance {
    pub fn label(self) -> u8 {
        match self {
            Self::Original | Self::SampledRelabeled => 1,
            Self::Sampled => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_ids: Vec<usize>,
    pub answer_ids: Vec<usize>,
    pub label: u8,
    pub provenance: Provenance,
}
