//! Experiment configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use rerank_lab_core::corpus::{DEFAULT_MIN_FREQ, DEFAULT_REDIRECT_PATTERNS, DEFAULT_RELABEL_THRESHOLD};
use rerank_lab_core::metrics::BleuMode;
use rerank_lab_core::qanet::{ModelConfig, TrainConfig};
use rerank_lab_core::rerank::{Strategy, DEFAULT_K, DEFAULT_RANDOM_TOP_K};
use rerank_lab_core::text::NormalizationRules;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DATA_DIR_ENV: &str = "RERANK_LAB_DATA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Base for every relative path below.
    pub data_dir: PathBuf,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub embeddings: EmbeddingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rerank: RerankConfig,
    pub evaluate: EvaluateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw conversation dump (TWCS CSV columns).
    pub corpus: PathBuf,
    pub artifacts: PathBuf,
    /// Tab-separated normalization overrides.
    pub normalization: Option<PathBuf>,
    /// External candidate files, one JSON object per line.
    pub candidates: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub support_account: Option<String>,
    pub redirect_patterns: Vec<String>,
    pub train_days: i64,
    pub test_days: i64,
    /// Previous turns prepended to classifier questions.
    pub context_turns: usize,
    /// Previous turns prepended to retrieval questions and queries.
    pub ir_context_turns: usize,
    pub max_question_len: usize,
    pub max_answer_len: usize,
    pub min_freq: usize,
    pub relabel_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Word vectors used to initialize the classifier embedding.
    pub model: Option<PathBuf>,
    pub freeze: bool,
    /// Word vectors for the embedding-based metrics.
    pub metrics: Option<PathBuf>,
    /// Dimension of the hashed vectors used when `metrics` is unset.
    pub hash_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub random_top_k: usize,
    /// Repetitions for stochastic strategies.
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub bleu: BleuMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("."),
            paths: Paths::default(),
            corpus: CorpusConfig::default(),
            embeddings: EmbeddingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            rerank: RerankConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("twcs.csv"),
            artifacts: PathBuf::from("artifacts"),
            normalization: None,
            candidates: Vec::new(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            support_account: None,
            redirect_patterns: DEFAULT_REDIRECT_PATTERNS.iter().map(|s| s.to_string()).collect(),
            train_days: 60,
            test_days: 5,
            context_turns: 0,
            ir_context_turns: 2,
            max_question_len: 60,
            max_answer_len: 70,
            min_freq: DEFAULT_MIN_FREQ,
            relabel_threshold: DEFAULT_RELABEL_THRESHOLD,
        }
    }
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            model: None,
            freeze: false,
            metrics: None,
            hash_dim: 50,
        }
    }
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Max, Strategy::Softmax, Strategy::RandomTop],
            k: DEFAULT_K,
            random_top_k: DEFAULT_RANDOM_TOP_K,
            runs: 10,
        }
    }
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { bleu: BleuMode::Corpus }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`; a relative `data_dir` inside it is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                config.data_dir = dir.join(&config.data_dir);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let c = &self.corpus;
        if c.train_days < 0 || c.test_days <= 0 {
            return Err(CliError::Config("train_days must be ≥ 0 and test_days > 0".into()));
        }
        if c.max_question_len == 0 || c.max_answer_len == 0 {
            return Err(CliError::Config("maximum lengths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&c.relabel_threshold) {
            return Err(CliError::Config("relabel_threshold must lie in [0, 1]".into()));
        }
        let r = &self.rerank;
        if r.k == 0 || r.random_top_k == 0 || r.runs == 0 {
            return Err(CliError::Config("rerank k, random_top_k and runs must be positive".into()));
        }
        if self.embeddings.hash_dim == 0 {
            return Err(CliError::Config("embeddings.hash_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir.join(path)
        }
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.resolve(&self.paths.artifacts).join(name)
    }

    pub fn normalization_rules(&self) -> Result<NormalizationRules> {
        match &self.paths.normalization {
            None => Ok(NormalizationRules::default()),
            Some(p) => {
                let p = self.resolve(p);
                if !p.exists() {
                    return Err(CliError::MissingInput(p));
                }
                Ok(NormalizationRules::with_override_file(&p)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_toml("seed = 7\n[model]\nd_model = 32\n[rerank]\nstrategies = [\"max\"]\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.num_heads, 8);
        assert_eq!(c.rerank.strategies, [Strategy::Max]);
        assert_eq!(c.corpus.train_days, 60);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("sede = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn relative_paths_use_data_dir() {
        let c = ExperimentConfig {
            data_dir: "/data".into(),
            ..ExperimentConfig::default()
        };
        assert_eq!(c.artifact("vocab.txt"), Path::new("/data/artifacts/vocab.txt"));
        assert_eq!(c.resolve(Path::new("/abs/x")), Path::new("/abs/x"));
    }
}
