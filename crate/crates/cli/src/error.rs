use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {path}: run `rerank-lab {producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error("input not found: {0}")]
    MissingInput(PathBuf),
    #[error(transparent)]
    Core(#[from] rerank_lab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// Process exit status for this failure category.
    pub fn exit_code(&self) -> u8 {
        use rerank_lab_core::Error as E;
        match self {
            Self::Config(_) => 3,
            Self::MissingArtifact { .. } | Self::MissingInput(_) => 4,
            Self::Core(E::Config(_)) => 3,
            Self::Core(E::Io(_)) | Self::Io { .. } => 6,
            Self::Core(E::NonFinite(_) | E::Tensor(_)) => 7,
            Self::Core(_) => 5,
        }
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        Self::Config(e.to_string())
    }
}
