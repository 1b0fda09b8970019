pub mod corpus;
pub mod embeddings;
mod error;
pub mod io;
pub mod metrics;
pub mod qanet;
pub mod rerank;
pub mod retrieval;
pub mod seeds;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
