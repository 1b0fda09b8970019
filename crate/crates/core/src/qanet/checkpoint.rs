//! Single-file model checkpoints: a short text header with the
//! configuration and vocabulary, followed by the parameter tensors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rerank_tensor::checkpoint::{read_tensors, write_tensors};

use super::model::Qanet;
use super::ModelConfig;
use crate::corpus::Vocabulary;
use crate::{Error, Result};

const MAGIC: &str = "qanet-checkpoint v1";

impl Qanet {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "config {}", serde_json::to_string(self.config())?)?;
        writeln!(out, "frozen_embedding {}", self.is_embedding_frozen())?;
        writeln!(out, "vocab {}", self.vocab().len())?;
        self.vocab().write_to(&mut out)?;
        let named: Vec<(&str, &rerank_tensor::Tensor)> = self
            .param_names()
            .iter()
            .map(String::as_str)
            .zip(self.params())
            .collect();
        write_tensors(&mut out, &named)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Data("checkpoint ends early".into()));
            }
            Ok(line.trim_end_matches(['\n', '\r']).to_string())
        };
        if next(&mut input)? != MAGIC {
            return Err(Error::Data("not a model checkpoint".into()));
        }
        let header = |l: String, key: &str| -> Result<String> {
            l.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("checkpoint header: expected {key}")))
        };
        let config: ModelConfig = serde_json::from_str(&header(next(&mut input)?, "config")?)?;
        let frozen = match header(next(&mut input)?, "frozen_embedding")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Data(format!("checkpoint header: bad flag {other:?}"))),
        };
        let n: usize = header(next(&mut input)?, "vocab")?
            .parse()
            .map_err(|_| Error::Data("checkpoint header: bad vocabulary size".into()))?;
        let mut vocab_text = String::new();
        for _ in 0..n {
            vocab_text.push_str(&next(&mut input)?);
            vocab_text.push('\n');
        }
        let vocab = Vocabulary::read_from(vocab_text.as_bytes())?;
        let tensors = read_tensors(&mut input)?;
        Qanet::from_parts(config, vocab, tensors, frozen)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}
