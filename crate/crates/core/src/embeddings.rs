//! Fixed word vectors in the GloVe text format: a token followed by its
//! components, separated by spaces, one token per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("word vector dimension must be positive".into()));
        }
        if let Some((t, _)) = vectors.iter().find(|(_, v)| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Data(format!("vector for {t:?} must have {dim} finite components")));
        }
        Ok(Self { dim, vectors })
    }

    /// Reads vectors, keeping only tokens accepted by `keep` when given.
    /// The dimension is fixed by the first line.
    pub fn read_from<R: BufRead>(input: R, origin: &str, keep: Option<&dyn Fn(&str) -> bool>) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else { continue };
            let err = |message: String| Error::Parse {
                path: format!("{origin}:{}", i + 1),
                message,
            };
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(err(format!("expected {expected} components, found {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite component".into()));
            }
            if keep.is_none_or(|k| k(token)) {
                vectors.insert(token.to_string(), values);
            }
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            message: "no vectors".into(),
        })?;
        Ok(Self { dim, vectors })
    }

    pub fn load(path: &Path, keep: Option<&dyn Fn(&str) -> bool>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), &path.display().to_string(), keep)
    }

    /// Deterministic pseudo-random unit-free vectors keyed by token text.
    /// Useful when no pretrained file is at hand; identical tokens always
    /// share a vector and distinct tokens are nearly orthogonal in high
    /// dimensions.
    pub fn hashed<'a>(dim: usize, tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut vectors = HashMap::new();
        for t in tokens {
            if vectors.contains_key(t) {
                continue;
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::seeds::derive(0, t));
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            vectors.insert(t.to_string(), v);
        }
        Self::new(dim, vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_glove_lines() {
        let text = "the 0.1 -0.2 0.3\nphone 1 2 3\n";
        let wv = WordVectors::read_from(text.as_bytes(), "mem", None).unwrap();
        assert_eq!(wv.dim(), 3);
        assert_eq!(wv.get("phone").unwrap(), [1.0, 2.0, 3.0]);
        let only = |t: &str| t == "phone";
        let wv = WordVectors::read_from(text.as_bytes(), "mem", Some(&only)).unwrap();
        assert_eq!(wv.len(), 1);
    }

    #[test]
    fn ragged_rows_are_rejected_with_line() {
        let err = WordVectors::read_from("a 1 2\nb 1\n".as_bytes(), "v.txt", None).unwrap_err();
        assert!(err.to_string().contains("v.txt:2"), "{err}");
        assert!(WordVectors::read_from("a x\n".as_bytes(), "v", None).is_err());
        assert!(WordVectors::read_from("".as_bytes(), "v", None).is_err());
    }

    #[test]
    fn hashed_vectors_are_stable() {
        let a = WordVectors::hashed(8, ["x", "y"]).unwrap();
        let b = WordVectors::hashed(8, ["y", "x", "x"]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.get("x"), a.get("y"));
    }
}
