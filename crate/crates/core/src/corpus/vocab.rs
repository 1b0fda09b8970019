use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::text::TokenSequence;
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const DEFAULT_MIN_FREQ: usize = 2;

/// Token ↔ id table. Id 0 is padding and id 1 the unknown token; the rest
/// are ordered by descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(sequences: impl IntoIterator<Item = &'a TokenSequence>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq.iter() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    fn from_tokens(rest: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = [PAD.to_string(), UNK.to_string()].into_iter().chain(rest).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// One token per line, in id order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < 2 || lines[0] != PAD || lines[1] != UNK {
            return Err(Error::Data(format!("vocabulary must start with {PAD} and {UNK}")));
        }
        let vocab = Self::from_tokens(lines.into_iter().skip(2));
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_and_cutoff() {
        let seqs = [
            TokenSequence::from_whitespace("b a a c"),
            TokenSequence::from_whitespace("b a d"),
        ];
        let v = Vocabulary::build(&seqs, 2);
        assert_eq!(v.tokens(), [PAD, UNK, "a", "b"]);
        assert_eq!(v.encode(&TokenSequence::from_whitespace("a d b")), [2, UNK_ID, 3]);
        assert_eq!(v.decode(&[3, 1, 0]), ["b", UNK, PAD]);
    }

    #[test]
    fn text_round_trip() {
        let seqs = [TokenSequence::from_whitespace("x y z x y x")];
        let v = Vocabulary::build(&seqs, 1);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read_from(&b"a\nb\n"[..]).is_err());
    }
}
