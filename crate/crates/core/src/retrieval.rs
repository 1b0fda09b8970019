//! BM25 candidate retrieval over training questions.
//!
//! Each training pair becomes one document: its question (with any dialog
//! context already prepended) is indexed and its answer is the payload
//! returned by [`Bm25Index::search`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::corpus::QaPair;
use crate::text::TokenSequence;
use crate::{Error, Result};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// English stop set applied to unigram terms.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

/// Term extraction shared by documents and queries.
///
/// Tokens without any alphanumeric character are dropped. Unigrams are
/// lowercased, optionally stopword-filtered and stemmed; trigram shingles are
/// formed from the lowercased tokens before stopword removal or stemming.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub stopwords: bool,
    pub stemming: bool,
    pub trigrams: bool,
}

impl Default for Analyzer {
    fn default() -> Self {
        Self {
            stopwords: true,
            stemming: true,
            trigrams: true,
        }
    }
}

impl Analyzer {
    /// No stopwords, no stemming, no shingles.
    pub fn plain() -> Self {
        Self {
            stopwords: false,
            stemming: false,
            trigrams: false,
        }
    }

    pub fn terms(&self, tokens: &TokenSequence) -> Vec<String> {
        let words: Vec<String> = tokens
            .iter()
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .map(str::to_lowercase)
            .collect();
        let stemmer = self.stemming.then(|| Stemmer::create(Algorithm::English));
        let mut terms: Vec<String> = words
            .iter()
            .filter(|w| !(self.stopwords && STOPWORDS.contains(&w.as_str())))
            .map(|w| match &stemmer {
                Some(s) => s.stem(w).into_owned(),
                None => w.clone(),
            })
            .collect();
        if self.trigrams {
            terms.extend(words.windows(3).map(|w| w.join(" ")));
        }
        terms
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub question_id: String,
    pub question: TokenSequence,
    pub answer: TokenSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    analyzer: Analyzer,
    /// term → (doc id, term frequency), sorted by doc id
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    documents: Vec<Document>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub doc: usize,
    pub score: f64,
}

impl Bm25Index {
    pub fn build(pairs: &[QaPair], analyzer: Analyzer, params: Bm25Params) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus("cannot index an empty training set"));
        }
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(pairs.len());
        for (doc, pair) in pairs.iter().enumerate() {
            let terms = analyzer.terms(&pair.question);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((doc, n));
            }
        }
        let avgdl = doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64;
        let documents = pairs
            .iter()
            .map(|p| Document {
                question_id: p.question_id.clone(),
                question: p.question.clone(),
                answer: p.answer.clone(),
            })
            .collect();
        Ok(Self {
            params,
            analyzer,
            postings,
            doc_lengths,
            avgdl,
            documents,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    /// Distinct indexed terms, shingles included.
    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn document(&self, doc: usize) -> &Document {
        &self.documents[doc]
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn postings(&self, term: &str) -> &[(usize, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.documents.len() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `k` documents sharing at least one term with the query, by
    /// descending score and then ascending doc id. Each distinct query term
    /// contributes once.
    pub fn search(&self, query: &TokenSequence, k: usize) -> Vec<Hit> {
        let terms: BTreeSet<String> = self.analyzer.terms(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        for term in &terms {
            let idf = self.idf(term);
            for &(doc, tf) in self.postings(term) {
                let tf = f64::from(tf);
                let norm = 1.0 - b + b * f64::from(self.doc_lengths[doc]) / self.avgdl;
                *scores.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        let mut hits: Vec<Hit> = scores.into_iter().map(|(doc, score)| Hit { doc, score }).collect();
        hits.sort_by(|x, y| {
            y.score
                .partial_cmp(&x.score)
                .unwrap_or(Ordering::Equal)
                .then(x.doc.cmp(&y.doc))
        });
        hits.truncate(k);
        hits
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Self = serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if index.doc_lengths.len() != index.documents.len() || index.documents.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "inconsistent index".into(),
            });
        }
        Ok(index)
    }
}
