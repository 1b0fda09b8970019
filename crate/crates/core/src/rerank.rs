//! Candidate pools and answer selection.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::qanet::Qanet;
use crate::retrieval::Bm25Index;
use crate::text::{NormalizationRules, TokenSequence, preprocess};
use crate::{io, seeds, Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_RANDOM_TOP_K: usize = 2;
pub const BM25_SOURCE: &str = "bm25";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub answer: TokenSequence,
    pub source: String,
    /// 1-based rank within its source.
    pub source_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub question_id: String,
    pub question: TokenSequence,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub index: usize,
    pub answer: TokenSequence,
    pub source: String,
    /// Pre-sigmoid model output.
    pub score: f64,
    /// Softmax of `score` over the pool.
    pub probability: f64,
    pub selected: bool,
}

/// Anything that proposes ranked answers for a question.
pub trait CandidateSource {
    fn name(&self) -> &str;
    fn top_k(&self, question_id: &str, question: &TokenSequence, k: usize) -> Vec<Candidate>;
}

pub struct Bm25Source<'a> {
    pub index: &'a Bm25Index,
}

impl CandidateSource for Bm25Source<'_> {
    fn name(&self) -> &str {
        BM25_SOURCE
    }

    fn top_k(&self, _question_id: &str, question: &TokenSequence, k: usize) -> Vec<Candidate> {
        self.index
            .search(question, k)
            .into_iter()
            .enumerate()
            .map(|(r, hit)| Candidate {
                answer: self.index.document(hit.doc).answer.clone(),
                source: BM25_SOURCE.to_string(),
                source_rank: r + 1,
            })
            .collect()
    }
}

/// One line of an external candidate file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub question_id: String,
    pub source: String,
    pub rank: usize,
    pub answer_text: String,
}

/// Candidates produced elsewhere (for example by a generative model),
/// keyed by question id.
#[derive(Clone, Debug, Default)]
pub struct FileSource {
    name: String,
    by_question: HashMap<String, Vec<(usize, TokenSequence)>>,
}

impl FileSource {
    /// Answer texts are normalized with `rules`; candidates keep the order
    /// given by their `rank` field. Every record must carry `name` as its
    /// source.
    pub fn from_records(name: &str, records: Vec<CandidateRecord>, rules: &NormalizationRules) -> Result<Self> {
        let mut by_question: HashMap<String, Vec<(usize, TokenSequence)>> = HashMap::new();
        for r in records {
            if r.source != name {
                return Err(Error::Data(format!(
                    "candidate for {} has source {:?}, expected {name:?}",
                    r.question_id, r.source
                )));
            }
            by_question
                .entry(r.question_id)
                .or_default()
                .push((r.rank, preprocess(&r.answer_text, rules)));
        }
        for list in by_question.values_mut() {
            list.sort_by_key(|(rank, _)| *rank);
        }
        Ok(Self {
            name: name.to_string(),
            by_question,
        })
    }

    /// Reads a candidate file; the source name is taken from its records.
    pub fn load(path: &Path, rules: &NormalizationRules) -> Result<Self> {
        let records: Vec<CandidateRecord> = io::read_jsonl(path)?;
        let name = records
            .first()
            .map(|r| r.source.clone())
            .ok_or_else(|| Error::Data(format!("{}: no candidates", path.display())))?;
        Self::from_records(&name, records, rules)
    }
}

impl CandidateSource for FileSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn top_k(&self, question_id: &str, _question: &TokenSequence, k: usize) -> Vec<Candidate> {
        self.by_question
            .get(question_id)
            .map(|list| {
                list.iter()
                    .filter(|(_, a)| !a.is_empty())
                    .take(k)
                    .enumerate()
                    .map(|(r, (_, a))| Candidate {
                        answer: a.clone(),
                        source: self.name.clone(),
                        source_rank: r + 1,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Concatenates the top `k` candidates of every source, keeping duplicates.
pub fn assemble_pool(
    question_id: &str,
    question: &TokenSequence,
    sources: &[(&dyn CandidateSource, usize)],
) -> Result<CandidatePool> {
    let candidates: Vec<Candidate> = sources
        .iter()
        .flat_map(|(s, k)| s.top_k(question_id, question, *k))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyPool(question_id.to_string()));
    }
    Ok(CandidatePool {
        question_id: question_id.to_string(),
        question: question.clone(),
        candidates,
    })
}

/// One model logit per candidate.
pub fn score_pool(model: &Qanet, pool: &CandidatePool) -> Result<Vec<f64>> {
    pool.candidates
        .iter()
        .map(|c| model.score_tokens(&pool.question, &c.answer))
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn check(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Data("cannot select from an empty pool".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("candidate score {s}")));
    }
    Ok(())
}

/// Index of the highest score; the earliest candidate wins ties.
pub fn select_max(scores: &[f64]) -> Result<usize> {
    check(scores)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Draws an index with probability `softmax(scores)`.
pub fn select_softmax(scores: &[f64], rng: &mut impl Rng) -> Result<usize> {
    check(scores)?;
    let dist = WeightedIndex::new(softmax(scores)).map_err(|e| Error::Data(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Generator for one pool, derived from the global seed and the question
/// id so that results do not depend on processing order.
pub fn pool_rng(global_seed: u64, question_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive_keyed(global_seed, seeds::SELECTION, question_id))
}

/// Uniform choice among the union of each source's top `k` candidates.
pub fn select_random_top(pool: &CandidatePool, k: usize, rng: &mut impl Rng) -> Result<usize> {
    let eligible: Vec<usize> = pool
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.source_rank <= k)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyPool(pool.question_id.clone()));
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}

/// Every candidate with its score and pool probability, marking `selected`.
pub fn rank(pool: &CandidatePool, scores: &[f64], selected: usize) -> Vec<RankedAnswer> {
    let probs = softmax(scores);
    pool.candidates
        .iter()
        .zip(scores)
        .zip(probs)
        .enumerate()
        .map(|(i, ((c, &score), probability))| RankedAnswer {
            index: i,
            answer: c.answer.clone(),
            source: c.source.clone(),
            score,
            probability,
            selected: i == selected,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Max,
    Softmax,
    RandomTop,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Self::Max, Self::Softmax, Self::RandomTop];

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Self::Max)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Max => "max",
            Self::Softmax => "softmax",
            Self::RandomTop => "random-top",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected max, softmax or random-top)")))
    }
}

/// One line of a selection output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub question_id: String,
    pub selected_answer: String,
    pub source: String,
    pub score: Option<f64>,
    pub probability: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

/// Selects one answer from `pool`. `scores` is required for the model-based
/// strategies and ignored by [`Strategy::RandomTop`].
pub fn choose(
    pool: &CandidatePool,
    scores: Option<&[f64]>,
    strategy: Strategy,
    seed: u64,
    random_top_k: usize,
) -> Result<SelectionRecord> {
    let mut rng = pool_rng(seed, &pool.question_id);
    let (index, score, probability) = match strategy {
        Strategy::RandomTop => {
            let i = select_random_top(pool, random_top_k, &mut rng)?;
            let n = pool.candidates.iter().filter(|c| c.source_rank <= random_top_k).count();
            (i, None, 1.0 / n as f64)
        }
        Strategy::Max | Strategy::Softmax => {
            let scores = scores.ok_or_else(|| Error::Config(format!("{strategy:?} selection needs model scores")))?;
            if scores.len() != pool.candidates.len() {
                return Err(Error::Data(format!(
                    "{} scores for {} candidates",
                    scores.len(),
                    pool.candidates.len()
                )));
            }
            let i = if strategy == Strategy::Max {
                select_max(scores)?
            } else {
                select_softmax(scores, &mut rng)?
            };
            (i, Some(scores[i]), softmax(scores)[i])
        }
    };
    let c = &pool.candidates[index];
    Ok(SelectionRecord {
        question_id: pool.question_id.clone(),
        selected_answer: c.answer.to_string(),
        source: c.source.clone(),
        score,
        probability,
        strategy,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_whitespace(s)
    }

    fn file_source(name: &str, qid: &str, answers: &[&str]) -> FileSource {
        let records = answers
            .iter()
            .enumerate()
            .map(|(i, a)| CandidateRecord {
                question_id: qid.into(),
                source: name.into(),
                rank: i + 1,
                answer_text: a.to_string(),
            })
            .collect();
        FileSource::from_records(name, records, &NormalizationRules::default()).unwrap()
    }

    #[test]
    fn pools_concatenate_and_keep_duplicates() {
        let a = file_source("external:a", "q", &["one", "two", "three", "four", "five", "six"]);
        let b = file_source("external:b", "q", &["one", "seven"]);
        let pool = assemble_pool("q", &seq("hi"), &[(&a, 5)]).unwrap();
        assert_eq!(pool.candidates.len(), 5);
        let pool = assemble_pool("q", &seq("hi"), &[(&a, 5), (&b, 5)]).unwrap();
        assert_eq!(pool.candidates.len(), 7);
        assert_eq!(pool.candidates[5].answer, pool.candidates[0].answer);
        assert_eq!(pool.candidates[5].source_rank, 1);
        let err = assemble_pool("q9", &seq("hi"), &[(&a, 5), (&b, 5)]).unwrap_err();
        assert!(err.to_string().contains("q9"));
    }

    #[test]
    fn max_selection_cases() {
        assert_eq!(select_max(&[0.2, 1.5, -0.3]).unwrap(), 1);
        assert_eq!(select_max(&[4.0]).unwrap(), 0);
        assert_eq!(select_max(&[1.0, 3.0, 3.0]).unwrap(), 1);
        assert!(select_max(&[]).is_err());
    }

    #[test]
    fn softmax_probabilities() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(softmax(&[1.0, 1.0, 1.0, 1.0]), [0.25; 4]);
    }

    #[test]
    fn pool_streams_are_order_independent() {
        let mut a = pool_rng(5, "q1");
        let mut b = pool_rng(5, "q1");
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn random_top_uses_top_ranks_only() {
        let a = file_source("a", "q", &["x1", "x2", "x3"]);
        let b = file_source("b", "q", &["y1", "y2", "y3"]);
        let pool = assemble_pool("q", &seq("hi"), &[(&a, 5), (&b, 5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [0usize; 6];
        for _ in 0..4000 {
            seen[select_random_top(&pool, 2, &mut rng).unwrap()] += 1;
        }
        assert_eq!(seen[2], 0);
        assert_eq!(seen[5], 0);
        for i in [0, 1, 3, 4] {
            assert!((seen[i] as f64 / 4000.0 - 0.25).abs() < 0.03);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("best".parse::<Strategy>().is_err());
    }
}
