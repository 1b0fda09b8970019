use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Provenance, QaPair, TrainingExample, Vocabulary};
use crate::text::TokenSequence;
use crate::{Error, Result};

pub const DEFAULT_RELABEL_THRESHOLD: f64 = 0.9;

fn term_counts(s: &TokenSequence) -> HashMap<&str, f64> {
    let mut m: HashMap<&str, f64> = HashMap::new();
    for t in s.iter() {
        *m.entry(t).or_default() += 1.0;
    }
    m
}

/// Cosine similarity of raw term-count vectors. Empty inputs give 0.
pub fn bow_cosine(a: &TokenSequence, b: &TokenSequence) -> f64 {
    let (ca, cb) = (term_counts(a), term_counts(b));
    let dot: f64 = ca.iter().map(|(t, x)| x * cb.get(t).unwrap_or(&0.0)).sum();
    let na: f64 = ca.values().map(|x| x * x).sum();
    let nb: f64 = cb.values().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).min(1.0)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub pairs: usize,
    pub positives: usize,
    pub negatives: usize,
    pub relabeled: usize,
}

/// Emits the original pair as a positive and one sampled answer from another
/// pair as a negative, relabeled positive when its bag-of-words cosine to the
/// original reaches `threshold`. Output order follows `pairs`.
pub fn negative_sample(
    pairs: &[QaPair],
    vocab: &Vocabulary,
    seed: u64,
    threshold: f64,
) -> Result<(Vec<TrainingExample>, SamplingSummary)> {
    let distinct: HashSet<&TokenSequence> = pairs.iter().map(|p| &p.answer).collect();
    if distinct.len() < 2 {
        return Err(Error::TooFewAnswers(distinct.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * pairs.len());
    let mut summary = SamplingSummary {
        pairs: pairs.len(),
        ..SamplingSummary::default()
    };
    let n = pairs.len();
    for (i, p) in pairs.iter().enumerate() {
        let question_ids = vocab.encode(&p.question);
        out.push(TrainingExample {
            question_ids: question_ids.clone(),
            answer_ids: vocab.encode(&p.answer),
            label: 1,
            provenance: Provenance::Original,
        });
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let other = &pairs[j].answer;
        let provenance = if bow_cosine(&p.answer, other) >= threshold {
            summary.relabeled += 1;
            Provenance::SampledRelabeled
        } else {
            Provenance::Sampled
        };
        out.push(TrainingExample {
            question_ids,
            answer_ids: vocab.encode(other),
            label: provenance.label(),
            provenance,
        });
    }
    summary.positives = out.iter().filter(|e| e.label == 1).count();
    summary.negatives = out.len() - summary.positives;
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn pair(i: usize, q: &str, a: &str) -> QaPair {
        QaPair {
            question_id: format!("d{i}-0"),
            dialog_id: format!("d{i}"),
            turn_index: 0,
            question: TokenSequence::from_whitespace(q),
            answer: TokenSequence::from_whitespace(a),
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn cosine_cases() {
        let s = |t| TokenSequence::from_whitespace(t);
        assert_eq!(bow_cosine(&s("a b a"), &s("a b a")), 1.0);
        assert_eq!(bow_cosine(&s("a"), &s("b")), 0.0);
        // (2,1)·(1,1) / (√5·√2)
        let expected = 3.0 / (5.0f64.sqrt() * 2.0f64.sqrt());
        assert!((bow_cosine(&s("a a b"), &s("a b")) - expected).abs() < 1e-15);
        assert_eq!(bow_cosine(&s(""), &s("a")), 0.0);
    }

    #[test]
    fn identical_sampled_answer_is_relabeled() {
        let pairs = vec![pair(0, "q0", "same answer"), pair(1, "q1", "same answer"), pair(2, "q2", "other")];
        let vocab = Vocabulary::build(pairs.iter().map(|p| &p.answer), 1);
        let (ex, summary) = negative_sample(&pairs, &vocab, 3, DEFAULT_RELABEL_THRESHOLD).unwrap();
        for k in 0..2 {
            let neg = &ex[2 * k + 1];
            if neg.answer_ids == ex[2 * k].answer_ids {
                assert_eq!(neg.provenance, Provenance::SampledRelabeled);
                assert_eq!(neg.label, 1);
            }
        }
        assert_eq!(summary.positives - summary.pairs, summary.relabeled);
    }

    #[test]
    fn single_answer_pool_is_an_error() {
        let pairs = vec![pair(0, "q0", "a"), pair(1, "q1", "a")];
        let vocab = Vocabulary::build(std::iter::empty(), 1);
        assert!(matches!(
            negative_sample(&pairs, &vocab, 0, 0.9),
            Err(Error::TooFewAnswers(1))
        ));
    }

    #[test]
    fn deterministic_and_never_self() {
        let pairs: Vec<_> = (0..40).map(|i| pair(i, &format!("q{i}"), &format!("ans{i} x"))).collect();
        let vocab = Vocabulary::build(pairs.iter().map(|p| &p.answer), 1);
        let a = negative_sample(&pairs, &vocab, 11, 0.9).unwrap();
        let b = negative_sample(&pairs, &vocab, 11, 0.9).unwrap();
        assert_eq!(a, b);
        for k in 0..40 {
            assert_ne!(a.0[2 * k].answer_ids, a.0[2 * k + 1].answer_ids);
        }
        assert_eq!(a.1.positives, 40);
        assert_eq!(a.1.negatives, 40);
    }
}
