use std::collections::BTreeSet;

use chrono::Utc;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rerank_lab_core::corpus::QaPair;
use rerank_lab_core::retrieval::{Analyzer, Bm25Index, Bm25Params};
use rerank_lab_core::text::TokenSequence;

fn pairs(docs: &[Vec<String>]) -> Vec<QaPair> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| QaPair {
            question_id: format!("q{i}"),
            dialog_id: format!("d{i}"),
            turn_index: 0,
            question: TokenSequence::new(d.clone()).unwrap(),
            answer: TokenSequence::from_whitespace("x"),
            timestamp: Utc::now(),
        })
        .collect()
}

fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, vocab: usize) -> Vec<Vec<String>> {
    (0..n_docs)
        .map(|_| {
            let len = rng.random_range(1..=20);
            (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
        })
        .collect()
}

/// Direct evaluation of the formula from raw term lists.
fn brute_force(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let distinct: BTreeSet<&String> = query.iter().collect();
    docs.iter()
        .map(|d| {
            let mut score = 0.0;
            for t in &distinct {
                let tf = d.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|o| o.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            score
        })
        .collect()
}

#[test]
fn matches_brute_force_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs = random_corpus(&mut rng, 100, 60);
    let idx = Bm25Index::build(&pairs(&docs), Analyzer::plain(), Bm25Params::default()).unwrap();
    for _ in 0..50 {
        let qlen = rng.random_range(1..=6);
        let query: Vec<String> = (0..qlen).map(|_| format!("w{}", rng.random_range(0..70))).collect();
        let expected = brute_force(&docs, &query, 1.2, 0.75);
        let hits = idx.search(&TokenSequence::new(query.clone()).unwrap(), 1000);
        let matching = expected.iter().filter(|&&s| s > 0.0).count();
        assert_eq!(hits.len(), matching);
        for h in &hits {
            assert!((h.score - expected[h.doc]).abs() < 1e-9, "doc {}: {} vs {}", h.doc, h.score, expected[h.doc]);
        }
        for w in hits.windows(2) {
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc < w[1].doc));
        }
        assert_eq!(hits, idx.search(&TokenSequence::new(query).unwrap(), 1000));
    }
}

#[test]
fn default_analyzer_scores_match_formula_over_its_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["the", "phone", "phones", "charging", "battery", "is", "dead", "screen", "broken", "update"];
    let docs: Vec<Vec<String>> = (0..100)
        .map(|_| (0..rng.random_range(1..12)).map(|_| words[rng.random_range(0..words.len())].to_string()).collect())
        .collect();
    let analyzer = Analyzer::default();
    let idx = Bm25Index::build(&pairs(&docs), analyzer, Bm25Params::default()).unwrap();
    let analyzed: Vec<Vec<String>> = docs
        .iter()
        .map(|d| analyzer.terms(&TokenSequence::new(d.clone()).unwrap()))
        .collect();
    let query = TokenSequence::from_whitespace("my phone battery is charging");
    let expected = brute_force(&analyzed, &analyzer.terms(&query), 1.2, 0.75);
    for h in idx.search(&query, 100) {
        assert!((h.score - expected[h.doc]).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn irrelevant_document_keeps_relative_order(seed in any::<u64>(), term in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut docs = random_corpus(&mut rng, 40, 30);
        // make the total length a multiple of the doc count so the extra doc
        // can have exactly the average length
        while docs.iter().map(Vec::len).sum::<usize>() % docs.len() != 0 {
            docs[0].push("w0".into());
        }
        let avg = docs.iter().map(Vec::len).sum::<usize>() / docs.len();
        let query = TokenSequence::new(vec![format!("w{term}")]).unwrap();
        let before = Bm25Index::build(&pairs(&docs), Analyzer::plain(), Bm25Params::default()).unwrap();
        let mut extended = docs.clone();
        extended.push(vec!["unrelated".to_string(); avg]);
        let after = Bm25Index::build(&pairs(&extended), Analyzer::plain(), Bm25Params::default()).unwrap();
        prop_assert_eq!(before.avgdl(), after.avgdl());
        let order = |idx: &Bm25Index| idx.search(&query, 100).iter().map(|h| h.doc).collect::<Vec<_>>();
        prop_assert_eq!(order(&before), order(&after));
    }
}
