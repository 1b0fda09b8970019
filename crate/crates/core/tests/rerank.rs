use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rerank_lab_core::corpus::Vocabulary;
use rerank_lab_core::qanet::{Encoded, ModelConfig, Qanet};
use rerank_lab_core::rerank::{
    choose, score_pool, select_max, select_softmax, softmax, Candidate, CandidatePool, Strategy,
};
use rerank_lab_core::text::TokenSequence;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn pool(answers: &[&str]) -> CandidatePool {
    CandidatePool {
        question_id: "q-1".into(),
        question: TokenSequence::from_whitespace("t1 t2 t3"),
        candidates: answers
            .iter()
            .enumerate()
            .map(|(i, a)| Candidate {
                answer: TokenSequence::from_whitespace(a),
                source: "bm25".into(),
                source_rank: i + 1,
            })
            .collect(),
    }
}

fn frequencies(scores: &[f64], draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; scores.len()];
    for _ in 0..draws {
        counts[select_softmax(scores, &mut rng).unwrap()] += 1;
    }
    counts
}

#[test]
fn softmax_frequencies_match_probabilities() {
    let counts = frequencies(&[2f64.ln(), 0.0], 100_000, 11);
    let f0 = counts[0] as f64 / 1e5;
    assert!((f0 - 2.0 / 3.0).abs() < 0.01, "{f0}");
    assert!((counts[1] as f64 / 1e5 - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn softmax_goodness_of_fit_on_random_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pools = 20;
    let mut stat = 0.0;
    for p in 0..pools {
        let scores: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let expected: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let z: f64 = expected.iter().sum();
        let counts = frequencies(&scores, 10_000, 100 + p);
        let chi: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(&o, e)| {
                let e = 10_000.0 * e / z;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        stat += chi;
    }
    let p = 1.0 - ChiSquared::new(4.0 * pools as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat}, p {p}");
}

#[test]
fn duplicated_answer_collects_summed_mass() {
    let counts = frequencies(&[0.5, 0.5, 0.5], 60_000, 4);
    let dup = (counts[0] + counts[1]) as f64 / 60_000.0;
    assert!((dup - 2.0 / 3.0).abs() < 0.01, "{dup}");
}

#[test]
fn equal_scores_select_uniformly() {
    let counts = frequencies(&[1.0; 4], 40_000, 8);
    for c in counts {
        assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01);
    }
}

#[test]
fn argmax_invariant_under_increasing_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let best = select_max(&scores).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|s| s.exp(), |s| 3.0 * s - 7.0, |s| s.powi(3) + s];
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            assert_eq!(select_max(&t).unwrap(), best);
        }
    }
}

proptest! {
    #[test]
    fn softmax_shift_invariant(scores in prop::collection::vec(-10.0f64..10.0, 1..8), c in -50.0f64..50.0) {
        let a = softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let b = softmax(&shifted);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn max_candidate_has_highest_probability(scores in prop::collection::vec(-10.0f64..10.0, 1..8)) {
        let p = softmax(&scores);
        let best = select_max(&scores).unwrap();
        prop_assert!(p.iter().all(|&q| q <= p[best]));
    }

    #[test]
    fn seeded_selection_is_reproducible(scores in prop::collection::vec(-3.0f64..3.0, 1..6), seed in any::<u64>()) {
        let answers: Vec<String> = (0..scores.len()).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = answers.iter().map(String::as_str).collect();
        let p = pool(&refs);
        let a = choose(&p, Some(&scores), Strategy::Softmax, seed, 2).unwrap();
        let b = choose(&p, Some(&scores), Strategy::Softmax, seed, 2).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn model() -> Qanet {
    let words: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
    let vocab = Vocabulary::build([&TokenSequence::new(words).unwrap()], 1);
    let config = ModelConfig {
        d_model: 8,
        num_heads: 2,
        word_dim: 8,
        ..ModelConfig::default()
    };
    Qanet::new(config, vocab, 9).unwrap()
}

#[test]
fn pool_scores_are_per_candidate_logits() {
    let m = model();
    let p = pool(&["t4 t5", "t6 t7 t8", "t4 t5", "t9"]);
    let scores = score_pool(&m, &p).unwrap();
    assert_eq!(scores[0], scores[2]);
    assert_eq!(scores, score_pool(&m, &p).unwrap());

    let mut reversed = p.clone();
    reversed.candidates.reverse();
    let mut back = score_pool(&m, &reversed).unwrap();
    back.reverse();
    assert_eq!(scores, back);

    for (c, s) in p.candidates.iter().zip(&scores) {
        let q = Encoded::from_tokens(m.vocab(), &p.question, m.config().max_q_len).unwrap();
        let a = Encoded::from_tokens(m.vocab(), &c.answer, m.config().max_a_len).unwrap();
        let prob = m.probability(&q, &a).unwrap();
        assert!((1.0 / (1.0 + (-s).exp()) - prob).abs() < 1e-12);
    }
}
