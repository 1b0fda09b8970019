use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rerank_lab_core::embeddings::WordVectors;
use rerank_lab_core::metrics::{
    bleu2, cosine, embedding_average, greedy, greedy_match, rouge_l, score_corpus, sentence_bleu2, vector_extrema,
    BleuMode,
};

fn count_in(seq: &[String], gram: &[String]) -> usize {
    (0..seq.len())
        .filter(|&i| i + gram.len() <= seq.len() && seq[i..i + gram.len()] == *gram)
        .count()
}

/// Clipped matches and total n-grams by exhaustive scanning.
fn naive_counts(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut seen: Vec<&[String]> = Vec::new();
    let mut clipped = 0;
    for i in 0..=hyp.len() - n {
        let g = &hyp[i..i + n];
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        clipped += count_in(hyp, g).min(count_in(reference, g));
    }
    (clipped, hyp.len() - n + 1)
}

fn naive_bleu2(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let (mut m1, mut t1, mut m2, mut t2, mut c, mut r) = (0, 0, 0, 0, 0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        let (a, b) = naive_counts(h, rf, 1);
        let (x, y) = naive_counts(h, rf, 2);
        m1 += a;
        t1 += b;
        m2 += x;
        t2 += y;
        c += h.len();
        r += rf.len();
    }
    if m1 == 0 || m2 == 0 {
        return 0.0;
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * ((m1 as f64 / t1 as f64) * (m2 as f64 / t2 as f64)).sqrt()
}

fn naive_lcs(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        1 + naive_lcs(&a[1..], &b[1..], memo)
    } else {
        naive_lcs(&a[1..], b, memo).max(naive_lcs(a, &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn naive_rouge(h: &[String], r: &[String]) -> f64 {
    let l = naive_lcs(h, r, &mut HashMap::new()) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
    2.0 * p * rc / (p + rc)
}

fn random_seq(rng: &mut ChaCha8Rng, min: usize) -> Vec<String> {
    let n = rng.random_range(min..=12);
    (0..n).map(|_| format!("w{}", rng.random_range(0..5))).collect()
}

fn random_pairs(seed: u64, n: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (random_seq(&mut rng, 1), random_seq(&mut rng, 1))).unzip()
}

#[test]
fn bleu_and_rouge_match_brute_force() {
    let (hyps, refs) = random_pairs(1, 1000);
    for (h, r) in hyps.iter().zip(&refs) {
        let one_h = std::slice::from_ref(h);
        let one_r = std::slice::from_ref(r);
        assert_eq!(bleu2(one_h, one_r).unwrap(), naive_bleu2(one_h, one_r), "{h:?} / {r:?}");
        assert_eq!(rouge_l(h, r), naive_rouge(h, r), "{h:?} / {r:?}");
    }
    assert_eq!(bleu2(&hyps, &refs).unwrap(), naive_bleu2(&hyps, &refs));
}

fn vectors(rng: &mut ChaCha8Rng, words: usize, dim: usize) -> WordVectors {
    WordVectors::new(
        dim,
        (0..words)
            .map(|i| (format!("w{i}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect(),
    )
    .unwrap()
}

#[test]
fn greedy_equals_exhaustive_pair_maximization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let emb = vectors(&mut rng, 5, 3);
    let (hyps, refs) = random_pairs(3, 300);
    for (h, r) in hyps.iter().zip(&refs) {
        let mut forward = 0.0;
        for x in h {
            let mut best = f64::NEG_INFINITY;
            for y in r {
                best = best.max(cosine(emb.get(x).unwrap(), emb.get(y).unwrap()));
            }
            forward += best;
        }
        forward /= h.len() as f64;
        assert!((greedy(h, r, &emb).unwrap() - forward).abs() < 1e-12);
        let sym = (forward + greedy(r, h, &emb).unwrap()) / 2.0;
        assert!((greedy_match(h, r, &emb).unwrap() - sym).abs() < 1e-12);
    }
}

#[test]
fn identical_pairs_score_one_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let emb = vectors(&mut rng, 5, 4);
    let (hyps, _) = random_pairs(5, 200);
    let s = score_corpus(&hyps, &hyps, &emb, BleuMode::Corpus).unwrap();
    assert_eq!(
        [s.bleu2, s.rouge_l, s.embedding_average, s.greedy_match, s.vector_extrema],
        [1.0; 5]
    );
    let single: Vec<Vec<String>> = hyps.iter().filter(|h| h.len() >= 2).cloned().collect();
    let s = score_corpus(&single, &single, &emb, BleuMode::Sentence).unwrap();
    assert_eq!(s.bleu2, 1.0);
}

#[test]
fn two_dimensional_hand_cases() {
    let emb = WordVectors::new(
        2,
        vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![0.0, 1.0]),
            ("c".into(), vec![3.0, 4.0]),
            ("p".into(), vec![1.0, -3.0]),
            ("q".into(), vec![2.0, 1.0]),
        ]
        .into_iter()
        .collect(),
    )
    .unwrap();
    let t = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    // mean(a, b) = (0.5, 0.5); cos with (3, 4) = 3.5 / (√0.5 · 5)
    let expected = 3.5 / (0.5f64.sqrt() * 5.0);
    assert!((embedding_average(&t("a b"), &t("c"), &emb).unwrap() - expected).abs() < 1e-12);
    assert!((greedy_match(&t("a"), &t("b a"), &emb).unwrap() - 0.75).abs() < 1e-12);
    // extrema(p, q) = (2, −3); against (3, 4): (6 − 12) / (√13 · 5)
    let expected = -6.0 / (13f64.sqrt() * 5.0);
    assert!((vector_extrema(&t("p q"), &t("c"), &emb).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn oov_pairs_are_counted_and_score_zero() {
    let emb = WordVectors::new(2, [("a".into(), vec![1.0, 0.0])].into_iter().collect()).unwrap();
    let hyps = vec![vec!["a".to_string()], vec!["zz".to_string()]];
    let refs = vec![vec!["a".to_string()], vec!["a".to_string()]];
    let s = score_corpus(&hyps, &refs, &emb, BleuMode::Corpus).unwrap();
    assert_eq!(s.skipped_oov, 1);
    assert_eq!(s.embedding_average, 0.5);
}

proptest! {
    #[test]
    fn metrics_are_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = vectors(&mut rng, 5, 3);
        let (h, r) = (random_seq(&mut rng, 1), random_seq(&mut rng, 1));
        let b = bleu2(std::slice::from_ref(&h), std::slice::from_ref(&r)).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&sentence_bleu2(&h, &r)));
        prop_assert!((0.0..=1.0).contains(&rouge_l(&h, &r)));
        for v in [
            embedding_average(&h, &r, &emb).unwrap(),
            greedy_match(&h, &r, &emb).unwrap(),
            vector_extrema(&h, &r, &emb).unwrap(),
        ] {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn order_free_metrics_ignore_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = vectors(&mut rng, 5, 3);
        let (h, r) = (random_seq(&mut rng, 1), random_seq(&mut rng, 1));
        let mut shuffled = h.clone();
        shuffled.reverse();
        shuffled.rotate_left(rng.random_range(0..h.len()));
        let a = embedding_average(&h, &r, &emb).unwrap();
        let b = embedding_average(&shuffled, &r, &emb).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert_eq!(vector_extrema(&h, &r, &emb), vector_extrema(&shuffled, &r, &emb));
    }
}
