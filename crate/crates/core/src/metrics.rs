//! Word-overlap and embedding-based response metrics.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embeddings::WordVectors;
use crate::{Error, Result};

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram total for one pair.
fn matches<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let h = ngrams(hyp, n);
    let r = ngrams(reference, n);
    let clipped = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (clipped, hyp.len().saturating_sub(n - 1))
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::EmptyCorpus("no hypothesis/reference pairs"));
    }
    if a != b {
        return Err(Error::Data(format!("{a} hypotheses but {b} references")));
    }
    Ok(())
}

/// Corpus BLEU with unigram and bigram precisions pooled over all pairs,
/// uniform weights and the brevity penalty `exp(1 − r/c)` when `c < r`.
pub fn bleu2<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    check_aligned(hypotheses.len(), references.len())?;
    let mut clipped = [0usize; 2];
    let mut total = [0usize; 2];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hypotheses.iter().zip(references) {
        for n in 1..=2 {
            let (m, t) = matches(h, rf, n);
            clipped[n - 1] += m;
            total[n - 1] += t;
        }
        c += h.len();
        r += rf.len();
    }
    if clipped.contains(&0) {
        return Ok(0.0);
    }
    let p1 = clipped[0] as f64 / total[0] as f64;
    let p2 = clipped[1] as f64 / total[1] as f64;
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (p1 * p2).sqrt())
}

/// Sentence BLEU@2 with add-one smoothing on the bigram precision.
pub fn sentence_bleu2<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let (m1, t1) = matches(hyp, reference, 1);
    if m1 == 0 {
        return 0.0;
    }
    let (m2, t2) = matches(hyp, reference, 2);
    let p1 = m1 as f64 / t1 as f64;
    let p2 = (m2 + 1) as f64 / (t2 + 1) as f64;
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (p1 * p2).sqrt()
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a), dot(b, b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

fn lookup<'a, S: AsRef<str>>(tokens: &[S], emb: &'a WordVectors) -> Vec<&'a [f64]> {
    tokens.iter().filter_map(|t| emb.get(t.as_ref())).collect()
}

/// Cosine between mean word vectors. `None` when a side has no known word.
pub fn embedding_average<S: AsRef<str>>(u1: &[S], u2: &[S], emb: &WordVectors) -> Option<f64> {
    let mean = |vs: Vec<&[f64]>| -> Option<Vec<f64>> {
        if vs.is_empty() {
            return None;
        }
        let mut m = vec![0.0; emb.dim()];
        for v in &vs {
            m.iter_mut().zip(*v).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= vs.len() as f64);
        Some(m)
    };
    Some(cosine(&mean(lookup(u1, emb))?, &mean(lookup(u2, emb))?))
}

fn greedy_one_way(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|v| to.iter().map(|w| cosine(v, w)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / from.len() as f64
}

/// Mean over words of `u1` of their best cosine match in `u2`.
pub fn greedy<S: AsRef<str>>(u1: &[S], u2: &[S], emb: &WordVectors) -> Option<f64> {
    let (a, b) = (lookup(u1, emb), lookup(u2, emb));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(greedy_one_way(&a, &b))
}

/// Symmetric greedy matching: the average of both directions.
pub fn greedy_match<S: AsRef<str>>(u1: &[S], u2: &[S], emb: &WordVectors) -> Option<f64> {
    let (a, b) = (lookup(u1, emb), lookup(u2, emb));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some((greedy_one_way(&a, &b) + greedy_one_way(&b, &a)) / 2.0)
}

/// Per dimension, the maximum when it is at least the magnitude of the
/// minimum, otherwise the minimum.
pub fn extrema(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, |v| v.len());
    (0..dim)
        .map(|i| {
            let max = vectors.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
            let min = vectors.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            if max >= min.abs() { max } else { min }
        })
        .collect()
}

pub fn vector_extrema<S: AsRef<str>>(u1: &[S], u2: &[S], emb: &WordVectors) -> Option<f64> {
    let (a, b) = (lookup(u1, emb), lookup(u2, emb));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(cosine(&extrema(&a), &extrema(&b)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuMode {
    /// Pooled n-gram counts over the corpus.
    #[default]
    Corpus,
    /// Mean of add-one smoothed sentence scores.
    Sentence,
}

/// Corpus values of the five metrics on the `[0, 1]` (or `[−1, 1]`) scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu2: f64,
    pub rouge_l: f64,
    pub embedding_average: f64,
    pub greedy_match: f64,
    pub vector_extrema: f64,
    pub pairs: usize,
    /// Pairs where one side had no word with a vector; they score 0 on the
    /// embedding metrics.
    pub skipped_oov: usize,
}

pub fn score_corpus<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    emb: &WordVectors,
    mode: BleuMode,
) -> Result<MetricScores> {
    check_aligned(hypotheses.len(), references.len())?;
    let n = hypotheses.len() as f64;
    let bleu2 = match mode {
        BleuMode::Corpus => bleu2(hypotheses, references)?,
        BleuMode::Sentence => hypotheses.iter().zip(references).map(|(h, r)| sentence_bleu2(h, r)).sum::<f64>() / n,
    };
    let mut s = MetricScores {
        bleu2,
        rouge_l: 0.0,
        embedding_average: 0.0,
        greedy_match: 0.0,
        vector_extrema: 0.0,
        pairs: hypotheses.len(),
        skipped_oov: 0,
    };
    for (h, r) in hypotheses.iter().zip(references) {
        s.rouge_l += rouge_l(h, r);
        match (embedding_average(h, r, emb), greedy_match(h, r, emb), vector_extrema(h, r, emb)) {
            (Some(a), Some(g), Some(e)) => {
                s.embedding_average += a;
                s.greedy_match += g;
                s.vector_extrema += e;
            }
            _ => s.skipped_oov += 1,
        }
    }
    s.rouge_l /= n;
    s.embedding_average /= n;
    s.greedy_match /= n;
    s.vector_extrema /= n;
    Ok(s)
}

/// Mean and 95% half-width `1.96 · s / √R` (sample standard deviation).
/// The half-width is `None` for a single run.
pub fn aggregate_ci(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::EmptyCorpus("no runs to aggregate"));
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok((mean, Some(1.96 * var.sqrt() / r.sqrt())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Percent scale.
    pub mean: f64,
    pub ci95: Option<f64>,
    pub samples: usize,
    pub runs: usize,
}

pub const METRIC_NAMES: [&str; 5] = ["BLEU@2", "ROUGE_L", "Emb Avg", "Greedy Match", "Vec Extr"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu2: MetricSummary,
    pub rouge_l: MetricSummary,
    pub embedding_average: MetricSummary,
    pub greedy_match: MetricSummary,
    pub vector_extrema: MetricSummary,
    pub skipped_oov: usize,
}

impl MetricReport {
    /// Aggregates per-run scores. Confidence intervals are attached only for
    /// stochastic strategies.
    pub fn from_runs(runs: &[MetricScores], stochastic: bool) -> Result<Self> {
        let summary = |f: fn(&MetricScores) -> f64| -> Result<MetricSummary> {
            let values: Vec<f64> = runs.iter().map(|r| 100.0 * f(r)).collect();
            let (mean, ci) = aggregate_ci(&values)?;
            Ok(MetricSummary {
                mean,
                ci95: if stochastic { ci } else { None },
                samples: runs[0].pairs,
                runs: runs.len(),
            })
        };
        Ok(Self {
            bleu2: summary(|r| r.bleu2)?,
            rouge_l: summary(|r| r.rouge_l)?,
            embedding_average: summary(|r| r.embedding_average)?,
            greedy_match: summary(|r| r.greedy_match)?,
            vector_extrema: summary(|r| r.vector_extrema)?,
            skipped_oov: runs.iter().map(|r| r.skipped_oov).max().unwrap_or(0),
        })
    }

    pub fn columns(&self) -> [&MetricSummary; 5] {
        [
            &self.bleu2,
            &self.rouge_l,
            &self.embedding_average,
            &self.greedy_match,
            &self.vector_extrema,
        ]
    }
}

fn cell(s: &MetricSummary) -> String {
    match s.ci95 {
        Some(ci) => format!("{:.2} ± {:.2}", s.mean, ci),
        None => format!("{:.2}", s.mean),
    }
}

/// Aligned plain-text table, one row per labeled report.
pub fn render_table(rows: &[(String, MetricReport)]) -> String {
    let mut header = vec!["Model".to_string()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            row.extend(r.columns().iter().map(|s| cell(s)));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&body) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, w))| {
                let pad = w - v.chars().count();
                if i == 0 { format!("{v}{}", " ".repeat(pad)) } else { format!("{}{v}", " ".repeat(pad)) }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
