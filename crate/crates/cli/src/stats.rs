//! Corpus statistics in the layout of a dataset summary table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rerank_lab_core::corpus::{Dialog, QaPair};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordStats {
    pub avg: f64,
    pub min: usize,
    pub q1: usize,
    pub mode: usize,
    pub q3: usize,
    pub max: usize,
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[usize], q: f64) -> usize {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank - 1]
}

impl WordStats {
    /// Zeroed when `lengths` is empty. The mode is the smallest most
    /// frequent length.
    pub fn from_lengths(mut lengths: Vec<usize>) -> Self {
        if lengths.is_empty() {
            return Self::default();
        }
        lengths.sort_unstable();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &lengths {
            *counts.entry(l).or_default() += 1;
        }
        let top = counts.values().copied().max().unwrap_or(0);
        Self {
            avg: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
            min: lengths[0],
            q1: quantile(&lengths, 0.25),
            mode: counts.into_iter().find(|&(_, c)| c == top).map_or(0, |(l, _)| l),
            q3: quantile(&lengths, 0.75),
            max: lengths[lengths.len() - 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub questions: WordStats,
    pub answers: WordStats,
    pub pairs: usize,
    /// Distinct words over questions and answers.
    pub vocabulary: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub avg_turns: f64,
    pub train_dialogs: usize,
    pub test_dialogs: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl DatasetStats {
    pub fn compute(train: &[Dialog], test: &[Dialog], train_pairs: &[QaPair], test_pairs: &[QaPair]) -> Self {
        let pairs: Vec<&QaPair> = train_pairs.iter().chain(test_pairs).collect();
        let turns: Vec<usize> = train.iter().chain(test).map(|d| d.turns.len()).collect();
        let words: BTreeSet<&str> = pairs.iter().flat_map(|p| p.question.iter().chain(p.answer.iter())).collect();
        Self {
            questions: WordStats::from_lengths(pairs.iter().map(|p| p.question.len()).collect()),
            answers: WordStats::from_lengths(pairs.iter().map(|p| p.answer.len()).collect()),
            pairs: pairs.len(),
            vocabulary: words.len(),
            min_turns: turns.iter().copied().min().unwrap_or(0),
            max_turns: turns.iter().copied().max().unwrap_or(0),
            avg_turns: if turns.is_empty() {
                0.0
            } else {
                turns.iter().sum::<usize>() as f64 / turns.len() as f64
            },
            train_dialogs: train.len(),
            test_dialogs: test.len(),
            train_pairs: train_pairs.len(),
            test_pairs: test_pairs.len(),
        }
    }

    pub fn render(&self) -> String {
        let (q, a) = (&self.questions, &self.answers);
        let rows: [(&str, String, String); 6] = [
            ("Avg. # words", format!("{:.2}", q.avg), format!("{:.2}", a.avg)),
            ("Min # words", q.min.to_string(), a.min.to_string()),
            ("1st quartile (# words)", q.q1.to_string(), a.q1.to_string()),
            ("Mode (# words)", q.mode.to_string(), a.mode.to_string()),
            ("3rd quartile (# words)", q.q3.to_string(), a.q3.to_string()),
            ("Max # words", q.max.to_string(), a.max.to_string()),
        ];
        let overall: [(&str, String); 9] = [
            ("# question-answer pairs", self.pairs.to_string()),
            ("# words (in total)", self.vocabulary.to_string()),
            ("Min # turns per dialog", self.min_turns.to_string()),
            ("Max # turns per dialog", self.max_turns.to_string()),
            ("Avg. # turns per dialog", format!("{:.2}", self.avg_turns)),
            ("Training set: # of dialogs", self.train_dialogs.to_string()),
            ("Testing set: # of dialogs", self.test_dialogs.to_string()),
            ("Training set: # of pairs", self.train_pairs.to_string()),
            ("Testing set: # of pairs", self.test_pairs.to_string()),
        ];
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>12}{:>12}", "", "Questions", "Answers");
        for (label, x, y) in rows {
            let _ = writeln!(out, "{label:<28}{x:>12}{y:>12}");
        }
        let _ = writeln!(out, "Overall");
        for (label, v) in overall {
            let _ = writeln!(out, "{label:<28}{v:>24}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_stats_small_sample() {
        let s = WordStats::from_lengths(vec![5, 1, 3, 3, 9, 1, 7, 3]);
        assert_eq!(s.avg, 4.0);
        assert_eq!((s.min, s.q1, s.mode, s.q3, s.max), (1, 1, 3, 5, 9));
        assert_eq!(WordStats::from_lengths(vec![]), WordStats::default());
        assert_eq!(WordStats::from_lengths(vec![4]).q1, 4);
    }

    #[test]
    fn empty_corpus_renders_zeros() {
        let s = DatasetStats::compute(&[], &[], &[], &[]);
        assert_eq!(s, DatasetStats::default());
        let text = s.render();
        assert!(text.contains("# question-answer pairs") && text.contains("0.00"));
    }
}
