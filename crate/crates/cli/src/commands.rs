//! Pipeline stages. Each stage reads the artifacts of earlier stages from
//! the artifact directory and writes its own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rerank_lab_core::corpus::{
    build_dialogs, extract_all_pairs, filter_redirects, negative_sample, read_twcs, time_split, BuildSummary,
    Dialog, QaPair, RedirectFilter, SamplingSummary, TrainingExample, Vocabulary,
};
use rerank_lab_core::embeddings::WordVectors;
use rerank_lab_core::io::{read_json, read_jsonl, write_json, write_jsonl};
use rerank_lab_core::metrics::{render_table, score_corpus, BleuMode, MetricReport, MetricScores};
use rerank_lab_core::qanet::{evaluate_accuracy, train as fit, Accuracy, EpochRecord, Qanet, TrainConfig};
use rerank_lab_core::rerank::{
    assemble_pool, choose, score_pool, Bm25Source, CandidateRecord, CandidateSource, FileSource, SelectionRecord,
    Strategy, BM25_SOURCE,
};
use rerank_lab_core::retrieval::{Analyzer, Bm25Index, Bm25Params};
use rerank_lab_core::seeds;
use rerank_lab_core::text::{preprocess as normalize_text, TokenSequence};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::stats::DatasetStats;

pub const DIALOGS_TRAIN: &str = "dialogs.train.jsonl";
pub const DIALOGS_TEST: &str = "dialogs.test.jsonl";
pub const PAIRS_TRAIN: &str = "pairs.train.jsonl";
pub const PAIRS_TEST: &str = "pairs.test.jsonl";
pub const PREPROCESS_SUMMARY: &str = "preprocess.json";
pub const INDEX: &str = "bm25.json";
pub const VOCAB: &str = "vocab.txt";
pub const EXAMPLES_TRAIN: &str = "examples.train.jsonl";
pub const EXAMPLES_TEST: &str = "examples.test.jsonl";
pub const DATASET_SUMMARY: &str = "dataset.json";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const POOLS: &str = "pools.jsonl";
pub const REPORT: &str = "report.txt";

pub fn selections_file(strategy: Strategy) -> String {
    format!("selections.{strategy}.jsonl")
}

pub fn metrics_file(strategy: Strategy) -> String {
    format!("metrics.{strategy}.json")
}

fn require(config: &ExperimentConfig, name: &str, producer: &'static str) -> Result<PathBuf> {
    let path = config.artifact(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact { path, producer })
    }
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub records: usize,
    pub malformed_rows: usize,
    pub build: BuildSummary,
    pub redirect_turns_removed: usize,
    pub dialogs_dropped_by_filter: usize,
    pub stats: DatasetStats,
}

/// Raw dump → dialogs and QA pairs for both splits.
pub fn preprocess(config: &ExperimentConfig, input: Option<&Path>) -> Result<PreprocessSummary> {
    let input = existing(input.map_or_else(|| config.resolve(&config.paths.corpus), Path::to_path_buf))?;
    let read = read_twcs(&input)?;
    let rules = config.normalization_rules()?;
    let c = &config.corpus;
    let (dialogs, build) = build_dialogs(&read.records, c.support_account.as_deref(), &rules);
    let before = dialogs.len();
    let filter = RedirectFilter::new(c.redirect_patterns.iter().map(String::as_str))?;
    let (dialogs, removed) = filter_redirects(dialogs, &filter);
    let dropped = before - dialogs.len();
    let split = time_split(dialogs, c.train_days, c.test_days);
    let train_pairs = extract_all_pairs(&split.train, c.context_turns, c.max_question_len, c.max_answer_len);
    let test_pairs = extract_all_pairs(&split.test, c.context_turns, c.max_question_len, c.max_answer_len);
    let stats = DatasetStats::compute(&split.train, &split.test, &train_pairs, &test_pairs);

    write_jsonl(&config.artifact(DIALOGS_TRAIN), &split.train)?;
    write_jsonl(&config.artifact(DIALOGS_TEST), &split.test)?;
    write_jsonl(&config.artifact(PAIRS_TRAIN), &train_pairs)?;
    write_jsonl(&config.artifact(PAIRS_TEST), &test_pairs)?;
    let summary = PreprocessSummary {
        records: read.records.len(),
        malformed_rows: read.malformed_rows,
        build,
        redirect_turns_removed: removed,
        dialogs_dropped_by_filter: dropped,
        stats,
    };
    write_json(&config.artifact(PREPROCESS_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub documents: usize,
    pub terms: usize,
    pub avgdl: f64,
}

fn ir_pairs(config: &ExperimentConfig, dialogs: &[Dialog]) -> Vec<QaPair> {
    let c = &config.corpus;
    extract_all_pairs(dialogs, c.ir_context_turns, c.max_question_len, c.max_answer_len)
}

/// Training dialogs → BM25 index over questions with retrieval context.
pub fn index(config: &ExperimentConfig) -> Result<IndexSummary> {
    let dialogs: Vec<Dialog> = read_jsonl(&require(config, DIALOGS_TRAIN, "preprocess")?)?;
    let idx = Bm25Index::build(&ir_pairs(config, &dialogs), Analyzer::default(), Bm25Params::default())?;
    idx.save(&config.artifact(INDEX))?;
    Ok(IndexSummary {
        documents: idx.len(),
        terms: idx.term_count(),
        avgdl: idx.avgdl(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub vocabulary: usize,
    pub train: SamplingSummary,
    pub test: Option<SamplingSummary>,
}

/// QA pairs → vocabulary and labelled examples for both splits.
pub fn build_dataset(config: &ExperimentConfig) -> Result<DatasetSummary> {
    let train: Vec<QaPair> = read_jsonl(&require(config, PAIRS_TRAIN, "preprocess")?)?;
    let test: Vec<QaPair> = read_jsonl(&require(config, PAIRS_TEST, "preprocess")?)?;
    let vocab = Vocabulary::build(train.iter().flat_map(|p| [&p.question, &p.answer]), config.corpus.min_freq);
    let mut out = Vec::new();
    vocab.write_to(&mut out)?;
    write_file(&config.artifact(VOCAB), &out)?;

    let tau = config.corpus.relabel_threshold;
    let (examples, train_summary) =
        negative_sample(&train, &vocab, seeds::derive(config.seed, seeds::SAMPLING), tau)?;
    write_jsonl(&config.artifact(EXAMPLES_TRAIN), &examples)?;
    let test_summary = if test.is_empty() {
        write_jsonl::<TrainingExample>(&config.artifact(EXAMPLES_TEST), &[])?;
        None
    } else {
        let seed = seeds::derive_keyed(config.seed, seeds::SAMPLING, "test");
        let (examples, s) = negative_sample(&test, &vocab, seed, tau)?;
        write_jsonl(&config.artifact(EXAMPLES_TEST), &examples)?;
        Some(s)
    };
    let summary = DatasetSummary {
        vocabulary: vocab.len(),
        train: train_summary,
        test: test_summary,
    };
    write_json(&config.artifact(DATASET_SUMMARY), &summary)?;
    Ok(summary)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_vocab(config: &ExperimentConfig) -> Result<Vocabulary> {
    let path = require(config, VOCAB, "build-dataset")?;
    let text = std::fs::read(&path).map_err(|source| CliError::Io { path, source })?;
    Ok(Vocabulary::read_from(text.as_slice())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub parameters: usize,
    pub examples: usize,
    pub dev_size: usize,
    pub best_epoch: usize,
    pub epochs: usize,
    /// Accuracy of always predicting the majority label of the training set.
    pub majority_baseline: Option<f64>,
    pub test: Option<Accuracy>,
}

/// Labelled examples → classifier checkpoint, epoch log and test accuracy.
pub fn train(config: &ExperimentConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let vocab = load_vocab(config)?;
    let examples: Vec<TrainingExample> = read_jsonl(&require(config, EXAMPLES_TRAIN, "build-dataset")?)?;
    let test: Vec<TrainingExample> = read_jsonl(&require(config, EXAMPLES_TEST, "build-dataset")?)?;
    let mut model = Qanet::new(config.model.clone(), vocab, seeds::derive(config.seed, seeds::INIT))?;
    if let Some(path) = &config.embeddings.model {
        let path = existing(config.resolve(path))?;
        let keep = |t: &str| model.vocab().contains(t);
        let vectors = WordVectors::load(&path, Some(&keep))?;
        model = model.with_word_vectors(&vectors, config.embeddings.freeze)?;
    }
    let train_config = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let outcome = fit(model, &examples, &train_config, on_epoch)?;
    outcome.model.save(&config.artifact(CHECKPOINT))?;
    write_jsonl(&config.artifact(TRAIN_LOG), &outcome.history)?;

    let positives = examples.iter().filter(|e| e.label == 1).count();
    let majority = u8::from(2 * positives >= examples.len());
    let summary = TrainSummary {
        parameters: outcome.model.parameter_count(),
        examples: examples.len(),
        dev_size: outcome.dev_size,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        majority_baseline: (!test.is_empty())
            .then(|| test.iter().filter(|e| e.label == majority).count() as f64 / test.len() as f64),
        test: if test.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(&outcome.model, &test)?)
        },
    };
    write_json(&config.artifact(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

/// One retrieved candidate, readable as a candidate-file line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    #[serde(flatten)]
    pub candidate: CandidateRecord,
    pub score: f64,
}

pub fn search(config: &ExperimentConfig, query: &str, k: usize, question_id: &str) -> Result<Vec<SearchHit>> {
    let idx = Bm25Index::load(&require(config, INDEX, "index")?)?;
    let tokens = normalize_text(query, &config.normalization_rules()?);
    Ok(idx
        .search(&tokens, k)
        .into_iter()
        .enumerate()
        .map(|(r, hit)| SearchHit {
            candidate: CandidateRecord {
                question_id: question_id.to_string(),
                source: BM25_SOURCE.to_string(),
                rank: r + 1,
                answer_text: idx.document(hit.doc).answer.to_string(),
            },
            score: hit.score,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub answer: String,
    pub source: String,
    pub source_rank: usize,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub question_id: String,
    pub question: String,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankSummary {
    pub questions: usize,
    pub pools: usize,
    /// Questions for which no source returned a candidate.
    pub empty_pools: usize,
    pub selections: BTreeMap<String, usize>,
}

/// Seed of the `run`-th repetition of a stochastic strategy.
pub fn run_seed(global: u64, run: usize) -> u64 {
    global.wrapping_add(run as u64)
}

/// Test questions → candidate pools → one selection file per strategy.
pub fn rerank(config: &ExperimentConfig, strategies: &[Strategy]) -> Result<RerankSummary> {
    let dialogs: Vec<Dialog> = read_jsonl(&require(config, DIALOGS_TEST, "preprocess")?)?;
    let idx = Bm25Index::load(&require(config, INDEX, "index")?)?;
    let needs_model = strategies.iter().any(|s| *s != Strategy::RandomTop);
    let model = if needs_model {
        Some(Qanet::load(&require(config, CHECKPOINT, "train")?)?)
    } else {
        None
    };
    let rules = config.normalization_rules()?;
    let files = config
        .paths
        .candidates
        .iter()
        .map(|p| FileSource::load(&existing(config.resolve(p))?, &rules).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let bm25 = Bm25Source { index: &idx };
    let k = config.rerank.k;
    let mut sources: Vec<(&dyn CandidateSource, usize)> = vec![(&bm25, k)];
    sources.extend(files.iter().map(|f| (f as &dyn CandidateSource, k)));

    let c = &config.corpus;
    let questions = extract_all_pairs(&dialogs, c.context_turns, c.max_question_len, c.max_answer_len);
    let queries: HashMap<String, TokenSequence> =
        ir_pairs(config, &dialogs).into_iter().map(|p| (p.question_id, p.question)).collect();

    let mut pools = Vec::new();
    let mut empty = 0;
    for pair in &questions {
        let query = queries.get(&pair.question_id).unwrap_or(&pair.question);
        match assemble_pool(&pair.question_id, query, &sources) {
            Ok(mut pool) => {
                pool.question = pair.question.clone();
                let scores = model.as_ref().map(|m| score_pool(m, &pool)).transpose()?;
                pools.push((pool, scores));
            }
            Err(rerank_lab_core::Error::EmptyPool(_)) => empty += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let pool_records: Vec<PoolRecord> = pools
        .iter()
        .map(|(pool, scores)| PoolRecord {
            question_id: pool.question_id.clone(),
            question: pool.question.to_string(),
            candidates: pool
                .candidates
                .iter()
                .enumerate()
                .map(|(i, cand)| ScoredCandidate {
                    answer: cand.answer.to_string(),
                    source: cand.source.clone(),
                    source_rank: cand.source_rank,
                    score: scores.as_ref().map(|s| s[i]),
                })
                .collect(),
        })
        .collect();
    write_jsonl(&config.artifact(POOLS), &pool_records)?;

    let mut selections = BTreeMap::new();
    for &strategy in strategies {
        let runs = if strategy.is_stochastic() { config.rerank.runs } else { 1 };
        let mut records: Vec<SelectionRecord> = Vec::with_capacity(runs * pools.len());
        for run in 0..runs {
            let seed = run_seed(config.seed, run);
            for (pool, scores) in &pools {
                records.push(choose(pool, scores.as_deref(), strategy, seed, config.rerank.random_top_k)?);
            }
        }
        write_jsonl(&config.artifact(&selections_file(strategy)), &records)?;
        selections.insert(strategy.to_string(), records.len());
    }
    Ok(RerankSummary {
        questions: questions.len(),
        pools: pools.len(),
        empty_pools: empty,
        selections,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub strategy: Strategy,
    pub bleu_mode: BleuMode,
    /// Path of the metric vectors, or `hashed:<dim>`.
    pub embeddings: String,
    pub references: usize,
    /// References without a prediction in each run.
    pub missing_predictions: usize,
    pub runs: Vec<MetricScores>,
    pub report: MetricReport,
}

fn split_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Scores one selection file against the reference answers.
pub fn evaluate_file(
    config: &ExperimentConfig,
    predictions: &Path,
    references: &[QaPair],
    force_hashed: bool,
) -> Result<Evaluation> {
    let records: Vec<SelectionRecord> = read_jsonl(&existing(predictions.to_path_buf())?)?;
    let Some(strategy) = records.first().map(|r| r.strategy) else {
        return Err(rerank_lab_core::Error::EmptyCorpus("no predictions to evaluate").into());
    };
    let refs: HashMap<&str, &TokenSequence> =
        references.iter().map(|p| (p.question_id.as_str(), &p.answer)).collect();
    let mut runs: Vec<(u64, Vec<&SelectionRecord>)> = Vec::new();
    for r in &records {
        if r.strategy != strategy {
            return Err(CliError::Config(format!(
                "{} mixes strategies {strategy} and {}",
                predictions.display(),
                r.strategy
            )));
        }
        if !refs.contains_key(r.question_id.as_str()) {
            return Err(rerank_lab_core::Error::Data(format!("no reference answer for question {}", r.question_id)).into());
        }
        match runs.iter_mut().find(|(s, _)| *s == r.seed) {
            Some((_, v)) => v.push(r),
            None => runs.push((r.seed, vec![r])),
        }
    }

    let vocabulary: BTreeSet<String> = records
        .iter()
        .flat_map(|r| split_tokens(&r.selected_answer))
        .chain(references.iter().flat_map(|p| p.answer.tokens().to_vec()))
        .collect();
    let (vectors, source) = match (&config.embeddings.metrics, force_hashed) {
        (Some(path), false) => {
            let path = existing(config.resolve(path))?;
            let keep = |t: &str| vocabulary.contains(t);
            (WordVectors::load(&path, Some(&keep))?, path.display().to_string())
        }
        _ => {
            let dim = config.embeddings.hash_dim;
            (
                WordVectors::hashed(dim, vocabulary.iter().map(String::as_str))?,
                format!("hashed:{dim}"),
            )
        }
    };

    let mut scores = Vec::with_capacity(runs.len());
    let mut missing = 0;
    for (_, run) in &runs {
        let hyps: Vec<Vec<String>> = run.iter().map(|r| split_tokens(&r.selected_answer)).collect();
        let gold: Vec<Vec<String>> = run.iter().map(|r| refs[r.question_id.as_str()].tokens().to_vec()).collect();
        let answered: BTreeSet<&str> = run.iter().map(|r| r.question_id.as_str()).collect();
        missing = missing.max(refs.len() - answered.len());
        scores.push(score_corpus(&hyps, &gold, &vectors, config.evaluate.bleu)?);
    }
    let report = MetricReport::from_runs(&scores, strategy.is_stochastic())?;
    Ok(Evaluation {
        strategy,
        bleu_mode: config.evaluate.bleu,
        embeddings: source,
        references: references.len(),
        missing_predictions: missing,
        runs: scores,
        report,
    })
}

/// Scores every configured strategy (or one explicit prediction file) and
/// writes one metrics file per strategy.
pub fn evaluate(
    config: &ExperimentConfig,
    predictions: Option<&Path>,
    references: Option<&Path>,
    force_hashed: bool,
) -> Result<Vec<Evaluation>> {
    let ref_path = match references {
        Some(p) => existing(p.to_path_buf())?,
        None => require(config, PAIRS_TEST, "preprocess")?,
    };
    let refs: Vec<QaPair> = read_jsonl(&ref_path)?;
    let files = match predictions {
        Some(p) => vec![p.to_path_buf()],
        None => config
            .rerank
            .strategies
            .iter()
            .map(|&s| require(config, &selections_file(s), "rerank"))
            .collect::<Result<_>>()?,
    };
    let mut out = Vec::new();
    for f in files {
        let e = evaluate_file(config, &f, &refs, force_hashed)?;
        write_json(&config.artifact(&metrics_file(e.strategy)), &e)?;
        out.push(e);
    }
    Ok(out)
}

fn row_label(strategy: Strategy, config: &ExperimentConfig) -> String {
    match strategy {
        Strategy::RandomTop => format!("Random Top Answer (K={})", config.rerank.random_top_k),
        Strategy::Max => format!("QANet on IR, max (K={})", config.rerank.k),
        Strategy::Softmax => format!("QANet on IR, softmax (K={})", config.rerank.k),
    }
}

/// Renders the dataset, classifier and answer-selection tables from the
/// stored artifacts and writes them to the report file.
pub fn report(config: &ExperimentConfig) -> Result<String> {
    let pre: PreprocessSummary = read_json(&require(config, PREPROCESS_SUMMARY, "preprocess")?)?;
    let trained: TrainSummary = read_json(&require(config, TRAIN_SUMMARY, "train")?)?;
    let baseline = metrics_file(Strategy::RandomTop);
    require(config, &baseline, "evaluate")?;
    let mut rows = Vec::new();
    let mut order = vec![Strategy::RandomTop];
    order.extend(config.rerank.strategies.iter().copied().filter(|s| *s != Strategy::RandomTop));
    for s in order {
        let path = config.artifact(&metrics_file(s));
        if path.exists() {
            let e: Evaluation = read_json(&path)?;
            rows.push((row_label(s, config), e.report));
        }
    }

    let mut out = String::new();
    out.push_str("Dataset\n\n");
    out.push_str(&pre.stats.render());
    out.push_str(&format!(
        "\nrecords {}, malformed rows {}, orphan chains {}, cyclic records {}, redirect turns removed {}\n",
        pre.records, pre.malformed_rows, pre.build.orphan_chains, pre.build.cyclic_records, pre.redirect_turns_removed
    ));
    out.push_str("\nGoodness classifier (test split)\n\n");
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
    out.push_str(&format!("{:<16}{:>10}\n", "Model", "Accuracy"));
    out.push_str(&format!("{:<16}{:>10}\n", "Majority class", pct(trained.majority_baseline)));
    out.push_str(&format!("{:<16}{:>10}\n", "QANet", pct(trained.test.as_ref().map(|a| a.accuracy))));
    out.push_str("\nAnswer selection (test split)\n\n");
    out.push_str(&render_table(&rows));
    write_file(&config.artifact(REPORT), out.as_bytes())?;
    Ok(out)
}

/// Every stage in order, with the configured strategies.
pub fn run_all(config: &ExperimentConfig, input: Option<&Path>) -> Result<String> {
    preprocess(config, input)?;
    index(config)?;
    build_dataset(config)?;
    train(config, |_| {})?;
    rerank(config, &config.rerank.strategies)?;
    evaluate(config, None, None, false)?;
    report(config)
}
