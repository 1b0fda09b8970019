use std::path::{Path, PathBuf};
use std::process::Command;

use rerank_lab::commands::{self, PoolRecord};
use rerank_lab::config::ExperimentConfig;
use rerank_lab::CliError;
use rerank_lab_core::io::{read_jsonl, write_jsonl};
use rerank_lab_core::rerank::{CandidateRecord, SelectionRecord, Strategy};
use rerank_lab_core::text::NormalizationRules;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_config(artifacts: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&fixtures().join("fixture.toml")).unwrap();
    c.paths.artifacts = artifacts.to_path_buf();
    c
}

#[test]
fn fixture_summary_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let s = commands::preprocess(&fixture_config(dir.path()), None).unwrap();
    let golden = std::fs::read_to_string(fixtures().join("preprocess_summary.golden.txt")).unwrap();
    assert_eq!(s.stats.render(), golden);
    assert_eq!(s.build.dialogs, 20);
    assert_eq!(s.malformed_rows, 1);
    assert_eq!(s.build.orphan_chains, 1);
    assert_eq!(s.build.other_accounts, 1);
    assert_eq!(s.redirect_turns_removed, 1);
    assert_eq!(s.dialogs_dropped_by_filter, 1);
}

#[test]
fn empty_input_gives_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(
        &csv,
        "tweet_id,author_id,inbound,created_at,text,response_tweet_id,in_response_to_tweet_id\n",
    )
    .unwrap();
    let config = fixture_config(&dir.path().join("out"));
    let s = commands::preprocess(&config, Some(&csv)).unwrap();
    assert_eq!(s.stats, Default::default());
    assert_eq!(s.records, 0);
    for f in [commands::DIALOGS_TRAIN, commands::PAIRS_TEST] {
        assert_eq!(std::fs::read_to_string(config.artifact(f)).unwrap(), "");
    }
}

fn producer(err: CliError) -> &'static str {
    match err {
        CliError::MissingArtifact { producer, .. } => producer,
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn missing_artifacts_name_their_producer() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path());
    assert_eq!(producer(commands::index(&c).unwrap_err()), "preprocess");
    assert_eq!(producer(commands::build_dataset(&c).unwrap_err()), "preprocess");
    assert_eq!(producer(commands::train(&c, |_| {}).unwrap_err()), "build-dataset");
    assert_eq!(producer(commands::search(&c, "battery", 3, "q").unwrap_err()), "index");
    assert_eq!(producer(commands::rerank(&c, &[Strategy::Max]).unwrap_err()), "preprocess");
    assert_eq!(producer(commands::evaluate(&c, None, None, true).unwrap_err()), "preprocess");
    assert_eq!(producer(commands::report(&c).unwrap_err()), "preprocess");

    commands::preprocess(&c, None).unwrap();
    commands::index(&c).unwrap();
    assert_eq!(producer(commands::rerank(&c, &[Strategy::Max]).unwrap_err()), "train");
    commands::rerank(&c, &[Strategy::RandomTop]).unwrap();
    assert_eq!(producer(commands::evaluate(&c, None, None, true).unwrap_err()), "rerank");
}

#[test]
fn pipeline_stages_compose() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path());
    commands::preprocess(&c, None).unwrap();
    commands::index(&c).unwrap();
    let d = commands::build_dataset(&c).unwrap();
    assert_eq!(d.train.positives - d.train.pairs, d.train.relabeled);
    let t = commands::train(&c, |_| {}).unwrap();
    assert_eq!(t.test.as_ref().unwrap().count, 8);

    commands::rerank(&c, &[Strategy::Max]).unwrap();
    let first = std::fs::read(c.artifact(&commands::selections_file(Strategy::Max))).unwrap();
    commands::rerank(&c, &[Strategy::Max, Strategy::Softmax, Strategy::RandomTop]).unwrap();
    let second = std::fs::read(c.artifact(&commands::selections_file(Strategy::Max))).unwrap();
    assert_eq!(first, second);

    let softmax: Vec<SelectionRecord> =
        read_jsonl(&c.artifact(&commands::selections_file(Strategy::Softmax))).unwrap();
    assert_eq!(softmax.len(), 4 * c.rerank.runs);
    let pools: Vec<PoolRecord> = read_jsonl(&c.artifact(commands::POOLS)).unwrap();
    assert!(pools.iter().all(|p| !p.candidates.is_empty() && p.candidates.len() <= c.rerank.k));

    let evals = commands::evaluate(&c, None, None, false).unwrap();
    for e in &evals {
        let stochastic = e.strategy.is_stochastic();
        assert_eq!(e.runs.len(), if stochastic { c.rerank.runs } else { 1 });
        assert_eq!(e.report.bleu2.ci95.is_some(), stochastic);
    }
    let report = commands::report(&c).unwrap();
    let row = |prefix: &str| report.lines().find(|l| l.starts_with(prefix)).unwrap().to_string();
    assert!(row("Random Top Answer (K=2)").contains('±'));
    assert!(row("QANet on IR, softmax").contains('±'));
    assert!(!row("QANet on IR, max").contains('±'));
    assert!(report.contains("Majority class"));
}

#[test]
fn search_output_feeds_external_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = fixture_config(dir.path());
    commands::preprocess(&c, None).unwrap();
    commands::index(&c).unwrap();
    let hits = commands::search(&c, "my iphone battery", 3, "x").unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    let search_file = dir.path().join("search.jsonl");
    let lines: Vec<String> = hits.iter().map(|h| rerank_lab_core::io::to_json_line(h).unwrap()).collect();
    std::fs::write(&search_file, lines.join("\n") + "\n").unwrap();
    rerank_lab_core::rerank::FileSource::load(&search_file, &NormalizationRules::default()).unwrap();

    let test: Vec<rerank_lab_core::corpus::QaPair> = read_jsonl(&c.artifact(commands::PAIRS_TEST)).unwrap();
    let external: Vec<CandidateRecord> = test
        .iter()
        .flat_map(|p| {
            (1..=2).map(|rank| CandidateRecord {
                question_id: p.question_id.clone(),
                source: "external:seq2seq".into(),
                rank,
                answer_text: format!("generated answer {rank}"),
            })
        })
        .collect();
    let file = dir.path().join("seq2seq.jsonl");
    write_jsonl(&file, &external).unwrap();
    rerank_lab_core::rerank::FileSource::load(&file, &NormalizationRules::default()).unwrap();
    c.paths.candidates = vec![file];
    commands::rerank(&c, &[Strategy::RandomTop]).unwrap();
    let pools: Vec<PoolRecord> = read_jsonl(&c.artifact(commands::POOLS)).unwrap();
    for p in pools {
        let ext = p.candidates.iter().filter(|x| x.source == "external:seq2seq").count();
        assert_eq!(ext, 2);
        assert!(p.candidates.iter().any(|x| x.source == "bm25"));
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rerank-lab"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["--artifacts"]).arg(dir.path()).arg("report").output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rerank-lab preprocess"), "{stderr}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nd_model = 10\nnum_heads = 3\n").unwrap();
    let out = bin().arg("-c").arg(&bad).arg("index").output().unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = bin().args(["rerank", "--strategy", "best"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .arg("-c")
        .arg(fixtures().join("fixture.toml"))
        .arg("--artifacts")
        .arg(dir.path())
        .arg("preprocess")
        .output()
        .unwrap();
    assert!(out.status.success());
    let golden = std::fs::read_to_string(fixtures().join("preprocess_summary.golden.txt")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn data_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("twcs_fixture.csv"), dir.path().join("twcs.csv")).unwrap();
    let out = bin()
        .env("RERANK_LAB_DATA", dir.path())
        .args(["preprocess", "--support-account", "AcmeSupport"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("artifacts").join(commands::PAIRS_TRAIN).exists());
}
