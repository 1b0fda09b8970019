use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rerank_lab::commands;
use rerank_lab::config::{ExperimentConfig, DATA_DIR_ENV};
use rerank_lab::Result;
use rerank_lab_core::io::to_json_line;
use rerank_lab_core::metrics::BleuMode;
use rerank_lab_core::rerank::Strategy;

/// Retrieval, re-ranking and evaluation pipeline for customer-support
/// question answering.
#[derive(Parser)]
#[command(name = "rerank-lab", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML). Flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Base directory for relative paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Artifact directory, relative to the data directory.
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw dump → dialogs and QA pairs, split by time.
    Preprocess {
        /// Conversation dump in the TWCS column layout.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        support_account: Option<String>,
    },
    /// QA pairs → vocabulary and negative-sampled examples.
    BuildDataset,
    /// Training dialogs → BM25 index.
    Index,
    /// Examples → classifier checkpoint.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Query the BM25 index; prints candidate lines.
    Search {
        #[arg(long, short)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "query")]
        question_id: String,
    },
    /// Test questions → candidate pools → selected answers.
    Rerank {
        /// Repeat to run several strategies; defaults to the config list.
        #[arg(long)]
        strategy: Vec<Strategy>,
        #[arg(short)]
        k: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Selected answers → metric reports.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
        /// Use hashed word vectors for the embedding metrics.
        #[arg(long)]
        hash_embeddings: bool,
        #[arg(long)]
        bleu: Option<Bleu>,
    },
    /// Render all tables from the stored artifacts.
    Report,
    /// Print the effective configuration.
    Config,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Bleu {
    Corpus,
    Sentence,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut config = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &g.data_dir {
        config.data_dir = d.clone();
    }
    if let Some(a) = &g.artifacts {
        config.paths.artifacts = a.clone();
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summaries serialize"));
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    match &cli.command {
        Command::Preprocess { support_account, .. } if support_account.is_some() => {
            config.corpus.support_account.clone_from(support_account);
        }
        Command::Train {
            steps,
            batch_size,
            learning_rate,
        } => {
            config.train.steps = steps.unwrap_or(config.train.steps);
            config.train.batch_size = batch_size.unwrap_or(config.train.batch_size);
            config.train.learning_rate = learning_rate.unwrap_or(config.train.learning_rate);
        }
        Command::Rerank { strategy, k, runs } => {
            if !strategy.is_empty() {
                config.rerank.strategies.clone_from(strategy);
            }
            config.rerank.k = k.unwrap_or(config.rerank.k);
            config.rerank.runs = runs.unwrap_or(config.rerank.runs);
        }
        Command::Evaluate { bleu: Some(b), .. } => {
            config.evaluate.bleu = match b {
                Bleu::Corpus => BleuMode::Corpus,
                Bleu::Sentence => BleuMode::Sentence,
            };
        }
        _ => {}
    }
    config.validate()?;

    match cli.command {
        Command::Preprocess { input, .. } => {
            let s = commands::preprocess(&config, input.as_deref())?;
            print!("{}", s.stats.render());
            eprintln!(
                "{} records, {} malformed rows skipped, {} dialogs",
                s.records, s.malformed_rows, s.build.dialogs
            );
        }
        Command::BuildDataset => print_json(&commands::build_dataset(&config)?),
        Command::Index => print_json(&commands::index(&config)?),
        Command::Train { .. } => {
            let s = commands::train(&config, |r| {
                eprintln!(
                    "epoch {} step {} lr {:.3e} train loss {:.4} dev acc {}",
                    r.epoch,
                    r.step,
                    r.learning_rate,
                    r.train_loss,
                    r.dev_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            })?;
            print_json(&s);
        }
        Command::Search { query, k, question_id } => {
            for hit in commands::search(&config, &query, k, &question_id)? {
                println!("{}", to_json_line(&hit)?);
            }
        }
        Command::Rerank { .. } => {
            let strategies = config.rerank.strategies.clone();
            print_json(&commands::rerank(&config, &strategies)?);
        }
        Command::Evaluate {
            predictions,
            references,
            hash_embeddings,
            ..
        } => {
            let rows: Vec<_> =
                commands::evaluate(&config, predictions.as_deref(), references.as_deref(), hash_embeddings)?
                    .into_iter()
                    .map(|e| (e.strategy.to_string(), e.report))
                    .collect();
            print!("{}", rerank_lab_core::metrics::render_table(&rows));
        }
        Command::Report => print!("{}", commands::report(&config)?),
        Command::Config => print!("{}", config.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
