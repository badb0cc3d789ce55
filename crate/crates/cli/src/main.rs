//! `mmqo`: generate query corpora, optimize them, and compare the results.

mod classify;
mod compare;
mod config;
mod optimize;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mmqo_core::workload::{generate_corpus, GeneratorLimits};

use config::{read_json, write_json, ConfigArgs};

#[derive(Parser)]
#[command(name = "mmqo", version, about = "Multi-modal query plan optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of random, distinct query plans.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of queries.
        #[arg(short, long)]
        n: usize,
        /// Generator limits JSON; defaults when absent.
        #[arg(long)]
        limits: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Optimize every query in a corpus and write a report.
    Optimize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        /// Run directory for the report, traces and manifest.
        #[arg(short, long)]
        out: PathBuf,
        /// Queries optimized in parallel.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print reports over the same corpus side by side.
    Compare {
        /// Report files, or run directories containing report.json.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train and test a chat model as a pairwise execution-time classifier.
    Classify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate { config, n, limits, out } => {
            let config = config.resolve()?;
            let catalog = config.load_catalog()?;
            catalog.validate().context("invalid catalog")?;
            let limits: GeneratorLimits = match limits {
                Some(p) => read_json(&p)?,
                None => GeneratorLimits::default(),
            };
            let corpus = generate_corpus(n, config.seed, &catalog, &limits)?;
            write_json(&out, &corpus)?;
            println!("wrote {} queries to {}", corpus.len(), out.display());
        }
        Command::Optimize { config, corpus, out, jobs } => {
            let config = config.resolve()?;
            let report = optimize::run(&config, &corpus, &out, jobs)?;
            let s = &report.summary;
            println!(
                "{}: {} queries, VR {:.4}, PoI {:.4}, ToI {:.2}; report in {}",
                s.method,
                s.queries,
                s.vr,
                s.poi,
                s.toi,
                out.display()
            );
        }
        Command::Compare { reports, csv } => {
            let cmp = compare::load(&reports)?;
            print!("{}", cmp.table());
            if let Some(p) = csv {
                std::fs::write(&p, cmp.csv()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Classify { config, corpus, out } => {
            let config = config.resolve()?;
            let report = classify::run(&config, &corpus, &out)?;
            println!(
                "trained on {} pairs, tested on {}: accuracy {:.4}, cost model {:.4}",
                report.train_pairs, report.test_pairs, report.accuracy, report.cost_model_accuracy
            );
        }
    }
    Ok(())
}
