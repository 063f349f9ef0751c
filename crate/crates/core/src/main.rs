use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use zeroshot_spam::cli::{cmd_ingest, cmd_report, cmd_run};
use zeroshot_spam::config::{ConfigFile, RunConfig, RunFlags, DEFAULT_STORE_DIR};
use zeroshot_spam::pipeline::Scenario;
use zeroshot_spam::report::Format;

#[derive(Parser)]
#[command(
    name = "zeroshot-spam",
    version,
    about = "Zero-shot LLM spam classification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a SpamAssassin corpus and write its record stream and manifest.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory for emails.jsonl and manifest.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Classify the corpus with one or more backends.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_scenario, default_value = "raw")]
        scenario: Scenario,
        /// Classifier backend id; repeat for several.
        #[arg(long = "backend", required = true)]
        backends: Vec<String>,
        /// Backend producing summaries (summary scenario).
        #[arg(long)]
        summarizer: Option<String>,
        /// Content token budget.
        #[arg(long)]
        budget: Option<usize>,
        /// chars_div_4 or whitespace_words.
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
        #[arg(long)]
        store_dir: Option<PathBuf>,
        /// Evaluate a seeded uniform sample of this many emails.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        prompt_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Discard stored predictions of this run instead of resuming.
        #[arg(long)]
        fresh: bool,
    },
    /// Compute metrics for stored runs.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long, default_value = DEFAULT_STORE_DIR)]
        store_dir: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { corpus, out_dir } => {
            let manifest = cmd_ingest(&corpus, out_dir.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::Run {
            corpus,
            scenario,
            backends,
            summarizer,
            budget,
            estimator,
            concurrency,
            cache_dir,
            no_cache,
            store_dir,
            limit,
            seed,
            prompt_dir,
            config,
            fresh,
        } => {
            let file = match &config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            let flags = RunFlags {
                corpus_root: corpus,
                scenario: Some(scenario),
                backends,
                summarizer,
                budget,
                estimator,
                concurrency,
                cache_dir,
                no_cache,
                store_dir,
                limit,
                seed,
                prompt_dir,
                fresh,
            };
            let cfg = RunConfig::resolve(flags, &file)?;
            let outcome = cmd_run(&cfg)?;
            let u = outcome.live_usage;
            println!("run_id: {}", outcome.run_id);
            println!(
                "emails: {}  backend calls: {}  prompt tokens: {}  completion tokens: {}  latency: {} ms",
                outcome.sets.first().map_or(0, |s| s.predictions.len()),
                u.requests,
                u.prompt_tokens,
                u.completion_tokens,
                u.latency_ms
            );
        }
        Command::Report {
            runs,
            store_dir,
            format,
            out,
        } => {
            let format: Format = format.parse()?;
            let doc = cmd_report(&store_dir, &runs, format)?;
            match out {
                Some(path) => {
                    fs::write(&path, doc).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{doc}"),
            }
        }
    }
    Ok(())
}
