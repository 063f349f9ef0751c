//! `ingest`, `run` and `report` commands.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{connect, ChatBackend, UsageTotals};
use crate::config::RunConfig;
use crate::corpus::{ingest_corpus, Category, EmailContent, GoldLabel};
use crate::metrics::MetricsRow;
use crate::pipeline::store::{load_run, GoldEntry};
use crate::pipeline::{
    derive_run_id, CompletionCache, Pipeline, PredictionSet, RunManifest, RunSpec, RunStore,
};
use crate::prep::{Estimator, TruncationPolicy};
use crate::prompt::PromptKit;
use crate::report::{report, Format};

/// One line of the `ingest` record stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub id: String,
    pub category: Category,
    pub gold_label: GoldLabel,
    pub subject: String,
    /// Body length in Unicode scalar values.
    pub body_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub total: usize,
    pub per_category: BTreeMap<String, usize>,
    pub spam: usize,
    pub ham: usize,
    /// `None` for an empty corpus.
    pub spam_ratio: Option<f64>,
    pub parse_warnings: usize,
}

impl CorpusManifest {
    pub fn tally(emails: &[EmailContent], parse_warnings: usize) -> Self {
        let mut per_category: BTreeMap<String, usize> = Category::ALL
            .iter()
            .map(|c| (c.dir_name().to_string(), 0))
            .collect();
        let mut spam = 0;
        for e in emails {
            *per_category
                .entry(e.category.dir_name().to_string())
                .or_default() += 1;
            if e.gold_label == GoldLabel::Spam {
                spam += 1;
            }
        }
        let total = emails.len();
        Self {
            total,
            per_category,
            spam,
            ham: total - spam,
            spam_ratio: (total > 0).then(|| spam as f64 / total as f64),
            parse_warnings,
        }
    }
}

pub const EMAILS_FILE: &str = "emails.jsonl";
pub const CORPUS_MANIFEST_FILE: &str = "manifest.json";

/// Parses the corpus, optionally writing `emails.jsonl` and `manifest.json`
/// into `out_dir`.
pub fn cmd_ingest(corpus_root: &Path, out_dir: Option<&Path>) -> Result<CorpusManifest> {
    let ingested = ingest_corpus(corpus_root)?;
    let manifest = CorpusManifest::tally(&ingested.emails, ingested.parse_warnings);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(EMAILS_FILE);
        let mut out = std::io::BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        for e in &ingested.emails {
            let rec = IngestRecord {
                id: e.id.clone(),
                category: e.category,
                gold_label: e.gold_label,
                subject: e.subject.clone(),
                body_length: e.body.chars().count(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        let path = dir.join(CORPUS_MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(manifest)
}

/// Seeded uniform sample of `limit` indices out of `n`, in ascending order.
pub fn sample_indices(n: usize, limit: Option<usize>, seed: u64) -> Vec<usize> {
    match limit {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..n).collect(),
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub sets: Vec<PredictionSet>,
    /// Calls that reached a backend during this invocation.
    pub live_usage: UsageTotals,
}

pub fn build_policy(cfg: &RunConfig) -> Result<TruncationPolicy> {
    let estimator: Estimator = cfg.estimator.parse()?;
    Ok(TruncationPolicy::new(cfg.budget, estimator)?)
}

pub fn load_prompts(cfg: &RunConfig) -> Result<PromptKit> {
    Ok(match &cfg.prompt_dir {
        Some(dir) => PromptKit::load(dir)?,
        None => PromptKit::builtin(),
    })
}

/// Connects the configured backends and executes the run.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    let classifiers = cfg
        .backends
        .iter()
        .map(|b| connect(b.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let summarizer = cfg.summarizer.clone().map(connect).transpose()?;
    let refs: Vec<&dyn ChatBackend> = classifiers.iter().map(|b| b.as_ref()).collect();
    execute_run(cfg, &refs, summarizer.as_deref())
}

/// Runs with already constructed backends (the configs in `cfg.backends`
/// are only recorded in the manifest).
pub fn execute_run(
    cfg: &RunConfig,
    classifiers: &[&dyn ChatBackend],
    summarizer: Option<&dyn ChatBackend>,
) -> Result<RunOutcome> {
    let policy = build_policy(cfg)?;
    let prompts = load_prompts(cfg)?;
    let ingested = ingest_corpus(&cfg.corpus_root)?;
    let corpus_size = ingested.emails.len();
    if corpus_size == 0 {
        bail!(
            "corpus at {} contains no messages",
            cfg.corpus_root.display()
        );
    }
    let emails: Vec<EmailContent> = sample_indices(corpus_size, cfg.limit, cfg.seed)
        .into_iter()
        .map(|i| ingested.emails[i].clone())
        .collect();

    let cache = cfg.cache_dir.as_ref().map(CompletionCache::new);
    let pipeline = Pipeline::new(&prompts, &policy, cache.as_ref());
    let snapshot = pipeline.policy_snapshot();
    let ids: Vec<&str> = emails.iter().map(|e| e.id.as_str()).collect();
    let run_id = derive_run_id(cfg.scenario, classifiers, summarizer, &snapshot, &ids);

    if cfg.fresh {
        let dir = cfg.store_dir.join(&run_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
    }
    let store = RunStore::open(&cfg.store_dir, &run_id)?;
    store.write_manifest(&RunManifest {
        run_id: run_id.clone(),
        scenario: cfg.scenario,
        backends: classifiers
            .iter()
            .map(|b| b.config().backend_id.clone())
            .collect(),
        summarizer: summarizer.map(|s| s.config().backend_id.clone()),
        policy: snapshot,
        config: serde_json::to_value(cfg)?,
        corpus_size,
        sample_size: emails.len(),
        emails: emails
            .iter()
            .map(|e| GoldEntry {
                id: e.id.clone(),
                gold_label: e.gold_label,
            })
            .collect(),
    })?;

    let spec = RunSpec {
        scenario: cfg.scenario,
        classifiers: classifiers.to_vec(),
        summarizer,
        concurrency: cfg.concurrency,
    };
    let sets = pipeline.run_scenario(&run_id, &emails, &spec, &store)?;
    Ok(RunOutcome {
        run_id,
        sets,
        live_usage: pipeline.live_usage(),
    })
}

/// Rebuilds the prediction sets of a stored run in manifest order.
pub fn load_prediction_sets(
    store_dir: &Path,
    run_id: &str,
) -> Result<(RunManifest, Vec<PredictionSet>)> {
    let (manifest, records) = load_run(store_dir, run_id)?;
    let mut by_key: HashMap<(String, String), VecDeque<_>> = HashMap::new();
    for rec in records {
        if rec.scenario == manifest.scenario {
            by_key
                .entry((rec.email_id.clone(), rec.backend_id.clone()))
                .or_default()
                .push_back(rec.into_prediction());
        }
    }
    let mut sets = Vec::with_capacity(manifest.backends.len());
    for backend in &manifest.backends {
        let mut predictions = Vec::with_capacity(manifest.emails.len());
        for e in &manifest.emails {
            let p = by_key
                .get_mut(&(e.id.clone(), backend.clone()))
                .and_then(|q| q.pop_front())
                .ok_or_else(|| {
                    anyhow!(
                        "run {run_id} is incomplete: no {backend} prediction for email {}; rerun it to resume",
                        e.id
                    )
                })?;
            predictions.push(p);
        }
        sets.push(PredictionSet {
            run_id: run_id.to_string(),
            scenario: manifest.scenario,
            backend_id: backend.clone(),
            predictions,
            policy: manifest.policy.clone(),
        });
    }
    Ok((manifest, sets))
}

/// Metrics rows for the given runs, one per (run, backend).
pub fn collect_rows(store_dir: &Path, run_ids: &[String]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for run_id in run_ids {
        let (manifest, sets) = load_prediction_sets(store_dir, run_id)?;
        let mut gold = HashMap::new();
        for e in &manifest.emails {
            if let Some(prev) = gold.insert(e.id.clone(), e.gold_label) {
                if prev != e.gold_label {
                    bail!(
                        "email {} appears with conflicting gold labels in run {run_id}",
                        e.id
                    );
                }
            }
        }
        for set in &sets {
            rows.push(MetricsRow::from_predictions(set, &gold)?);
        }
    }
    Ok(rows)
}

pub fn cmd_report(store_dir: &Path, run_ids: &[String], format: Format) -> Result<String> {
    if run_ids.is_empty() {
        bail!("no run ids given");
    }
    let rows = collect_rows(store_dir, run_ids)?;
    Ok(report(&rows, format)?)
}
