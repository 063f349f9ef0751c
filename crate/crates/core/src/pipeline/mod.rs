//! Raw-content and summary classification scenarios.
//!
//! Raw: truncate → render → (cached) complete → parse label.
//! Summary: truncate → summarize once per email → render the summary for
//! each classifier → (cached) complete → parse label.

mod cache;
mod label;
pub mod store;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, UsageTotals};
use crate::corpus::EmailContent;
use crate::prep::{sanitize_delimiters, truncate_body, TruncationPolicy};
use crate::prompt::{ChatMessages, PromptError, PromptKit};

pub use cache::{CacheKey, CachedCompletion, CompletionCache};
pub use label::{parse_label, Label};
pub use store::{PolicySnapshot, RunManifest, RunStore, StoreError, StoredPrediction};

/// Completion budget for the summarization step.
pub const SUMMARY_MAX_TOKENS: u32 = 500;

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("the summary scenario needs a summarizer backend")]
    MissingSummarizer,
    #[error("no classifier backends given")]
    NoBackends,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Raw,
    Summary,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Raw => "raw",
            Scenario::Summary => "summary",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Scenario::Raw),
            "summary" => Ok(Scenario::Summary),
            other => Err(format!(
                "unknown scenario `{other}` (expected raw or summary)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub email_id: String,
    pub scenario: Scenario,
    pub backend_id: String,
    pub label: Label,
    /// Verbatim completion, or an error note when the backend failed.
    pub raw_completion: String,
    /// Present iff `scenario` is `Summary`.
    pub summary_text: Option<String>,
    pub usage: Usage,
    pub cached: bool,
}

impl Prediction {
    /// Equality ignoring the `cached` flag.
    pub fn same_outcome(&self, other: &Prediction) -> bool {
        let mut a = self.clone();
        a.cached = other.cached;
        a == *other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub run_id: String,
    pub scenario: Scenario,
    pub backend_id: String,
    pub predictions: Vec<Prediction>,
    pub policy: PolicySnapshot,
}

/// A completion together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub cached: bool,
}

/// Shared state for one or more scenario runs.
pub struct Pipeline<'a> {
    prompts: &'a PromptKit,
    policy: &'a TruncationPolicy,
    cache: Option<&'a CompletionCache>,
    live: Mutex<UsageTotals>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        prompts: &'a PromptKit,
        policy: &'a TruncationPolicy,
        cache: Option<&'a CompletionCache>,
    ) -> Self {
        Self {
            prompts,
            policy,
            cache,
            live: Mutex::new(UsageTotals::default()),
        }
    }

    /// Totals over calls that actually reached a backend (cache misses).
    pub fn live_usage(&self) -> UsageTotals {
        *self.live.lock().unwrap()
    }

    pub fn policy_snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            budget: self.policy.budget(),
            estimator: self.policy.estimator().name().to_string(),
            prompt_digest: self.prompts.digest().to_string(),
        }
    }

    fn complete_cached(
        &self,
        backend: &dyn ChatBackend,
        messages: &ChatMessages,
        max_tokens: u32,
    ) -> Result<Completion, PipelineError> {
        let cache_err = |source| PipelineError::Cache {
            path: self
                .cache
                .map(|c| c.dir().display().to_string())
                .unwrap_or_default(),
            source,
        };
        let key = self
            .cache
            .map(|_| CacheKey::new(backend.config(), messages, max_tokens));
        if let (Some(cache), Some(key)) = (self.cache, &key) {
            if let Some(hit) = cache.get(key).map_err(cache_err)? {
                return Ok(Completion {
                    text: hit.text,
                    usage: Usage {
                        prompt_tokens: hit.prompt_tokens,
                        completion_tokens: hit.completion_tokens,
                    },
                    cached: true,
                });
            }
        }
        let exchange = backend.complete_with_limit(messages, max_tokens)?;
        self.live.lock().unwrap().add(&exchange);
        let completion = Completion {
            text: exchange.completion_text,
            usage: Usage {
                prompt_tokens: exchange.prompt_tokens,
                completion_tokens: exchange.completion_tokens,
            },
            cached: false,
        };
        if let (Some(cache), Some(key)) = (self.cache, &key) {
            cache
                .put(
                    key,
                    &CachedCompletion {
                        text: completion.text.clone(),
                        prompt_tokens: completion.usage.prompt_tokens,
                        completion_tokens: completion.usage.completion_tokens,
                    },
                )
                .map_err(cache_err)?;
        }
        Ok(completion)
    }

    /// Classifies the truncated subject and body. Backend failures other
    /// than fatal ones degrade to an unparseable prediction.
    pub fn classify_raw(
        &self,
        email: &EmailContent,
        backend: &dyn ChatBackend,
    ) -> Result<Prediction, PipelineError> {
        let prepared = truncate_body(email, self.policy);
        let messages = self.prompts.render_raw_classification(&prepared)?;
        let max_tokens = backend.config().max_completion_tokens;
        let outcome = self.complete_cached(backend, &messages, max_tokens);
        self.finish(email, Scenario::Raw, backend, None, outcome)
    }

    /// Produces the sanitized summary of an email.
    pub fn summarize(
        &self,
        email: &EmailContent,
        summarizer: &dyn ChatBackend,
    ) -> Result<Completion, PipelineError> {
        let prepared = truncate_body(email, self.policy);
        let messages = self.prompts.render_summarization(&prepared)?;
        let mut completion = self.complete_cached(summarizer, &messages, SUMMARY_MAX_TOKENS)?;
        completion.text = sanitize_delimiters(&completion.text);
        Ok(completion)
    }

    /// Classifies an already computed summary.
    pub fn classify_summary_text(
        &self,
        email: &EmailContent,
        summary: &str,
        classifier: &dyn ChatBackend,
    ) -> Result<Prediction, PipelineError> {
        let summary = sanitize_delimiters(summary);
        let messages = self.prompts.render_summary_classification(&summary)?;
        let max_tokens = classifier.config().max_completion_tokens;
        let outcome = self.complete_cached(classifier, &messages, max_tokens);
        self.finish(email, Scenario::Summary, classifier, Some(summary), outcome)
    }

    pub fn classify_from_summary(
        &self,
        email: &EmailContent,
        summarizer: &dyn ChatBackend,
        classifier: &dyn ChatBackend,
    ) -> Result<Prediction, PipelineError> {
        match self.summarize(email, summarizer) {
            Ok(summary) => self.classify_summary_text(email, &summary.text, classifier),
            Err(err) => degrade(email, Scenario::Summary, classifier, err),
        }
    }

    fn finish(
        &self,
        email: &EmailContent,
        scenario: Scenario,
        backend: &dyn ChatBackend,
        summary_text: Option<String>,
        outcome: Result<Completion, PipelineError>,
    ) -> Result<Prediction, PipelineError> {
        match outcome {
            Ok(c) => Ok(Prediction {
                email_id: email.id.clone(),
                scenario,
                backend_id: backend.config().backend_id.clone(),
                label: parse_label(&c.text),
                raw_completion: c.text,
                summary_text,
                usage: c.usage,
                cached: c.cached,
            }),
            Err(err) => {
                let mut p = degrade(email, scenario, backend, err)?;
                if summary_text.is_some() {
                    p.summary_text = summary_text;
                }
                Ok(p)
            }
        }
    }

    /// Runs one scenario over `corpus` for every classifier, persisting each
    /// prediction to `store` as it is produced. Predictions already in the
    /// store for this scenario are reused, so an interrupted run resumes.
    pub fn run_scenario(
        &self,
        run_id: &str,
        corpus: &[EmailContent],
        spec: &RunSpec<'_>,
        store: &RunStore,
    ) -> Result<Vec<PredictionSet>, PipelineError> {
        if corpus.is_empty() {
            return Err(PipelineError::EmptyCorpus);
        }
        if spec.classifiers.is_empty() {
            return Err(PipelineError::NoBackends);
        }
        let summarizer = match spec.scenario {
            Scenario::Summary => Some(spec.summarizer.ok_or(PipelineError::MissingSummarizer)?),
            Scenario::Raw => None,
        };
        let n_backends = spec.classifiers.len();

        // slots[email][backend], pre-filled from the store
        let mut resumed: HashMap<(String, String), VecDeque<Prediction>> = HashMap::new();
        for rec in store.records()? {
            if rec.scenario == spec.scenario {
                let p = rec.into_prediction();
                resumed
                    .entry((p.email_id.clone(), p.backend_id.clone()))
                    .or_default()
                    .push_back(p);
            }
        }
        let mut slots: Vec<Vec<Option<Prediction>>> = corpus
            .iter()
            .map(|e| {
                spec.classifiers
                    .iter()
                    .map(|b| {
                        resumed
                            .get_mut(&(e.id.clone(), b.config().backend_id.clone()))
                            .and_then(|q| q.pop_front())
                    })
                    .collect()
            })
            .collect();
        let pending: Vec<usize> = (0..corpus.len())
            .filter(|&i| slots[i].iter().any(Option::is_none))
            .collect();

        let results: Mutex<Vec<(usize, usize, Prediction)>> = Mutex::new(Vec::new());
        let failure: Mutex<Option<PipelineError>> = Mutex::new(None);
        let abort = AtomicBool::new(false);
        let next = AtomicUsize::new(0);
        let slots_ref = &slots;

        let work = |i: usize| -> Result<(), PipelineError> {
            let email = &corpus[i];
            // Ok(summary) or Err(note) for a degraded summarization
            let summary: Option<Result<String, String>> = match summarizer {
                None => None,
                Some(s) => {
                    let known = slots_ref[i]
                        .iter()
                        .flatten()
                        .find_map(|p| p.summary_text.clone());
                    Some(match known {
                        Some(text) => Ok(text),
                        None => match self.summarize(email, s) {
                            Ok(c) => Ok(c.text),
                            Err(PipelineError::Backend(e)) if !e.is_fatal() => {
                                Err(PipelineError::Backend(e).to_string())
                            }
                            Err(e) => return Err(e),
                        },
                    })
                }
            };
            for (b, backend) in spec.classifiers.iter().enumerate() {
                if slots_ref[i][b].is_some() {
                    continue;
                }
                let prediction = match &summary {
                    None => self.classify_raw(email, *backend)?,
                    Some(Ok(text)) => self.classify_summary_text(email, text, *backend)?,
                    Some(Err(note)) => {
                        let mut p = unparseable(email, Scenario::Summary, *backend, note);
                        p.summary_text = Some(String::new());
                        p
                    }
                };
                store.append(&StoredPrediction::from_prediction(run_id, &prediction))?;
                results.lock().unwrap().push((i, b, prediction));
            }
            Ok(())
        };

        let workers = spec.concurrency.max(1).min(pending.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    if let Err(err) = work(i) {
                        abort.store(true, Ordering::SeqCst);
                        failure.lock().unwrap().get_or_insert(err);
                        break;
                    }
                });
            }
        });
        if let Some(err) = failure.into_inner().unwrap() {
            return Err(err);
        }
        for (i, b, p) in results.into_inner().unwrap() {
            slots[i][b] = Some(p);
        }

        let policy = self.policy_snapshot();
        let mut sets: Vec<PredictionSet> = spec
            .classifiers
            .iter()
            .map(|b| PredictionSet {
                run_id: run_id.to_string(),
                scenario: spec.scenario,
                backend_id: b.config().backend_id.clone(),
                predictions: Vec::with_capacity(corpus.len()),
                policy: policy.clone(),
            })
            .collect();
        for row in slots {
            for (b, p) in row.into_iter().enumerate().take(n_backends) {
                sets[b]
                    .predictions
                    .push(p.expect("every slot filled when no worker failed"));
            }
        }
        Ok(sets)
    }
}

/// What to run: scenario, classifier backends, optional summarizer.
pub struct RunSpec<'a> {
    pub scenario: Scenario,
    pub classifiers: Vec<&'a dyn ChatBackend>,
    pub summarizer: Option<&'a dyn ChatBackend>,
    pub concurrency: usize,
}

fn degrade(
    email: &EmailContent,
    scenario: Scenario,
    backend: &dyn ChatBackend,
    err: PipelineError,
) -> Result<Prediction, PipelineError> {
    match err {
        PipelineError::Backend(e) if e.is_fatal() => Err(PipelineError::Backend(e)),
        PipelineError::Backend(_) => {
            let mut p = unparseable(email, scenario, backend, &err);
            if scenario == Scenario::Summary {
                p.summary_text = Some(String::new());
            }
            Ok(p)
        }
        other => Err(other),
    }
}

fn unparseable(
    email: &EmailContent,
    scenario: Scenario,
    backend: &dyn ChatBackend,
    note: &dyn fmt::Display,
) -> Prediction {
    Prediction {
        email_id: email.id.clone(),
        scenario,
        backend_id: backend.config().backend_id.clone(),
        label: Label::Unparseable,
        raw_completion: format!("[backend error] {note}"),
        summary_text: None,
        usage: Usage::default(),
        cached: false,
    }
}

/// Deterministic run id over everything that shapes the run's predictions.
pub fn derive_run_id(
    scenario: Scenario,
    classifiers: &[&dyn ChatBackend],
    summarizer: Option<&dyn ChatBackend>,
    policy: &PolicySnapshot,
    email_ids: &[&str],
) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(scenario.as_str().as_bytes());
    let describe = |b: &dyn ChatBackend| {
        let c = b.config();
        format!(
            "{}|{}|{}|{}|{}",
            c.backend_id, c.endpoint_url, c.model_name, c.temperature, c.max_completion_tokens
        )
    };
    for b in classifiers {
        field(describe(*b).as_bytes());
    }
    field(summarizer.map(describe).unwrap_or_default().as_bytes());
    field(&(policy.budget as u64).to_le_bytes());
    field(policy.estimator.as_bytes());
    field(policy.prompt_digest.as_bytes());
    for id in email_ids {
        field(id.as_bytes());
    }
    let digest = hex::encode(h.finalize());
    format!("{}-{}", scenario.as_str(), &digest[..16])
}
