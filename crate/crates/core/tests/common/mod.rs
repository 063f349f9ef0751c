#![allow(dead_code)]

pub mod oracle;
pub mod props;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use zeroshot_spam::backend::{
    mock_complete, BackendConfig, BackendError, ChatBackend, ChatExchange, CompletionRequest,
};
use zeroshot_spam::config::{ConfigFile, RunConfig, RunFlags};
use zeroshot_spam::pipeline::Scenario;
use zeroshot_spam::prompt::ChatMessages;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn synthetic60() -> PathBuf {
    fixture("synthetic60")
}

/// Run config against `corpus` with the mock backend(s), cache and store
/// under `work`.
pub fn mock_run_config(
    corpus: &Path,
    work: &Path,
    scenario: Scenario,
    backends: &[&str],
) -> RunConfig {
    let mut file = ConfigFile::default();
    for id in backends.iter().copied().chain(["summarizer"]) {
        file.backends
            .insert(id.to_string(), BackendConfig::mock(id));
    }
    RunConfig::resolve(
        RunFlags {
            corpus_root: corpus.to_path_buf(),
            scenario: Some(scenario),
            backends: backends.iter().map(|s| s.to_string()).collect(),
            summarizer: (scenario == Scenario::Summary).then(|| "summarizer".to_string()),
            cache_dir: Some(work.join("cache")),
            store_dir: Some(work.join("runs")),
            ..Default::default()
        },
        &file,
    )
    .expect("valid mock config")
}

/// What a scripted backend does on a given call.
pub enum Script {
    Answer,
    Fail(fn(&str) -> BackendError),
}

type ScriptFn = Box<dyn Fn(u64, &str) -> Script + Send + Sync>;

/// Mock-answering backend that fails on selected calls.
pub struct ScriptedBackend {
    pub cfg: BackendConfig,
    pub calls: AtomicU64,
    /// Decides per call from the zero-based call index and the user text.
    pub script: ScriptFn,
    pub seen: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(id: &str, script: impl Fn(u64, &str) -> Script + Send + Sync + 'static) -> Self {
        Self {
            cfg: BackendConfig::mock(id),
            calls: AtomicU64::new(0),
            script: Box::new(script),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn complete_with_limit(
        &self,
        messages: &ChatMessages,
        max_tokens: u32,
    ) -> Result<ChatExchange, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(messages.user().to_string());
        if let Script::Fail(make) = (self.script)(n, messages.user()) {
            return Err(make(&self.cfg.backend_id));
        }
        let text = mock_complete(messages);
        Ok(ChatExchange {
            backend_id: self.cfg.backend_id.clone(),
            request: CompletionRequest {
                model: self.cfg.model_name.clone(),
                messages: messages.clone(),
                temperature: 0.0,
                max_tokens,
            },
            prompt_tokens: 10,
            completion_tokens: 1,
            completion_text: text,
            latency_ms: 0,
            attempt_count: 1,
        })
    }
}

pub fn transient(backend: &str) -> BackendError {
    BackendError::ExhaustedRetries {
        backend: backend.to_string(),
        attempts: 6,
        last: "HTTP 503".to_string(),
    }
}

pub fn auth(backend: &str) -> BackendError {
    BackendError::Auth {
        backend: backend.to_string(),
        status: 401,
        message: "bad key".to_string(),
    }
}
