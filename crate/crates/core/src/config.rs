//! Run configuration: TOML config file, built-in backend presets, and the
//! resolved [`RunConfig`]. Precedence is flags > config file > defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendError};
use crate::pipeline::{Scenario, DEFAULT_CONCURRENCY};
use crate::prep::DEFAULT_BUDGET;

pub const DEFAULT_CACHE_DIR: &str = ".zeroshot-spam/cache";
pub const DEFAULT_STORE_DIR: &str = ".zeroshot-spam/runs";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown backend `{0}`; define it under [backends.{0}] in the config file")]
    UnknownBackend(String),
    #[error("the summary scenario needs --summarizer (or `summarizer` in [defaults])")]
    MissingSummarizer,
    #[error("--limit must be at least 1")]
    ZeroLimit,
    #[error("at least one --backend is required")]
    NoBackends,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// `[defaults]` section; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub budget: Option<usize>,
    pub estimator: Option<String>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub store_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub summarizer: Option<String>,
    pub prompt_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub defaults: Defaults,
    pub backends: BTreeMap<String, BackendConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let defaults = match table.remove("defaults") {
            Some(v) => v
                .try_into::<Defaults>()
                .map_err(|e| format!("[defaults]: {e}"))?,
            None => Defaults::default(),
        };
        let mut backends = BTreeMap::new();
        if let Some(v) = table.remove("backends") {
            let toml::Value::Table(entries) = v else {
                return Err("`backends` must be a table".to_string());
            };
            for (id, entry) in entries {
                let toml::Value::Table(mut entry) = entry else {
                    return Err(format!("[backends.{id}] must be a table"));
                };
                entry.insert("backend_id".into(), toml::Value::String(id.clone()));
                let cfg: BackendConfig = toml::Value::Table(entry)
                    .try_into()
                    .map_err(|e| format!("[backends.{id}]: {e}"))?;
                backends.insert(id, cfg);
            }
        }
        if let Some(key) = table.keys().next() {
            return Err(format!("unknown top-level key `{key}`"));
        }
        Ok(Self { defaults, backends })
    }

    /// Config-file entry first, then the built-in presets.
    pub fn backend(&self, id: &str) -> Result<BackendConfig, ConfigError> {
        let cfg = self
            .backends
            .get(id)
            .cloned()
            .or_else(|| builtin_backend(id))
            .ok_or_else(|| ConfigError::UnknownBackend(id.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Presets for the mock and the three evaluated models. The Flan-T5 preset
/// expects a local server speaking the chat-completions format.
pub fn builtin_backend(id: &str) -> Option<BackendConfig> {
    let remote = |url: &str, model: &str, key_env: &str| BackendConfig {
        backend_id: id.to_string(),
        endpoint_url: url.to_string(),
        model_name: model.to_string(),
        temperature: 0.0,
        max_completion_tokens: 16,
        timeout_secs: 60.0,
        max_retries: 5,
        rate_limit: 60,
        api_key_env: key_env.to_string(),
    };
    const OPENAI: &str = "https://api.openai.com/v1/chat/completions";
    match id {
        "mock" => Some(BackendConfig::mock("mock")),
        "chatgpt" => Some(remote(OPENAI, "gpt-3.5-turbo", "OPENAI_API_KEY")),
        "gpt4" => Some(remote(OPENAI, "gpt-4", "OPENAI_API_KEY")),
        "flan-t5" => Some(remote(
            "http://localhost:8000/v1/chat/completions",
            "google/flan-t5-xxl",
            "",
        )),
        _ => None,
    }
}

/// Command-line overrides; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub corpus_root: PathBuf,
    pub scenario: Option<Scenario>,
    pub backends: Vec<String>,
    pub summarizer: Option<String>,
    pub budget: Option<usize>,
    pub estimator: Option<String>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub no_cache: bool,
    pub store_dir: Option<PathBuf>,
    pub limit: Option<usize>,
    pub seed: Option<u64>,
    pub prompt_dir: Option<PathBuf>,
    pub fresh: bool,
}

/// Fully resolved settings for one `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub scenario: Scenario,
    pub backends: Vec<BackendConfig>,
    pub summarizer: Option<BackendConfig>,
    pub budget: usize,
    pub estimator: String,
    pub concurrency: usize,
    /// `None` disables the completion cache.
    pub cache_dir: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub limit: Option<usize>,
    pub seed: u64,
    pub prompt_dir: Option<PathBuf>,
    pub fresh: bool,
}

impl RunConfig {
    pub fn resolve(flags: RunFlags, file: &ConfigFile) -> Result<Self, ConfigError> {
        let d = &file.defaults;
        let scenario = flags.scenario.unwrap_or(Scenario::Raw);
        if flags.backends.is_empty() {
            return Err(ConfigError::NoBackends);
        }
        let backends = flags
            .backends
            .iter()
            .map(|id| file.backend(id))
            .collect::<Result<Vec<_>, _>>()?;
        let summarizer = match scenario {
            Scenario::Raw => None,
            Scenario::Summary => {
                let id = flags
                    .summarizer
                    .or_else(|| d.summarizer.clone())
                    .ok_or(ConfigError::MissingSummarizer)?;
                Some(file.backend(&id)?)
            }
        };
        if flags.limit == Some(0) {
            return Err(ConfigError::ZeroLimit);
        }
        let cache_dir = if flags.no_cache {
            None
        } else {
            Some(
                flags
                    .cache_dir
                    .or_else(|| d.cache_dir.clone())
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
            )
        };
        Ok(Self {
            corpus_root: flags.corpus_root,
            scenario,
            backends,
            summarizer,
            budget: flags.budget.or(d.budget).unwrap_or(DEFAULT_BUDGET),
            estimator: flags
                .estimator
                .or_else(|| d.estimator.clone())
                .unwrap_or_else(|| "chars_div_4".to_string()),
            concurrency: flags
                .concurrency
                .or(d.concurrency)
                .unwrap_or(DEFAULT_CONCURRENCY)
                .max(1),
            cache_dir,
            store_dir: flags
                .store_dir
                .or_else(|| d.store_dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE_DIR)),
            limit: flags.limit,
            seed: flags.seed.or(d.seed).unwrap_or(0),
            prompt_dir: flags.prompt_dir.or_else(|| d.prompt_dir.clone()),
            fresh: flags.fresh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[defaults]
budget = 256
concurrency = 2
summarizer = "chatgpt"

[backends.chatgpt]
endpoint_url = "https://example.test/v1/chat/completions"
model_name = "gpt-3.5-turbo"
rate_limit = 30

[backends.local]
endpoint_url = "http://127.0.0.1:9/v1/chat/completions"
model_name = "flan"
api_key_env = ""
"#;

    #[test]
    fn parses_defaults_and_backends() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(f.defaults.budget, Some(256));
        let chatgpt = f.backend("chatgpt").unwrap();
        assert_eq!(chatgpt.backend_id, "chatgpt");
        assert_eq!(chatgpt.rate_limit, 30);
        assert_eq!(
            chatgpt.endpoint_url,
            "https://example.test/v1/chat/completions"
        );
        assert_eq!(f.backend("local").unwrap().api_key_env, "");
        // presets still reachable
        assert!(f.backend("mock").unwrap().is_mock());
        assert!(matches!(
            f.backend("nope"),
            Err(ConfigError::UnknownBackend(_))
        ));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ConfigFile::parse("[defaults]\nbudgett = 3\n").is_err());
        assert!(ConfigFile::parse(
            "[backends.x]\nendpoint_url = \"mock\"\nmodel_name = \"m\"\ncolour = 1\n"
        )
        .is_err());
        assert!(ConfigFile::parse("verbose = true\n").is_err());
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        let flags = RunFlags {
            backends: vec!["mock".into()],
            scenario: Some(Scenario::Summary),
            budget: Some(100),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(flags, &f).unwrap();
        assert_eq!(cfg.budget, 100);
        assert_eq!(cfg.concurrency, 2);
        assert_eq!(cfg.summarizer.unwrap().backend_id, "chatgpt");
        assert_eq!(cfg.estimator, "chars_div_4");
        assert_eq!(cfg.cache_dir, Some(PathBuf::from(DEFAULT_CACHE_DIR)));

        let cfg = RunConfig::resolve(
            RunFlags {
                backends: vec!["mock".into()],
                ..Default::default()
            },
            &ConfigFile::default(),
        )
        .unwrap();
        assert_eq!(cfg.budget, DEFAULT_BUDGET);
        assert_eq!(cfg.concurrency, DEFAULT_CONCURRENCY);
        assert_eq!(cfg.scenario, Scenario::Raw);
        assert!(cfg.summarizer.is_none());
    }

    #[test]
    fn summary_requires_summarizer() {
        let err = RunConfig::resolve(
            RunFlags {
                backends: vec!["mock".into()],
                scenario: Some(Scenario::Summary),
                ..Default::default()
            },
            &ConfigFile::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::MissingSummarizer));
    }

    #[test]
    fn zero_limit_rejected() {
        let err = RunConfig::resolve(
            RunFlags {
                backends: vec!["mock".into()],
                limit: Some(0),
                ..Default::default()
            },
            &ConfigFile::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::ZeroLimit));
    }
}
