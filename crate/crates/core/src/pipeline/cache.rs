//! Content-addressed completion cache.
//!
//! Layout: `<dir>/<first two hex digits>/<digest>` holds the completion text;
//! `<digest>.usage.json` next to it holds the token counts of the original
//! call so replays report identical usage. Both are written through a
//! temporary file and renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendConfig;
use crate::prompt::ChatMessages;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(cfg: &BackendConfig, messages: &ChatMessages, max_tokens: u32) -> Self {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(cfg.backend_id.as_bytes());
        field(cfg.model_name.as_bytes());
        field(&messages.canonical_bytes());
        field(&cfg.temperature.to_bits().to_le_bytes());
        field(&max_tokens.to_le_bytes());
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedCompletion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Serialize, Deserialize)]
struct UsageSidecar {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Debug)]
pub struct CompletionCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl CompletionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn text_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(&key.0)
    }

    fn usage_path(&self, key: &CacheKey) -> PathBuf {
        self.dir
            .join(&key.0[..2])
            .join(format!("{}.usage.json", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<CachedCompletion>> {
        let text = match fs::read_to_string(self.text_path(key)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let usage = fs::read(self.usage_path(key))
            .ok()
            .and_then(|b| serde_json::from_slice::<UsageSidecar>(&b).ok());
        Ok(Some(CachedCompletion {
            text,
            prompt_tokens: usage.as_ref().map_or(0, |u| u.prompt_tokens),
            completion_tokens: usage.as_ref().map_or(0, |u| u.completion_tokens),
        }))
    }

    pub fn put(&self, key: &CacheKey, completion: &CachedCompletion) -> io::Result<()> {
        let sidecar = serde_json::to_vec(&UsageSidecar {
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
        })?;
        // usage first: a reader that sees the text also sees its usage
        write_atomic(&self.usage_path(key), &sidecar)?;
        write_atomic(&self.text_path(key), completion.text.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}
