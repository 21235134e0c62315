//! Append-only key-value response cache.
//!
//! Entries live in `<dir>/cache.jsonl`, one `{key, value, created_at}` object
//! per line. The first entry for a key wins; a torn final line left by an
//! interrupted write is skipped on open.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Provider, Request, Response};
use crate::error::Result;
use crate::lexicon::sha256_hex;

pub const CACHE_FILE: &str = "cache.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub value: Value,
    pub created_at: u64,
}

type Slot = Arc<Mutex<Option<Value>>>;

pub struct Cache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot>>,
    file: Mutex<Option<File>>,
}

impl Cache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            slots: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the store under `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut slots = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) => {
                        slots
                            .entry(entry.key)
                            .or_insert_with(|| Arc::new(Mutex::new(Some(entry.value))));
                    }
                    Err(e) => warn!("skipping unreadable cache line {} in {}: {e}", i + 1, path.display()),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            slots: Mutex::new(slots),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache lock poisoned");
        slots
            .values()
            .filter(|s| s.lock().expect("slot lock poisoned").is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let slot = self.slots.lock().expect("cache lock poisoned").get(key).cloned()?;
        let value = slot.lock().expect("slot lock poisoned").clone();
        value
    }

    fn slot(&self, key: &str) -> Slot {
        let mut slots = self.slots.lock().expect("cache lock poisoned");
        slots.entry(key.to_string()).or_default().clone()
    }

    fn persist(&self, key: &str, value: &Value) -> Result<()> {
        let mut guard = self.file.lock().expect("cache file lock poisoned");
        if let Some(file) = guard.as_mut() {
            let created_at = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let entry = CacheEntry {
                key: key.to_string(),
                value: value.clone(),
                created_at,
            };
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        Ok(())
    }
}

/// `<provider>:<op>:<hex sha256 of the canonical request>`.
pub fn cache_key(provider: &str, request: &Request) -> String {
    let canonical = serde_json::to_vec(&request.canonical()).expect("requests serialize");
    format!("{provider}:{}:{}", request.op_name(), sha256_hex(&canonical))
}

/// Returns the cached response for `request`, invoking `provider` with the
/// canonical request on a miss. Concurrent callers for one key wait on the
/// first, so each key reaches the provider at most once per cache lifetime.
/// Provider errors are returned and nothing is stored.
pub fn cached_call(provider: &dyn Provider, cache: &Cache, request: &Request) -> Result<Response> {
    let key = cache_key(provider.name(), request);
    let slot = cache.slot(&key);
    let mut guard = slot.lock().expect("slot lock poisoned");
    if let Some(value) = guard.as_ref() {
        return Response::from_cache_value(request, value.clone());
    }
    let canonical = request.canonical();
    let response = provider.call(&canonical)?;
    let value = response.to_cache_value();
    cache.persist(&key, &value)?;
    *guard = Some(value);
    Ok(response)
}

impl std::fmt::Debug for Cache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cache").field("dir", &self.dir).finish_non_exhaustive()
    }
}
