use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub prompt_digest: String,
    pub model: String,
    pub config_digest: String,
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    #[serde(flatten)]
    pub key: CacheKey,
    pub response: Value,
}

/// Append-only JSONL store of raw backend responses.
///
/// Loaded fully on open; new entries are appended and flushed one line at a time. A
/// truncated final line (from an interrupted run) is skipped with a warning.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<CacheKey, Value>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            let lines: Vec<String> = BufReader::new(f)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CachedResponse>(&line) {
                    Ok(r) => {
                        entries.insert(r.key, r.response);
                    }
                    Err(e) if i + 1 == last => {
                        log::warn!("{}: skipping truncated final cache line: {e}", path.display());
                    }
                    Err(e) => {
                        return Err(BackendError::Cache(format!("{} line {}: {e}", path.display(), i + 1)));
                    }
                }
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            file: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<Value> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, response: Value) -> Result<(), BackendError> {
        {
            let mut entries = self.entries.lock().unwrap();
            if entries.contains_key(&key) {
                return Ok(());
            }
            entries.insert(key.clone(), response.clone());
        }
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut file = self.file.lock().unwrap();
        if file.is_none() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| BackendError::Cache(e.to_string()))?;
            }
            *file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?,
            );
        }
        let line = serde_json::to_string(&CachedResponse { key, response }).expect("cache entry serializes");
        let f = file.as_mut().unwrap();
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))
    }

    /// All entries sorted by key, for deterministic dumps.
    pub fn entries(&self) -> Vec<CachedResponse> {
        let mut out: Vec<CachedResponse> = self
            .entries
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| CachedResponse {
                key: k.clone(),
                response: v.clone(),
            })
            .collect();
        out.sort_by(|a, b| {
            (&a.key.prompt_digest, &a.key.model, &a.key.config_digest).cmp(&(
                &b.key.prompt_digest,
                &b.key.model,
                &b.key.config_digest,
            ))
        });
        out
    }
}
