//! Append-only line-delimited key/value caches.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
#[error("cache file {path}: {message}")]
pub struct CacheError {
    pub path: String,
    pub message: String,
}

/// Hex SHA-256 over the given parts, each length-prefixed.
pub fn hash_key(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// A string-keyed cache persisted as one JSON object per line:
/// `{"key": ..., "<value_field>": ...}`.
///
/// Reads take a shared lock; inserts serialize on the writer. Later lines
/// for the same key win on reload.
pub struct JsonlCache<V> {
    path: Option<PathBuf>,
    value_field: &'static str,
    entries: RwLock<HashMap<String, V>>,
    writer: Mutex<Option<File>>,
    _marker: PhantomData<V>,
}

impl<V: Clone + Serialize + DeserializeOwned> JsonlCache<V> {
    /// A cache that lives only in memory.
    pub fn in_memory(value_field: &'static str) -> Self {
        Self {
            path: None,
            value_field,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            _marker: PhantomData,
        }
    }

    /// Opens (creating if needed) a cache file and loads its entries.
    pub fn open(path: &Path, value_field: &'static str) -> Result<Self, CacheError> {
        let err = |message: String| CacheError { path: path.display().to_string(), message };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| err(e.to_string()))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let mut obj: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&line) {
                    Ok(o) => o,
                    Err(e) => {
                        // a torn final line from an interrupted run is skipped
                        tracing::warn!(path = %path.display(), line = n + 1, error = %e, "skipping unreadable cache line");
                        continue;
                    }
                };
                let key = obj.remove("key").and_then(|k| k.as_str().map(str::to_string));
                let value = obj.remove(value_field).map(serde_json::from_value::<V>);
                match (key, value) {
                    (Some(k), Some(Ok(v))) => {
                        entries.insert(k, v);
                    }
                    _ => return Err(err(format!("line {} is not a {{key, {value_field}}} record", n + 1))),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(e.to_string()))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            value_field,
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            _marker: PhantomData,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts and appends to the backing file. Returns the stored value,
    /// which is the existing one if another writer got there first.
    pub fn insert(&self, key: &str, value: V) -> Result<V, CacheError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(existing) = self.get(key) {
            return Ok(existing);
        }
        if let Some(file) = writer.as_mut() {
            let mut obj = serde_json::Map::new();
            obj.insert("key".into(), serde_json::Value::String(key.to_string()));
            obj.insert(
                self.value_field.to_string(),
                serde_json::to_value(&value).map_err(|e| self.error(e.to_string()))?,
            );
            let line = serde_json::Value::Object(obj).to_string();
            writeln!(file, "{line}").and_then(|_| file.flush()).map_err(|e| self.error(e.to_string()))?;
        }
        self.entries.write().expect("cache lock poisoned").insert(key.to_string(), value.clone());
        Ok(value)
    }

    fn error(&self, message: String) -> CacheError {
        CacheError {
            path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<memory>".into()),
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        {
            let c: JsonlCache<String> = JsonlCache::open(&path, "raw_text").unwrap();
            c.insert("k1", "hello".into()).unwrap();
            c.insert("k2", "world".into()).unwrap();
            assert_eq!(c.insert("k1", "ignored".into()).unwrap(), "hello");
        }
        let c: JsonlCache<String> = JsonlCache::open(&path, "raw_text").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k1").as_deref(), Some("hello"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"raw_text\""));
    }

    #[test]
    fn floats_reload_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let mut x = 0.1f64;
        let values: Vec<f64> = (0..2000)
            .map(|_| {
                x = (x * 3.7 + 0.123456789).fract() - 0.5;
                x / 7.0
            })
            .collect();
        JsonlCache::open(&path, "vector").unwrap().insert("k", values.clone()).unwrap();
        let back: Vec<f64> = JsonlCache::open(&path, "vector").unwrap().get("k").unwrap();
        assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn torn_line_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"key\":\"a\",\"raw_text\":\"x\"}\n{\"key\":\"b\",\"raw").unwrap();
        let c: JsonlCache<String> = JsonlCache::open(&path, "raw_text").unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn concurrent_insert_or_get() {
        let c: JsonlCache<u32> = JsonlCache::in_memory("v");
        std::thread::scope(|s| {
            for t in 0..8u32 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..100u32 {
                        c.insert(&format!("k{i}"), t).unwrap();
                    }
                });
            }
        });
        assert_eq!(c.len(), 100);
    }

    #[test]
    fn hash_key_is_length_prefixed() {
        assert_ne!(hash_key(&["ab", "c"]), hash_key(&["a", "bc"]));
    }
}
