use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KamError, RelationKind};

/// One line of the append-only cache file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub kind: RelationKind,
    pub raw_reply: String,
    /// Canonical label, or `unknown` / `other` after fallback.
    pub parsed: String,
    /// Unix seconds.
    pub timestamp: u64,
    pub model: String,
}

/// SHA-256 over (rendered chain, pair index, kind, model name).
pub fn cache_key(rendered: &str, index: usize, kind: RelationKind, model: &str) -> String {
    let mut h = Sha256::new();
    for part in [
        rendered.as_bytes(),
        &(index as u64).to_le_bytes(),
        kind.as_str().as_bytes(),
        model.as_bytes(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

/// Response cache. Lookups go to an in-memory map; inserts are appended to
/// the backing file (when any) through a single writer.
#[derive(Debug)]
pub struct AnnotationCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<Option<File>>,
}

impl AnnotationCache {
    pub fn in_memory() -> Self {
        AnnotationCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads an existing cache file (later records win) and opens it for
    /// appending. A truncated final line from an interrupted run is skipped.
    pub fn open(path: &Path) -> Result<Self, KamError> {
        let err = |e: std::io::Error| KamError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(err)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.key.clone(), rec);
                    }
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), lineno + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        let content_len = file.metadata().map_err(err)?.len();
        if content_len > 0 && !std::fs::read(path).map_err(err)?.ends_with(b"\n") {
            file.write_all(b"\n").map_err(err)?;
        }
        Ok(AnnotationCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.read().expect("cache lock").contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, record: CacheRecord) -> Result<(), KamError> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(|e| KamError::Cache(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| KamError::Cache(e.to_string()))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(record.key.clone(), record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(key: &str, parsed: &str) -> CacheRecord {
        CacheRecord {
            key: key.into(),
            kind: RelationKind::Act,
            raw_reply: parsed.into(),
            parsed: parsed.into(),
            timestamp: 1,
            model: "m".into(),
        }
    }

    #[test]
    fn key_separates_fields() {
        let a = cache_key("ab", 2, RelationKind::Act, "m");
        assert_ne!(a, cache_key("a", 2, RelationKind::Act, "bm"));
        assert_ne!(a, cache_key("ab", 3, RelationKind::Act, "m"));
        assert_ne!(a, cache_key("ab", 2, RelationKind::Logical, "m"));
        assert_eq!(a, cache_key("ab", 2, RelationKind::Act, "m"));
    }

    #[test]
    fn survives_reopen_and_skips_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = AnnotationCache::open(&path).unwrap();
            c.insert(rec("k1", "agreement")).unwrap();
            c.insert(rec("k2", "question")).unwrap();
            c.insert(rec("k1", "refusal")).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"key\":\"k3\",\"ki")
            .unwrap();
        let c = AnnotationCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("k1").unwrap().parsed, "refusal");
        assert!(!c.contains("k3"));
        c.insert(rec("k4", "other")).unwrap();
        drop(c);
        let c = AnnotationCache::open(&path).unwrap();
        assert_eq!(c.get("k4").unwrap().parsed, "other");
    }
}
