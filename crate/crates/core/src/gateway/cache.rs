//! Content-addressed completion cache.
//!
//! Entries live at `<dir>/<key[0..2]>/<key>.json`. Writes go to a temp file
//! first and are renamed into place, so a reader never sees a partial entry
//! and concurrent writers of the same key cannot interleave.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Completion, SamplingParams};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(fingerprint: &str, params: &SamplingParams, backend_id: &str, sample_index: usize) -> Self {
        #[derive(Serialize)]
        struct Material<'a> {
            fingerprint: &'a str,
            temperature: String,
            max_tokens: usize,
            seed: Option<u64>,
            backend_id: &'a str,
            sample_index: usize,
        }
        let material = Material {
            fingerprint,
            // Bit-exact float text so 0.7 and 0.70000001 never collide.
            temperature: format!("{:016x}", params.temperature.to_bits()),
            max_tokens: params.max_tokens,
            seed: params.seed,
            backend_id,
            sample_index,
        };
        let bytes = serde_json::to_vec(&material).expect("cache key material serializes");
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Default)]
pub struct CompletionCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<CacheKey, Completion>>,
}

impl CompletionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir), memory: RwLock::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key.0[..2]).join(format!("{}.json", key.0)))
    }

    pub fn get(&self, key: &CacheKey) -> Option<Completion> {
        if let Some(c) = self.memory.read().get(key) {
            return Some(c.clone());
        }
        let path = self.path_for(key)?;
        let bytes = fs::read(path).ok()?;
        let c: Completion = serde_json::from_slice(&bytes).ok()?;
        self.memory.write().insert(key.clone(), c.clone());
        Some(c)
    }

    pub fn put(&self, key: &CacheKey, completion: &Completion) -> std::io::Result<()> {
        if let Some(path) = self.path_for(key) {
            let parent = path.parent().expect("entry has a parent dir");
            fs::create_dir_all(parent)?;
            let tmp = parent.join(format!(
                ".{}.{}.tmp",
                key.0,
                uuid::Uuid::new_v4().simple()
            ));
            fs::write(&tmp, serde_json::to_vec_pretty(completion).expect("completion serializes"))?;
            fs::rename(&tmp, &path)?;
        }
        self.memory.write().insert(key.clone(), completion.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
