use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::RwLock;

use super::PredictionOutput;
use crate::dataset::Value;

const DEFAULT_CAPACITY: usize = 250_000;

/// Per-model prediction cache keyed by a hash of the row content. Edited
/// points hash differently, so stale entries are never served. Once full,
/// new rows are predicted but not stored.
#[derive(Debug)]
pub struct PredictionCache {
    entries: RwLock<HashMap<u64, PredictionOutput>>,
    capacity: usize,
    enabled: AtomicBool,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for PredictionCache {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl PredictionCache {
    pub fn with_capacity(capacity: usize) -> Self {
        PredictionCache {
            entries: RwLock::new(HashMap::new()),
            capacity,
            enabled: AtomicBool::new(true),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn key(features: &[String], row: &[Value]) -> u64 {
        let mut h = DefaultHasher::new();
        features.hash(&mut h);
        for v in row {
            v.hash_into(&mut h);
        }
        h.finish()
    }

    pub fn get(&self, key: u64) -> Option<PredictionOutput> {
        let hit = self.entries.read().expect("cache lock").get(&key).cloned();
        let counter = if hit.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        hit
    }

    pub fn insert(&self, key: u64, value: PredictionOutput) {
        let mut entries = self.entries.write().expect("cache lock");
        if entries.len() < self.capacity || entries.contains_key(&key) {
            entries.insert(key, value);
        }
    }

    pub fn set_enabled(&self, enabled: bool) {
        self.enabled.store(enabled, Ordering::Relaxed);
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.load(Ordering::Relaxed)
    }

    pub fn clear(&self) {
        self.entries.write().expect("cache lock").clear();
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (hits, misses) since creation.
    pub fn counters(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}
