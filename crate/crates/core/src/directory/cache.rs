use std::collections::HashMap;
use std::sync::Mutex;

use crate::model::{MetricName, MetricSample, ResourcePath};

/// Upper bound on how long any cached value counts as fresh.
pub const MAX_FRESHNESS_S: u32 = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheCell {
    pub sample: MetricSample,
    pub fetched_at: u64,
    pub freshness_ttl: u32,
}

impl CacheCell {
    pub fn new(sample: MetricSample, fetched_at: u64) -> Self {
        let freshness_ttl = sample.ttl().min(MAX_FRESHNESS_S);
        CacheCell {
            sample,
            fetched_at,
            freshness_ttl,
        }
    }

    pub fn expires_at(&self) -> u64 {
        self.fetched_at + self.freshness_ttl as u64 * 1000
    }

    pub fn is_fresh(&self, now: u64) -> bool {
        now < self.expires_at()
    }
}

type Key = (ResourcePath, MetricName);

/// Latest-value cache.
#[derive(Debug, Default)]
pub struct LatestCache {
    cells: Mutex<HashMap<Key, CacheCell>>,
}

impl LatestCache {
    pub fn fresh(&self, path: &ResourcePath, metric: &MetricName, now: u64) -> Option<CacheCell> {
        self.any(path, metric).filter(|c| c.is_fresh(now))
    }

    /// The cell regardless of freshness.
    pub fn any(&self, path: &ResourcePath, metric: &MetricName) -> Option<CacheCell> {
        self.cells
            .lock()
            .expect("cache lock")
            .get(&(path.clone(), metric.clone()))
            .cloned()
    }

    /// Store `cell` unless a cell holding a newer sample is already there.
    pub fn put(&self, cell: CacheCell) {
        let key = (cell.sample.path().clone(), cell.sample.metric().clone());
        let mut cells = self.cells.lock().expect("cache lock");
        match cells.get(&key) {
            Some(cur) if cur.sample.timestamp() > cell.sample.timestamp() && cur.fetched_at >= cell.fetched_at => {}
            _ => {
                cells.insert(key, cell);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.cells.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
