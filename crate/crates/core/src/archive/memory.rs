use std::sync::RwLock;

use crate::model::{MetricName, MetricSample, ResourcePath};

use super::retention::apply_to_index;
use super::series::Index;
use super::{Appended, RetentionPolicy, StoreError, StoredSample, SweepStats, TelemetryStore};

#[derive(Debug, Default)]
pub struct MemoryStore {
    index: RwLock<Index>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TelemetryStore for MemoryStore {
    fn append(&self, sample: &MetricSample) -> Result<Appended, StoreError> {
        self.index.write().expect("index lock").append(sample)
    }

    fn latest(&self, path: &ResourcePath, metric: &MetricName) -> Option<MetricSample> {
        self.index.read().expect("index lock").latest(path, metric)
    }

    fn range_entries(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<StoredSample>, StoreError> {
        self.index.read().expect("index lock").range(path, metric, t0, t1)
    }

    fn series_keys(&self) -> Vec<(ResourcePath, MetricName)> {
        self.index.read().expect("index lock").keys()
    }

    fn sample_count(&self) -> usize {
        self.index.read().expect("index lock").len()
    }

    fn apply_retention(&self, policy: &RetentionPolicy, now_ms: u64) -> Result<SweepStats, StoreError> {
        policy.validate()?;
        let mut index = self.index.write().expect("index lock");
        Ok(apply_to_index(&mut index, policy, now_ms).0)
    }
}
