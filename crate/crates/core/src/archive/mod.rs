//! Archival tier: the importer that ingests sample streams and the telemetry
//! store behind it.
//!
//! [`TelemetryStore`] is the uniform query surface (latest / range /
//! aggregate). Two interchangeable backends ship: [`MemoryStore`] and the
//! flat-file [`FileSegmentStore`]. Any other database would sit behind the
//! same trait.

mod file;
mod importer;
mod memory;
mod retention;
mod series;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MetricName, MetricSample, ResourcePath, Value};

pub use file::{FileSegmentStore, OpenReport};
pub use importer::{ImportCounters, ImportTotals, Importer};
pub use memory::MemoryStore;
pub use retention::{retention_sweep, RetentionPolicy, SweepStats};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("conflicting value for {path} {metric} at {timestamp}")]
    ConflictingValue {
        path: ResourcePath,
        metric: MetricName,
        timestamp: u64,
    },
    #[error("invalid range: from {t0} > to {t1}")]
    InvalidRange { t0: u64, t1: u64 },
    #[error("cannot compute {0} over text values")]
    KindMismatch(AggregateFn),
    #[error("invalid retention policy: {0}")]
    InvalidPolicy(String),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Appended {
    Stored,
    Duplicate,
}

/// Whether a stored sample came from a sensor or from downsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Raw,
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub sample: MetricSample,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregateFn {
    Min,
    Max,
    Mean,
    Count,
    Last,
}

impl fmt::Display for AggregateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregateFn::Min => "min",
            AggregateFn::Max => "max",
            AggregateFn::Mean => "mean",
            AggregateFn::Count => "count",
            AggregateFn::Last => "last",
        })
    }
}

impl FromStr for AggregateFn {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(AggregateFn::Min),
            "max" => Ok(AggregateFn::Max),
            "mean" => Ok(AggregateFn::Mean),
            "count" => Ok(AggregateFn::Count),
            "last" => Ok(AggregateFn::Last),
            other => Err(format!("unknown aggregate {other:?}")),
        }
    }
}

/// Fold an ordered sample list. `count` of nothing is 0; everything else of
/// nothing is absent.
pub fn aggregate_samples(samples: &[MetricSample], f: AggregateFn) -> Result<Option<Value>, StoreError> {
    match f {
        AggregateFn::Count => return Ok(Some(Value::Number(samples.len() as f64))),
        AggregateFn::Last => return Ok(samples.last().map(|s| s.value().clone())),
        _ => {}
    }
    let mut nums = Vec::with_capacity(samples.len());
    for s in samples {
        nums.push(s.value().as_f64().ok_or(StoreError::KindMismatch(f))?);
    }
    if nums.is_empty() {
        return Ok(None);
    }
    let v = match f {
        AggregateFn::Min => nums.iter().copied().fold(f64::INFINITY, f64::min),
        AggregateFn::Max => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggregateFn::Mean => nums.iter().sum::<f64>() / nums.len() as f64,
        AggregateFn::Count | AggregateFn::Last => unreachable!(),
    };
    Ok(Some(Value::Number(v)))
}

/// Append/query contract shared by every backend.
///
/// Appends are idempotent on `(path, metric, timestamp)`: an identical
/// re-append is a [`Appended::Duplicate`] no-op, a different value for an
/// existing key is rejected. Ranges are half-open `[t0, t1)` and ascending.
pub trait TelemetryStore: Send + Sync {
    fn append(&self, sample: &MetricSample) -> Result<Appended, StoreError>;

    /// Sample with the greatest timestamp for the key, whatever the
    /// insertion order.
    fn latest(&self, path: &ResourcePath, metric: &MetricName) -> Option<MetricSample>;

    fn range_entries(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<StoredSample>, StoreError>;

    fn range(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<MetricSample>, StoreError> {
        Ok(self
            .range_entries(path, metric, t0, t1)?
            .into_iter()
            .map(|e| e.sample)
            .collect())
    }

    fn aggregate(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
        f: AggregateFn,
    ) -> Result<Option<Value>, StoreError> {
        aggregate_samples(&self.range(path, metric, t0, t1)?, f)
    }

    /// Every `(path, metric)` with at least one sample, sorted.
    fn series_keys(&self) -> Vec<(ResourcePath, MetricName)>;

    fn sample_count(&self) -> usize;

    /// Downsample old raw samples; see [`retention_sweep`].
    fn apply_retention(&self, policy: &RetentionPolicy, now_ms: u64) -> Result<SweepStats, StoreError>;
}
