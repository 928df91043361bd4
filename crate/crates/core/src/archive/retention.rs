use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Value;

use super::series::{Index, Point, Series, SeriesKey};
use super::{Origin, StoreError, SweepStats as Stats, TelemetryStore};

/// Keep raw samples for `max_age_ms`; beyond that, replace each
/// `bucket_ms`-wide bucket by one derived sample carrying the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub max_age_ms: u64,
    pub bucket_ms: u64,
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.bucket_ms == 0 {
            return Err(StoreError::InvalidPolicy("bucket must be > 0".into()));
        }
        if self.max_age_ms <= self.bucket_ms {
            return Err(StoreError::InvalidPolicy(
                "max_age must exceed the downsample bucket".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepStats {
    /// Raw (or superseded derived) samples removed.
    pub removed: u64,
    /// Derived samples written.
    pub derived: u64,
}

/// Run one retention pass over `store`.
///
/// Only buckets lying entirely before `now - max_age` are compacted, and
/// the latest sample of every series is never touched.
pub fn retention_sweep(
    store: &dyn TelemetryStore,
    policy: &RetentionPolicy,
    now_ms: u64,
) -> Result<Stats, StoreError> {
    store.apply_retention(policy, now_ms)
}

#[derive(Debug, Default)]
pub(crate) struct SeriesPlan {
    pub remove: Vec<u64>,
    pub add: Vec<(u64, Point)>,
}

pub(crate) fn plan_series(series: &Series, policy: &RetentionPolicy, now_ms: u64) -> SeriesPlan {
    let cutoff = now_ms.saturating_sub(policy.max_age_ms);
    let latest = series.latest_ts();
    let mut buckets: BTreeMap<u64, Vec<(u64, &Point)>> = BTreeMap::new();
    for (ts, p) in series.points.range(..cutoff) {
        let start = ts - ts % policy.bucket_ms;
        if start + policy.bucket_ms > cutoff || Some(*ts) == latest {
            continue;
        }
        buckets.entry(start).or_default().push((*ts, p));
    }
    let mut plan = SeriesPlan::default();
    for (start, members) in buckets {
        if !members.iter().any(|(_, p)| p.origin == Origin::Raw) {
            continue;
        }
        let all_numeric = members.iter().all(|(_, p)| !p.value.is_text());
        let value = if all_numeric {
            let sum: f64 = members.iter().filter_map(|(_, p)| p.value.as_f64()).sum();
            Value::Number(sum / members.len() as f64)
        } else {
            members.last().expect("non-empty bucket").1.value.clone()
        };
        let ttl = members.iter().map(|(_, p)| p.ttl).max().unwrap_or(0);
        plan.remove.extend(members.iter().map(|(ts, _)| *ts));
        plan.add.push((
            start.max(1),
            Point {
                value,
                ttl,
                origin: Origin::Derived,
            },
        ));
    }
    plan
}

/// Apply retention to an index. Also returns, per touched series, every
/// timestamp that was removed or written so file backends can rewrite the
/// affected segments.
pub(crate) fn apply_to_index(
    index: &mut Index,
    policy: &RetentionPolicy,
    now_ms: u64,
) -> (Stats, Vec<(SeriesKey, Vec<u64>)>) {
    let mut stats = Stats::default();
    let mut touched = Vec::new();
    for key in index.keys() {
        let series = index.get(&key).expect("listed key");
        let plan = plan_series(series, policy, now_ms);
        if plan.add.is_empty() {
            continue;
        }
        let series = index.get_mut(&key).expect("listed key");
        let mut stamps = Vec::new();
        for ts in &plan.remove {
            series.points.remove(ts);
            stamps.push(*ts);
        }
        stats.removed += plan.remove.len() as u64;
        for (ts, point) in plan.add {
            series.points.insert(ts, point);
            stats.derived += 1;
            stamps.push(ts);
        }
        stamps.sort_unstable();
        stamps.dedup();
        touched.push((key, stamps));
    }
    index.recount();
    (stats, touched)
}
