use std::collections::{BTreeMap, HashMap};

use crate::model::{MetricName, MetricSample, ResourcePath, Value};

use super::{Appended, Origin, StoreError, StoredSample};

pub(crate) type SeriesKey = (ResourcePath, MetricName);

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Point {
    pub value: Value,
    pub ttl: u32,
    pub origin: Origin,
}

impl Point {
    fn same_sample(&self, s: &MetricSample) -> bool {
        self.value == *s.value() && self.ttl == s.ttl()
    }
}

/// One time series, ordered by timestamp.
#[derive(Debug, Default, Clone)]
pub(crate) struct Series {
    pub points: BTreeMap<u64, Point>,
}

impl Series {
    pub fn latest_ts(&self) -> Option<u64> {
        self.points.last_key_value().map(|(t, _)| *t)
    }
}

/// In-memory index shared by both backends.
#[derive(Debug, Default)]
pub(crate) struct Index {
    series: HashMap<SeriesKey, Series>,
    count: usize,
}

pub(crate) fn to_sample(key: &SeriesKey, ts: u64, p: &Point) -> MetricSample {
    MetricSample::new(key.0.clone(), key.1.clone(), ts, p.value.clone(), p.ttl)
        .expect("stored samples are valid")
}

impl Index {
    /// Classify an append without applying it.
    pub fn check(&self, sample: &MetricSample) -> Result<Appended, StoreError> {
        let key = (sample.path().clone(), sample.metric().clone());
        match self.series.get(&key).and_then(|s| s.points.get(&sample.timestamp())) {
            None => Ok(Appended::Stored),
            Some(p) if p.same_sample(sample) => Ok(Appended::Duplicate),
            Some(_) => Err(StoreError::ConflictingValue {
                path: key.0,
                metric: key.1,
                timestamp: sample.timestamp(),
            }),
        }
    }

    /// Insert a sample already classified as new.
    pub fn insert(&mut self, sample: &MetricSample, origin: Origin) {
        let key = (sample.path().clone(), sample.metric().clone());
        let prev = self.series.entry(key).or_default().points.insert(
            sample.timestamp(),
            Point {
                value: sample.value().clone(),
                ttl: sample.ttl(),
                origin,
            },
        );
        if prev.is_none() {
            self.count += 1;
        }
    }

    pub fn append(&mut self, sample: &MetricSample) -> Result<Appended, StoreError> {
        let outcome = self.check(sample)?;
        if outcome == Appended::Stored {
            self.insert(sample, Origin::Raw);
        }
        Ok(outcome)
    }

    pub fn latest(&self, path: &ResourcePath, metric: &MetricName) -> Option<MetricSample> {
        let key = (path.clone(), metric.clone());
        let series = self.series.get(&key)?;
        let (ts, p) = series.points.last_key_value()?;
        Some(to_sample(&key, *ts, p))
    }

    pub fn range(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<StoredSample>, StoreError> {
        if t0 > t1 {
            return Err(StoreError::InvalidRange { t0, t1 });
        }
        let key = (path.clone(), metric.clone());
        let Some(series) = self.series.get(&key) else {
            return Ok(Vec::new());
        };
        Ok(series
            .points
            .range(t0..t1)
            .map(|(ts, p)| StoredSample {
                sample: to_sample(&key, *ts, p),
                origin: p.origin,
            })
            .collect())
    }

    pub fn keys(&self) -> Vec<SeriesKey> {
        let mut keys: Vec<SeriesKey> = self
            .series
            .iter()
            .filter(|(_, s)| !s.points.is_empty())
            .map(|(k, _)| k.clone())
            .collect();
        keys.sort();
        keys
    }

    pub fn get(&self, key: &SeriesKey) -> Option<&Series> {
        self.series.get(key)
    }

    pub fn get_mut(&mut self, key: &SeriesKey) -> Option<&mut Series> {
        self.series.get_mut(key)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn recount(&mut self) {
        self.count = self.series.values().map(|s| s.points.len()).sum();
    }
}
