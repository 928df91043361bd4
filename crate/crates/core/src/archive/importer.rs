use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use tracing::debug;

use crate::clock::Clock;
use crate::model::MetricSample;
use crate::wire::{ErrorCode, ErrorReply, Message, Reply, WireError, WireHandler};

use super::{Appended, StoreError, TelemetryStore};

#[derive(Debug, Default)]
pub struct ImportCounters {
    ingested: AtomicU64,
    duplicates: AtomicU64,
    rejected: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ImportTotals {
    pub ingested: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

impl ImportTotals {
    pub fn lines(&self) -> u64 {
        self.ingested + self.duplicates + self.rejected
    }
}

impl ImportCounters {
    pub fn snapshot(&self) -> ImportTotals {
        ImportTotals {
            ingested: self.ingested.load(Ordering::Relaxed),
            duplicates: self.duplicates.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
        }
    }
}

/// Wire endpoint of the archive. Producers push samples into the store;
/// consumers run `QUERY_LATEST` / `QUERY_RANGE` against it.
pub struct Importer {
    node: String,
    store: Arc<dyn TelemetryStore>,
    clock: Arc<dyn Clock>,
    counters: ImportCounters,
}

impl Importer {
    pub fn new(node: impl Into<String>, store: Arc<dyn TelemetryStore>, clock: Arc<dyn Clock>) -> Self {
        Importer {
            node: node.into(),
            store,
            clock,
            counters: ImportCounters::default(),
        }
    }

    pub fn store(&self) -> &Arc<dyn TelemetryStore> {
        &self.store
    }

    pub fn counters(&self) -> ImportTotals {
        self.counters.snapshot()
    }

    /// Append one sample and count the outcome.
    pub fn ingest(&self, sample: &MetricSample) -> Result<Appended, StoreError> {
        let res = self.store.append(sample);
        let counter = match &res {
            Ok(Appended::Stored) => &self.counters.ingested,
            Ok(Appended::Duplicate) => &self.counters.duplicates,
            Err(e) => {
                debug!(error = %e, "sample rejected");
                &self.counters.rejected
            }
        };
        counter.fetch_add(1, Ordering::Relaxed);
        res
    }
}

fn store_err(e: StoreError) -> ErrorReply {
    match e {
        StoreError::InvalidRange { .. } => ErrorReply::new(ErrorCode::InvalidRange, e.to_string()),
        other => ErrorReply::new(ErrorCode::Internal, other.to_string()),
    }
}

impl WireHandler for Importer {
    fn node(&self) -> String {
        self.node.clone()
    }

    fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn on_sample(&self, sample: MetricSample) {
        let _ = self.ingest(&sample);
    }

    fn on_bad_line(&self, err: &WireError) {
        debug!(error = %err, "malformed line");
        self.counters.rejected.fetch_add(1, Ordering::Relaxed);
    }

    fn on_request(&self, req: &Message) -> Result<Reply, ErrorReply> {
        match req {
            Message::QueryLatest { p, m, .. } => Ok(Reply {
                samples: Some(self.store.latest(p, m).into_iter().collect()),
                ..Reply::ok()
            }),
            Message::QueryRange { p, m, from, to, .. } => {
                let samples = self.store.range(p, m, *from, *to).map_err(store_err)?;
                Ok(Reply {
                    samples: Some(samples),
                    ..Reply::ok()
                })
            }
            other => Err(ErrorReply::new(
                ErrorCode::Unsupported,
                format!("{} not supported by the archive", other.kind()),
            )),
        }
    }
}
