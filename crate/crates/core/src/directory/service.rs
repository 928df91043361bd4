use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::Serialize;
use tracing::debug;

use crate::clock::Clock;
use crate::model::{MetricName, MetricSample, ResourcePath};
use crate::wire::{
    ClientError, ErrorCode, ErrorReply, Message, ProviderKind, Reply, Source, WireHandler, MAX_HOPS,
};

use super::{CacheCell, DirectoryError, LatestCache, Registry, RegistryEntry, Upstream};

const LATEST_KINDS: [ProviderKind; 3] = [ProviderKind::Agent, ProviderKind::Archive, ProviderKind::Directory];
const HISTORY_KINDS: [ProviderKind; 2] = [ProviderKind::Archive, ProviderKind::Directory];

/// Result of a latest-value lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct LatestAnswer {
    pub sample: Option<MetricSample>,
    pub source: Source,
    /// Served from an expired cache cell because every provider failed.
    pub stale: bool,
    /// When the value left its provider; drives cache freshness downstream.
    pub fetched_at: Option<u64>,
}

impl LatestAnswer {
    fn absent() -> Self {
        LatestAnswer {
            sample: None,
            source: Source::Upstream,
            stale: false,
            fetched_at: None,
        }
    }

    fn from_cell(cell: CacheCell, source: Source, stale: bool) -> Self {
        LatestAnswer {
            sample: Some(cell.sample),
            source,
            stale,
            fetched_at: Some(cell.fetched_at),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DirectoryStats {
    pub cache_hits: u64,
    pub upstream_calls: u64,
    pub coalesced: u64,
    pub stale_served: u64,
}

/// Flights are per hop count so a federation loop never waits on itself.
type FlightKey = (ResourcePath, MetricName, u8);
type FlightResult = Result<LatestAnswer, DirectoryError>;

#[derive(Default)]
struct Flight {
    result: Mutex<Option<FlightResult>>,
    done: Condvar,
}

/// Outcome of asking one provider.
enum Fetch {
    Hit(CacheCell, bool),
    Absent,
}

/// A directory node: registry, latest-value cache, routing and
/// federation.
pub struct Directory {
    node: String,
    clock: Arc<dyn Clock>,
    registry: Registry,
    cache: LatestCache,
    upstream: Arc<dyn Upstream>,
    flights: Mutex<HashMap<FlightKey, Arc<Flight>>>,
    cache_hits: AtomicU64,
    upstream_calls: AtomicU64,
    coalesced: AtomicU64,
    stale_served: AtomicU64,
}

impl Directory {
    pub fn new(node: impl Into<String>, clock: Arc<dyn Clock>, upstream: Arc<dyn Upstream>) -> Self {
        Directory {
            node: node.into(),
            clock,
            registry: Registry::new(),
            cache: LatestCache::default(),
            upstream,
            flights: Mutex::new(HashMap::new()),
            cache_hits: AtomicU64::new(0),
            upstream_calls: AtomicU64::new(0),
            coalesced: AtomicU64::new(0),
            stale_served: AtomicU64::new(0),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn cache(&self) -> &LatestCache {
        &self.cache
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn stats(&self) -> DirectoryStats {
        DirectoryStats {
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            upstream_calls: self.upstream_calls.load(Ordering::Relaxed),
            coalesced: self.coalesced.load(Ordering::Relaxed),
            stale_served: self.stale_served.load(Ordering::Relaxed),
        }
    }

    pub fn register(&self, subtree: ResourcePath, kind: ProviderKind, endpoint: &str, ttl: u32) -> Result<u64, DirectoryError> {
        self.registry.register(subtree, kind, endpoint, ttl, self.now())
    }

    pub fn sweep(&self) -> Vec<RegistryEntry> {
        self.registry.sweep(self.now())
    }

    fn call(&self, entry: &RegistryEntry, request: Message) -> Result<Reply, ClientError> {
        self.upstream_calls.fetch_add(1, Ordering::Relaxed);
        self.upstream.call(&entry.endpoint, request)
    }

    fn fetch_latest(&self, entry: &RegistryEntry, path: &ResourcePath, metric: &MetricName, hops: u8) -> Result<Fetch, DirectoryError> {
        let forward_hops = if entry.kind == ProviderKind::Directory { hops + 1 } else { 0 };
        let request = Message::QueryLatest {
            cid: 0,
            p: path.clone(),
            m: metric.clone(),
            hops: forward_hops,
        };
        let reply = self.call(entry, request).map_err(|e| match e {
            ClientError::Remote {
                code: ErrorCode::HopLimitExceeded,
                ..
            } => DirectoryError::HopLimitExceeded,
            other => DirectoryError::UpstreamUnreachable(format!("{}: {other}", entry.endpoint)),
        })?;
        let Some(sample) = reply.samples.and_then(|s| s.into_iter().next()) else {
            return Ok(Fetch::Absent);
        };
        if sample.path() != path || sample.metric() != metric {
            return Err(DirectoryError::UpstreamUnreachable(format!(
                "{} answered for the wrong key",
                entry.endpoint
            )));
        }
        let fetched_at = match entry.kind {
            ProviderKind::Directory => reply.fetched_at.unwrap_or_else(|| self.now()),
            _ => self.now(),
        };
        Ok(Fetch::Hit(CacheCell::new(sample, fetched_at), reply.stale == Some(true)))
    }

    /// Latest value for `(path, metric)`: fresh cache, else the best live
    /// provider, falling through to the next on absence or failure.
    pub fn query_latest(&self, path: &ResourcePath, metric: &MetricName, hops: u8) -> Result<LatestAnswer, DirectoryError> {
        if hops >= MAX_HOPS {
            return Err(DirectoryError::HopLimitExceeded);
        }
        if let Some(cell) = self.cache.fresh(path, metric, self.now()) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(LatestAnswer::from_cell(cell, Source::Cache, false));
        }
        let key = (path.clone(), metric.clone(), hops);
        let (flight, leader) = {
            let mut flights = self.flights.lock().expect("flights lock");
            match flights.get(&key) {
                Some(f) => (Arc::clone(f), false),
                None => {
                    let f = Arc::new(Flight::default());
                    flights.insert(key.clone(), Arc::clone(&f));
                    (f, true)
                }
            }
        };
        if !leader {
            self.coalesced.fetch_add(1, Ordering::Relaxed);
            let mut slot = flight.result.lock().expect("flight lock");
            while slot.is_none() {
                slot = flight.done.wait(slot).expect("flight lock");
            }
            return slot.clone().expect("flight finished");
        }
        let result = self.resolve_latest(path, metric, hops);
        self.flights.lock().expect("flights lock").remove(&key);
        *flight.result.lock().expect("flight lock") = Some(result.clone());
        flight.done.notify_all();
        result
    }

    fn resolve_latest(&self, path: &ResourcePath, metric: &MetricName, hops: u8) -> Result<LatestAnswer, DirectoryError> {
        let now = self.now();
        let candidates = self.registry.candidates(path, &LATEST_KINDS, now);
        if candidates.is_empty() {
            return Ok(LatestAnswer::absent());
        }
        let mut failure = None;
        let mut stale_fallback: Option<CacheCell> = None;
        for entry in &candidates {
            match self.fetch_latest(entry, path, metric, hops) {
                Ok(Fetch::Hit(cell, false)) => {
                    self.cache.put(cell.clone());
                    return Ok(LatestAnswer::from_cell(cell, Source::Upstream, false));
                }
                Ok(Fetch::Hit(cell, true)) => {
                    if stale_fallback.as_ref().is_none_or(|c| c.sample.timestamp() < cell.sample.timestamp()) {
                        stale_fallback = Some(cell);
                    }
                }
                Ok(Fetch::Absent) => {}
                Err(DirectoryError::HopLimitExceeded) => return Err(DirectoryError::HopLimitExceeded),
                Err(e) => {
                    debug!(endpoint = %entry.endpoint, error = %e, "provider failed");
                    failure = Some(e);
                }
            }
        }
        if failure.is_none() && stale_fallback.is_none() {
            return Ok(LatestAnswer::absent());
        }
        let own = self.cache.any(path, metric);
        let best = match (own, stale_fallback) {
            (Some(a), Some(b)) => Some(if b.sample.timestamp() > a.sample.timestamp() { b } else { a }),
            (a, b) => a.or(b),
        };
        match best {
            Some(cell) => {
                self.stale_served.fetch_add(1, Ordering::Relaxed);
                Ok(LatestAnswer::from_cell(cell, Source::Cache, true))
            }
            None => Err(failure.unwrap_or_else(|| DirectoryError::UpstreamUnreachable("no provider answered".into()))),
        }
    }

    /// Samples in `[t0, t1)` from the best archive (or child directory)
    /// covering `path`. Never served from cache.
    pub fn query_history(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
        hops: u8,
    ) -> Result<Vec<MetricSample>, DirectoryError> {
        if t0 > t1 {
            return Err(DirectoryError::InvalidRange { t0, t1 });
        }
        if hops >= MAX_HOPS {
            return Err(DirectoryError::HopLimitExceeded);
        }
        let candidates = self.registry.candidates(path, &HISTORY_KINDS, self.now());
        if candidates.is_empty() {
            return Err(DirectoryError::NoProvider(path.clone()));
        }
        let mut failure = None;
        for entry in &candidates {
            let forward_hops = if entry.kind == ProviderKind::Directory { hops + 1 } else { 0 };
            let request = Message::QueryRange {
                cid: 0,
                p: path.clone(),
                m: metric.clone(),
                from: t0,
                to: t1,
                hops: forward_hops,
            };
            match self.call(entry, request) {
                Ok(reply) => return Ok(reply.samples.unwrap_or_default()),
                Err(ClientError::Remote { code: ErrorCode::HopLimitExceeded, .. }) => {
                    return Err(DirectoryError::HopLimitExceeded)
                }
                Err(ClientError::Remote { code: ErrorCode::InvalidRange, .. }) => {
                    return Err(DirectoryError::InvalidRange { t0, t1 })
                }
                Err(ClientError::Remote { code: ErrorCode::NoProvider, .. }) => {}
                Err(e) => failure = Some(DirectoryError::UpstreamUnreachable(format!("{}: {e}", entry.endpoint))),
            }
        }
        Err(failure.unwrap_or_else(|| DirectoryError::NoProvider(path.clone())))
    }

    /// Ask the covering agent directly, bypassing cache and archive, and
    /// refill the cache with its answer.
    pub fn trigger_probe(&self, path: &ResourcePath, metric: &MetricName) -> Result<Option<MetricSample>, DirectoryError> {
        let candidates = self.registry.candidates(path, &[ProviderKind::Agent], self.now());
        if candidates.is_empty() {
            return Err(DirectoryError::NoProvider(path.clone()));
        }
        let mut failure = None;
        for entry in &candidates {
            match self.fetch_latest(entry, path, metric, 0) {
                Ok(Fetch::Hit(cell, _)) => {
                    self.cache.put(cell.clone());
                    return Ok(Some(cell.sample));
                }
                Ok(Fetch::Absent) => return Ok(None),
                Err(e) => failure = Some(e),
            }
        }
        Err(failure.expect("at least one candidate"))
    }
}

fn wire_error(e: DirectoryError) -> ErrorReply {
    let code = match &e {
        DirectoryError::InvalidTtl(_) => ErrorCode::InvalidTtl,
        DirectoryError::UnknownRegistration { .. } => ErrorCode::UnknownRegistration,
        DirectoryError::NoProvider(_) => ErrorCode::NoProvider,
        DirectoryError::UpstreamUnreachable(_) => ErrorCode::UpstreamUnreachable,
        DirectoryError::HopLimitExceeded => ErrorCode::HopLimitExceeded,
        DirectoryError::InvalidRange { .. } => ErrorCode::InvalidRange,
    };
    ErrorReply::new(code, e.to_string())
}

impl WireHandler for Directory {
    fn node(&self) -> String {
        self.node.clone()
    }

    fn now_ms(&self) -> u64 {
        self.now()
    }

    fn on_request(&self, req: &Message) -> Result<Reply, ErrorReply> {
        match req {
            Message::Register { subtree, kind, endpoint, ttl, .. } => {
                let expires = self.register(subtree.clone(), *kind, endpoint, *ttl).map_err(wire_error)?;
                Ok(Reply {
                    expires_at: Some(expires),
                    ..Reply::ok()
                })
            }
            Message::Renew { subtree, endpoint, .. } => {
                let expires = self.registry.renew(subtree, endpoint, self.now()).map_err(wire_error)?;
                Ok(Reply {
                    expires_at: Some(expires),
                    ..Reply::ok()
                })
            }
            Message::Deregister { subtree, endpoint, .. } => {
                self.registry.deregister(subtree, endpoint).map_err(wire_error)?;
                Ok(Reply::ok())
            }
            Message::QueryRegistry { .. } => Ok(Reply {
                entries: Some(self.registry.live(self.now()).iter().map(RegistryEntry::record).collect()),
                ..Reply::ok()
            }),
            Message::QueryLatest { p, m, hops, .. } => {
                let answer = self.query_latest(p, m, *hops).map_err(wire_error)?;
                Ok(Reply {
                    samples: Some(answer.sample.into_iter().collect()),
                    source: Some(answer.source),
                    stale: answer.stale.then_some(true),
                    fetched_at: answer.fetched_at,
                    ..Reply::ok()
                })
            }
            Message::QueryRange { p, m, from, to, hops, .. } => {
                let samples = self.query_history(p, m, *from, *to, *hops).map_err(wire_error)?;
                Ok(Reply {
                    samples: Some(samples),
                    ..Reply::ok()
                })
            }
            other => Err(ErrorReply::new(
                ErrorCode::Unsupported,
                format!("{} not supported by a directory", other.kind()),
            )),
        }
    }
}
