use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use tracing::{debug, info, warn};

use crate::clock::Clock;
use crate::model::{MetricName, MetricSample, ResourcePath, Value};
use crate::wire::{ClientError, ErrorCode, ErrorReply, Message, Reply, WireHandler};

use super::{OverheadLedger, Publisher, PublisherStats, Scheduler, Sensor, SensorError, Uplink};

const RECONNECT_BACKOFF_MS: u64 = 5_000;

/// Most recent sample per `(path, metric)` produced by this agent.
#[derive(Debug, Default)]
pub struct LatestTable {
    cells: RwLock<BTreeMap<(ResourcePath, MetricName), MetricSample>>,
}

impl LatestTable {
    pub fn update(&self, samples: &[MetricSample]) {
        let mut cells = self.cells.write().expect("latest lock");
        for s in samples {
            let key = (s.path().clone(), s.metric().clone());
            match cells.get(&key) {
                Some(cur) if cur.timestamp() > s.timestamp() => {}
                _ => {
                    cells.insert(key, s.clone());
                }
            }
        }
    }

    pub fn get(&self, path: &ResourcePath, metric: &MetricName) -> Option<MetricSample> {
        self.cells
            .read()
            .expect("latest lock")
            .get(&(path.clone(), metric.clone()))
            .cloned()
    }

    pub fn all(&self) -> Vec<MetricSample> {
        self.cells.read().expect("latest lock").values().cloned().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentStats {
    pub produced: u64,
    pub delivered: u64,
    pub spooled: u64,
    pub dropped: u64,
    pub sensor_errors: u64,
    pub overhead_pct: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TickReport {
    pub ran: Vec<String>,
    pub samples: Vec<MetricSample>,
    pub delivered: u64,
}

pub type Connector = Box<dyn FnMut() -> Result<Box<dyn Uplink>, ClientError> + Send>;

/// One host's sampling loop.
pub struct Agent {
    host: ResourcePath,
    sensors: Vec<Box<dyn Sensor>>,
    scheduler: Scheduler,
    publisher: Publisher,
    ledger: OverheadLedger,
    latest: Arc<LatestTable>,
    sensor_errors: u64,
    last_ts: BTreeMap<(ResourcePath, MetricName), u64>,
    last_self_emit: Option<u64>,
    self_ttl: u32,
    connector: Option<Connector>,
    next_reconnect: u64,
}

impl Agent {
    pub fn new(
        host: ResourcePath,
        sensors: Vec<Box<dyn Sensor>>,
        seed: u64,
        ledger: OverheadLedger,
        spool_capacity: usize,
    ) -> Self {
        let mut scheduler = Scheduler::new(seed);
        for s in &sensors {
            scheduler.add(s.spec().period_s, s.spec().jitter);
        }
        let self_ttl = sensors
            .iter()
            .map(|s| s.spec().sample_ttl())
            .min()
            .unwrap_or(90);
        Agent {
            host,
            sensors,
            scheduler,
            publisher: Publisher::new(spool_capacity),
            ledger,
            latest: Arc::new(LatestTable::default()),
            sensor_errors: 0,
            last_ts: BTreeMap::new(),
            last_self_emit: None,
            self_ttl,
            connector: None,
            next_reconnect: 0,
        }
    }

    pub fn host(&self) -> &ResourcePath {
        &self.host
    }

    pub fn latest(&self) -> Arc<LatestTable> {
        Arc::clone(&self.latest)
    }

    pub fn publisher(&self) -> &Publisher {
        &self.publisher
    }

    pub fn publisher_mut(&mut self) -> &mut Publisher {
        &mut self.publisher
    }

    pub fn ledger(&self) -> &OverheadLedger {
        &self.ledger
    }

    /// Reconnect hook, tried at most every few seconds while disconnected.
    pub fn set_connector(&mut self, connector: Connector) {
        self.connector = Some(connector);
    }

    pub fn next_due(&self) -> Option<u64> {
        self.scheduler.next_due()
    }

    pub fn stats(&self) -> AgentStats {
        let PublisherStats {
            produced,
            delivered,
            spooled,
            dropped,
        } = self.publisher.stats();
        AgentStats {
            produced,
            delivered,
            spooled,
            dropped,
            sensor_errors: self.sensor_errors,
            overhead_pct: self.ledger.percent(),
        }
    }

    fn reconnect(&mut self, now: u64) {
        if self.publisher.is_connected() || now < self.next_reconnect {
            return;
        }
        let Some(connect) = self.connector.as_mut() else {
            return;
        };
        match connect() {
            Ok(link) => {
                info!(host = %self.host, "uplink connected");
                self.publisher.attach(link);
                self.publisher.flush();
            }
            Err(e) => {
                debug!(error = %e, "uplink connect failed");
                self.next_reconnect = now + RECONNECT_BACKOFF_MS;
            }
        }
    }

    fn self_metrics(&self, now: u64) -> Vec<MetricSample> {
        let dropped = self.publisher.stats().dropped;
        [
            ("agent.overhead", self.ledger.percent()),
            ("agent.dropped_samples", dropped as f64),
            ("agent.sensor_errors", self.sensor_errors as f64),
        ]
        .into_iter()
        .map(|(m, v)| {
            MetricSample::new(
                self.host.clone(),
                MetricName::new(m).expect("static name"),
                now,
                Value::Number(v),
                self.self_ttl,
            )
            .expect("self metric is valid")
        })
        .collect()
    }

    /// Run every due sensor at `now` and publish the results.
    pub fn tick(&mut self, now: u64) -> TickReport {
        self.reconnect(now);
        let due = self.scheduler.tick(now);
        let mut report = TickReport::default();
        for slot in &due {
            let sensor = &mut self.sensors[*slot];
            let spec = sensor.spec();
            report.ran.push(spec.id.clone());
            let declared: Vec<MetricName> = spec.descriptors().into_iter().map(|d| d.name).collect();
            match sensor.read(&self.host, now) {
                Ok(reading) => {
                    self.sensor_errors += reading.errors as u64;
                    for s in reading.samples {
                        let key = (s.path().clone(), s.metric().clone());
                        let in_order = self.last_ts.get(&key).is_none_or(|t| s.timestamp() > *t);
                        if !declared.contains(s.metric()) || !in_order {
                            self.sensor_errors += 1;
                            continue;
                        }
                        self.last_ts.insert(key, s.timestamp());
                        report.samples.push(s);
                    }
                }
                Err(e) => {
                    let id = &self.sensors[*slot].spec().id;
                    match e {
                        SensorError::Unavailable(_) => warn!(sensor = %id, error = %e, "sensor unavailable"),
                        _ => debug!(sensor = %id, error = %e, "sensor read failed"),
                    }
                    self.sensor_errors += 1;
                }
            }
        }
        if !due.is_empty() && self.last_self_emit.is_none_or(|t| now > t) {
            self.ledger.record_cycle(now);
            self.last_self_emit = Some(now);
            report.samples.extend(self.self_metrics(now));
        }
        self.latest.update(&report.samples);
        report.delivered = self.publisher.publish(report.samples.clone());
        report
    }

    /// Drive the agent on `clock` until `until_ms` (if any) or `stop`.
    /// `on_tick` sees every non-empty tick.
    pub fn run(
        &mut self,
        clock: &dyn Clock,
        until_ms: Option<u64>,
        stop: &AtomicBool,
        mut on_tick: impl FnMut(&TickReport),
    ) {
        loop {
            let now = clock.now_ms();
            if stop.load(Ordering::Acquire) || until_ms.is_some_and(|u| now >= u) {
                return;
            }
            let report = self.tick(now);
            if !report.ran.is_empty() {
                on_tick(&report);
            }
            let mut wake = self.next_due().unwrap_or(now + 1000).min(now + 1000);
            if let Some(u) = until_ms {
                wake = wake.min(u);
            }
            clock.sleep_until(wake.max(now + 1));
        }
    }
}

/// Wire endpoint of an agent: answers `QUERY_LATEST` from the agent's
/// newest readings and streams samples to subscribers.
pub struct AgentEndpoint {
    node: String,
    clock: Arc<dyn Clock>,
    latest: Arc<LatestTable>,
}

impl AgentEndpoint {
    pub fn new(node: impl Into<String>, clock: Arc<dyn Clock>, latest: Arc<LatestTable>) -> Self {
        AgentEndpoint {
            node: node.into(),
            clock,
            latest,
        }
    }
}

impl WireHandler for AgentEndpoint {
    fn node(&self) -> String {
        self.node.clone()
    }

    fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn streams(&self) -> bool {
        true
    }

    fn on_request(&self, req: &Message) -> Result<Reply, ErrorReply> {
        match req {
            Message::QueryLatest { p, m, .. } => Ok(Reply {
                samples: Some(self.latest.get(p, m).into_iter().collect()),
                ..Reply::ok()
            }),
            other => Err(ErrorReply::new(
                ErrorCode::Unsupported,
                format!("{} not supported by an agent", other.kind()),
            )),
        }
    }
}
