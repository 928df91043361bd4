use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{Importer, MemoryStore};
use crate::clock::{Clock, SimClock};
use crate::directory::{Directory, LatestAnswer, LocalUpstream, MAX_FRESHNESS_S};
use crate::model::{MetricName, MetricSample, ResourcePath, Status, Value};
use crate::probe::{
    consistency_check, default_rules, run_cycle, Bound, HostTarget, LocalNet, Observed, ProbeConfig, SiteTarget, Snapshot,
    Timing,
};
use crate::sensor::{Agent, AgentEndpoint, OverheadLedger, Sensor};
use crate::wire::{DirectLink, ProviderKind, Role, WireClient, DEFAULT_AGENT_PORT, DEFAULT_ARCHIVE_PORT, DEFAULT_DIRECTORY_PORT};

use super::synth::SimSensor;
use super::{
    CycleSummary, FaultCheck, FaultKind, FaultSpec, SimConfig, SimError, SimResult, SimViolation, SIM_EPOCH_MS,
    SIM_RESULT_VERSION,
};

const MAX_RECORDED_VIOLATIONS: usize = 20;
const INFRA_TTL_S: u32 = 3_600;
const RENEW_EVERY_S: u64 = 300;

/// Event classes, in the order they run at equal times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    FaultEdge { fault: usize, start: bool },
    AgentTick { host: usize, gen: u64 },
    Renew,
    Query,
    ProbeCycle,
}

struct SimHost {
    site: usize,
    path: ResourcePath,
    endpoint: String,
    agent: Agent,
    gen: u64,
    down: bool,
    faults: Vec<usize>,
}

struct PendingCheck {
    check: FaultCheck,
    due_at: u64,
    end: u64,
    resolved: bool,
}

/// A configured simulation. [`Sim::run`] consumes it.
pub struct Sim {
    cfg: SimConfig,
    clock: Arc<SimClock>,
    net: Arc<LocalNet>,
    top: Arc<Directory>,
    site_dirs: Vec<(Arc<Directory>, String)>,
    importers: Vec<(Arc<Importer>, String)>,
    hosts: Vec<SimHost>,
    metrics: Vec<MetricName>,
    faults: Arc<Vec<(FaultSpec, u64, u64)>>,
    probe: ProbeConfig,
    queue: BinaryHeap<Reverse<(u64, Event, u64)>>,
    seq: u64,
    rng: ChaCha8Rng,
    /// Every sample each host produced, per metric, in time order.
    shadow: Vec<Vec<Vec<(u64, f64)>>>,
    checks: Vec<PendingCheck>,
    result: SimResult,
    end_ms: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn endpoint(name: &str, port: u16) -> String {
    format!("{}:{port}", name.replace('/', "."))
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let clock = Arc::new(SimClock::new(SIM_EPOCH_MS));
        let up = Arc::new(LocalUpstream::new());
        let net = Arc::new(LocalNet::new(up.clone(), cfg.link_latency_ms));
        let top = Arc::new(Directory::new("dir", clock.clone(), up.clone()));
        up.add(&endpoint("dir", DEFAULT_DIRECTORY_PORT), top.clone());

        let mut site_dirs = Vec::new();
        let mut importers = Vec::new();
        for site in &cfg.sites {
            let store = Arc::new(MemoryStore::new());
            let importer = Arc::new(Importer::new(format!("archive.{site}"), store, clock.clone()));
            let ep = endpoint(&format!("archive.{site}"), DEFAULT_ARCHIVE_PORT);
            up.add(&ep, importer.clone());
            importers.push((importer, ep));
            let dir = Arc::new(Directory::new(format!("dir.{site}"), clock.clone(), up.clone()));
            let ep = endpoint(&format!("dir.{site}"), DEFAULT_DIRECTORY_PORT);
            up.add(&ep, dir.clone());
            site_dirs.push((dir, ep));
        }

        let faults: Arc<Vec<(FaultSpec, u64, u64)>> = Arc::new(
            cfg.faults
                .iter()
                .map(|f| (f.clone(), SIM_EPOCH_MS + f.start_ms, SIM_EPOCH_MS + f.end_ms))
                .collect(),
        );
        let mut by_period: BTreeMap<u32, Vec<MetricName>> = BTreeMap::new();
        for m in &cfg.metrics {
            by_period.entry(m.period_s).or_default().push(m.name.clone());
        }
        let metrics: Vec<MetricName> = cfg.metrics.iter().map(|m| m.name.clone()).collect();
        let site_index: BTreeMap<&str, usize> = cfg.sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let mut hosts = Vec::with_capacity(cfg.n_hosts);
        for (i, (site, path)) in cfg.hosts().into_iter().enumerate() {
            let sensors: Vec<Box<dyn Sensor>> = by_period
                .iter()
                .map(|(period, names)| {
                    Box::new(SimSensor::new(&format!("sim{period}"), names, *period, cfg.jitter, cfg.seed, faults.clone()))
                        as Box<dyn Sensor>
                })
                .collect();
            let ledger = OverheadLedger::fixed(SIM_EPOCH_MS, cfg.overhead_charge_ms);
            let mut agent = Agent::new(path.clone(), sensors, splitmix(cfg.seed ^ i as u64), ledger, cfg.spool_capacity);
            let si = site_index[site.as_str()];
            let link = DirectLink::new(importers[si].0.clone());
            let client = WireClient::connect(link, Role::Producer, &path.to_string())
                .map_err(|e| SimError::InvalidConfig(format!("in-memory uplink failed: {e}")))?;
            agent.publisher_mut().attach(Box::new(client));
            let ep = endpoint(&path.to_string(), DEFAULT_AGENT_PORT);
            up.add(&ep, Arc::new(AgentEndpoint::new(path.to_string(), clock.clone(), agent.latest())));
            let host_faults = faults
                .iter()
                .enumerate()
                .filter(|(_, (f, _, _))| f.target.is_prefix_of(&path))
                .map(|(fi, _)| fi)
                .collect();
            hosts.push(SimHost {
                site: si,
                path,
                endpoint: ep,
                agent,
                gen: 0,
                down: false,
                faults: host_faults,
            });
        }

        let max_period = cfg.metrics.iter().map(|m| m.period_s).max().unwrap_or(30);
        let mut probe = ProbeConfig::new(
            endpoint("dir", DEFAULT_DIRECTORY_PORT),
            cfg.sites
                .iter()
                .enumerate()
                .map(|(si, site)| SiteTarget {
                    site: site.clone(),
                    hosts: hosts
                        .iter()
                        .filter(|h| h.site == si)
                        .map(|h| HostTarget {
                            host: h.path.clone(),
                            endpoint: h.endpoint.clone(),
                        })
                        .collect(),
                })
                .collect(),
        );
        probe.period_s = cfg.probe_period_s;
        probe.fanout = cfg.probe_fanout;
        probe.step_timeout_ms = cfg.step_timeout_ms;
        probe.metric_period_s = max_period;
        probe.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;

        let checks = fault_checks(&cfg, &faults, max_period);
        let result = SimResult {
            version: SIM_RESULT_VERSION,
            seed: cfg.seed,
            hosts: cfg.n_hosts,
            sites: cfg.sites.len(),
            duration_s: cfg.duration_s,
            produced: 0,
            delivered: 0,
            ingested: 0,
            duplicates: 0,
            rejected: 0,
            spooled: 0,
            dropped: 0,
            queries: 0,
            query_check_failures: 0,
            rollup_failures: 0,
            completeness_failures: 0,
            accounting_failures: 0,
            fault_visibility_failures: 0,
            fault_checks: Vec::new(),
            probe_snapshots: Vec::new(),
            violations: Vec::new(),
        };
        let n_metrics = metrics.len();
        let mut sim = Sim {
            end_ms: SIM_EPOCH_MS + cfg.duration_s * 1000,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed),
            shadow: vec![vec![Vec::new(); n_metrics]; hosts.len()],
            cfg,
            clock,
            net,
            top,
            site_dirs,
            importers,
            hosts,
            metrics,
            faults,
            probe,
            queue: BinaryHeap::new(),
            seq: 0,
            checks,
            result,
        };
        let t0 = SIM_EPOCH_MS;
        for fi in 0..sim.faults.len() {
            let (_, start, end) = sim.faults[fi];
            sim.push(start, Event::FaultEdge { fault: fi, start: true });
            sim.push(end, Event::FaultEdge { fault: fi, start: false });
        }
        sim.push(t0, Event::Renew);
        for h in 0..sim.hosts.len() {
            sim.push(t0, Event::AgentTick { host: h, gen: 0 });
        }
        sim.push(t0, Event::Query);
        sim.push(t0, Event::ProbeCycle);
        Ok(sim)
    }

    fn push(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, event, self.seq)));
    }

    fn violation(&mut self, check: &str, detail: String, trace: Vec<String>) {
        if self.result.violations.len() < MAX_RECORDED_VIOLATIONS {
            self.result.violations.push(SimViolation {
                check: check.to_string(),
                at_ms: self.clock.now_ms(),
                detail,
                trace,
            });
        }
    }

    fn active(&self, fi: usize, now: u64) -> bool {
        let (_, start, end) = self.faults[fi];
        start <= now && now < end
    }

    fn host_state(&mut self, h: usize, now: u64) {
        let mut down = false;
        let mut latency = 0;
        for &fi in &self.hosts[h].faults {
            if !self.active(fi, now) {
                continue;
            }
            let f = &self.faults[fi].0;
            match f.kind {
                FaultKind::HostDown => down = true,
                FaultKind::SlowEndpoint => latency = latency.max(f.added_latency_ms()),
                _ => {}
            }
        }
        let host = &mut self.hosts[h];
        self.net.upstream().set_down(&host.endpoint, down);
        self.net.set_extra_latency(&host.endpoint, latency);
        let was_down = std::mem::replace(&mut host.down, down);
        if was_down && !down {
            host.gen += 1;
            let gen = host.gen;
            self.push(now, Event::AgentTick { host: h, gen });
        }
    }

    fn on_tick(&mut self, h: usize, gen: u64, now: u64) {
        let host = &mut self.hosts[h];
        if host.gen != gen || host.down {
            return;
        }
        let report = host.agent.tick(now);
        for s in &report.samples {
            if let Some(mi) = self.metrics.iter().position(|m| m == s.metric()) {
                if s.path() == &host.path {
                    let v = s.value().as_f64().expect("simulated values are numeric");
                    self.shadow[h][mi].push((s.timestamp(), v));
                }
            }
        }
        if let Some(next) = host.agent.next_due() {
            host.gen += 1;
            let gen = host.gen;
            self.push(next, Event::AgentTick { host: h, gen });
        }
    }

    fn on_renew(&mut self, now: u64) {
        for (si, site) in self.cfg.sites.iter().enumerate() {
            let subtree = ResourcePath::parse(site).expect("site token");
            let (dir, dir_ep) = &self.site_dirs[si];
            dir.register(subtree.clone(), ProviderKind::Archive, &self.importers[si].1, INFRA_TTL_S)
                .expect("infra ttl valid");
            self.top
                .register(subtree, ProviderKind::Directory, dir_ep, INFRA_TTL_S)
                .expect("infra ttl valid");
        }
        for host in self.hosts.iter().filter(|h| !h.down) {
            self.site_dirs[host.site]
                .0
                .register(host.path.clone(), ProviderKind::Agent, &host.endpoint, self.cfg.agent_ttl_s)
                .expect("agent ttl validated");
        }
        self.top.sweep();
        for (d, _) in &self.site_dirs {
            d.sweep();
        }
        let every = RENEW_EVERY_S.min(self.cfg.agent_ttl_s as u64 / 2).max(1) * 1000;
        self.push(now + every, Event::Renew);
    }

    fn host_has_fault(&self, h: usize, now: u64) -> bool {
        self.hosts[h].faults.iter().any(|&fi| self.active(fi, now))
    }

    fn query_trace(&self, h: usize, mi: usize, now: u64, answer: &str) -> Vec<String> {
        let host = &self.hosts[h];
        let mut trace = vec![
            format!("seed {} hosts {} sites {}", self.cfg.seed, self.cfg.n_hosts, self.cfg.sites.len()),
            format!("query_latest({}, {}) at {now}", host.path, self.metrics[mi]),
            format!("answer: {answer}"),
        ];
        let window = 2 * MAX_FRESHNESS_S as u64 * 1000;
        let recent: Vec<String> = self.shadow[h][mi]
            .iter()
            .filter(|(t, _)| *t + window >= now && *t <= now)
            .map(|(t, v)| format!("{t}={v}"))
            .collect();
        trace.push(format!("produced in the last {} s: {}", window / 1000, recent.join(" ")));
        for &fi in &host.faults {
            let (f, s, e) = &self.faults[fi];
            trace.push(format!("fault {fi} {:?} on {} during [{s}, {e})", f.kind, f.target));
        }
        for entry in self.site_dirs[host.site].0.registry().live(now) {
            if entry.subtree.is_prefix_of(&host.path) {
                trace.push(format!(
                    "site registration {} {} {} until {}",
                    entry.subtree,
                    entry.kind.as_str(),
                    entry.endpoint,
                    entry.expires_at()
                ));
            }
        }
        trace
    }

    fn check_answer(&self, h: usize, mi: usize, now: u64, ans: &LatestAnswer) -> Result<(), String> {
        let produced = &self.shadow[h][mi];
        let visible = produced.partition_point(|(t, _)| *t <= now);
        let produced = &produced[..visible];
        let Some(s) = &ans.sample else {
            return match produced.last() {
                None => Ok(()),
                Some((t, _)) => Err(format!("absent although a sample at {t} exists")),
            };
        };
        let ts = s.timestamp();
        let Ok(i) = produced.binary_search_by_key(&ts, |(t, _)| *t) else {
            return Err(format!("sample at {ts} was never produced"));
        };
        if s.value() != &Value::Number(produced[i].1) {
            return Err(format!("value {} differs from produced {}", s.value(), produced[i].1));
        }
        if ans.stale {
            return if self.host_has_fault(h, now) {
                Ok(())
            } else {
                Err("stale answer without any fault".into())
            };
        }
        let freshness = s.ttl().min(MAX_FRESHNESS_S) as u64 * 1000;
        let bound = now.saturating_sub(freshness);
        let newest_due = produced.partition_point(|(t, _)| *t <= bound);
        if newest_due > 0 && produced[newest_due - 1].0 > ts {
            return Err(format!(
                "answer at {ts} older than {} which was produced before the freshness window",
                produced[newest_due - 1].0
            ));
        }
        Ok(())
    }

    fn on_query(&mut self, now: u64) {
        for _ in 0..self.cfg.queries_per_round {
            let h = self.rng.gen_range(0..self.hosts.len());
            let mi = self.rng.gen_range(0..self.metrics.len());
            self.result.queries += 1;
            let outcome = self.top.query_latest(&self.hosts[h].path, &self.metrics[mi], 0);
            let verdict = match &outcome {
                Ok(ans) => self.check_answer(h, mi, now, ans),
                Err(e) => Err(format!("query failed: {e}")),
            };
            if let Err(detail) = verdict {
                self.result.query_check_failures += 1;
                let answer = match &outcome {
                    Ok(a) => format!("{:?} stale={} source={:?}", a.sample.as_ref().map(MetricSample::timestamp), a.stale, a.source),
                    Err(e) => e.to_string(),
                };
                let trace = self.query_trace(h, mi, now, &answer);
                self.violation("shadow_model", detail, trace);
            }
        }
        self.push(now + self.cfg.query_interval_s * 1000, Event::Query);
    }

    fn on_probe(&mut self, now: u64, on_snapshot: &mut dyn FnMut(&Snapshot)) {
        let number = self.result.probe_snapshots.len() as u64 + 1;
        let snap = run_cycle(&self.probe, self.net.as_ref(), self.clock.as_ref(), Timing::Virtual, number);
        if !snap.is_coherent() {
            self.result.rollup_failures += 1;
            self.violation("rollup", format!("cycle {number} has an incoherent rollup"), vec![]);
        }
        let got: Vec<&ResourcePath> = snap.hosts().map(|h| &h.host).collect();
        let mut sorted = got.clone();
        sorted.sort();
        sorted.dedup();
        if got.len() != self.hosts.len() || sorted.len() != got.len() || self.hosts.iter().any(|h| snap.host(&h.path).is_none()) {
            self.result.completeness_failures += 1;
            self.violation("completeness", format!("cycle {number} reports {} of {} hosts", got.len(), self.hosts.len()), vec![]);
        }
        self.evaluate_fault_checks(&snap, now);
        let mut counts = BTreeMap::new();
        for h in snap.hosts() {
            *counts.entry(h.combined).or_insert(0) += 1;
        }
        self.result.probe_snapshots.push(CycleSummary {
            number,
            started_at: snap.cycle.started_at,
            finished_at: snap.cycle.finished_at,
            hosts: counts,
            sites: snap.sites.iter().map(|s| (s.site.clone(), s.combined)).collect(),
        });
        on_snapshot(&snap);
        self.push(now + self.cfg.probe_period_s as u64 * 1000, Event::ProbeCycle);
    }

    fn evaluate_fault_checks(&mut self, snap: &Snapshot, now: u64) {
        let mut failures = Vec::new();
        for pc in self.checks.iter_mut().filter(|c| !c.resolved && c.due_at <= now && now < c.end) {
            pc.resolved = true;
            pc.check.cycle = Some(snap.cycle.number);
            let Some(expected) = pc.check.expected else {
                pc.check.visible = true;
                continue;
            };
            let target = &self.faults[pc.check.fault].0.target;
            let mut offenders = Vec::new();
            for h in snap.hosts().filter(|h| target.is_prefix_of(&h.host)) {
                if h.combined < expected {
                    offenders.push(format!("{} is {} (steps {:?})", h.host, h.combined, h.steps.iter().map(|s| s.status).collect::<Vec<_>>()));
                }
            }
            pc.check.visible = offenders.is_empty();
            if !offenders.is_empty() {
                failures.push((pc.check.clone(), offenders));
            }
        }
        for (check, offenders) in failures {
            self.result.fault_visibility_failures += 1;
            let (f, s, e) = &self.faults[check.fault];
            let mut trace = vec![format!("fault {} {:?} on {} during [{s}, {e}) param {:?}", check.fault, f.kind, f.target, f.param)];
            trace.extend(offenders.into_iter().take(5));
            self.violation(
                "fault_visibility",
                format!("fault {} not reflected as {:?} in cycle {:?}", check.fault, check.expected, check.cycle),
                trace,
            );
        }
    }

    fn finish(&mut self) {
        for (i, host) in self.hosts.iter().enumerate() {
            let st = host.agent.publisher().stats();
            self.result.produced += st.produced;
            self.result.delivered += st.delivered;
            self.result.spooled += st.spooled;
            self.result.dropped += st.dropped;
            if !st.balanced() {
                self.result.accounting_failures += 1;
                if self.result.violations.len() < MAX_RECORDED_VIOLATIONS {
                    self.result.violations.push(SimViolation {
                        check: "accounting".into(),
                        at_ms: self.end_ms,
                        detail: format!("host {i} {}: {st:?} does not balance", host.path),
                        trace: vec![],
                    });
                }
            }
        }
        for (imp, _) in &self.importers {
            let c = imp.counters();
            self.result.ingested += c.ingested;
            self.result.duplicates += c.duplicates;
            self.result.rejected += c.rejected;
        }
        let landed = self.result.ingested + self.result.duplicates + self.result.rejected;
        if landed != self.result.delivered {
            self.result.accounting_failures += 1;
            self.violation(
                "accounting",
                format!("delivered {} but importers saw {landed}", self.result.delivered),
                vec![format!(
                    "ingested {} duplicates {} rejected {}",
                    self.result.ingested, self.result.duplicates, self.result.rejected
                )],
            );
        }
        self.result.fault_checks = self.checks.iter().map(|c| c.check.clone()).collect();
    }

    /// Run to the configured duration. `on_snapshot` sees every probe
    /// snapshot as it is produced.
    pub fn run(mut self, mut on_snapshot: impl FnMut(&Snapshot)) -> SimResult {
        while let Some(Reverse((at, event, _))) = self.queue.pop() {
            if at >= self.end_ms {
                break;
            }
            self.clock.advance_to(at);
            match event {
                Event::FaultEdge { fault, .. } => {
                    let targets: Vec<usize> = (0..self.hosts.len()).filter(|h| self.hosts[*h].faults.contains(&fault)).collect();
                    for h in targets {
                        self.host_state(h, at);
                    }
                }
                Event::AgentTick { host, gen } => self.on_tick(host, gen, at),
                Event::Renew => self.on_renew(at),
                Event::Query => self.on_query(at),
                Event::ProbeCycle => self.on_probe(at, &mut on_snapshot),
            }
        }
        self.clock.advance_to(self.end_ms);
        self.finish();
        self.result
    }
}

fn fault_checks(cfg: &SimConfig, faults: &[(FaultSpec, u64, u64)], max_period: u32) -> Vec<PendingCheck> {
    let rules = default_rules(max_period);
    faults
        .iter()
        .enumerate()
        .map(|(i, (f, start, end))| {
            let period_ms = |m: &Option<MetricName>| -> u64 {
                cfg.metrics
                    .iter()
                    .filter(|sm| m.as_ref().is_none_or(|x| *x == sm.name))
                    .map(|sm| sm.period_s as u64 * 1000)
                    .max()
                    .unwrap_or(30_000)
            };
            let (expected, due_at) = match f.kind {
                FaultKind::HostDown => (Some(Status::Unreachable), *start),
                FaultKind::SlowEndpoint if f.added_latency_ms() > cfg.step_timeout_ms => (Some(Status::Unreachable), *start),
                FaultKind::SlowEndpoint => (None, *start),
                FaultKind::StaleMetrics => (Some(Status::Warn), start + 3 * max_period as u64 * 1000 + 1),
                FaultKind::OutOfRange => {
                    let p = period_ms(&f.metric);
                    let settle = (p as f64 * (1.0 + cfg.jitter)).ceil() as u64 + (p * 3).min(MAX_FRESHNESS_S as u64 * 1000);
                    let mut worst: Option<Status> = None;
                    for sm in cfg.metrics.iter().filter(|sm| f.metric.as_ref().is_none_or(|x| *x == sm.name)) {
                        let probe = MetricSample::new(
                            ResourcePath::parse("x").expect("static path"),
                            sm.name.clone(),
                            SIM_EPOCH_MS,
                            Value::Number(f.injected_value()),
                            90,
                        )
                        .expect("finite injected value");
                        let obs = [Observed { sample: probe, stale: false }];
                        for v in consistency_check(&obs, &rules, SIM_EPOCH_MS) {
                            if matches!(rules[v.rule].bound, Bound::Range { .. }) {
                                worst = worst.max(Some(v.on_violation.status()));
                            }
                        }
                    }
                    (worst, start + settle)
                }
            };
            PendingCheck {
                check: FaultCheck {
                    fault: i,
                    kind: f.kind,
                    cycle: None,
                    expected,
                    visible: false,
                },
                due_at,
                end: *end,
                resolved: false,
            }
        })
        .collect()
}

/// Build and run `config`.
pub fn run_sim(config: SimConfig) -> Result<SimResult, SimError> {
    Ok(Sim::new(config)?.run(|_| {}))
}
