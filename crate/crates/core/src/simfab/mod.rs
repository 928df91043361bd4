//! Deterministic simulated fabric.
//!
//! Synthetic hosts run real [`Agent`](crate::sensor::Agent)s that publish
//! over in-memory wire links to per-site importers. Each site has its own
//! directory, federated under a top directory that the probe daemon and the
//! shadow-model queries talk to. A discrete event queue drives everything
//! on one [`SimClock`](crate::clock::SimClock), so a given config and seed
//! always replays the same run.

mod engine;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MetricName, ResourcePath, Status};

pub use engine::{run_sim, Sim};
pub use synth::{plausible_range, synth_value, SimSensor, SIM_METRICS};

/// Version of the [`SimResult`] report layout.
pub const SIM_RESULT_VERSION: u32 = 1;
/// Simulated start of every run, UTC ms.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    InvalidConfig(String),
    #[error("{count} invariant violation(s); first: {first}")]
    InvariantViolation { count: u64, first: Box<SimViolation> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Host powered off: no sampling, agent endpoint unreachable.
    HostDown,
    /// Sensors stop delivering new values.
    StaleMetrics,
    /// Sensors report `param` (default 250) instead of the real value.
    OutOfRange,
    /// Agent endpoint answers `param` ms (default 10000) late.
    SlowEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Every host under this path prefix is affected.
    pub target: ResourcePath,
    /// Window `[start_ms, end_ms)`, relative to the start of the run.
    pub start_ms: u64,
    pub end_ms: u64,
    /// Restricts value faults to one metric; all metrics when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<f64>,
}

impl FaultSpec {
    pub fn injected_value(&self) -> f64 {
        self.param.unwrap_or(250.0)
    }

    pub fn added_latency_ms(&self) -> u64 {
        self.param.unwrap_or(10_000.0).max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMetric {
    pub name: MetricName,
    #[serde(default = "default_metric_period")]
    pub period_s: u32,
}

fn default_metric_period() -> u32 {
    30
}

fn default_sites() -> Vec<String> {
    ["anl", "bnl", "bu", "iu", "lbl", "ou", "um", "uta"].map(String::from).to_vec()
}

fn default_metrics() -> Vec<SimMetric> {
    SIM_METRICS
        .iter()
        .map(|m| SimMetric {
            name: MetricName::new(m).expect("static name"),
            period_s: 30,
        })
        .collect()
}

fn default_seed() -> u64 {
    1
}
fn default_jitter() -> f64 {
    0.1
}
fn default_probe_period() -> u32 {
    300
}
fn default_fanout() -> usize {
    16
}
fn default_step_timeout() -> u64 {
    5_000
}
fn default_latency() -> u64 {
    1
}
fn default_query_interval() -> u64 {
    60
}
fn default_queries() -> usize {
    16
}
fn default_spool() -> usize {
    1024
}
fn default_agent_ttl() -> u32 {
    600
}
fn default_overhead_charge() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub n_hosts: usize,
    /// Hosts are split into contiguous, near-equal blocks, one per site.
    #[serde(default = "default_sites")]
    pub sites: Vec<String>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<SimMetric>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Simulated run length in seconds.
    pub duration_s: u64,
    #[serde(default = "default_probe_period")]
    pub probe_period_s: u32,
    #[serde(default = "default_fanout")]
    pub probe_fanout: usize,
    #[serde(default = "default_step_timeout")]
    pub step_timeout_ms: u64,
    /// One-way cost of every in-memory call as seen by the probe.
    #[serde(default = "default_latency")]
    pub link_latency_ms: u64,
    #[serde(default = "default_query_interval")]
    pub query_interval_s: u64,
    #[serde(default = "default_queries")]
    pub queries_per_round: usize,
    #[serde(default = "default_spool")]
    pub spool_capacity: usize,
    #[serde(default = "default_agent_ttl")]
    pub agent_ttl_s: u32,
    /// Simulated CPU charged to each agent per sampling cycle.
    #[serde(default = "default_overhead_charge")]
    pub overhead_charge_ms: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl SimConfig {
    pub fn new(n_hosts: usize, sites: usize, duration_s: u64, seed: u64) -> Self {
        let mut names = default_sites();
        names.truncate(sites);
        for i in names.len()..sites {
            names.push(format!("site{i}"));
        }
        SimConfig {
            seed,
            n_hosts,
            sites: names,
            metrics: default_metrics(),
            jitter: default_jitter(),
            duration_s,
            probe_period_s: default_probe_period(),
            probe_fanout: default_fanout(),
            step_timeout_ms: default_step_timeout(),
            link_latency_ms: default_latency(),
            query_interval_s: default_query_interval(),
            queries_per_round: default_queries(),
            spool_capacity: default_spool(),
            agent_ttl_s: default_agent_ttl(),
            overhead_charge_ms: default_overhead_charge(),
            faults: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.sites.is_empty() {
            return bad("at least one site".into());
        }
        if self.n_hosts < self.sites.len() {
            return bad(format!("{} hosts cannot fill {} sites", self.n_hosts, self.sites.len()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.sites {
            if MetricName::new(s).is_err() || s.contains('.') {
                return bad(format!("site name {s:?} must be a plain token"));
            }
            if !seen.insert(s) {
                return bad(format!("site {s} listed twice"));
            }
        }
        if self.duration_s == 0 {
            return bad("duration_s must be positive".into());
        }
        if self.metrics.is_empty() {
            return bad("at least one metric".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.metrics {
            if !SIM_METRICS.contains(&m.name.as_str()) {
                return bad(format!("{} is not a simulated metric; choose from {SIM_METRICS:?}", m.name));
            }
            if m.period_s == 0 {
                return bad(format!("{}: period must be at least 1 s", m.name));
            }
            if !names.insert(&m.name) {
                return bad(format!("metric {} listed twice", m.name));
            }
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.5]".into());
        }
        if self.probe_period_s == 0 || self.probe_fanout == 0 || self.step_timeout_ms == 0 {
            return bad("probe period, fanout and step timeout must be positive".into());
        }
        if self.query_interval_s == 0 {
            return bad("query_interval_s must be positive".into());
        }
        if !(crate::directory::MIN_TTL_S..=crate::directory::MAX_TTL_S).contains(&self.agent_ttl_s) {
            return bad(format!("agent_ttl_s {} outside [5, 86400]", self.agent_ttl_s));
        }
        let duration_ms = self.duration_s * 1000;
        for (i, f) in self.faults.iter().enumerate() {
            if f.start_ms >= f.end_ms || f.end_ms > duration_ms {
                return bad(format!("fault {i}: window [{}, {}) must be non-empty and within the run", f.start_ms, f.end_ms));
            }
            if let Some(m) = &f.metric {
                if !names.contains(m) {
                    return bad(format!("fault {i}: metric {m} is not simulated"));
                }
            }
            if f.param.is_some_and(|p| !p.is_finite()) {
                return bad(format!("fault {i}: param must be finite"));
            }
        }
        Ok(())
    }

    /// `(site, host path)` for every simulated host, in host index order.
    pub fn hosts(&self) -> Vec<(String, ResourcePath)> {
        let n_sites = self.sites.len();
        let mut out = Vec::with_capacity(self.n_hosts);
        let mut next = 0;
        for (si, site) in self.sites.iter().enumerate() {
            let count = self.n_hosts / n_sites + usize::from(si < self.n_hosts % n_sites);
            for _ in 0..count {
                let path = ResourcePath::parse(&format!("{site}/farm/n{next:04}")).expect("valid host path");
                out.push((site.clone(), path));
                next += 1;
            }
        }
        out
    }
}

/// Condensed view of one probe cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub number: u64,
    pub started_at: u64,
    pub finished_at: u64,
    pub hosts: BTreeMap<Status, usize>,
    pub sites: BTreeMap<String, Status>,
}

/// One failed check, with the events that decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimViolation {
    pub check: String,
    pub at_ms: u64,
    pub detail: String,
    pub trace: Vec<String>,
}

impl std::fmt::Display for SimViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.check, self.at_ms, self.detail)?;
        for line in &self.trace {
            write!(f, "\n  {line}")?;
        }
        Ok(())
    }
}

/// Outcome of a fault-visibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultCheck {
    pub fault: usize,
    pub kind: FaultKind,
    /// Probe cycle the fault had to show up in; `None` when no cycle
    /// started inside the window.
    pub cycle: Option<u64>,
    pub expected: Option<Status>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub version: u32,
    pub seed: u64,
    pub hosts: usize,
    pub sites: usize,
    pub duration_s: u64,
    pub produced: u64,
    pub delivered: u64,
    pub ingested: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub spooled: u64,
    pub dropped: u64,
    pub queries: u64,
    pub query_check_failures: u64,
    pub rollup_failures: u64,
    pub completeness_failures: u64,
    pub accounting_failures: u64,
    pub fault_visibility_failures: u64,
    pub fault_checks: Vec<FaultCheck>,
    pub probe_snapshots: Vec<CycleSummary>,
    /// First violations found, capped.
    pub violations: Vec<SimViolation>,
}

impl SimResult {
    pub fn failures(&self) -> u64 {
        self.query_check_failures
            + self.rollup_failures
            + self.completeness_failures
            + self.accounting_failures
            + self.fault_visibility_failures
    }

    /// `Err` with the first violation's trace if any check failed.
    pub fn verify(&self) -> Result<(), SimError> {
        match self.violations.first() {
            None if self.failures() == 0 => Ok(()),
            first => Err(SimError::InvariantViolation {
                count: self.failures(),
                first: Box::new(first.cloned().unwrap_or_else(|| SimViolation {
                    check: "unknown".into(),
                    at_ms: 0,
                    detail: "failure counted without a recorded violation".into(),
                    trace: Vec::new(),
                })),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests;
