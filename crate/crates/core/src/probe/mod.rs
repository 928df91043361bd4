//! Probe daemon: periodic test sequences against every configured host,
//! consistency checks on the values the directory reports, worst-of status
//! rollup per host and site, and atomic snapshot publication.

mod cycle;
mod net;
mod publish;
mod rules;
mod steps;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{combine_status, MetricName, ResourcePath, Status};

pub use cycle::{run_cycle, Prober, Timing};
pub use net::{LocalNet, NetOutcome, ProbeNet, TcpNet};
pub use publish::{publish_snapshot, transcript_ref, PublishReport, PREV_FILE, SNAPSHOT_FILE};
pub use rules::{consistency_check, default_rules, Bound, ConsistencyRule, Observed, Severity, Violation, ViolationKind};
pub use steps::{run_test_sequence, run_test_sequence_at, StepKind, StepSpec};

/// Version stamped into every snapshot and every HTTP JSON body.
pub const SNAPSHOT_SCHEMA: u32 = 1;
pub const DEFAULT_CYCLE_PERIOD_S: u32 = 300;
pub const DEFAULT_FANOUT: usize = 16;
pub const DEFAULT_STEP_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure at {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestStep {
    pub name: String,
    pub status: Status,
    pub started_at: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_ref: Option<String>,
    #[serde(skip)]
    pub transcript: Vec<String>,
}

/// Dynamic values shown in the text view.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HostValues {
    pub cpu_load1: Option<f64>,
    pub uptime_s: Option<f64>,
    pub idle_s: Option<f64>,
    pub sampled_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostReport {
    pub host: ResourcePath,
    pub combined: Status,
    pub values: HostValues,
    pub steps: Vec<TestStep>,
}

impl HostReport {
    pub fn is_coherent(&self) -> bool {
        self.combined == combine_status(self.steps.iter().map(|s| s.status))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site: String,
    pub combined: Status,
    pub cycle_started_at: u64,
    pub hosts: Vec<HostReport>,
}

impl SiteReport {
    pub fn is_coherent(&self) -> bool {
        self.combined == combine_status(self.hosts.iter().map(|h| h.combined))
            && self.hosts.iter().all(HostReport::is_coherent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMeta {
    pub number: u64,
    pub started_at: u64,
    pub finished_at: u64,
    pub period_s: u32,
    pub fanout: usize,
    pub hosts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema: u32,
    pub cycle: CycleMeta,
    pub sites: Vec<SiteReport>,
}

impl Snapshot {
    /// Every combined status equals the worst of its children.
    pub fn is_coherent(&self) -> bool {
        self.sites.iter().all(SiteReport::is_coherent)
    }

    pub fn site(&self, name: &str) -> Option<&SiteReport> {
        self.sites.iter().find(|s| s.site == name)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &HostReport> {
        self.sites.iter().flat_map(|s| s.hosts.iter())
    }

    pub fn host(&self, host: &ResourcePath) -> Option<&HostReport> {
        self.hosts().find(|h| &h.host == host)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("snapshot serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostTarget {
    pub host: ResourcePath,
    /// Agent wire endpoint, `host:port`.
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteTarget {
    pub site: String,
    pub hosts: Vec<HostTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Directory endpoint queried for dynamic values.
    pub directory: String,
    pub sites: Vec<SiteTarget>,
    #[serde(default = "default_period")]
    pub period_s: u32,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    #[serde(default = "default_step_timeout")]
    pub step_timeout_ms: u64,
    /// Sampling period assumed by the default staleness rules.
    #[serde(default = "default_metric_period")]
    pub metric_period_s: u32,
    /// Step sequence run against each host; empty means the default one.
    #[serde(default)]
    pub steps: Vec<StepKind>,
}

fn default_period() -> u32 {
    DEFAULT_CYCLE_PERIOD_S
}
fn default_fanout() -> usize {
    DEFAULT_FANOUT
}
fn default_step_timeout() -> u64 {
    DEFAULT_STEP_TIMEOUT_MS
}
fn default_metric_period() -> u32 {
    30
}

impl ProbeConfig {
    pub fn new(directory: impl Into<String>, sites: Vec<SiteTarget>) -> Self {
        ProbeConfig {
            directory: directory.into(),
            sites,
            period_s: DEFAULT_CYCLE_PERIOD_S,
            fanout: DEFAULT_FANOUT,
            step_timeout_ms: DEFAULT_STEP_TIMEOUT_MS,
            metric_period_s: 30,
            steps: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidConfig(m));
        if self.period_s == 0 {
            return bad("period_s must be positive".into());
        }
        if self.fanout == 0 {
            return bad("fanout must be positive".into());
        }
        if self.step_timeout_ms == 0 {
            return bad("step_timeout_ms must be positive".into());
        }
        let mut sites = BTreeSet::new();
        let mut hosts = BTreeSet::new();
        for s in &self.sites {
            if MetricName::new(&s.site).is_err() {
                return bad(format!("site name {:?} is not a token", s.site));
            }
            if !sites.insert(s.site.as_str()) {
                return bad(format!("site {} listed twice", s.site));
            }
            for h in &s.hosts {
                if !hosts.insert(&h.host) {
                    return bad(format!("host {} listed twice", h.host));
                }
            }
        }
        for step in &self.steps {
            step.validate().map_err(ProbeError::InvalidConfig)?;
        }
        Ok(())
    }

    /// Step templates in effect.
    pub fn sequence(&self) -> Vec<StepKind> {
        if self.steps.is_empty() {
            return StepKind::default_sequence(self.metric_period_s);
        }
        self.steps
            .iter()
            .map(|s| match s {
                StepKind::Consistency { rules } if rules.is_empty() => StepKind::Consistency {
                    rules: default_rules(self.metric_period_s),
                },
                other => other.clone(),
            })
            .collect()
    }

    /// Concrete steps for one host.
    pub fn steps_for(&self, target: &HostTarget) -> Vec<StepSpec> {
        self.sequence()
            .into_iter()
            .map(|kind| StepSpec {
                kind,
                host: target.host.clone(),
                agent: target.endpoint.clone(),
                directory: self.directory.clone(),
                timeout_ms: self.step_timeout_ms,
            })
            .collect()
    }

    pub fn host_count(&self) -> usize {
        self.sites.iter().map(|s| s.hosts.len()).sum()
    }
}
