//! Host sensors and the per-host agent that schedules and publishes them.

mod agent;
mod builtin;
mod external;
mod overhead;
mod publish;
mod schedule;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MetricDescriptor, MetricKind, MetricSample, ModelError, ResourcePath};

pub use agent::{Agent, AgentEndpoint, AgentStats, LatestTable, TickReport};
pub use builtin::{measure_rtt, BuiltinSensor};
pub use external::{run_external, ExternalSensor};
pub use overhead::{process_cpu_ms, OverheadLedger};
pub use publish::{Publisher, PublisherStats, Uplink};
pub use schedule::Scheduler;
pub use synthetic::{synth_unit, SyntheticSensor};

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("sensor unavailable: {0}")]
    Unavailable(String),
    #[error("sensor read failed: {0}")]
    ReadFailure(String),
    #[error("invalid sensor spec {id}: {reason}")]
    InvalidSpec { id: String, reason: String },
}

impl SensorError {
    fn spec(id: &str, reason: impl Into<String>) -> Self {
        SensorError::InvalidSpec {
            id: id.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<ModelError> for SensorError {
    fn from(e: ModelError) -> Self {
        SensorError::ReadFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    CpuLoad,
    Memory,
    Disk,
    UptimeIdle,
    NetRtt,
    External,
}

impl SensorKind {
    pub const BUILTIN: [SensorKind; 5] = [
        SensorKind::CpuLoad,
        SensorKind::Memory,
        SensorKind::Disk,
        SensorKind::UptimeIdle,
        SensorKind::NetRtt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::CpuLoad => "cpu_load",
            SensorKind::Memory => "memory",
            SensorKind::Disk => "disk",
            SensorKind::UptimeIdle => "uptime_idle",
            SensorKind::NetRtt => "net_rtt",
            SensorKind::External => "external",
        }
    }

    /// Metric names a builtin kind emits.
    pub fn metric_names(self) -> &'static [&'static str] {
        match self {
            SensorKind::CpuLoad => &["cpu.load1", "cpu.load5", "cpu.load15"],
            SensorKind::Memory => &["mem.used_bytes", "mem.total_bytes", "mem.used_pct"],
            SensorKind::Disk => &["disk.used_bytes", "disk.total_bytes"],
            SensorKind::UptimeIdle => &["sys.uptime_s", "sys.idle_s"],
            SensorKind::NetRtt => &["net.rtt_ms"],
            SensorKind::External => &[],
        }
    }

    fn units(metric: &str) -> &'static str {
        if metric.ends_with("_bytes") {
            "bytes"
        } else if metric.ends_with("_pct") {
            "percent"
        } else if metric.ends_with("_s") {
            "s"
        } else if metric.ends_with("_ms") {
            "ms"
        } else {
            ""
        }
    }
}

fn default_period() -> u32 {
    30
}

fn default_jitter() -> f64 {
    0.1
}

fn default_timeout() -> u32 {
    10
}

fn default_mounts() -> Vec<String> {
    vec!["/".into()]
}

/// One configured sensor.
///
/// ```toml
/// [[agent.sensors]]
/// id = "load"
/// kind = "cpu_load"
/// period_s = 30
/// jitter = 0.1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    /// Use the deterministic synthetic reader instead of the host.
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default = "default_period")]
    pub period_s: u32,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_mounts")]
    pub mounts: Vec<String>,
    #[serde(default)]
    pub peer: Option<String>,
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u32,
    /// Declared metrics; required for external sensors, derived otherwise.
    #[serde(default)]
    pub metrics: Vec<MetricDescriptor>,
}

impl SensorSpec {
    pub fn builtin(id: &str, kind: SensorKind, period_s: u32, jitter: f64) -> Self {
        SensorSpec {
            id: id.to_string(),
            kind,
            synthetic: false,
            period_s,
            jitter,
            mounts: default_mounts(),
            peer: None,
            program: None,
            args: Vec::new(),
            timeout_s: default_timeout(),
            metrics: Vec::new(),
        }
    }

    pub fn synthetic(mut self) -> Self {
        self.synthetic = true;
        self
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if crate::model::MetricName::new(&self.id).is_err() {
            return Err(SensorError::spec(&self.id, "id must be a token"));
        }
        if self.period_s < 1 {
            return Err(SensorError::spec(&self.id, "period must be at least 1 s"));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return Err(SensorError::spec(&self.id, "jitter must lie in [0, 0.5]"));
        }
        match self.kind {
            SensorKind::External => {
                let program = self
                    .program
                    .as_deref()
                    .ok_or_else(|| SensorError::spec(&self.id, "external sensor needs a program"))?;
                if !std::path::Path::new(program).is_absolute() {
                    return Err(SensorError::spec(&self.id, "program path must be absolute"));
                }
                if self.metrics.is_empty() {
                    return Err(SensorError::spec(&self.id, "external sensor must declare metrics"));
                }
                if self.timeout_s == 0 {
                    return Err(SensorError::spec(&self.id, "timeout must be positive"));
                }
            }
            SensorKind::NetRtt if !self.synthetic && self.peer.is_none() => {
                return Err(SensorError::spec(&self.id, "net_rtt needs a peer"));
            }
            SensorKind::Disk if self.mounts.is_empty() => {
                return Err(SensorError::spec(&self.id, "disk needs at least one mount"));
            }
            _ => {}
        }
        for d in &self.metrics {
            d.check().map_err(|e| SensorError::spec(&self.id, e.to_string()))?;
        }
        Ok(())
    }

    /// Sample TTL: three periods, matching the default staleness rule.
    pub fn sample_ttl(&self) -> u32 {
        self.period_s.saturating_mul(3)
    }

    pub fn descriptors(&self) -> Vec<MetricDescriptor> {
        if !self.metrics.is_empty() {
            return self.metrics.clone();
        }
        self.kind
            .metric_names()
            .iter()
            .map(|name| {
                MetricDescriptor::new(
                    name,
                    MetricKind::Gauge,
                    SensorKind::units(name),
                    self.period_s,
                    self.sample_ttl(),
                )
                .expect("builtin descriptor is valid")
            })
            .collect()
    }
}

/// Output of one sensor read.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Reading {
    pub samples: Vec<MetricSample>,
    /// Lines or values that had to be skipped.
    pub errors: u32,
}

pub trait Sensor: Send {
    fn spec(&self) -> &SensorSpec;

    fn read(&mut self, host: &ResourcePath, now_ms: u64) -> Result<Reading, SensorError>;
}

/// Construct the reader for `spec`. `seed` only feeds synthetic readers.
pub fn build_sensor(spec: &SensorSpec, seed: u64) -> Result<Box<dyn Sensor>, SensorError> {
    spec.validate()?;
    Ok(match (spec.kind, spec.synthetic) {
        (SensorKind::External, _) => Box::new(ExternalSensor::new(spec.clone())),
        (_, true) => Box::new(SyntheticSensor::new(spec.clone(), seed)),
        (_, false) => Box::new(BuiltinSensor::new(spec.clone())?),
    })
}

/// Path for a disk mount: `<host>/<mount token>` with `/` → `root`.
pub fn mount_path(host: &ResourcePath, mount: &str) -> Result<ResourcePath, ModelError> {
    let trimmed = mount.trim_matches('/');
    let token: String = if trimmed.is_empty() {
        "root".into()
    } else {
        trimmed
            .chars()
            .map(|c| match c {
                '/' => '.',
                c if c.is_ascii_alphanumeric() || c == '-' || c == '.' => c.to_ascii_lowercase(),
                _ => '-',
            })
            .collect()
    };
    host.child(&token)
}

#[cfg(test)]
mod tests;
