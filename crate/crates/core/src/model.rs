//! Shared domain vocabulary: resource paths, metric names and descriptors,
//! samples, and the status scale used by every rollup.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum number of components in a [`ResourcePath`].
pub const MAX_PATH_DEPTH: usize = 8;

const MAX_TOKEN_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed path {input:?}: {reason}")]
    MalformedPath { input: String, reason: String },
    #[error("invalid metric name {0:?}")]
    InvalidMetricName(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("invalid descriptor {name}: {reason}")]
    InvalidDescriptor { name: String, reason: String },
}

fn is_token(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.is_empty() || bytes.len() > MAX_TOKEN_LEN {
        return false;
    }
    let lead_ok = bytes[0].is_ascii_lowercase() || bytes[0].is_ascii_digit();
    lead_ok
        && bytes[1..]
            .iter()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'.' | b'_' | b'-'))
}

/// Hierarchical site/cluster/host identity, e.g. `bnl/linux-farm/node0042`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourcePath {
    components: Vec<String>,
}

impl ResourcePath {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        parse_path(text)
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    /// First component, conventionally the site.
    pub fn site(&self) -> &str {
        &self.components[0]
    }

    /// True when `self` is a component-wise prefix of `other` (a path is a
    /// prefix of itself).
    pub fn is_prefix_of(&self, other: &ResourcePath) -> bool {
        self.components.len() <= other.components.len()
            && self.components.iter().zip(&other.components).all(|(a, b)| a == b)
    }

    /// All prefixes of this path, longest first (the path itself included).
    pub fn prefixes(&self) -> impl Iterator<Item = ResourcePath> + '_ {
        (1..=self.components.len()).rev().map(move |n| ResourcePath {
            components: self.components[..n].to_vec(),
        })
    }

    pub fn child(&self, segment: &str) -> Result<Self, ModelError> {
        parse_path(&format!("{self}/{segment}"))
    }
}

/// Parse the canonical text form. Upper-case input is folded to lower case.
pub fn parse_path(text: &str) -> Result<ResourcePath, ModelError> {
    let malformed = |reason: &str| ModelError::MalformedPath {
        input: text.to_string(),
        reason: reason.to_string(),
    };
    if text.is_empty() {
        return Err(malformed("empty path"));
    }
    let mut components = Vec::new();
    for seg in text.split('/') {
        if seg.is_empty() {
            return Err(malformed("empty segment"));
        }
        let seg = seg.to_ascii_lowercase();
        if !is_token(&seg) {
            return Err(malformed("illegal character in segment"));
        }
        components.push(seg);
    }
    if components.len() > MAX_PATH_DEPTH {
        return Err(malformed("more than 8 segments"));
    }
    Ok(ResourcePath { components })
}

pub fn format_path(path: &ResourcePath) -> String {
    path.components.join("/")
}

impl fmt::Display for ResourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_path(self))
    }
}

impl FromStr for ResourcePath {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_path(s)
    }
}

impl Serialize for ResourcePath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_path(self))
    }
}

impl<'de> Deserialize<'de> for ResourcePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_path(&s).map_err(serde::de::Error::custom)
    }
}

/// Metric name token such as `cpu.load1` or `mem.used_bytes`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricName(String);

impl MetricName {
    pub fn new(name: &str) -> Result<Self, ModelError> {
        if is_token(name) {
            Ok(MetricName(name.to_string()))
        } else {
            Err(ModelError::InvalidMetricName(name.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for MetricName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::new(s)
    }
}

impl Serialize for MetricName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for MetricName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        MetricName::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Gauge,
    Counter,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub name: MetricName,
    pub kind: MetricKind,
    #[serde(default)]
    pub units: String,
    pub default_period: u32,
    pub validity_ttl: u32,
}

impl MetricDescriptor {
    pub fn new(
        name: &str,
        kind: MetricKind,
        units: &str,
        default_period: u32,
        validity_ttl: u32,
    ) -> Result<Self, ModelError> {
        let desc = MetricDescriptor {
            name: MetricName::new(name)?,
            kind,
            units: units.to_string(),
            default_period,
            validity_ttl,
        };
        desc.check()?;
        Ok(desc)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidDescriptor {
            name: self.name.to_string(),
            reason: reason.to_string(),
        };
        if self.default_period < 1 {
            return Err(bad("default_period must be at least 1 s"));
        }
        if self.validity_ttl < self.default_period {
            return Err(bad("validity_ttl must be >= default_period"));
        }
        Ok(())
    }
}

/// A sample value: a finite number or a text string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Text(_) => None,
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, Value::Text(_))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Text(t) => write!(f, "{t:?}"),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

/// One time-stamped measurement of one metric at one resource.
///
/// `(path, metric, timestamp)` identifies the sample for deduplication.
/// Construction checks `timestamp > 0` and that numeric values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    path: ResourcePath,
    metric: MetricName,
    timestamp: u64,
    value: Value,
    ttl: u32,
}

impl MetricSample {
    pub fn new(
        path: ResourcePath,
        metric: MetricName,
        timestamp: u64,
        value: Value,
        ttl: u32,
    ) -> Result<Self, ModelError> {
        if timestamp == 0 {
            return Err(ModelError::InvalidSample("timestamp must be > 0".into()));
        }
        if let Value::Number(v) = value {
            if !v.is_finite() {
                return Err(ModelError::InvalidSample("non-finite value".into()));
            }
        }
        Ok(MetricSample {
            path,
            metric,
            timestamp,
            value,
            ttl,
        })
    }

    pub fn path(&self) -> &ResourcePath {
        &self.path
    }

    pub fn metric(&self) -> &MetricName {
        &self.metric
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    pub fn value(&self) -> &Value {
        &self.value
    }

    pub fn ttl(&self) -> u32 {
        self.ttl
    }

    pub fn with_path(mut self, path: ResourcePath) -> Self {
        self.path = path;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleViolation {
    #[error("sample for {metric} does not match descriptor {descriptor}")]
    NameMismatch { metric: String, descriptor: String },
    #[error("{metric}: {found} value on {expected:?} metric")]
    KindMismatch {
        metric: String,
        expected: MetricKind,
        found: &'static str,
    },
    #[error("{0}: non-finite value")]
    NonFiniteValue(String),
}

/// Stateless check of a sample against its descriptor. Counter monotonicity
/// needs history and is left to the consistency checks.
pub fn validate_sample(
    sample: &MetricSample,
    desc: &MetricDescriptor,
) -> Result<(), Vec<SampleViolation>> {
    let mut violations = Vec::new();
    if sample.metric != desc.name {
        violations.push(SampleViolation::NameMismatch {
            metric: sample.metric.to_string(),
            descriptor: desc.name.to_string(),
        });
    }
    match (&sample.value, desc.kind) {
        (Value::Number(v), MetricKind::Gauge | MetricKind::Counter) => {
            if !v.is_finite() {
                violations.push(SampleViolation::NonFiniteValue(sample.metric.to_string()));
            }
        }
        (Value::Text(_), MetricKind::Text) => {}
        (Value::Number(_), MetricKind::Text) => violations.push(SampleViolation::KindMismatch {
            metric: sample.metric.to_string(),
            expected: desc.kind,
            found: "numeric",
        }),
        (Value::Text(_), kind) => violations.push(SampleViolation::KindMismatch {
            metric: sample.metric.to_string(),
            expected: kind,
            found: "text",
        }),
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Probe outcome severity. The derived order is the severity order:
/// `Pass < Warn < Fail < Unreachable`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Pass,
    Warn,
    Fail,
    Unreachable,
}

impl Status {
    pub const ALL: [Status; 4] = [Status::Pass, Status::Warn, Status::Fail, Status::Unreachable];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Warn => "warn",
            Status::Fail => "fail",
            Status::Unreachable => "unreachable",
        }
    }

    pub fn severity(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pass" => Ok(Status::Pass),
            "warn" => Ok(Status::Warn),
            "fail" => Ok(Status::Fail),
            "unreachable" => Ok(Status::Unreachable),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// Worst-of rollup. An empty list is `Unreachable`: no evidence of life.
pub fn combine_status<I>(statuses: I) -> Status
where
    I: IntoIterator<Item = Status>,
{
    statuses.into_iter().max().unwrap_or(Status::Unreachable)
}
