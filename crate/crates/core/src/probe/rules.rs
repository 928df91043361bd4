use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{MetricName, MetricSample, ResourcePath, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Fail,
}

impl Severity {
    pub fn status(self) -> Status {
        match self {
            Severity::Warn => Status::Warn,
            Severity::Fail => Status::Fail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Range { min: Option<f64>, max: Option<f64> },
    MaxAge { seconds: u64 },
}

/// A check applied to every observed sample of `metric`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleDef", into = "RuleDef")]
pub struct ConsistencyRule {
    pub metric: MetricName,
    pub bound: Bound,
    pub on_violation: Severity,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDef {
    metric: MetricName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_age_s: Option<u64>,
    on_violation: Severity,
}

impl TryFrom<RuleDef> for ConsistencyRule {
    type Error = String;
    fn try_from(d: RuleDef) -> Result<Self, String> {
        let bound = match (d.min, d.max, d.max_age_s) {
            (None, None, Some(seconds)) => Bound::MaxAge { seconds },
            (min, max, None) if min.is_some() || max.is_some() => Bound::Range { min, max },
            _ => return Err(format!("rule for {}: give min/max or max_age_s", d.metric)),
        };
        ConsistencyRule::new(d.metric, bound, d.on_violation)
    }
}

impl From<ConsistencyRule> for RuleDef {
    fn from(r: ConsistencyRule) -> Self {
        let (min, max, max_age_s) = match r.bound {
            Bound::Range { min, max } => (min, max, None),
            Bound::MaxAge { seconds } => (None, None, Some(seconds)),
        };
        RuleDef {
            metric: r.metric,
            min,
            max,
            max_age_s,
            on_violation: r.on_violation,
        }
    }
}

impl ConsistencyRule {
    pub fn new(metric: MetricName, bound: Bound, on_violation: Severity) -> Result<Self, String> {
        if let Bound::Range { min, max } = bound {
            if min.is_some_and(|v| !v.is_finite()) || max.is_some_and(|v| !v.is_finite()) {
                return Err(format!("rule for {metric}: bounds must be finite"));
            }
            if let (Some(lo), Some(hi)) = (min, max) {
                if lo > hi {
                    return Err(format!("rule for {metric}: min {lo} > max {hi}"));
                }
            }
        }
        Ok(ConsistencyRule {
            metric,
            bound,
            on_violation,
        })
    }

    pub fn range(metric: &str, min: Option<f64>, max: Option<f64>, on: Severity) -> Self {
        Self::new(MetricName::new(metric).expect("metric token"), Bound::Range { min, max }, on)
            .expect("valid range")
    }

    pub fn max_age(metric: &str, seconds: u64, on: Severity) -> Self {
        Self::new(MetricName::new(metric).expect("metric token"), Bound::MaxAge { seconds }, on)
            .expect("valid max age")
    }
}

/// Shipped defaults: non-negative load, percentages within [0, 100], and
/// no sample older than three sampling periods.
pub fn default_rules(metric_period_s: u32) -> Vec<ConsistencyRule> {
    let max_age = 3 * metric_period_s as u64;
    let mut rules = vec![
        ConsistencyRule::range("cpu.load1", Some(0.0), None, Severity::Fail),
        ConsistencyRule::range("cpu.util", Some(0.0), Some(100.0), Severity::Fail),
        ConsistencyRule::range("mem.used_pct", Some(0.0), Some(100.0), Severity::Fail),
    ];
    for m in ["cpu.load1", "cpu.util", "mem.used_pct", "sys.uptime_s", "sys.idle_s"] {
        rules.push(ConsistencyRule::max_age(m, max_age, Severity::Warn));
    }
    rules
}

/// A sample as seen by the probe, with the directory's stale flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub sample: MetricSample,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    BelowMin { value: f64, min: f64 },
    AboveMax { value: f64, max: f64 },
    NotNumeric,
    TooOld { age_ms: u64, max_age_s: u64 },
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: ResourcePath,
    pub metric: MetricName,
    pub timestamp: u64,
    /// Index of the breached rule in the rule list.
    pub rule: usize,
    pub kind: ViolationKind,
    pub on_violation: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}@{}: ", self.path, self.metric, self.timestamp)?;
        match &self.kind {
            ViolationKind::BelowMin { value, min } => write!(f, "value {value} below min {min}"),
            ViolationKind::AboveMax { value, max } => write!(f, "value {value} above max {max}"),
            ViolationKind::NotNumeric => f.write_str("value is not numeric"),
            ViolationKind::TooOld { age_ms, max_age_s } => {
                write!(f, "age {} ms exceeds {} s", age_ms, max_age_s)
            }
            ViolationKind::Stale => f.write_str("directory marked the value stale"),
        }?;
        write!(f, " ({})", self.on_violation.status())
    }
}

fn breach(rule: &ConsistencyRule, obs: &Observed, now: u64) -> Option<ViolationKind> {
    let s = &obs.sample;
    match rule.bound {
        Bound::Range { min, max } => {
            let Some(v) = s.value().as_f64() else {
                return Some(ViolationKind::NotNumeric);
            };
            match (min, max) {
                (Some(lo), _) if v < lo => Some(ViolationKind::BelowMin { value: v, min: lo }),
                (_, Some(hi)) if v > hi => Some(ViolationKind::AboveMax { value: v, max: hi }),
                _ => None,
            }
        }
        Bound::MaxAge { seconds } => {
            let age_ms = now.saturating_sub(s.timestamp());
            if age_ms > seconds.saturating_mul(1000) {
                Some(ViolationKind::TooOld {
                    age_ms,
                    max_age_s: seconds,
                })
            } else if obs.stale {
                Some(ViolationKind::Stale)
            } else {
                None
            }
        }
    }
}

/// One violation per breached `(sample, rule)` pair, in sample then rule
/// order.
pub fn consistency_check(samples: &[Observed], rules: &[ConsistencyRule], now: u64) -> Vec<Violation> {
    let mut out = Vec::new();
    for obs in samples {
        for (i, rule) in rules.iter().enumerate() {
            if &rule.metric != obs.sample.metric() {
                continue;
            }
            if let Some(kind) = breach(rule, obs, now) {
                out.push(Violation {
                    path: obs.sample.path().clone(),
                    metric: obs.sample.metric().clone(),
                    timestamp: obs.sample.timestamp(),
                    rule: i,
                    kind,
                    on_violation: rule.on_violation,
                });
            }
        }
    }
    out
}
