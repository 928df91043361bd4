use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::model::{combine_status, MetricName, ResourcePath, Status};
use crate::wire::{ClientError, ErrorCode, Message};

use super::rules::{consistency_check, default_rules, ConsistencyRule, Observed};
use super::{HostReport, HostValues, ProbeNet, TestStep};

fn yes() -> bool {
    true
}

/// Step template, instantiated per host by [`super::ProbeConfig::steps_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepKind {
    /// Open a wire session to the host's agent.
    TcpConnect,
    /// Ask the directory for the host's latest `metric`.
    DirectoryQuery {
        metric: MetricName,
        #[serde(default = "yes")]
        expect_present: bool,
    },
    /// Fetch every metric the rules mention and check them. An empty rule
    /// list means the shipped defaults.
    Consistency {
        #[serde(default)]
        rules: Vec<ConsistencyRule>,
    },
    /// The host's latest `metric` must be younger than `max_age_s`.
    LatestFreshness { metric: MetricName, max_age_s: u64 },
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::TcpConnect => "tcp_connect",
            StepKind::DirectoryQuery { .. } => "directory_query",
            StepKind::Consistency { .. } => "consistency",
            StepKind::LatestFreshness { .. } => "latest_freshness",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            StepKind::LatestFreshness { max_age_s: 0, metric } => {
                Err(format!("latest_freshness on {metric}: max_age_s must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn default_sequence(metric_period_s: u32) -> Vec<StepKind> {
        let load = MetricName::new("cpu.load1").expect("static name");
        vec![
            StepKind::TcpConnect,
            StepKind::DirectoryQuery {
                metric: load.clone(),
                expect_present: true,
            },
            StepKind::Consistency {
                rules: default_rules(metric_period_s),
            },
            StepKind::LatestFreshness {
                metric: load,
                max_age_s: 3 * metric_period_s as u64,
            },
        ]
    }
}

/// A step bound to one host.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSpec {
    pub kind: StepKind,
    pub host: ResourcePath,
    /// Agent endpoint.
    pub agent: String,
    /// Directory endpoint.
    pub directory: String,
    pub timeout_ms: u64,
}

struct Outcome {
    status: Status,
    lines: Vec<String>,
    elapsed_ms: u64,
    seen: Vec<Observed>,
}

struct Ctx<'a> {
    net: &'a dyn ProbeNet,
    name: &'static str,
    lines: Vec<String>,
    elapsed_ms: u64,
    budget_ms: u64,
}

enum Latest {
    Present(Observed),
    Absent,
    Failed,
}

impl Ctx<'_> {
    fn log(&mut self, msg: impl AsRef<str>) {
        self.lines.push(format!("[{}] {}", self.name, msg.as_ref()));
    }

    fn remaining(&self) -> u64 {
        self.budget_ms.saturating_sub(self.elapsed_ms)
    }

    fn latest(&mut self, directory: &str, host: &ResourcePath, metric: &MetricName) -> Latest {
        if self.remaining() == 0 {
            self.log(format!("step timeout of {} ms used up before querying {metric}", self.budget_ms));
            return Latest::Failed;
        }
        let req = Message::QueryLatest {
            cid: 0,
            p: host.clone(),
            m: metric.clone(),
            hops: 0,
        };
        let out = self.net.call(directory, req, self.remaining());
        self.elapsed_ms += out.elapsed_ms;
        match out.result {
            Ok(reply) => match reply.samples.unwrap_or_default().into_iter().next() {
                Some(sample) => {
                    let stale = reply.stale.unwrap_or(false);
                    self.log(format!(
                        "{host} {metric} = {} at {}{}",
                        sample.value(),
                        sample.timestamp(),
                        if stale { " (stale)" } else { "" }
                    ));
                    Latest::Present(Observed { sample, stale })
                }
                None => {
                    self.log(format!("{host} {metric}: absent"));
                    Latest::Absent
                }
            },
            Err(ClientError::Remote {
                code: ErrorCode::NoProvider,
                msg,
            }) => {
                self.log(format!("{host} {metric}: absent ({msg})"));
                Latest::Absent
            }
            Err(e) => {
                self.log(format!("query {host} {metric} at {directory} failed: {e}"));
                Latest::Failed
            }
        }
    }
}

fn execute(spec: &StepSpec, net: &dyn ProbeNet, now: u64) -> Outcome {
    let mut ctx = Ctx {
        net,
        name: spec.kind.name(),
        lines: Vec::new(),
        elapsed_ms: 0,
        budget_ms: spec.timeout_ms,
    };
    let mut seen = Vec::new();
    let status = match &spec.kind {
        StepKind::TcpConnect => {
            let out = net.connect(&spec.agent, spec.timeout_ms);
            ctx.elapsed_ms = out.elapsed_ms;
            match out.result {
                Ok(()) => {
                    ctx.log(format!("connected to {} in {} ms", spec.agent, out.elapsed_ms));
                    Status::Pass
                }
                Err(e) => {
                    ctx.log(format!("cannot reach {}: {e}", spec.agent));
                    Status::Unreachable
                }
            }
        }
        StepKind::DirectoryQuery { metric, expect_present } => {
            match (ctx.latest(&spec.directory, &spec.host, metric), expect_present) {
                (Latest::Present(o), true) => {
                    seen.push(o);
                    Status::Pass
                }
                (Latest::Absent, false) => Status::Pass,
                (Latest::Present(o), false) => {
                    ctx.log(format!("expected no value for ({}, {metric})", spec.host));
                    seen.push(o);
                    Status::Fail
                }
                (Latest::Absent, true) => {
                    ctx.log(format!("missing value for ({}, {metric})", spec.host));
                    Status::Fail
                }
                (Latest::Failed, _) => Status::Fail,
            }
        }
        StepKind::Consistency { rules } => {
            let mut metrics: Vec<&MetricName> = rules.iter().map(|r| &r.metric).collect();
            metrics.sort();
            metrics.dedup();
            let mut status = Status::Pass;
            for m in metrics {
                match ctx.latest(&spec.directory, &spec.host, m) {
                    Latest::Present(o) => seen.push(o),
                    Latest::Absent => {}
                    Latest::Failed => status = Status::Fail,
                }
            }
            let violations = consistency_check(&seen, rules, now + ctx.elapsed_ms);
            for v in &violations {
                ctx.log(format!("violation: {v}"));
                status = status.max(v.on_violation.status());
            }
            if status == Status::Pass {
                ctx.log(format!("{} values within {} rules", seen.len(), rules.len()));
            }
            status
        }
        StepKind::LatestFreshness { metric, max_age_s } => {
            match ctx.latest(&spec.directory, &spec.host, metric) {
                Latest::Present(o) => {
                    let age = (now + ctx.elapsed_ms).saturating_sub(o.sample.timestamp());
                    let status = if age > max_age_s * 1000 {
                        ctx.log(format!("{metric} is {age} ms old, limit {max_age_s} s"));
                        Status::Warn
                    } else if o.stale {
                        ctx.log(format!("{metric} served stale"));
                        Status::Warn
                    } else {
                        Status::Pass
                    };
                    seen.push(o);
                    status
                }
                Latest::Absent => {
                    ctx.log(format!("missing value for ({}, {metric})", spec.host));
                    Status::Fail
                }
                Latest::Failed => Status::Fail,
            }
        }
    };
    if status == Status::Pass && ctx.lines.is_empty() {
        ctx.log("ok");
    }
    Outcome {
        status,
        lines: ctx.lines,
        elapsed_ms: ctx.elapsed_ms.min(spec.timeout_ms),
        seen,
    }
}

fn collect_values(host: &ResourcePath, seen: &[Observed], values: &mut HostValues) {
    for o in seen.iter().filter(|o| o.sample.path() == host) {
        let (Some(v), ts) = (o.sample.value().as_f64(), o.sample.timestamp()) else {
            continue;
        };
        match o.sample.metric().as_str() {
            "cpu.load1" => {
                values.cpu_load1 = Some(v);
                values.sampled_at = Some(ts);
            }
            "sys.uptime_s" => values.uptime_s = Some(v),
            "sys.idle_s" => values.idle_s = Some(v),
            _ => {}
        }
    }
}

enum Timer<'a> {
    Wall(&'a dyn Clock),
    Virtual(u64),
}

impl Timer<'_> {
    fn start(&self) -> u64 {
        match self {
            Timer::Wall(c) => c.now_ms(),
            Timer::Virtual(t) => *t,
        }
    }

    fn finish(&mut self, started: u64, elapsed_ms: u64) -> u64 {
        match self {
            Timer::Wall(c) => c.now_ms().saturating_sub(started).max(elapsed_ms),
            Timer::Virtual(t) => {
                *t += elapsed_ms;
                elapsed_ms
            }
        }
    }
}

fn run(host: &ResourcePath, sequence: &[StepSpec], net: &dyn ProbeNet, mut timer: Timer<'_>) -> (HostReport, u64) {
    let mut steps = Vec::with_capacity(sequence.len());
    let mut values = HostValues::default();
    let mut unreachable = false;
    for spec in sequence {
        let started_at = timer.start();
        if unreachable {
            steps.push(TestStep {
                name: spec.kind.name().to_string(),
                status: Status::Unreachable,
                started_at,
                duration_ms: 0,
                transcript_ref: None,
                transcript: vec![format!("[{}] skipped: host unreachable", spec.kind.name())],
            });
            continue;
        }
        let out = execute(spec, net, started_at);
        let duration_ms = timer.finish(started_at, out.elapsed_ms);
        collect_values(host, &out.seen, &mut values);
        if matches!(spec.kind, StepKind::TcpConnect) && out.status == Status::Unreachable {
            unreachable = true;
        }
        steps.push(TestStep {
            name: spec.kind.name().to_string(),
            status: out.status,
            started_at,
            duration_ms,
            transcript_ref: None,
            transcript: out.lines,
        });
    }
    let end = timer.start();
    let combined = combine_status(steps.iter().map(|s| s.status));
    (
        HostReport {
            host: host.clone(),
            combined,
            values,
            steps,
        },
        end,
    )
}

/// Run `sequence` against `host` in order, timing steps on `clock`.
/// Failures are reported as step statuses, never as errors.
pub fn run_test_sequence(host: &ResourcePath, sequence: &[StepSpec], net: &dyn ProbeNet, clock: &dyn Clock) -> HostReport {
    run(host, sequence, net, Timer::Wall(clock)).0
}

/// Same as [`run_test_sequence`] on a virtual timeline starting at
/// `start_ms`: each step lasts exactly the time `net` reports. Returns the
/// report and the time the sequence ended.
pub fn run_test_sequence_at(
    host: &ResourcePath,
    sequence: &[StepSpec],
    net: &dyn ProbeNet,
    start_ms: u64,
) -> (HostReport, u64) {
    run(host, sequence, net, Timer::Virtual(start_ms))
}
