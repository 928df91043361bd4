use std::sync::Arc;

use crate::model::{MetricDescriptor, MetricKind, MetricName, MetricSample, ResourcePath, Value};
use crate::sensor::{synth_unit, Reading, Sensor, SensorError, SensorKind, SensorSpec};

use super::{FaultKind, FaultSpec};

/// Metrics a simulated host can emit.
pub const SIM_METRICS: [&str; 5] = ["cpu.load1", "cpu.util", "mem.used_pct", "sys.uptime_s", "sys.idle_s"];

const NOMINAL_TICK_S: f64 = 30.0;

/// Declared plausible range of a simulated metric, inclusive. Values stay
/// inside it unless an out_of_range fault is active.
pub fn plausible_range(metric: &str) -> (f64, f64) {
    match metric {
        "cpu.load1" => (0.0, 8.0),
        "cpu.util" | "mem.used_pct" => (0.0, 100.0),
        _ => (0.0, f64::MAX),
    }
}

/// Deterministic value of `metric` on `host` at its `tick`-th reading.
pub fn synth_value(host: &str, metric: &str, tick: u64, seed: u64) -> f64 {
    let u = synth_unit(host, metric, tick, seed);
    match metric {
        "cpu.load1" => 8.0 * u * u,
        "cpu.util" | "mem.used_pct" => 100.0 * u,
        "sys.uptime_s" | "sys.idle_s" => {
            let boot_age = 86_400.0 * (1.0 + synth_unit(host, "boot", 0, seed));
            let up = boot_age + NOMINAL_TICK_S * tick as f64;
            if metric == "sys.uptime_s" {
                up
            } else {
                up * (0.5 + 0.5 * u)
            }
        }
        _ => u,
    }
}

/// Sensor of a simulated host: emits its metrics from [`synth_value`] and
/// applies value faults (stale_metrics, out_of_range) by time window.
pub struct SimSensor {
    spec: SensorSpec,
    seed: u64,
    tick: u64,
    faults: Arc<Vec<(FaultSpec, u64, u64)>>,
}

impl SimSensor {
    /// `faults` holds each fault with its absolute `[start, end)` in ms.
    pub fn new(id: &str, metrics: &[MetricName], period_s: u32, jitter: f64, seed: u64, faults: Arc<Vec<(FaultSpec, u64, u64)>>) -> Self {
        let mut spec = SensorSpec::builtin(id, SensorKind::External, period_s, jitter).synthetic();
        spec.metrics = metrics
            .iter()
            .map(|m| {
                let units = if m.as_str().ends_with("_pct") || m.as_str() == "cpu.util" { "percent" } else { "" };
                MetricDescriptor::new(m.as_str(), MetricKind::Gauge, units, period_s, period_s.saturating_mul(3))
                    .expect("valid descriptor")
            })
            .collect();
        SimSensor {
            spec,
            seed,
            tick: 0,
            faults,
        }
    }

    fn active<'a>(&'a self, host: &'a ResourcePath, now: u64) -> impl Iterator<Item = &'a FaultSpec> + 'a {
        self.faults
            .iter()
            .filter(move |(f, start, end)| *start <= now && now < *end && f.target.is_prefix_of(host))
            .map(|(f, _, _)| f)
    }
}

impl Sensor for SimSensor {
    fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    fn read(&mut self, host: &ResourcePath, now: u64) -> Result<Reading, SensorError> {
        let tick = self.tick;
        self.tick += 1;
        let host_s = host.to_string();
        let ttl = self.spec.sample_ttl();
        let mut samples = Vec::with_capacity(self.spec.metrics.len());
        for d in &self.spec.metrics {
            let mut frozen = false;
            let mut value = synth_value(&host_s, d.name.as_str(), tick, self.seed);
            for f in self.active(host, now) {
                let hits = f.metric.as_ref().is_none_or(|m| *m == d.name);
                match f.kind {
                    FaultKind::StaleMetrics if hits => frozen = true,
                    FaultKind::OutOfRange if hits => value = f.injected_value(),
                    _ => {}
                }
            }
            if !frozen {
                samples.push(MetricSample::new(host.clone(), d.name.clone(), now, Value::Number(value), ttl)?);
            }
        }
        Ok(Reading { samples, errors: 0 })
    }
}
