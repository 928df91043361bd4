use crate::model::{MetricName, MetricSample, ResourcePath, Value};

use super::{mount_path, Reading, Sensor, SensorError, SensorKind, SensorSpec};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable pseudo-random value in `[0, 1)` for `(host, metric, tick, seed)`.
///
/// Independent of process, platform and std hasher seeding.
pub fn synth_unit(host: &str, metric: &str, tick: u64, seed: u64) -> f64 {
    let h = fnv1a(metric.as_bytes(), fnv1a(&[0xff], fnv1a(host.as_bytes(), FNV_OFFSET)));
    let x = splitmix64(splitmix64(h ^ seed) ^ tick);
    (x >> 11) as f64 / (1u64 << 53) as f64
}

const SYNTH_MEM_TOTAL: f64 = 16.0 * 1024.0 * 1024.0 * 1024.0;
const SYNTH_DISK_TOTAL: f64 = 512.0 * 1024.0 * 1024.0 * 1024.0;
/// Uptime a synthetic host reports at its first read.
const SYNTH_BOOT_AGE_S: f64 = 86_400.0;

/// Deterministic stand-in for a builtin reader.
pub struct SyntheticSensor {
    spec: SensorSpec,
    seed: u64,
    tick: u64,
    first_read_ms: Option<u64>,
}

impl SyntheticSensor {
    pub fn new(spec: SensorSpec, seed: u64) -> Self {
        SyntheticSensor {
            spec,
            seed,
            tick: 0,
            first_read_ms: None,
        }
    }
}

impl Sensor for SyntheticSensor {
    fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    fn read(&mut self, host: &ResourcePath, now: u64) -> Result<Reading, SensorError> {
        let tick = self.tick;
        self.tick += 1;
        let first = *self.first_read_ms.get_or_insert(now);
        let ttl = self.spec.sample_ttl();
        let host_s = host.to_string();
        let u = |metric: &str| synth_unit(&host_s, metric, tick, self.seed);
        let mut vals: Vec<(ResourcePath, &str, f64)> = Vec::new();
        match self.spec.kind {
            SensorKind::CpuLoad => {
                let l1 = 4.0 * u("cpu.load1");
                vals.push((host.clone(), "cpu.load1", l1));
                vals.push((host.clone(), "cpu.load5", (l1 + 4.0 * u("cpu.load5")) / 2.0));
                vals.push((host.clone(), "cpu.load15", (l1 + 4.0 * u("cpu.load15")) / 2.0));
            }
            SensorKind::Memory => {
                let pct = 100.0 * u("mem.used_pct");
                vals.push((host.clone(), "mem.used_bytes", SYNTH_MEM_TOTAL * pct / 100.0));
                vals.push((host.clone(), "mem.total_bytes", SYNTH_MEM_TOTAL));
                vals.push((host.clone(), "mem.used_pct", pct));
            }
            SensorKind::Disk => {
                for mount in &self.spec.mounts {
                    let path = mount_path(host, mount)?;
                    let frac = synth_unit(&path.to_string(), "disk.used_bytes", tick, self.seed);
                    vals.push((path.clone(), "disk.used_bytes", SYNTH_DISK_TOTAL * frac));
                    vals.push((path, "disk.total_bytes", SYNTH_DISK_TOTAL));
                }
            }
            SensorKind::UptimeIdle => {
                let up = SYNTH_BOOT_AGE_S + (now - first) as f64 / 1000.0;
                vals.push((host.clone(), "sys.uptime_s", up));
                vals.push((host.clone(), "sys.idle_s", up * (0.5 + 0.5 * u("sys.idle_s"))));
            }
            SensorKind::NetRtt => vals.push((host.clone(), "net.rtt_ms", 0.1 + 10.0 * u("net.rtt_ms"))),
            SensorKind::External => {
                return Err(SensorError::spec(&self.spec.id, "external has no synthetic reader"))
            }
        }
        let samples = vals
            .into_iter()
            .map(|(path, metric, v)| {
                MetricSample::new(path, MetricName::new(metric)?, now, Value::Number(v), ttl)
                    .map_err(SensorError::from)
            })
            .collect::<Result<_, _>>()?;
        Ok(Reading { samples, errors: 0 })
    }
}
