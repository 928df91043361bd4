use std::ffi::CString;
use std::fs;
use std::time::{Duration, Instant};

use crate::model::{MetricName, MetricSample, ResourcePath, Value};
use crate::wire::{Role, TcpTransport, WireClient};

use super::{mount_path, Reading, Sensor, SensorError, SensorKind, SensorSpec};

const PROC_LOADAVG: &str = "/proc/loadavg";
const PROC_MEMINFO: &str = "/proc/meminfo";
const PROC_UPTIME: &str = "/proc/uptime";

/// Reader backed by the host's system files and syscalls.
pub struct BuiltinSensor {
    spec: SensorSpec,
}

impl BuiltinSensor {
    /// Fails with `Unavailable` when the platform lacks the needed source.
    pub fn new(spec: SensorSpec) -> Result<Self, SensorError> {
        let needed = match spec.kind {
            SensorKind::CpuLoad => Some(PROC_LOADAVG),
            SensorKind::Memory => Some(PROC_MEMINFO),
            SensorKind::UptimeIdle => Some(PROC_UPTIME),
            SensorKind::Disk | SensorKind::NetRtt => None,
            SensorKind::External => {
                return Err(SensorError::spec(&spec.id, "external is not a builtin kind"))
            }
        };
        if let Some(path) = needed {
            if fs::metadata(path).is_err() {
                return Err(SensorError::Unavailable(format!("{path} not present")));
            }
        }
        Ok(BuiltinSensor { spec })
    }
}

fn read_file(path: &str) -> Result<String, SensorError> {
    fs::read_to_string(path).map_err(|e| SensorError::ReadFailure(format!("{path}: {e}")))
}

fn parse_floats(text: &str, n: usize, what: &str) -> Result<Vec<f64>, SensorError> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .take(n)
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| SensorError::ReadFailure(format!("unparseable {what}")))?;
    if vals.len() < n {
        return Err(SensorError::ReadFailure(format!("short {what}")));
    }
    Ok(vals)
}

/// `[load1, load5, load15]` from `/proc/loadavg` text.
pub(crate) fn parse_loadavg(text: &str) -> Result<[f64; 3], SensorError> {
    let v = parse_floats(text, 3, "loadavg")?;
    Ok([v[0], v[1], v[2]])
}

/// `(used_bytes, total_bytes)` from `/proc/meminfo` text.
pub(crate) fn parse_meminfo(text: &str) -> Result<(u64, u64), SensorError> {
    let field = |name: &str| -> Option<u64> {
        text.lines()
            .find_map(|l| l.strip_prefix(name)?.strip_prefix(':'))
            .and_then(|rest| rest.split_whitespace().next()?.parse::<u64>().ok())
            .map(|kib| kib * 1024)
    };
    let total = field("MemTotal").ok_or_else(|| SensorError::ReadFailure("no MemTotal".into()))?;
    let avail = field("MemAvailable")
        .or_else(|| Some(field("MemFree")? + field("Buffers")? + field("Cached")?))
        .ok_or_else(|| SensorError::ReadFailure("no MemAvailable".into()))?;
    Ok((total.saturating_sub(avail), total))
}

/// `(uptime_s, idle_s)` from `/proc/uptime` text.
pub(crate) fn parse_uptime(text: &str) -> Result<(f64, f64), SensorError> {
    let v = parse_floats(text, 2, "uptime")?;
    Ok((v[0], v[1]))
}

fn statvfs(mount: &str) -> Result<(u64, u64), SensorError> {
    let c_path = CString::new(mount).map_err(|_| SensorError::ReadFailure("mount has NUL".into()))?;
    let mut st = std::mem::MaybeUninit::<libc::statvfs>::zeroed();
    // SAFETY: `c_path` is NUL-terminated and `st` is a valid out-pointer.
    let rc = unsafe { libc::statvfs(c_path.as_ptr(), st.as_mut_ptr()) };
    if rc != 0 {
        return Err(SensorError::ReadFailure(format!(
            "statvfs {mount}: {}",
            std::io::Error::last_os_error()
        )));
    }
    // SAFETY: statvfs returned success, so the struct is initialised.
    let st = unsafe { st.assume_init() };
    let frsize = st.f_frsize;
    let total = st.f_blocks * frsize;
    let free = st.f_bfree * frsize;
    Ok((total.saturating_sub(free), total))
}

/// Time for a TCP connect plus HELLO exchange with a wire peer.
pub fn measure_rtt(peer: &str, timeout: Duration) -> Result<f64, SensorError> {
    let start = Instant::now();
    let transport = TcpTransport::connect(peer, timeout)
        .map_err(|e| SensorError::ReadFailure(format!("connect {peer}: {e}")))?;
    WireClient::connect(transport, Role::Consumer, "rtt-probe")
        .map_err(|e| SensorError::ReadFailure(format!("hello {peer}: {e}")))?;
    Ok(start.elapsed().as_secs_f64() * 1000.0)
}

fn push(
    out: &mut Vec<MetricSample>,
    path: &ResourcePath,
    metric: &str,
    now: u64,
    v: f64,
    ttl: u32,
) -> Result<(), SensorError> {
    out.push(MetricSample::new(
        path.clone(),
        MetricName::new(metric)?,
        now,
        Value::Number(v),
        ttl,
    )?);
    Ok(())
}

impl Sensor for BuiltinSensor {
    fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    fn read(&mut self, host: &ResourcePath, now: u64) -> Result<Reading, SensorError> {
        let ttl = self.spec.sample_ttl();
        let mut out = Vec::new();
        match self.spec.kind {
            SensorKind::CpuLoad => {
                let [l1, l5, l15] = parse_loadavg(&read_file(PROC_LOADAVG)?)?;
                push(&mut out, host, "cpu.load1", now, l1, ttl)?;
                push(&mut out, host, "cpu.load5", now, l5, ttl)?;
                push(&mut out, host, "cpu.load15", now, l15, ttl)?;
            }
            SensorKind::Memory => {
                let (used, total) = parse_meminfo(&read_file(PROC_MEMINFO)?)?;
                push(&mut out, host, "mem.used_bytes", now, used as f64, ttl)?;
                push(&mut out, host, "mem.total_bytes", now, total as f64, ttl)?;
                let pct = if total == 0 { 0.0 } else { used as f64 * 100.0 / total as f64 };
                push(&mut out, host, "mem.used_pct", now, pct, ttl)?;
            }
            SensorKind::Disk => {
                let mut errors = 0;
                for mount in &self.spec.mounts {
                    match statvfs(mount) {
                        Ok((used, total)) => {
                            let path = mount_path(host, mount)?;
                            push(&mut out, &path, "disk.used_bytes", now, used as f64, ttl)?;
                            push(&mut out, &path, "disk.total_bytes", now, total as f64, ttl)?;
                        }
                        Err(e) if self.spec.mounts.len() == 1 => return Err(e),
                        Err(_) => errors += 1,
                    }
                }
                return Ok(Reading { samples: out, errors });
            }
            SensorKind::UptimeIdle => {
                let (up, idle) = parse_uptime(&read_file(PROC_UPTIME)?)?;
                push(&mut out, host, "sys.uptime_s", now, up, ttl)?;
                push(&mut out, host, "sys.idle_s", now, idle, ttl)?;
            }
            SensorKind::NetRtt => {
                let peer = self.spec.peer.as_deref().unwrap_or_default();
                let timeout = Duration::from_secs(self.spec.timeout_s.max(1) as u64);
                let rtt = measure_rtt(peer, timeout)?;
                push(&mut out, host, "net.rtt_ms", now, rtt, ttl)?;
            }
            SensorKind::External => unreachable!("rejected in new()"),
        }
        Ok(Reading { samples: out, errors: 0 })
    }
}
