use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use tracing::debug;
use wait_timeout::ChildExt;

use crate::model::ResourcePath;
use crate::wire::decode_sample;

use super::{Reading, Sensor, SensorError, SensorSpec};

/// Run an external sensor command and collect the wire records it prints.
///
/// Every decoded record is re-stamped with `host`. Lines that fail to
/// decode, or name a metric outside `spec.metrics`, are skipped and counted.
pub fn run_external(spec: &SensorSpec, host: &ResourcePath) -> Result<Reading, SensorError> {
    let program = spec
        .program
        .as_deref()
        .ok_or_else(|| SensorError::spec(&spec.id, "external sensor needs a program"))?;
    let mut child = Command::new(program)
        .args(&spec.args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SensorError::ReadFailure(format!("spawn {program}: {e}")))?;
    let mut stdout = child.stdout.take().expect("stdout piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let timeout = Duration::from_secs(spec.timeout_s as u64);
    let status = match child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(SensorError::ReadFailure(format!(
                "{program} timed out after {}s",
                spec.timeout_s
            )));
        }
        Err(e) => return Err(SensorError::ReadFailure(format!("wait {program}: {e}"))),
    };
    let output = reader.join().unwrap_or_default();
    if !status.success() {
        return Err(SensorError::ReadFailure(format!("{program} exited with {status}")));
    }
    let mut reading = Reading::default();
    for line in output.split(|b| *b == b'\n') {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match decode_sample(line) {
            Ok(s) if spec.metrics.iter().any(|d| &d.name == s.metric()) => {
                reading.samples.push(s.with_path(host.clone()));
            }
            Ok(s) => {
                debug!(sensor = %spec.id, metric = %s.metric(), "undeclared metric");
                reading.errors += 1;
            }
            Err(e) => {
                debug!(sensor = %spec.id, error = %e, "bad sensor line");
                reading.errors += 1;
            }
        }
    }
    Ok(reading)
}

pub struct ExternalSensor {
    spec: SensorSpec,
}

impl ExternalSensor {
    pub fn new(spec: SensorSpec) -> Self {
        ExternalSensor { spec }
    }
}

impl Sensor for ExternalSensor {
    fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    fn read(&mut self, host: &ResourcePath, _now_ms: u64) -> Result<Reading, SensorError> {
        run_external(&self.spec, host)
    }
}
