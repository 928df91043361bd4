use std::collections::HashMap;
use std::io;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use crate::directory::{LocalUpstream, Upstream};
use crate::wire::{ClientError, Message, Reply, Role, TcpTransport, WireClient};

/// Result of one network operation plus the time it took.
#[derive(Debug)]
pub struct NetOutcome<T> {
    pub elapsed_ms: u64,
    pub result: Result<T, ClientError>,
}

/// How the probe reaches agents and the directory.
pub trait ProbeNet: Send + Sync {
    /// Open a session (TCP connect plus HELLO exchange) and close it.
    fn connect(&self, endpoint: &str, timeout_ms: u64) -> NetOutcome<()>;
    fn call(&self, endpoint: &str, request: Message, timeout_ms: u64) -> NetOutcome<Reply>;
}

/// Real TCP, timed with a monotonic clock.
#[derive(Debug, Clone)]
pub struct TcpNet {
    node: String,
}

impl TcpNet {
    pub fn new(node: impl Into<String>) -> Self {
        TcpNet { node: node.into() }
    }

    fn session(&self, endpoint: &str, timeout_ms: u64) -> Result<WireClient<TcpTransport>, ClientError> {
        let transport = TcpTransport::connect(endpoint, Duration::from_millis(timeout_ms))?;
        WireClient::connect(transport, Role::Consumer, &self.node)
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T, ClientError>) -> NetOutcome<T> {
    let start = Instant::now();
    let result = f();
    NetOutcome {
        elapsed_ms: start.elapsed().as_millis() as u64,
        result,
    }
}

impl ProbeNet for TcpNet {
    fn connect(&self, endpoint: &str, timeout_ms: u64) -> NetOutcome<()> {
        timed(|| self.session(endpoint, timeout_ms).map(|_| ()))
    }

    fn call(&self, endpoint: &str, request: Message, timeout_ms: u64) -> NetOutcome<Reply> {
        timed(|| self.session(endpoint, timeout_ms)?.call(request))
    }
}

/// In-process network over a [`LocalUpstream`] with simulated latency.
/// Elapsed time is the configured latency, so results do not depend on
/// the host machine.
pub struct LocalNet {
    upstream: Arc<LocalUpstream>,
    base_latency_ms: u64,
    extra: RwLock<HashMap<String, u64>>,
}

impl LocalNet {
    pub fn new(upstream: Arc<LocalUpstream>, base_latency_ms: u64) -> Self {
        LocalNet {
            upstream,
            base_latency_ms,
            extra: RwLock::new(HashMap::new()),
        }
    }

    pub fn upstream(&self) -> &Arc<LocalUpstream> {
        &self.upstream
    }

    /// Added latency for `endpoint`; 0 clears it.
    pub fn set_extra_latency(&self, endpoint: &str, ms: u64) {
        let mut extra = self.extra.write().expect("latency lock");
        if ms == 0 {
            extra.remove(endpoint);
        } else {
            extra.insert(endpoint.to_string(), ms);
        }
    }

    pub fn latency(&self, endpoint: &str) -> u64 {
        self.base_latency_ms + self.extra.read().expect("latency lock").get(endpoint).copied().unwrap_or(0)
    }

    fn reach(&self, endpoint: &str, timeout_ms: u64) -> Result<u64, NetOutcome<()>> {
        let fail = |elapsed_ms, kind, msg: String| NetOutcome {
            elapsed_ms,
            result: Err(ClientError::Io(io::Error::new(kind, msg))),
        };
        if !self.upstream.contains(endpoint) {
            return Err(fail(0, io::ErrorKind::NotFound, format!("no route to {endpoint}")));
        }
        if self.upstream.is_down(endpoint) {
            return Err(fail(timeout_ms, io::ErrorKind::TimedOut, format!("{endpoint}: connect timed out")));
        }
        let latency = self.latency(endpoint);
        if latency > timeout_ms {
            return Err(fail(timeout_ms, io::ErrorKind::TimedOut, format!("{endpoint}: no answer within {timeout_ms} ms")));
        }
        Ok(latency)
    }
}

impl ProbeNet for LocalNet {
    fn connect(&self, endpoint: &str, timeout_ms: u64) -> NetOutcome<()> {
        match self.reach(endpoint, timeout_ms) {
            Ok(elapsed_ms) => NetOutcome {
                elapsed_ms,
                result: Ok(()),
            },
            Err(e) => e,
        }
    }

    fn call(&self, endpoint: &str, request: Message, timeout_ms: u64) -> NetOutcome<Reply> {
        match self.reach(endpoint, timeout_ms) {
            Ok(elapsed_ms) => NetOutcome {
                elapsed_ms,
                result: self.upstream.call(endpoint, request),
            },
            Err(e) => NetOutcome {
                elapsed_ms: e.elapsed_ms,
                result: Err(e.result.unwrap_err()),
            },
        }
    }
}
