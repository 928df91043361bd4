//! Time sources. Everything timestamps in UTC unix milliseconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep_until(&self, t_ms: u64);
}

/// Wall clock, clamped so it never runs backwards within the process.
#[derive(Debug, Default)]
pub struct SystemClock {
    last: AtomicU64,
}

impl SystemClock {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        let now = unix_ms();
        let prev = self.last.fetch_max(now, Ordering::AcqRel);
        prev.max(now)
    }

    fn sleep_until(&self, t_ms: u64) {
        loop {
            let now = self.now_ms();
            if now >= t_ms {
                return;
            }
            std::thread::sleep(Duration::from_millis(t_ms - now));
        }
    }
}

/// Simulated clock. Time only moves when someone asks it to.
#[derive(Debug)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        SimClock {
            now: AtomicU64::new(start_ms),
        }
    }

    /// Move forward to `t_ms`; earlier targets are ignored.
    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::AcqRel);
    }

    pub fn advance_by(&self, delta_ms: u64) {
        self.now.fetch_add(delta_ms, Ordering::AcqRel);
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }

    fn sleep_until(&self, t_ms: u64) {
        self.advance_to(t_ms);
    }
}
