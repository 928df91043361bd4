/// CPU time (user + system) consumed by this process so far, in ms.
pub fn process_cpu_ms() -> u64 {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: `usage` is a valid out-pointer for getrusage.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return 0;
    }
    // SAFETY: getrusage succeeded.
    let usage = unsafe { usage.assume_init() };
    let ms = |tv: libc::timeval| tv.tv_sec as u64 * 1000 + tv.tv_usec as u64 / 1000;
    ms(usage.ru_utime) + ms(usage.ru_stime)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CpuSource {
    Process { baseline_ms: u64 },
    /// Fixed charge per recorded cycle, for simulated agents.
    PerCycle { charge_ms: u64 },
}

/// Tracks the agent's own CPU use against wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadLedger {
    source: CpuSource,
    started_ms: u64,
    cpu_time_used_ms: u64,
    wall_elapsed_ms: u64,
}

impl OverheadLedger {
    /// Measure this process with getrusage, from `now_ms` onward.
    pub fn process(now_ms: u64) -> Self {
        OverheadLedger {
            source: CpuSource::Process {
                baseline_ms: process_cpu_ms(),
            },
            started_ms: now_ms,
            cpu_time_used_ms: 0,
            wall_elapsed_ms: 0,
        }
    }

    /// Charge a fixed amount of CPU per cycle; deterministic.
    pub fn fixed(now_ms: u64, charge_ms: u64) -> Self {
        OverheadLedger {
            source: CpuSource::PerCycle { charge_ms },
            started_ms: now_ms,
            cpu_time_used_ms: 0,
            wall_elapsed_ms: 0,
        }
    }

    /// Close one cycle at `now_ms`.
    pub fn record_cycle(&mut self, now_ms: u64) {
        match self.source {
            CpuSource::Process { baseline_ms } => {
                self.cpu_time_used_ms = process_cpu_ms().saturating_sub(baseline_ms);
            }
            CpuSource::PerCycle { charge_ms } => self.cpu_time_used_ms += charge_ms,
        }
        self.wall_elapsed_ms = now_ms.saturating_sub(self.started_ms);
    }

    pub fn cpu_time_used_ms(&self) -> u64 {
        self.cpu_time_used_ms
    }

    pub fn wall_elapsed_ms(&self) -> u64 {
        self.wall_elapsed_ms
    }

    /// `cpu_time_used / wall_elapsed`; 0 before any wall time has passed.
    pub fn fraction(&self) -> f64 {
        if self.wall_elapsed_ms == 0 {
            0.0
        } else {
            self.cpu_time_used_ms as f64 / self.wall_elapsed_ms as f64
        }
    }

    pub fn percent(&self) -> f64 {
        self.fraction() * 100.0
    }
}
