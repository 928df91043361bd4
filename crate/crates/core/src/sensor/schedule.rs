use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct Slot {
    period_ms: u64,
    jitter: f64,
    last_run: Option<u64>,
    next_due: u64,
}

/// Decides which sensors are due. Each run draws the next interval as
/// `period * (1 + jitter * u)`, `u` uniform in `[-1, 1)` from a seeded
/// generator, so a simulated clock plus a fixed seed replays exactly.
#[derive(Debug, Clone)]
pub struct Scheduler {
    rng: ChaCha8Rng,
    slots: Vec<Slot>,
}

impl Scheduler {
    pub fn new(seed: u64) -> Self {
        Scheduler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            slots: Vec::new(),
        }
    }

    /// Register a sensor; returns its slot index. It is due immediately.
    pub fn add(&mut self, period_s: u32, jitter: f64) -> usize {
        self.slots.push(Slot {
            period_ms: period_s as u64 * 1000,
            jitter,
            last_run: None,
            next_due: 0,
        });
        self.slots.len() - 1
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn last_run(&self, slot: usize) -> Option<u64> {
        self.slots[slot].last_run
    }

    /// Slots due at `now`, in registration order. Marks them as run.
    pub fn tick(&mut self, now: u64) -> Vec<usize> {
        let mut due = Vec::new();
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if now < slot.next_due {
                continue;
            }
            let u: f64 = self.rng.gen_range(-1.0..1.0);
            let interval = (slot.period_ms as f64 * (1.0 + slot.jitter * u)).round() as u64;
            slot.last_run = Some(now);
            slot.next_due = now + interval.max(1);
            due.push(i);
        }
        due
    }

    /// Earliest time any slot becomes due.
    pub fn next_due(&self) -> Option<u64> {
        self.slots.iter().map(|s| s.next_due).min()
    }
}
