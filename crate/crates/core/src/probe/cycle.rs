use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use tracing::info;

use crate::clock::Clock;
use crate::model::combine_status;

use super::publish::{publish_snapshot, transcript_ref};
use super::steps::{run_test_sequence, run_test_sequence_at};
use super::{CycleMeta, HostReport, ProbeConfig, ProbeError, ProbeNet, SiteReport, Snapshot, SNAPSHOT_SCHEMA};

/// How step durations are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Hosts run on up to `fanout` threads; steps are timed on the clock.
    Wall,
    /// Hosts are placed on `fanout` virtual lanes starting at the current
    /// clock reading; each step lasts the latency the network reports.
    /// Deterministic and single-threaded.
    Virtual,
}

/// Probe every configured host once and assemble the snapshot.
pub fn run_cycle(config: &ProbeConfig, net: &dyn ProbeNet, clock: &dyn Clock, timing: Timing, number: u64) -> Snapshot {
    let targets: Vec<(usize, &super::HostTarget)> = config
        .sites
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.hosts.iter().map(move |h| (i, h)))
        .collect();
    let fanout = config.fanout.max(1);
    let started_at = clock.now_ms();
    let (reports, finished_at) = match timing {
        Timing::Virtual => {
            let mut lanes: BinaryHeap<Reverse<(u64, usize)>> = (0..fanout).map(|i| Reverse((started_at, i))).collect();
            let mut finished = started_at;
            let mut reports = Vec::with_capacity(targets.len());
            for (_, t) in &targets {
                let Reverse((free_at, lane)) = lanes.pop().expect("at least one lane");
                let (report, end) = run_test_sequence_at(&t.host, &config.steps_for(t), net, free_at);
                finished = finished.max(end);
                lanes.push(Reverse((end, lane)));
                reports.push(report);
            }
            (reports, finished)
        }
        Timing::Wall => {
            let next = AtomicUsize::new(0);
            let slots: Mutex<Vec<Option<HostReport>>> = Mutex::new(vec![None; targets.len()]);
            std::thread::scope(|scope| {
                for _ in 0..fanout.min(targets.len()) {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((_, t)) = targets.get(i) else {
                            return;
                        };
                        let report = run_test_sequence(&t.host, &config.steps_for(t), net, clock);
                        slots.lock().expect("slots lock")[i] = Some(report);
                    });
                }
            });
            let reports = slots
                .into_inner()
                .expect("slots lock")
                .into_iter()
                .map(|r| r.expect("every host probed"))
                .collect();
            (reports, clock.now_ms().max(started_at))
        }
    };

    let mut sites: Vec<SiteReport> = config
        .sites
        .iter()
        .map(|s| SiteReport {
            site: s.site.clone(),
            combined: combine_status([]),
            cycle_started_at: started_at,
            hosts: Vec::with_capacity(s.hosts.len()),
        })
        .collect();
    for ((site, _), mut report) in targets.iter().zip(reports) {
        let reference = transcript_ref(&report.host, number);
        for step in &mut report.steps {
            step.transcript_ref = Some(reference.clone());
        }
        sites[*site].hosts.push(report);
    }
    for site in &mut sites {
        site.hosts.sort_by(|a, b| a.host.cmp(&b.host));
        site.combined = combine_status(site.hosts.iter().map(|h| h.combined));
    }
    sites.sort_by(|a, b| a.site.cmp(&b.site));
    Snapshot {
        schema: SNAPSHOT_SCHEMA,
        cycle: CycleMeta {
            number,
            started_at,
            finished_at,
            period_s: config.period_s,
            fanout,
            hosts: targets.len(),
        },
        sites,
    }
}

/// The probe daemon: one cycle per period, each published to `out_dir`.
pub struct Prober {
    config: ProbeConfig,
    net: Arc<dyn ProbeNet>,
    clock: Arc<dyn Clock>,
    timing: Timing,
    out_dir: Option<PathBuf>,
    cycles: u64,
}

impl Prober {
    pub fn new(
        config: ProbeConfig,
        net: Arc<dyn ProbeNet>,
        clock: Arc<dyn Clock>,
        timing: Timing,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, ProbeError> {
        config.validate()?;
        Ok(Prober {
            config,
            net,
            clock,
            timing,
            out_dir,
            cycles: 0,
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Run and publish one cycle.
    pub fn run_once(&mut self) -> Result<Snapshot, ProbeError> {
        self.cycles += 1;
        let snapshot = run_cycle(&self.config, self.net.as_ref(), self.clock.as_ref(), self.timing, self.cycles);
        if let Some(dir) = &self.out_dir {
            publish_snapshot(&snapshot, dir)?;
        }
        info!(
            cycle = snapshot.cycle.number,
            hosts = snapshot.cycle.hosts,
            took_ms = snapshot.cycle.finished_at - snapshot.cycle.started_at,
            "probe cycle done"
        );
        Ok(snapshot)
    }

    /// Cycle every `period_s` until `until_ms` or `stop`.
    pub fn run(
        &mut self,
        until_ms: Option<u64>,
        stop: &AtomicBool,
        mut on_cycle: impl FnMut(&Snapshot),
    ) -> Result<(), ProbeError> {
        let period_ms = self.config.period_s as u64 * 1000;
        let mut next = self.clock.now_ms();
        loop {
            let now = self.clock.now_ms();
            if stop.load(Ordering::Acquire) || until_ms.is_some_and(|u| now >= u) {
                return Ok(());
            }
            if now >= next {
                let snapshot = self.run_once()?;
                on_cycle(&snapshot);
                next += period_ms;
                while next <= self.clock.now_ms() {
                    next += period_ms;
                }
            }
            let mut wake = next.min(self.clock.now_ms() + 500);
            if let Some(u) = until_ms {
                wake = wake.min(u);
            }
            self.clock.sleep_until(wake);
        }
    }
}
