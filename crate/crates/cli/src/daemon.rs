use std::io::Write;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use gridmon::archive::{FileSegmentStore, Importer, MemoryStore, TelemetryStore};
use gridmon::clock::{Clock, SystemClock};
use gridmon::config::{advertised, AgentSection, DirectorySection, ImporterSection, ProbeSection, SurfaceSection};
use gridmon::directory::{register_with, Directory, TcpUpstream};
use gridmon::model::{MetricName, ResourcePath};
use gridmon::probe::{Prober, TcpNet, Timing};
use gridmon::sensor::{build_sensor, Agent, AgentEndpoint, OverheadLedger, Uplink};
use gridmon::surface::{serve_http, Surface};
use gridmon::wire::{serve_tcp, ProviderKind, Role, TcpTransport, WireClient};
use serde_json::json;
use tracing::{info, warn};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// First stdout line of every daemon, so supervisors learn the bound port.
fn announce(role: &str, addr: impl std::fmt::Display) {
    println!("{role} listening {addr}");
    let _ = std::io::stdout().flush();
}

fn bind(listen: &str) -> anyhow::Result<TcpListener> {
    TcpListener::bind(listen).with_context(|| format!("cannot listen on {listen}"))
}

fn deadline(duration_s: Option<u64>) -> Option<Instant> {
    duration_s.map(|s| Instant::now() + Duration::from_secs(s))
}

/// Sleep up to `d`, waking early at `until`. False once `until` has passed.
fn pause(d: Duration, until: Option<Instant>) -> bool {
    let wake = Instant::now() + d;
    let wake = until.map_or(wake, |u| wake.min(u));
    std::thread::sleep(wake.saturating_duration_since(Instant::now()));
    until.is_none_or(|u| Instant::now() < u)
}

/// Keeps a registration alive by re-registering every third of its TTL.
struct Lease {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Lease {
    fn start(node: &str, directory: &str, subtree: ResourcePath, kind: ProviderKind, endpoint: String, ttl: u32) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let upstream = TcpUpstream::new(node, CONNECT_TIMEOUT);
        let directory = directory.to_string();
        let every = Duration::from_millis((ttl as u64 * 1000 / 3).max(1000));
        let thread = std::thread::spawn(move || {
            let mut next = Instant::now();
            while !flag.load(Ordering::Acquire) {
                if Instant::now() >= next {
                    match register_with(&upstream, &directory, &subtree, kind, &endpoint, ttl) {
                        Ok(expires) => info!(%directory, %subtree, expires, "registered"),
                        Err(e) => warn!(%directory, error = %e, "registration failed"),
                    }
                    next = Instant::now() + every;
                }
                std::thread::sleep(Duration::from_millis(100));
            }
        });
        Lease {
            stop,
            thread: Some(thread),
        }
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn agent(cfg: &AgentSection, duration_s: Option<u64>) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let node = format!("agent:{}", cfg.host);
    let sensors = cfg
        .effective_sensors()
        .iter()
        .map(|s| build_sensor(s, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut agent = Agent::new(
        cfg.host.clone(),
        sensors,
        cfg.seed,
        OverheadLedger::process(clock.now_ms()),
        cfg.spool_capacity,
    );
    if let Some(importer) = cfg.importer.clone() {
        let node = node.clone();
        agent.set_connector(Box::new(move || {
            let t = TcpTransport::connect(&importer, CONNECT_TIMEOUT)?;
            let link: Box<dyn Uplink> = Box::new(WireClient::connect(t, Role::Producer, &node)?);
            Ok(link)
        }));
    }

    let listener = bind(&cfg.listen)?;
    let endpoint = Arc::new(AgentEndpoint::new(node.clone(), Arc::clone(&clock), agent.latest()));
    let server = serve_tcp(listener, endpoint)?;
    let me = advertised(cfg.advertise.as_deref(), server.local_addr());
    announce("agent", server.local_addr());
    let _lease = cfg
        .directory
        .as_deref()
        .map(|d| Lease::start(&node, d, cfg.host.clone(), ProviderKind::Agent, me, cfg.ttl_s));

    let overhead = MetricName::new("agent.overhead").expect("static name");
    let mut overhead_sum = 0.0;
    let mut overhead_n = 0u64;
    let started = clock.now_ms();
    let until = duration_s.map(|s| started + s * 1000);
    let stop = AtomicBool::new(false);
    agent.run(clock.as_ref(), until, &stop, |tick| {
        for s in &tick.samples {
            server.publish(s);
            // The first reading covers zero wall time.
            if s.metric() == &overhead && tick.samples.iter().all(|x| x.timestamp() > started) {
                if let Some(v) = s.value().as_f64() {
                    overhead_sum += v;
                    overhead_n += 1;
                }
            }
        }
    });
    let stats = agent.stats();
    let summary = json!({
        "host": cfg.host,
        "produced": stats.produced,
        "delivered": stats.delivered,
        "spooled": stats.spooled,
        "dropped": stats.dropped,
        "sensor_errors": stats.sensor_errors,
        "overhead_pct": stats.overhead_pct,
        "overhead_mean_pct": if overhead_n == 0 { 0.0 } else { overhead_sum / overhead_n as f64 },
        "overhead_samples": overhead_n,
        "cpu_ms": agent.ledger().cpu_time_used_ms(),
        "wall_ms": agent.ledger().wall_elapsed_ms(),
    });
    println!("{summary}");
    Ok(())
}

pub fn importer(cfg: &ImporterSection, duration_s: Option<u64>) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let store: Arc<dyn TelemetryStore> = match &cfg.data_dir {
        Some(dir) => {
            let s = FileSegmentStore::open(dir).with_context(|| format!("opening {}", dir.display()))?;
            let r = s.open_report();
            info!(segments = r.segments, samples = r.samples, truncated = r.truncated_tails, "archive opened");
            Arc::new(s)
        }
        None => Arc::new(MemoryStore::new()),
    };
    let node = format!("archive:{}", cfg.subtree);
    let importer = Arc::new(Importer::new(node.clone(), Arc::clone(&store), Arc::clone(&clock)));
    let server = serve_tcp(bind(&cfg.listen)?, Arc::clone(&importer))?;
    let me = advertised(cfg.advertise.as_deref(), server.local_addr());
    announce("importer", server.local_addr());
    let _lease = cfg
        .directory
        .as_deref()
        .map(|d| Lease::start(&node, d, cfg.subtree.clone(), ProviderKind::Archive, me, cfg.ttl_s));

    let until = deadline(duration_s);
    let every = Duration::from_secs(cfg.retention_interval_s);
    while pause(every, until) {
        if let Some(policy) = &cfg.retention {
            match store.apply_retention(policy, clock.now_ms()) {
                Ok(s) => info!(removed = s.removed, derived = s.derived, "retention pass"),
                Err(e) => warn!(error = %e, "retention pass failed"),
            }
        }
    }
    println!("{}", serde_json::to_string(&importer.counters())?);
    Ok(())
}

pub fn directory(cfg: &DirectorySection, duration_s: Option<u64>) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let listener = bind(&cfg.listen)?;
    let bound = listener.local_addr()?;
    let me = advertised(cfg.advertise.as_deref(), bound);
    let node = format!("directory:{me}");
    let upstream = Arc::new(TcpUpstream::new(node.clone(), Duration::from_millis(cfg.upstream_timeout_ms)));
    let dir = Arc::new(Directory::new(node.clone(), clock, upstream));
    let _server = serve_tcp(listener, Arc::clone(&dir))?;
    announce("directory", bound);
    let _lease = match (&cfg.parent, &cfg.subtree) {
        (Some(parent), Some(subtree)) => Some(Lease::start(
            &node,
            parent,
            subtree.clone(),
            ProviderKind::Directory,
            me,
            cfg.ttl_s,
        )),
        _ => None,
    };
    let until = deadline(duration_s);
    while pause(Duration::from_secs(cfg.sweep_interval_s), until) {
        for e in dir.sweep() {
            info!(subtree = %e.subtree, endpoint = %e.endpoint, "registration expired");
        }
    }
    println!("{}", serde_json::to_string(&dir.stats())?);
    Ok(())
}

pub fn probe(cfg: &ProbeSection, once: bool, duration_s: Option<u64>) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let mut prober = Prober::new(
        cfg.probe.clone(),
        Arc::new(TcpNet::new("prober")),
        Arc::clone(&clock),
        Timing::Wall,
        Some(cfg.out_dir.clone()),
    )?;
    let line = |s: &gridmon::probe::Snapshot| {
        let worst = s.sites.iter().map(|r| r.combined).max();
        println!(
            "cycle {} hosts {} worst {}",
            s.cycle.number,
            s.cycle.hosts,
            worst.map_or("-", |w| w.as_str())
        );
        let _ = std::io::stdout().flush();
    };
    if once {
        line(&prober.run_once()?);
        return Ok(());
    }
    let until = duration_s.map(|s| clock.now_ms() + s * 1000);
    prober.run(until, &AtomicBool::new(false), line)?;
    Ok(())
}

pub fn serve(cfg: &SurfaceSection, duration_s: Option<u64>) -> anyhow::Result<()> {
    let upstream = Arc::new(TcpUpstream::new("surface", Duration::from_millis(cfg.upstream_timeout_ms)));
    let surface = Arc::new(Surface::new(
        cfg.snapshot_dir.clone(),
        cfg.directory.clone(),
        upstream,
        Arc::new(SystemClock::new()),
    ));
    let handle = serve_http(bind(&cfg.listen)?, surface, cfg.workers)?;
    announce("surface", handle.local_addr());
    match deadline(duration_s) {
        Some(until) => while pause(Duration::from_secs(1), Some(until)) {},
        None => handle.wait(),
    }
    Ok(())
}
