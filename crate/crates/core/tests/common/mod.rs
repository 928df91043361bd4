//! Fixed two-site fabric shared by the golden tests.

use std::sync::Arc;

use gridmon::archive::{Importer, MemoryStore, TelemetryStore};
use gridmon::clock::{Clock, SimClock};
use gridmon::directory::{Directory, LocalUpstream};
use gridmon::model::{MetricName, MetricSample, ResourcePath, Value};
use gridmon::probe::{run_cycle, HostTarget, LocalNet, ProbeConfig, SiteTarget, Snapshot, Timing};
use gridmon::sensor::{AgentEndpoint, LatestTable};
use gridmon::wire::ProviderKind;

pub const T0: u64 = 1_700_000_000_000;

fn p(s: &str) -> ResourcePath {
    ResourcePath::parse(s).unwrap()
}

/// Per-host metric values; `None` leaves the metric unpublished.
type Readings = [(&'static str, Option<f64>); 5];

const HEALTHY: Readings = [
    ("cpu.load1", Some(0.75)),
    ("cpu.util", Some(42.0)),
    ("mem.used_pct", Some(61.5)),
    ("sys.uptime_s", Some(93_784.0)),
    ("sys.idle_s", Some(43_200.0)),
];

const HOT: Readings = [
    ("cpu.load1", Some(3.5)),
    ("cpu.util", Some(250.0)),
    ("mem.used_pct", Some(88.0)),
    ("sys.uptime_s", Some(3_600.0)),
    ("sys.idle_s", Some(60.0)),
];

const SPARSE: Readings = [
    ("cpu.load1", None),
    ("cpu.util", Some(5.0)),
    ("mem.used_pct", Some(12.0)),
    ("sys.uptime_s", Some(600.0)),
    ("sys.idle_s", Some(590.0)),
];

pub struct TwoSites {
    pub clock: Arc<SimClock>,
    pub config: ProbeConfig,
    pub net: Arc<LocalNet>,
}

impl TwoSites {
    /// bnl: one healthy host, one with cpu.util out of range.
    /// uta: one host missing cpu.load1, one whose agent is down.
    pub fn new() -> Self {
        let clock = Arc::new(SimClock::new(T0));
        let up = Arc::new(LocalUpstream::new());
        let dir = Arc::new(Directory::new("dir", clock.clone(), up.clone()));
        let store = Arc::new(MemoryStore::new());
        up.add("archive:9812", Arc::new(Importer::new("archive", store.clone(), clock.clone())));
        up.add("dir:9811", dir.clone());
        let hosts: [(&str, &Readings, bool); 4] = [
            ("bnl/farm/n01", &HEALTHY, true),
            ("bnl/farm/n02", &HOT, true),
            ("uta/farm/n01", &SPARSE, true),
            ("uta/farm/n02", &HEALTHY, false),
        ];
        let mut sites: Vec<SiteTarget> = Vec::new();
        for (path, readings, up_now) in hosts {
            let endpoint = format!("{}:9810", path.replace('/', "."));
            let agent = AgentEndpoint::new(path, clock.clone(), Arc::new(LatestTable::default()));
            up.add(&endpoint, Arc::new(agent));
            up.set_down(&endpoint, !up_now);
            for (i, (metric, v)) in readings.iter().enumerate() {
                if let Some(v) = v {
                    let s = MetricSample::new(
                        p(path),
                        MetricName::new(metric).unwrap(),
                        T0 - 20_000 + i as u64 * 1_000,
                        Value::Number(*v),
                        90,
                    )
                    .unwrap();
                    store.append(&s).unwrap();
                }
            }
            let target = HostTarget {
                host: p(path),
                endpoint,
            };
            let site = p(path).site().to_string();
            match sites.iter_mut().find(|s| s.site == site) {
                Some(s) => s.hosts.push(target),
                None => sites.push(SiteTarget {
                    site,
                    hosts: vec![target],
                }),
            }
        }
        for site in ["bnl", "uta"] {
            dir.register(p(site), ProviderKind::Archive, "archive:9812", 86_400).unwrap();
        }
        let net = Arc::new(LocalNet::new(up, 3));
        TwoSites {
            clock,
            config: ProbeConfig::new("dir:9811", sites),
            net,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        run_cycle(&self.config, self.net.as_ref(), self.clock.as_ref(), Timing::Virtual, 1)
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }
}

impl Default for TwoSites {
    fn default() -> Self {
        Self::new()
    }
}
