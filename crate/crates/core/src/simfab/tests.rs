use std::sync::Arc;

use super::*;
use crate::model::{parse_path, MetricName};
use crate::sensor::Sensor;

fn m(s: &str) -> MetricName {
    MetricName::new(s).unwrap()
}

fn fault(kind: FaultKind, target: &str, start_s: u64, end_s: u64) -> FaultSpec {
    FaultSpec {
        kind,
        target: parse_path(target).unwrap(),
        start_ms: start_s * 1000,
        end_ms: end_s * 1000,
        metric: None,
        param: None,
    }
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    for metric in SIM_METRICS {
        assert_eq!(synth_value("bnl/farm/n1", metric, 7, 42), synth_value("bnl/farm/n1", metric, 7, 42));
    }
    assert_ne!(synth_value("bnl/farm/n1", "cpu.util", 7, 42), synth_value("bnl/farm/n1", "cpu.util", 7, 43));
    assert_ne!(synth_value("bnl/farm/n1", "cpu.util", 7, 42), synth_value("bnl/farm/n2", "cpu.util", 7, 42));
}

#[test]
fn synth_stays_within_declared_bounds() {
    for host in ["bnl/farm/n0001", "uta/farm/n0900"] {
        for metric in SIM_METRICS {
            let (lo, hi) = plausible_range(metric);
            let mut prev_up = 0.0;
            for tick in 0..10_000 {
                let v = synth_value(host, metric, tick, 9);
                assert!(v.is_finite() && lo <= v && v <= hi, "{host} {metric} tick {tick}: {v}");
                if metric == "sys.uptime_s" {
                    assert!(v > prev_up, "uptime grows");
                    prev_up = v;
                }
                if metric == "sys.idle_s" {
                    assert!(v <= synth_value(host, "sys.uptime_s", tick, 9));
                }
            }
        }
    }
}

#[test]
fn out_of_range_fault_only_inside_window() {
    let start = SIM_EPOCH_MS + 60_000;
    let end = SIM_EPOCH_MS + 120_000;
    let mut f = fault(FaultKind::OutOfRange, "bnl", 60, 120);
    f.metric = Some(m("cpu.util"));
    let faults = Arc::new(vec![(f, start, end)]);
    let metrics = [m("cpu.util"), m("mem.used_pct")];
    let mut sensor = SimSensor::new("sim30", &metrics, 30, 0.0, 5, faults);
    let host = parse_path("bnl/farm/n0001").unwrap();
    for t in (0..=180_000).step_by(10_000) {
        let now = SIM_EPOCH_MS + t;
        let r = sensor.read(&host, now).unwrap();
        let util = r.samples[0].value().as_f64().unwrap();
        let mem = r.samples[1].value().as_f64().unwrap();
        let inside = (start..end).contains(&now);
        assert_eq!(!(0.0..=100.0).contains(&util), inside, "t={t} util={util}");
        assert!((0.0..=100.0).contains(&mem));
    }
    let other = parse_path("uta/farm/n0002").unwrap();
    let r = sensor.read(&other, start + 1).unwrap();
    assert!((0.0..=100.0).contains(&r.samples[0].value().as_f64().unwrap()));
}

#[test]
fn config_validation_and_parsing() {
    let ok = SimConfig::new(10, 2, 60, 1);
    ok.validate().unwrap();
    let hosts = ok.hosts();
    assert_eq!(hosts.len(), 10);
    assert_eq!(hosts.iter().filter(|(s, _)| s == "anl").count(), 5);
    assert_eq!(hosts[0].1.to_string(), "anl/farm/n0000");

    let mut bad = ok.clone();
    bad.faults.push(fault(FaultKind::HostDown, "anl", 30, 61));
    assert!(bad.validate().is_err(), "window beyond duration");
    let mut bad = ok.clone();
    bad.faults.push(fault(FaultKind::HostDown, "anl", 30, 30));
    assert!(bad.validate().is_err(), "empty window");
    let mut bad = ok.clone();
    bad.n_hosts = 1;
    assert!(bad.validate().is_err());
    let mut bad = ok.clone();
    bad.metrics[0].name = m("disk.used_bytes");
    assert!(bad.validate().is_err());

    let parsed: SimConfig = toml::from_str(
        r#"
n_hosts = 16
duration_s = 600
seed = 7
sites = ["bnl", "uta"]
[[faults]]
kind = "host_down"
target = "bnl/farm/n0003"
start_ms = 100000
end_ms = 400000
[[faults]]
kind = "out_of_range"
target = "uta"
metric = "cpu.util"
param = 250.0
start_ms = 0
end_ms = 600000
"#,
    )
    .unwrap();
    parsed.validate().unwrap();
    assert_eq!(parsed.metrics.len(), 5);
    assert_eq!(parsed.faults[1].metric, Some(m("cpu.util")));
    assert!(toml::from_str::<SimConfig>("n_hosts = 1\nduration_s = 1\nbogus = 2").is_err());
}

#[test]
fn baseline_run_balances() {
    let r = run_sim(SimConfig::new(10, 2, 60, 3)).unwrap();
    assert_eq!(r.failures(), 0, "{:#?}", r.violations);
    r.verify().unwrap();
    assert_eq!(r.produced, r.ingested);
    assert_eq!(r.dropped, 0);
    assert_eq!(r.spooled, 0);
    // Two or three sampling rounds of five metrics plus three self-metrics.
    assert!(r.produced >= 10 * 2 * 8 && r.produced <= 10 * 3 * 8, "{}", r.produced);
    assert_eq!(r.probe_snapshots.len(), 1);
    assert_eq!(r.probe_snapshots[0].hosts.get(&Status::Pass), Some(&10));
    assert!(r.queries > 0);
}

#[test]
fn identical_configs_replay_identically() {
    let mut cfg = SimConfig::new(24, 3, 900, 11);
    cfg.faults.push(fault(FaultKind::HostDown, "bnl/farm/n0008", 250, 700));
    let a = run_sim(cfg.clone()).unwrap().to_json();
    let b = run_sim(cfg.clone()).unwrap().to_json();
    assert_eq!(a, b);
    cfg.seed = 12;
    assert_ne!(run_sim(cfg).unwrap().to_json(), a);
}

#[test]
fn host_down_visible_in_next_cycle_and_recovers() {
    let mut cfg = SimConfig::new(16, 2, 1_500, 5);
    cfg.faults.push(fault(FaultKind::HostDown, "anl/farm/n0002", 250, 650));
    let mut seen = Vec::new();
    let host = parse_path("anl/farm/n0002").unwrap();
    let r = Sim::new(cfg).unwrap().run(|s| seen.push((s.cycle.started_at - SIM_EPOCH_MS, s.host(&host).unwrap().combined)));
    assert_eq!(r.failures(), 0, "{:#?}", r.violations);
    assert_eq!(r.fault_checks[0].cycle, Some(2));
    assert!(r.fault_checks[0].visible);
    assert_eq!(
        seen,
        [(0, Status::Pass), (300_000, Status::Unreachable), (600_000, Status::Unreachable), (900_000, Status::Pass), (1_200_000, Status::Pass)]
    );
    assert_eq!(r.produced, r.ingested);
}

#[test]
fn value_and_latency_faults_are_visible() {
    let mut cfg = SimConfig::new(16, 2, 1_500, 8);
    let mut oor = fault(FaultKind::OutOfRange, "bnl/farm/n0009", 100, 1_400);
    oor.metric = Some(m("cpu.util"));
    cfg.faults.push(oor);
    cfg.faults.push(fault(FaultKind::StaleMetrics, "bnl/farm/n0010", 100, 1_400));
    cfg.faults.push(fault(FaultKind::SlowEndpoint, "bnl/farm/n0011", 100, 1_400));
    let mut mild = fault(FaultKind::SlowEndpoint, "bnl/farm/n0012", 100, 1_400);
    mild.param = Some(50.0);
    cfg.faults.push(mild);
    let mut last = None;
    let r = Sim::new(cfg).unwrap().run(|s| {
        if s.cycle.number == 4 {
            last = Some(s.clone());
        }
    });
    assert_eq!(r.failures(), 0, "{:#?}", r.violations);
    let expected = [Some(Status::Fail), Some(Status::Warn), Some(Status::Unreachable), None];
    for (c, want) in r.fault_checks.iter().zip(expected) {
        assert_eq!(c.expected, want);
        assert!(c.visible && c.cycle.is_some(), "{c:?}");
    }
    let snap = last.unwrap();
    let status = |h: &str| snap.host(&parse_path(h).unwrap()).unwrap().combined;
    assert_eq!(status("bnl/farm/n0009"), Status::Fail);
    assert_eq!(status("bnl/farm/n0010"), Status::Warn);
    assert_eq!(status("bnl/farm/n0011"), Status::Unreachable);
    assert_eq!(status("bnl/farm/n0012"), Status::Pass);
    assert_eq!(status("bnl/farm/n0013"), Status::Pass);
}

#[test]
fn mid_scale_run_is_clean() {
    let r = run_sim(SimConfig::new(200, 8, 900, 21)).unwrap();
    assert_eq!(r.failures(), 0, "{:#?}", r.violations);
    assert_eq!(r.produced, r.ingested + r.dropped);
    assert_eq!(r.dropped, 0);
    assert_eq!(r.probe_snapshots.len(), 3);
    assert!(r.probe_snapshots.iter().all(|c| c.sites.len() == 8));
}
