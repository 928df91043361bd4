use std::collections::BTreeMap;
use std::fmt::Write;

use crate::directory::Upstream;
use crate::model::{MetricName, ResourcePath, Status};
use crate::probe::{HostValues, Snapshot};
use crate::wire::Message;

pub const COLUMNS: [&str; 6] = ["HOST", "STATUS", "LOAD", "UPTIME", "IDLE", "AGE"];

/// One rendered host line.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusRow {
    pub host: String,
    pub status: Status,
    pub cpu_load1: Option<f64>,
    pub uptime_s: Option<f64>,
    pub idle_s: Option<f64>,
    pub age_s: Option<u64>,
}

impl StatusRow {
    fn cells(&self) -> [String; 6] {
        let dash = || "-".to_string();
        [
            self.host.clone(),
            self.status.to_string(),
            self.cpu_load1.map_or_else(dash, |v| format!("{v:.2}")),
            self.uptime_s.map_or_else(dash, format_duration),
            self.idle_s.map_or_else(dash, format_duration),
            self.age_s.map_or_else(dash, |a| format!("{a}s")),
        ]
    }
}

/// `93784.0` → `1d02h03m`; shorter spans drop the leading units.
pub fn format_duration(seconds: f64) -> String {
    if !seconds.is_finite() || seconds < 0.0 {
        return "-".to_string();
    }
    let s = seconds as u64;
    let (d, h, m, sec) = (s / 86_400, s / 3600 % 24, s / 60 % 60, s % 60);
    if d > 0 {
        format!("{d}d{h:02}h{m:02}m")
    } else if h > 0 {
        format!("{h}h{m:02}m")
    } else {
        format!("{m}m{sec:02}s")
    }
}

fn merge(snap: &HostValues, live: Option<&HostValues>) -> HostValues {
    let Some(live) = live else {
        return snap.clone();
    };
    HostValues {
        cpu_load1: live.cpu_load1.or(snap.cpu_load1),
        uptime_s: live.uptime_s.or(snap.uptime_s),
        idle_s: live.idle_s.or(snap.idle_s),
        sampled_at: live.sampled_at.or(snap.sampled_at),
    }
}

/// Status table: sites worst first (ties by name), hosts likewise within
/// a site. `latest` overrides the values recorded in the snapshot; AGE is
/// measured against `now_ms`. Pure function of its inputs.
pub fn render_status(snapshot: &Snapshot, latest: &BTreeMap<ResourcePath, HostValues>, now_ms: u64) -> String {
    let mut sites: Vec<_> = snapshot.sites.iter().collect();
    sites.sort_by(|a, b| b.combined.cmp(&a.combined).then_with(|| a.site.cmp(&b.site)));
    let mut groups = Vec::new();
    for site in sites {
        let mut hosts: Vec<_> = site.hosts.iter().collect();
        hosts.sort_by(|a, b| b.combined.cmp(&a.combined).then_with(|| a.host.cmp(&b.host)));
        let rows: Vec<StatusRow> = hosts
            .into_iter()
            .map(|h| {
                let v = merge(&h.values, latest.get(&h.host));
                StatusRow {
                    host: h.host.to_string(),
                    status: h.combined,
                    cpu_load1: v.cpu_load1,
                    uptime_s: v.uptime_s,
                    idle_s: v.idle_s,
                    age_s: v.sampled_at.map(|t| now_ms.saturating_sub(t) / 1000),
                }
            })
            .collect();
        groups.push((site.site.as_str(), site.combined, rows));
    }

    let cells: Vec<Vec<[String; 6]>> = groups
        .iter()
        .map(|(_, _, rows)| rows.iter().map(StatusRow::cells).collect())
        .collect();
    let mut width = COLUMNS.map(str::len);
    for row in cells.iter().flatten() {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, row: &[String; 6]| {
        let _ = write!(out, "{:<w0$}  {:<w1$}", row[0], row[1], w0 = width[0], w1 = width[1]);
        for (c, w) in row[2..].iter().zip(&width[2..]) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    };

    let mut out = format!(
        "cycle {} started {} hosts {}\n",
        snapshot.cycle.number, snapshot.cycle.started_at, snapshot.cycle.hosts
    );
    line(&mut out, &COLUMNS.map(String::from));
    for ((site, combined, _), rows) in groups.iter().zip(&cells) {
        let _ = writeln!(out, "[{site}] {combined}");
        for row in rows {
            line(&mut out, row);
        }
    }
    out
}

/// Current values for every host in `snapshot`, asked of the directory.
/// Hosts or metrics the directory cannot answer are left out.
pub fn fetch_live_values(
    upstream: &dyn Upstream,
    directory: &str,
    snapshot: &Snapshot,
) -> BTreeMap<ResourcePath, HostValues> {
    let mut out = BTreeMap::new();
    for host in snapshot.hosts() {
        let mut v = HostValues::default();
        for metric in ["cpu.load1", "sys.uptime_s", "sys.idle_s"] {
            let req = Message::QueryLatest {
                cid: 0,
                p: host.host.clone(),
                m: MetricName::new(metric).expect("static name"),
                hops: 0,
            };
            let Ok(reply) = upstream.call(directory, req) else {
                continue;
            };
            let Some(s) = reply.samples.and_then(|s| s.into_iter().next()) else {
                continue;
            };
            let x = s.value().as_f64();
            match metric {
                "cpu.load1" => {
                    v.cpu_load1 = x;
                    v.sampled_at = Some(s.timestamp());
                }
                "sys.uptime_s" => v.uptime_s = x,
                _ => v.idle_s = x,
            }
        }
        if v != HostValues::default() {
            out.insert(host.host.clone(), v);
        }
    }
    out
}
