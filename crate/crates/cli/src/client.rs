use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use gridmon::clock::unix_ms;
use gridmon::directory::{TcpUpstream, Upstream};
use gridmon::model::{MetricName, ResourcePath};
use gridmon::probe::{Snapshot, SNAPSHOT_FILE};
use gridmon::simfab::{run_sim, SimConfig};
use gridmon::surface::{fetch_live_values, render_status};
use gridmon::wire::{encode_sample, Message};

const TIMEOUT: Duration = Duration::from_secs(10);

pub enum SnapshotSource {
    Url(String),
    File(PathBuf),
}

fn upstream() -> TcpUpstream {
    TcpUpstream::new("cli", TIMEOUT)
}

fn read_snapshot(source: &SnapshotSource) -> anyhow::Result<Snapshot> {
    let text = match source {
        SnapshotSource::Url(base) => {
            let url = format!("{}/snapshot", base.trim_end_matches('/'));
            ureq::get(&url)
                .timeout(TIMEOUT)
                .call()
                .with_context(|| format!("GET {url}"))?
                .into_string()?
        }
        SnapshotSource::File(path) => {
            let file = if path.is_dir() { path.join(SNAPSHOT_FILE) } else { path.clone() };
            std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?
        }
    };
    serde_json::from_str(&text).context("decoding snapshot")
}

pub fn status(source: &SnapshotSource, live_from: Option<&str>) -> anyhow::Result<()> {
    let snapshot = read_snapshot(source)?;
    let live = match live_from {
        Some(dir) => fetch_live_values(&upstream(), dir, &snapshot),
        None => BTreeMap::new(),
    };
    print!("{}", render_status(&snapshot, &live, unix_ms()));
    Ok(())
}

pub fn query_latest(directory: &str, path: ResourcePath, metric: MetricName) -> anyhow::Result<()> {
    let reply = upstream()
        .call(
            directory,
            Message::QueryLatest {
                cid: 0,
                p: path,
                m: metric,
                hops: 0,
            },
        )
        .with_context(|| format!("query to {directory}"))?;
    match reply.samples.and_then(|s| s.into_iter().next()) {
        Some(s) => {
            print!("{}", encode_sample(&s));
            if reply.stale == Some(true) {
                eprintln!("stale: provider unreachable, served from cache");
            }
        }
        None => println!("absent"),
    }
    Ok(())
}

pub fn query_range(
    directory: &str,
    path: ResourcePath,
    metric: MetricName,
    from: u64,
    to: Option<u64>,
) -> anyhow::Result<()> {
    let request = Message::QueryRange {
        cid: 0,
        p: path,
        m: metric,
        from,
        to: to.unwrap_or_else(unix_ms),
        hops: 0,
    };
    let reply = upstream()
        .call(directory, request)
        .with_context(|| format!("query to {directory}"))?;
    for s in reply.samples.unwrap_or_default() {
        print!("{}", encode_sample(&s));
    }
    Ok(())
}

pub fn registry_ls(directory: &str, json: bool) -> anyhow::Result<()> {
    let reply = upstream()
        .call(directory, Message::QueryRegistry { cid: 0 })
        .with_context(|| format!("query to {directory}"))?;
    let entries = reply.entries.unwrap_or_default();
    if json {
        println!("{}", serde_json::to_string_pretty(&entries)?);
        return Ok(());
    }
    let now = unix_ms();
    println!("{:<32} {:<10} {:<24} {:>8}", "SUBTREE", "KIND", "ENDPOINT", "EXPIRES");
    for e in entries {
        let kind = serde_json::to_value(e.kind)?;
        println!(
            "{:<32} {:<10} {:<24} {:>7}s",
            e.subtree.to_string(),
            kind.as_str().unwrap_or("?"),
            e.endpoint,
            e.expires_at.saturating_sub(now) / 1000
        );
    }
    Ok(())
}

pub fn sim(mut config: SimConfig, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let started = std::time::Instant::now();
    let result = run_sim(config)?;
    std::fs::write(out, result.to_json()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "seed {} hosts {} sites {} produced {} ingested {} dropped {} queries {} failures {} wall {:.1}s report {}",
        result.seed,
        result.hosts,
        result.sites,
        result.produced,
        result.ingested,
        result.dropped,
        result.queries,
        result.failures(),
        started.elapsed().as_secs_f64(),
        out.display()
    );
    result.verify()?;
    Ok(())
}
