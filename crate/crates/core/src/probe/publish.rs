use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::model::ResourcePath;

use super::{ProbeError, Snapshot};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const PREV_FILE: &str = "snapshot.prev.json";
const TMP_SUFFIX: &str = ".tmp";

/// Location of a host's transcript for `cycle`, relative to the output
/// directory.
pub fn transcript_ref(host: &ResourcePath, cycle: u64) -> String {
    format!("transcripts/{host}/{cycle}.txt")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishReport {
    pub snapshot: PathBuf,
    pub transcripts: usize,
    pub rotated: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeError + '_ {
    move |source| ProbeError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), ProbeError> {
    let mut tmp = target.as_os_str().to_owned();
    tmp.push(TMP_SUFFIX);
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, target).map_err(io_err(target))
}

fn transcript_text(snapshot: &Snapshot, host: &super::HostReport) -> String {
    let mut text = format!("host {} cycle {} started {}\n", host.host, snapshot.cycle.number, snapshot.cycle.started_at);
    for step in &host.steps {
        text.push_str(&format!(
            "{} {} at {} for {} ms\n",
            step.name, step.status, step.started_at, step.duration_ms
        ));
        for line in &step.transcript {
            text.push_str("  ");
            text.push_str(line);
            text.push('\n');
        }
    }
    text.push_str(&format!("combined {}\n", host.combined));
    text
}

/// Write per-host transcripts, then replace `snapshot.json` atomically,
/// keeping the previous one as `snapshot.prev.json`. A reader never sees a
/// partial file and on failure the old snapshot stays in place.
pub fn publish_snapshot(snapshot: &Snapshot, out_dir: &Path) -> Result<PublishReport, ProbeError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut transcripts = 0;
    for host in snapshot.hosts() {
        let rel = transcript_ref(&host.host, snapshot.cycle.number);
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        write_atomic(&path, transcript_text(snapshot, host).as_bytes())?;
        transcripts += 1;
    }

    let current = out_dir.join(SNAPSHOT_FILE);
    let body = snapshot.to_json();
    let mut tmp = current.as_os_str().to_owned();
    tmp.push(TMP_SUFFIX);
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(body.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    let rotated = current.exists();
    if rotated {
        let prev = fs::read(&current).map_err(io_err(&current))?;
        write_atomic(&out_dir.join(PREV_FILE), &prev)?;
    }
    fs::rename(&tmp, &current).map_err(io_err(&current))?;
    Ok(PublishReport {
        snapshot: current,
        transcripts,
        rotated,
    })
}
