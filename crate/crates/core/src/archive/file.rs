use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::DateTime;
use tracing::warn;

use crate::model::{parse_path, MetricName, MetricSample, ResourcePath};
use crate::wire::{decode_sample, encode_sample};

use super::retention::apply_to_index;
use super::series::{to_sample, Index, SeriesKey};
use super::{
    Appended, Origin, RetentionPolicy, StoreError, StoredSample, SweepStats, TelemetryStore,
};

const RAW_EXT: &str = "seg";
const DERIVED_EXT: &str = "derived.seg";
const MAX_OPEN_SEGMENTS: usize = 128;

/// What `open` found on disk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub segments: usize,
    pub samples: usize,
    /// Trailing partial lines cut off (one per damaged segment at most).
    pub truncated_tails: usize,
    /// Complete lines that failed to decode or conflicted; skipped.
    pub bad_lines: usize,
}

/// Flat-file backend: one append-only segment of wire records per
/// `(path, metric, UTC day)`, laid out as
/// `<root>/<path with '/' as '~'>/<metric>/<YYYYMMDD>.seg`.
///
/// Downsampled samples go to a sibling `<YYYYMMDD>.derived.seg`. An
/// in-memory index answers queries; the segment files are the durable copy
/// and rebuild the index on open.
pub struct FileSegmentStore {
    root: PathBuf,
    index: RwLock<Index>,
    handles: Mutex<HashMap<PathBuf, File>>,
    report: OpenReport,
}

fn day_bucket(ts_ms: u64) -> String {
    DateTime::from_timestamp_millis(ts_ms as i64)
        .map(|d| d.format("%Y%m%d").to_string())
        .unwrap_or_else(|| "00000000".into())
}

fn path_dir(path: &ResourcePath) -> String {
    path.components().join("~")
}

impl FileSegmentStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut index = Index::default();
        let mut report = OpenReport::default();
        let mut segments = Vec::new();
        for path_entry in fs::read_dir(&root)? {
            let path_entry = path_entry?;
            if !path_entry.file_type()?.is_dir() {
                continue;
            }
            let dir_name = path_entry.file_name().to_string_lossy().replace('~', "/");
            let Ok(res_path) = parse_path(&dir_name) else {
                warn!(dir = %path_entry.path().display(), "skipping unrecognised directory");
                continue;
            };
            for metric_entry in fs::read_dir(path_entry.path())? {
                let metric_entry = metric_entry?;
                let Ok(metric) = MetricName::new(&metric_entry.file_name().to_string_lossy())
                else {
                    continue;
                };
                for seg in fs::read_dir(metric_entry.path())? {
                    let seg = seg?.path();
                    let name = seg.file_name().unwrap_or_default().to_string_lossy().to_string();
                    let origin = if name.ends_with(&format!(".{DERIVED_EXT}")) {
                        Origin::Derived
                    } else if name.ends_with(&format!(".{RAW_EXT}")) {
                        Origin::Raw
                    } else {
                        continue;
                    };
                    segments.push((seg, res_path.clone(), metric.clone(), origin));
                }
            }
        }
        segments.sort_by(|a, b| a.0.cmp(&b.0));
        for (seg, res_path, metric, origin) in segments {
            report.segments += 1;
            Self::load_segment(&seg, &res_path, &metric, origin, &mut index, &mut report)?;
        }
        report.samples = index.len();
        Ok(FileSegmentStore {
            root,
            index: RwLock::new(index),
            handles: Mutex::new(HashMap::new()),
            report,
        })
    }

    fn load_segment(
        seg: &Path,
        res_path: &ResourcePath,
        metric: &MetricName,
        origin: Origin,
        index: &mut Index,
        report: &mut OpenReport,
    ) -> Result<(), StoreError> {
        let mut bytes = Vec::new();
        File::open(seg)?.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            // Crash mid-write: drop the partial tail so later appends start
            // on a fresh line.
            OpenOptions::new().write(true).open(seg)?.set_len(complete as u64)?;
            report.truncated_tails += 1;
        }
        for line in bytes[..complete].split(|b| *b == b'\n') {
            if line.is_empty() {
                continue;
            }
            let sample = match decode_sample(line) {
                Ok(s) if s.path() == res_path && s.metric() == metric => s,
                _ => {
                    report.bad_lines += 1;
                    continue;
                }
            };
            match index.check(&sample) {
                Ok(Appended::Stored) => index.insert(&sample, origin),
                Ok(Appended::Duplicate) => {}
                Err(_) => report.bad_lines += 1,
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn open_report(&self) -> OpenReport {
        self.report
    }

    pub fn segment_path(&self, path: &ResourcePath, metric: &MetricName, ts_ms: u64, origin: Origin) -> PathBuf {
        let ext = match origin {
            Origin::Raw => RAW_EXT,
            Origin::Derived => DERIVED_EXT,
        };
        self.root
            .join(path_dir(path))
            .join(metric.as_str())
            .join(format!("{}.{ext}", day_bucket(ts_ms)))
    }

    fn write_line(&self, seg: &Path, line: &str) -> io::Result<()> {
        let mut handles = self.handles.lock().expect("handles lock");
        if !handles.contains_key(seg) {
            if handles.len() >= MAX_OPEN_SEGMENTS {
                handles.clear();
            }
            if let Some(dir) = seg.parent() {
                fs::create_dir_all(dir)?;
            }
            let f = OpenOptions::new().create(true).append(true).open(seg)?;
            handles.insert(seg.to_path_buf(), f);
        }
        handles.get_mut(seg).expect("just inserted").write_all(line.as_bytes())
    }

    /// Rewrite the raw and derived segments of `key` for each day in `days`
    /// from the index (temp file + rename).
    fn rewrite_days(&self, index: &Index, key: &SeriesKey, days: &BTreeSet<String>) -> io::Result<()> {
        let mut handles = self.handles.lock().expect("handles lock");
        let series = index.get(key);
        for day in days {
            for origin in [Origin::Raw, Origin::Derived] {
                let mut body = String::new();
                if let Some(series) = series {
                    for (ts, p) in &series.points {
                        if p.origin == origin && day_bucket(*ts) == *day {
                            body.push_str(&encode_sample(&to_sample(key, *ts, p)));
                        }
                    }
                }
                let ext = if origin == Origin::Raw { RAW_EXT } else { DERIVED_EXT };
                let seg = self
                    .root
                    .join(path_dir(&key.0))
                    .join(key.1.as_str())
                    .join(format!("{day}.{ext}"));
                handles.remove(&seg);
                if body.is_empty() {
                    match fs::remove_file(&seg) {
                        Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
                        _ => {}
                    }
                    continue;
                }
                if let Some(dir) = seg.parent() {
                    fs::create_dir_all(dir)?;
                }
                let tmp = seg.with_extension("tmp");
                {
                    let mut f = File::create(&tmp)?;
                    f.write_all(body.as_bytes())?;
                    f.sync_all()?;
                }
                fs::rename(&tmp, &seg)?;
            }
        }
        Ok(())
    }
}

impl TelemetryStore for FileSegmentStore {
    fn append(&self, sample: &MetricSample) -> Result<Appended, StoreError> {
        let mut index = self.index.write().expect("index lock");
        let outcome = index.check(sample)?;
        if outcome == Appended::Stored {
            let seg = self.segment_path(sample.path(), sample.metric(), sample.timestamp(), Origin::Raw);
            self.write_line(&seg, &encode_sample(sample))?;
            index.insert(sample, Origin::Raw);
        }
        Ok(outcome)
    }

    fn latest(&self, path: &ResourcePath, metric: &MetricName) -> Option<MetricSample> {
        self.index.read().expect("index lock").latest(path, metric)
    }

    fn range_entries(
        &self,
        path: &ResourcePath,
        metric: &MetricName,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<StoredSample>, StoreError> {
        self.index.read().expect("index lock").range(path, metric, t0, t1)
    }

    fn series_keys(&self) -> Vec<(ResourcePath, MetricName)> {
        self.index.read().expect("index lock").keys()
    }

    fn sample_count(&self) -> usize {
        self.index.read().expect("index lock").len()
    }

    fn apply_retention(&self, policy: &RetentionPolicy, now_ms: u64) -> Result<SweepStats, StoreError> {
        policy.validate()?;
        let mut index = self.index.write().expect("index lock");
        let (stats, touched) = apply_to_index(&mut index, policy, now_ms);
        for (key, stamps) in touched {
            let days: BTreeSet<String> = stamps.iter().map(|t| day_bucket(*t)).collect();
            self.rewrite_days(&index, &key, &days)?;
        }
        Ok(stats)
    }
}
