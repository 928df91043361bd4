use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{parse_path, MetricName, MetricSample, ResourcePath, Value};

use super::Message;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

// Field order here is the on-the-wire key order: t, p, m, v, ttl.
#[derive(Serialize)]
struct RecordOut<'a> {
    t: u64,
    p: &'a ResourcePath,
    m: &'a MetricName,
    v: &'a Value,
    ttl: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    t: u64,
    p: String,
    m: String,
    v: Value,
    ttl: u32,
}

impl Serialize for MetricSample {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RecordOut {
            t: self.timestamp(),
            p: self.path(),
            m: self.metric(),
            v: self.value(),
            ttl: self.ttl(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MetricSample {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RecordIn::deserialize(d)?;
        let path = parse_path(&raw.p).map_err(de::Error::custom)?;
        let metric = MetricName::new(&raw.m).map_err(de::Error::custom)?;
        MetricSample::new(path, metric, raw.t, raw.v, raw.ttl).map_err(de::Error::custom)
    }
}

/// Encode one sample as a newline-terminated wire record.
pub fn encode_sample(sample: &MetricSample) -> String {
    // MetricSample guarantees finite numbers, so serialization cannot fail.
    let mut line = serde_json::to_string(sample).expect("sample serialization");
    line.push('\n');
    line
}

fn strip_newline(line: &[u8]) -> &[u8] {
    line.strip_suffix(b"\n").unwrap_or(line)
}

fn classify(err: serde_json::Error) -> WireError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => WireError::SchemaViolation(err.to_string()),
        Category::Syntax | Category::Eof | Category::Io => {
            WireError::MalformedRecord(err.to_string())
        }
    }
}

pub fn decode_sample(line: &[u8]) -> Result<MetricSample, WireError> {
    let body = strip_newline(line);
    if body.is_empty() {
        return Err(WireError::MalformedRecord("empty line".into()));
    }
    serde_json::from_slice(body).map_err(classify)
}

pub fn encode_message(msg: &Message) -> String {
    let mut line = serde_json::to_string(msg).expect("message serialization");
    line.push('\n');
    line
}

pub fn decode_message(line: &[u8]) -> Result<Message, WireError> {
    let body = strip_newline(line);
    if body.is_empty() {
        return Err(WireError::MalformedRecord("empty line".into()));
    }
    serde_json::from_slice(body).map_err(classify)
}

/// One line on a session: either a bare sample record or a control message.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Sample(MetricSample),
    Control(Message),
}

const CONTROL_PREFIX: &[u8] = b"{\"k\":";

/// Control messages always lead with the `k` key; anything else must be a
/// sample record.
pub fn decode_frame(line: &[u8]) -> Result<Frame, WireError> {
    if strip_newline(line).starts_with(CONTROL_PREFIX) {
        decode_message(line).map(Frame::Control)
    } else {
        decode_sample(line).map(Frame::Sample)
    }
}

pub fn encode_frame(frame: &Frame) -> String {
    match frame {
        Frame::Sample(s) => encode_sample(s),
        Frame::Control(m) => encode_message(m),
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(encode_frame(self).trim_end())
    }
}
