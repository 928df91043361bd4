//! Line-oriented wire protocol shared by agents, importer, directory and
//! probes.
//!
//! Every line is a JSON object terminated by `\n`. Sample records use the
//! fixed key order `t,p,m,v,ttl` and carry no kind tag; control messages
//! lead with `"k":"<KIND>"` followed by the correlation id `"cid"`. Flat-file
//! archive segments reuse the sample record codec byte for byte.

mod client;
mod codec;
mod server;
mod session;
mod transport;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{MetricName, MetricSample, ResourcePath};

pub use client::{ClientError, WireClient};
pub use codec::{
    decode_frame, decode_message, decode_sample, encode_frame, encode_message, encode_sample,
    Frame, WireError,
};
pub use server::{serve_tcp, DirectLink, ServerConn, ServerHandle, WireHandler};
pub use session::{Inbound, ProtocolViolation, Session, SessionState, SessionStats};
pub use transport::{mem_pipe, MemTransport, TcpTransport, Transport};

pub const DEFAULT_AGENT_PORT: u16 = 9810;
pub const DEFAULT_DIRECTORY_PORT: u16 = 9811;
pub const DEFAULT_ARCHIVE_PORT: u16 = 9812;
pub const DEFAULT_HTTP_PORT: u16 = 9800;

/// Hop cap for forwarded directory queries.
pub const MAX_HOPS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Producer,
    Consumer,
}

impl Role {
    pub fn opposite(self) -> Role {
        match self {
            Role::Producer => Role::Consumer,
            Role::Consumer => Role::Producer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Agent,
    Archive,
    Directory,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Agent => "agent",
            ProviderKind::Archive => "archive",
            ProviderKind::Directory => "directory",
        }
    }
}

impl FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(ProviderKind::Agent),
            "archive" => Ok(ProviderKind::Archive),
            "directory" => Ok(ProviderKind::Directory),
            other => Err(format!("unknown provider kind {other:?}")),
        }
    }
}

/// Metric filter of a subscription: one exact metric, or `*` for all.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricFilter {
    Any,
    Exact(MetricName),
}

impl MetricFilter {
    pub fn matches(&self, metric: &MetricName) -> bool {
        match self {
            MetricFilter::Any => true,
            MetricFilter::Exact(m) => m == metric,
        }
    }
}

impl fmt::Display for MetricFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricFilter::Any => f.write_str("*"),
            MetricFilter::Exact(m) => f.write_str(m.as_str()),
        }
    }
}

impl FromStr for MetricFilter {
    type Err = crate::model::ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            Ok(MetricFilter::Any)
        } else {
            MetricName::new(s).map(MetricFilter::Exact)
        }
    }
}

impl Serialize for MetricFilter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricFilter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Standing request for streamed samples under a path prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub path_prefix: ResourcePath,
    pub metric_filter: MetricFilter,
    pub expiry: u64,
}

impl Subscription {
    pub fn is_active(&self, now_ms: u64) -> bool {
        now_ms < self.expiry
    }

    pub fn matches(&self, sample: &MetricSample, now_ms: u64) -> bool {
        self.is_active(now_ms)
            && self.path_prefix.is_prefix_of(sample.path())
            && self.metric_filter.matches(sample.metric())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cache,
    Upstream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    ProtocolViolation,
    BadRequest,
    Unsupported,
    InvalidTtl,
    InvalidRange,
    UnknownRegistration,
    NoProvider,
    UpstreamUnreachable,
    HopLimitExceeded,
    Internal,
}

/// One registration as reported by `QUERY_REGISTRY`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRecord {
    pub subtree: ResourcePath,
    pub kind: ProviderKind,
    pub endpoint: String,
    pub ttl: u32,
    pub registered_at: u64,
    pub expires_at: u64,
}

/// Payload of a `REPLY`. Only the fields relevant to the request are set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reply {
    pub cid: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<MetricSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stale: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetched_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<RegistryRecord>>,
}

impl Reply {
    pub fn ok() -> Self {
        Reply::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub cid: u64,
    pub code: ErrorCode,
    pub msg: String,
}

impl ErrorReply {
    pub fn new(code: ErrorCode, msg: impl Into<String>) -> Self {
        ErrorReply {
            cid: 0,
            code,
            msg: msg.into(),
        }
    }
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

/// Control messages. Samples travel as bare records (see [`Frame`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "k", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Message {
    Hello {
        cid: u64,
        role: Role,
        node: String,
    },
    Subscribe {
        cid: u64,
        prefix: ResourcePath,
        metric: MetricFilter,
        expiry: u64,
    },
    Unsubscribe {
        cid: u64,
        prefix: ResourcePath,
        metric: MetricFilter,
    },
    QueryLatest {
        cid: u64,
        p: ResourcePath,
        m: MetricName,
        #[serde(default, skip_serializing_if = "is_zero")]
        hops: u8,
    },
    QueryRange {
        cid: u64,
        p: ResourcePath,
        m: MetricName,
        from: u64,
        to: u64,
        #[serde(default, skip_serializing_if = "is_zero")]
        hops: u8,
    },
    Register {
        cid: u64,
        subtree: ResourcePath,
        kind: ProviderKind,
        endpoint: String,
        ttl: u32,
    },
    Renew {
        cid: u64,
        subtree: ResourcePath,
        endpoint: String,
    },
    Deregister {
        cid: u64,
        subtree: ResourcePath,
        endpoint: String,
    },
    QueryRegistry {
        cid: u64,
    },
    Reply(Reply),
    Error(ErrorReply),
}

impl Message {
    pub fn cid(&self) -> u64 {
        match self {
            Message::Hello { cid, .. }
            | Message::Subscribe { cid, .. }
            | Message::Unsubscribe { cid, .. }
            | Message::QueryLatest { cid, .. }
            | Message::QueryRange { cid, .. }
            | Message::Register { cid, .. }
            | Message::Renew { cid, .. }
            | Message::Deregister { cid, .. }
            | Message::QueryRegistry { cid } => *cid,
            Message::Reply(r) => r.cid,
            Message::Error(e) => e.cid,
        }
    }

    pub fn with_cid(mut self, new: u64) -> Self {
        match &mut self {
            Message::Hello { cid, .. }
            | Message::Subscribe { cid, .. }
            | Message::Unsubscribe { cid, .. }
            | Message::QueryLatest { cid, .. }
            | Message::QueryRange { cid, .. }
            | Message::Register { cid, .. }
            | Message::Renew { cid, .. }
            | Message::Deregister { cid, .. }
            | Message::QueryRegistry { cid } => *cid = new,
            Message::Reply(r) => r.cid = new,
            Message::Error(e) => e.cid = new,
        }
        self
    }

    /// Messages that must be answered by exactly one REPLY or ERROR.
    pub fn is_request(&self) -> bool {
        !matches!(
            self,
            Message::Hello { .. } | Message::Reply(_) | Message::Error(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::Subscribe { .. } => "SUBSCRIBE",
            Message::Unsubscribe { .. } => "UNSUBSCRIBE",
            Message::QueryLatest { .. } => "QUERY_LATEST",
            Message::QueryRange { .. } => "QUERY_RANGE",
            Message::Register { .. } => "REGISTER",
            Message::Renew { .. } => "RENEW",
            Message::Deregister { .. } => "DEREGISTER",
            Message::QueryRegistry { .. } => "QUERY_REGISTRY",
            Message::Reply(_) => "REPLY",
            Message::Error(_) => "ERROR",
        }
    }
}

#[cfg(test)]
mod tests;
