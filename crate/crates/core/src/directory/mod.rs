//! Information-provider tier: TTL registry, latest-value cache, delegation
//! of history queries to archives, and federation across directories.
//!
//! Routing picks live registrations whose subtree is a prefix of the
//! queried path, longest first, agent before archive before directory.

mod cache;
mod registry;
mod service;
mod upstream;

use thiserror::Error;

use crate::model::ResourcePath;
use crate::wire::{ClientError, Message, ProviderKind};

pub use cache::{CacheCell, LatestCache, MAX_FRESHNESS_S};
pub use registry::{Registry, RegistryEntry, MAX_TTL_S, MIN_TTL_S};
pub use service::{Directory, DirectoryStats, LatestAnswer};
pub use upstream::{LocalUpstream, TcpUpstream, Upstream};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DirectoryError {
    #[error("ttl {0}s outside [5, 86400]")]
    InvalidTtl(u32),
    #[error("no registration for {subtree} at {endpoint}")]
    UnknownRegistration { subtree: ResourcePath, endpoint: String },
    #[error("no provider registered for {0}")]
    NoProvider(ResourcePath),
    #[error("upstream unreachable: {0}")]
    UpstreamUnreachable(String),
    #[error("hop limit exceeded")]
    HopLimitExceeded,
    #[error("invalid range: from {t0} > to {t1}")]
    InvalidRange { t0: u64, t1: u64 },
}

/// Register (or renew by re-registering) `endpoint` at the directory
/// `parent`. Returns the lease expiry.
pub fn register_with(
    upstream: &dyn Upstream,
    parent: &str,
    subtree: &ResourcePath,
    kind: ProviderKind,
    endpoint: &str,
    ttl: u32,
) -> Result<u64, ClientError> {
    let reply = upstream.call(
        parent,
        Message::Register {
            cid: 0,
            subtree: subtree.clone(),
            kind,
            endpoint: endpoint.to_string(),
            ttl,
        },
    )?;
    Ok(reply.expires_at.unwrap_or(0))
}
