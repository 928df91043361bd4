use std::collections::BTreeMap;
use std::sync::RwLock;

use crate::model::ResourcePath;
use crate::wire::{ProviderKind, RegistryRecord};

use super::DirectoryError;

pub const MIN_TTL_S: u32 = 5;
pub const MAX_TTL_S: u32 = 86_400;

/// One provider lease.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub subtree: ResourcePath,
    pub kind: ProviderKind,
    pub endpoint: String,
    pub ttl: u32,
    pub registered_at: u64,
}

impl RegistryEntry {
    pub fn expires_at(&self) -> u64 {
        self.registered_at + self.ttl as u64 * 1000
    }

    pub fn is_live(&self, now: u64) -> bool {
        now < self.expires_at()
    }

    pub fn record(&self) -> RegistryRecord {
        RegistryRecord {
            subtree: self.subtree.clone(),
            kind: self.kind,
            endpoint: self.endpoint.clone(),
            ttl: self.ttl,
            registered_at: self.registered_at,
            expires_at: self.expires_at(),
        }
    }
}

type Key = (ResourcePath, String);

/// Leases keyed by `(subtree, endpoint)`.
#[derive(Debug, Default)]
pub struct Registry {
    entries: RwLock<BTreeMap<Key, RegistryEntry>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store or renew a lease. Returns its expiry.
    pub fn register(
        &self,
        subtree: ResourcePath,
        kind: ProviderKind,
        endpoint: &str,
        ttl: u32,
        now: u64,
    ) -> Result<u64, DirectoryError> {
        if !(MIN_TTL_S..=MAX_TTL_S).contains(&ttl) {
            return Err(DirectoryError::InvalidTtl(ttl));
        }
        let entry = RegistryEntry {
            subtree: subtree.clone(),
            kind,
            endpoint: endpoint.to_string(),
            ttl,
            registered_at: now,
        };
        let expires = entry.expires_at();
        self.entries
            .write()
            .expect("registry lock")
            .insert((subtree, endpoint.to_string()), entry);
        Ok(expires)
    }

    /// Extend a live lease by its original TTL.
    pub fn renew(&self, subtree: &ResourcePath, endpoint: &str, now: u64) -> Result<u64, DirectoryError> {
        let mut entries = self.entries.write().expect("registry lock");
        match entries.get_mut(&(subtree.clone(), endpoint.to_string())) {
            Some(e) if e.is_live(now) => {
                e.registered_at = now;
                Ok(e.expires_at())
            }
            _ => Err(DirectoryError::UnknownRegistration {
                subtree: subtree.clone(),
                endpoint: endpoint.to_string(),
            }),
        }
    }

    pub fn deregister(&self, subtree: &ResourcePath, endpoint: &str) -> Result<(), DirectoryError> {
        self.entries
            .write()
            .expect("registry lock")
            .remove(&(subtree.clone(), endpoint.to_string()))
            .map(|_| ())
            .ok_or_else(|| DirectoryError::UnknownRegistration {
                subtree: subtree.clone(),
                endpoint: endpoint.to_string(),
            })
    }

    /// Remove and return every expired entry.
    pub fn sweep(&self, now: u64) -> Vec<RegistryEntry> {
        let mut entries = self.entries.write().expect("registry lock");
        let dead: Vec<Key> = entries
            .iter()
            .filter(|(_, e)| !e.is_live(now))
            .map(|(k, _)| k.clone())
            .collect();
        dead.into_iter().filter_map(|k| entries.remove(&k)).collect()
    }

    /// Live entries in key order.
    pub fn live(&self, now: u64) -> Vec<RegistryEntry> {
        self.entries
            .read()
            .expect("registry lock")
            .values()
            .filter(|e| e.is_live(now))
            .cloned()
            .collect()
    }

    /// Live providers of `kinds` covering `path`, best first: longest
    /// subtree, then kind precedence, then endpoint.
    pub fn candidates(&self, path: &ResourcePath, kinds: &[ProviderKind], now: u64) -> Vec<RegistryEntry> {
        let mut out: Vec<RegistryEntry> = self
            .entries
            .read()
            .expect("registry lock")
            .values()
            .filter(|e| e.is_live(now) && kinds.contains(&e.kind) && e.subtree.is_prefix_of(path))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.subtree
                .depth()
                .cmp(&a.subtree.depth())
                .then(a.kind.cmp(&b.kind))
                .then(a.endpoint.cmp(&b.endpoint))
        });
        out
    }
}
