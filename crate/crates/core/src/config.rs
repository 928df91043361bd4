//! Shared configuration file. Every daemon reads its own section; a single
//! file can describe a whole stack.
//!
//! ```toml
//! [agent]
//! host = "anl/farm/n0001"
//! importer = "archive.anl:9812"
//! directory = "dir.anl:9811"
//!
//! [importer]
//! subtree = "anl"
//! data_dir = "/var/lib/gridmon"
//! directory = "dir.anl:9811"
//!
//! [directory]
//! listen = "0.0.0.0:9811"
//!
//! [probe]
//! directory = "dir.anl:9811"
//! out_dir = "/var/lib/gridmon/www"
//! [[probe.sites]]
//! site = "anl"
//! hosts = [{ host = "anl/farm/n0001", endpoint = "n0001.anl:9810" }]
//!
//! [surface]
//! snapshot_dir = "/var/lib/gridmon/www"
//! directory = "dir.anl:9811"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::RetentionPolicy;
use crate::directory::{MAX_TTL_S, MIN_TTL_S};
use crate::model::ResourcePath;
use crate::probe::ProbeConfig;
use crate::sensor::{SensorKind, SensorSpec};
use crate::simfab::SimConfig;
use crate::wire::{DEFAULT_AGENT_PORT, DEFAULT_ARCHIVE_PORT, DEFAULT_DIRECTORY_PORT, DEFAULT_HTTP_PORT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config")]
    Parse(#[from] toml::de::Error),
    #[error("missing [{0}] section")]
    MissingSection(&'static str),
    #[error("[{section}] {reason}")]
    Invalid { section: &'static str, reason: String },
}

fn invalid(section: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        section,
        reason: reason.into(),
    }
}

fn listen_on(port: u16) -> String {
    format!("0.0.0.0:{port}")
}

fn default_agent_listen() -> String {
    listen_on(DEFAULT_AGENT_PORT)
}

fn default_importer_listen() -> String {
    listen_on(DEFAULT_ARCHIVE_PORT)
}

fn default_directory_listen() -> String {
    listen_on(DEFAULT_DIRECTORY_PORT)
}

fn default_surface_listen() -> String {
    listen_on(DEFAULT_HTTP_PORT)
}

fn default_lease_ttl() -> u32 {
    600
}

fn default_spool() -> usize {
    4096
}

fn default_upstream_timeout() -> u64 {
    5_000
}

fn default_sweep_interval() -> u64 {
    5
}

fn default_retention_interval() -> u64 {
    300
}

fn default_workers() -> usize {
    4
}

fn check_ttl(section: &'static str, ttl: u32) -> Result<(), ConfigError> {
    if (MIN_TTL_S..=MAX_TTL_S).contains(&ttl) {
        Ok(())
    } else {
        Err(invalid(section, format!("ttl_s {ttl} outside [{MIN_TTL_S}, {MAX_TTL_S}]")))
    }
}

/// Address other processes should use to reach a listener: the configured
/// `advertise` name, or the bound address with a wildcard IP replaced by
/// loopback.
pub fn advertised(advertise: Option<&str>, bound: SocketAddr) -> String {
    if let Some(a) = advertise {
        return a.to_string();
    }
    let mut addr = bound;
    if addr.ip().is_unspecified() {
        addr.set_ip(std::net::Ipv4Addr::LOCALHOST.into());
    }
    addr.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub host: ResourcePath,
    #[serde(default = "default_agent_listen")]
    pub listen: String,
    #[serde(default)]
    pub advertise: Option<String>,
    /// Importer to push samples to; without one samples only spool.
    #[serde(default)]
    pub importer: Option<String>,
    /// Directory to register the agent's host path with.
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default = "default_lease_ttl")]
    pub ttl_s: u32,
    #[serde(default = "default_spool")]
    pub spool_capacity: usize,
    #[serde(default)]
    pub seed: u64,
    /// Empty means the builtin set at the default period.
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
}

impl AgentSection {
    pub fn new(host: ResourcePath) -> Self {
        AgentSection {
            host,
            listen: default_agent_listen(),
            advertise: None,
            importer: None,
            directory: None,
            ttl_s: default_lease_ttl(),
            spool_capacity: default_spool(),
            seed: 0,
            sensors: Vec::new(),
        }
    }

    /// Configured sensors, or every builtin at a 30 s period. `net_rtt`
    /// measures the round trip to the importer and is left out when there
    /// is none.
    pub fn effective_sensors(&self) -> Vec<SensorSpec> {
        if !self.sensors.is_empty() {
            return self.sensors.clone();
        }
        SensorKind::BUILTIN
            .iter()
            .filter_map(|&kind| {
                let mut spec = SensorSpec::builtin(kind.as_str(), kind, 30, 0.1);
                if kind == SensorKind::NetRtt {
                    spec.peer = Some(self.importer.clone()?);
                }
                Some(spec)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_ttl("agent", self.ttl_s)?;
        for s in self.effective_sensors() {
            s.validate().map_err(|e| invalid("agent", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImporterSection {
    /// Subtree this archive holds, registered with the directory.
    pub subtree: ResourcePath,
    #[serde(default = "default_importer_listen")]
    pub listen: String,
    #[serde(default)]
    pub advertise: Option<String>,
    /// Segment-file root; the archive is memory-only without one.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default = "default_lease_ttl")]
    pub ttl_s: u32,
    #[serde(default)]
    pub retention: Option<RetentionPolicy>,
    #[serde(default = "default_retention_interval")]
    pub retention_interval_s: u64,
}

impl ImporterSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_ttl("importer", self.ttl_s)?;
        if let Some(p) = &self.retention {
            p.validate().map_err(|e| invalid("importer", e.to_string()))?;
        }
        if self.retention_interval_s == 0 {
            return Err(invalid("importer", "retention_interval_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectorySection {
    #[serde(default = "default_directory_listen")]
    pub listen: String,
    #[serde(default)]
    pub advertise: Option<String>,
    /// Parent directory to federate under.
    #[serde(default)]
    pub parent: Option<String>,
    /// Subtree announced to the parent; required with `parent`.
    #[serde(default)]
    pub subtree: Option<ResourcePath>,
    #[serde(default = "default_lease_ttl")]
    pub ttl_s: u32,
    #[serde(default = "default_upstream_timeout")]
    pub upstream_timeout_ms: u64,
    #[serde(default = "default_sweep_interval")]
    pub sweep_interval_s: u64,
}

impl Default for DirectorySection {
    fn default() -> Self {
        DirectorySection {
            listen: default_directory_listen(),
            advertise: None,
            parent: None,
            subtree: None,
            ttl_s: default_lease_ttl(),
            upstream_timeout_ms: default_upstream_timeout(),
            sweep_interval_s: default_sweep_interval(),
        }
    }
}

impl DirectorySection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_ttl("directory", self.ttl_s)?;
        if self.parent.is_some() && self.subtree.is_none() {
            return Err(invalid("directory", "parent set without a subtree"));
        }
        if self.upstream_timeout_ms == 0 || self.sweep_interval_s == 0 {
            return Err(invalid("directory", "timeouts and intervals must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    /// Where snapshots and transcripts are published.
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    pub snapshot_dir: PathBuf,
    pub directory: String,
    #[serde(default = "default_surface_listen")]
    pub listen: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_upstream_timeout")]
    pub upstream_timeout_ms: u64,
}

impl SurfaceSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(invalid("surface", "workers must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub agent: Option<AgentSection>,
    #[serde(default)]
    pub importer: Option<ImporterSection>,
    #[serde(default)]
    pub directory: Option<DirectorySection>,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub surface: Option<SurfaceSection>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn agent(&self) -> Result<&AgentSection, ConfigError> {
        let s = self.agent.as_ref().ok_or(ConfigError::MissingSection("agent"))?;
        s.validate()?;
        Ok(s)
    }

    pub fn importer(&self) -> Result<&ImporterSection, ConfigError> {
        let s = self.importer.as_ref().ok_or(ConfigError::MissingSection("importer"))?;
        s.validate()?;
        Ok(s)
    }

    /// Directory settings; an absent section means all defaults.
    pub fn directory(&self) -> Result<DirectorySection, ConfigError> {
        let s = self.directory.clone().unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    pub fn probe(&self) -> Result<&ProbeSection, ConfigError> {
        let s = self.probe.as_ref().ok_or(ConfigError::MissingSection("probe"))?;
        s.probe.validate().map_err(|e| invalid("probe", e.to_string()))?;
        Ok(s)
    }

    pub fn surface(&self) -> Result<&SurfaceSection, ConfigError> {
        let s = self.surface.as_ref().ok_or(ConfigError::MissingSection("surface"))?;
        s.validate()?;
        Ok(s)
    }

    pub fn sim(&self) -> Result<&SimConfig, ConfigError> {
        let s = self.sim.as_ref().ok_or(ConfigError::MissingSection("sim"))?;
        s.validate().map_err(|e| invalid("sim", e.to_string()))?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STACK: &str = r#"
[agent]
host = "anl/farm/n0001"
importer = "127.0.0.1:9812"
directory = "127.0.0.1:9811"

[importer]
subtree = "anl"
directory = "127.0.0.1:9811"
retention = { max_age_ms = 86400000, bucket_ms = 300000 }

[directory]
listen = "127.0.0.1:9811"

[probe]
directory = "127.0.0.1:9811"
out_dir = "/tmp/www"
period_s = 60
[[probe.sites]]
site = "anl"
hosts = [{ host = "anl/farm/n0001", endpoint = "127.0.0.1:9810" }]

[surface]
snapshot_dir = "/tmp/www"
directory = "127.0.0.1:9811"

[sim]
n_hosts = 16
duration_s = 120
"#;

    #[test]
    fn full_stack_parses() {
        let c = Config::parse(STACK).unwrap();
        assert_eq!(c.agent().unwrap().listen, "0.0.0.0:9810");
        assert_eq!(c.importer().unwrap().retention.unwrap().bucket_ms, 300_000);
        assert_eq!(c.directory().unwrap().listen, "127.0.0.1:9811");
        let p = c.probe().unwrap();
        assert_eq!(p.out_dir, PathBuf::from("/tmp/www"));
        assert_eq!(p.probe.period_s, 60);
        assert_eq!(p.probe.host_count(), 1);
        assert_eq!(c.surface().unwrap().listen, "0.0.0.0:9800");
        assert_eq!(c.sim().unwrap().n_hosts, 16);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config::parse(STACK).unwrap();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn missing_and_unknown_sections() {
        let c = Config::parse("[directory]\n").unwrap();
        assert!(matches!(c.agent(), Err(ConfigError::MissingSection("agent"))));
        assert!(c.directory().is_ok());
        assert!(Config::parse("[agnet]\nhost = \"a\"\n").is_err());
        assert!(Config::parse("[agent]\nhost = \"a\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn default_sensors_cover_every_builtin_when_importer_known() {
        let mut a = AgentSection::new(ResourcePath::parse("anl/n1").unwrap());
        assert_eq!(a.effective_sensors().len(), 4);
        a.importer = Some("127.0.0.1:9812".into());
        let kinds: Vec<_> = a.effective_sensors().iter().map(|s| s.kind).collect();
        assert_eq!(kinds, SensorKind::BUILTIN.to_vec());
        assert!(a.validate().is_ok());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut a = AgentSection::new(ResourcePath::parse("anl/n1").unwrap());
        a.ttl_s = 1;
        assert!(a.validate().is_err());
        let d = DirectorySection {
            parent: Some("up:9811".into()),
            ..DirectorySection::default()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn advertised_replaces_wildcard() {
        let bound: SocketAddr = "0.0.0.0:4000".parse().unwrap();
        assert_eq!(advertised(None, bound), "127.0.0.1:4000");
        assert_eq!(advertised(Some("n1.anl:4000"), bound), "n1.anl:4000");
    }
}
