//! Fabric monitoring toolkit.
//!
//! Four tiers, each usable on its own: sensor agents sample hosts and push
//! time-stamped samples; the archive imports and stores them; the directory
//! serves fresh and historical values to consumers and federates with other
//! directories; the probe daemon tests sites and publishes status snapshots.
//! [`simfab`] wires all of them together over in-memory links under a
//! simulated clock.

pub mod archive;
pub mod clock;
pub mod config;
pub mod directory;
pub mod model;
pub mod probe;
pub mod sensor;
pub mod simfab;
pub mod surface;
pub mod wire;
