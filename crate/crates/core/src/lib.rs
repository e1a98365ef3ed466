//! Simulation and metrics for BitTorrent-like swarms serving interactive
//! video on demand.
//!
//! - [`workload`]: interactive sessions, trace I/O, profiles, generator.
//! - [`metrics`]: position popularity, sharing potential, dispersion.
//! - [`swarm`]: pieces, blocks, peer buffers, tracker, rarest-first.
//! - [`policies`]: greedy dispersion-minimizing neighbour selection and baselines.
//! - [`sim`]: the discrete-event engine and QoS reporting.
//! - [`experiment`]: config files and multi-run policy comparisons.

pub mod experiment;
pub mod metrics;
pub mod policies;
pub mod sim;
pub mod swarm;
pub mod workload;
