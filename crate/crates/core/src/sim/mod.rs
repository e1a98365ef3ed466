//! Discrete-event simulation of a swarm serving one interactive workload.
//!
//! [`run`] drives every leecher session of the workload through the swarm
//! mechanics under one [`PolicyKind`] and reports the QoS each peer saw.

mod engine;
pub mod playback;
pub mod qos;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policies::{PolicyError, PolicyKind, POLICY_NAMES};
use crate::swarm::{ContentSpec, SwarmConfig, SwarmError, DEFAULT_BLOCK_SIZE, DEFAULT_PIECE_SIZE};
use crate::workload::{
    generate_workload, parse_trace, GeneratorConfig, InteractivityProfile, TraceOptions, Workload,
    WorkloadError, DEFAULT_PLAYBACK_RATE, DEFAULT_START_SKEW,
};

pub use playback::{playback_model, Playback, PlaybackAction, PlaybackStats, PlaybackTrace};
pub use qos::{continuity_index, fairness, AggregateQos, PeerQos, QosError, QosReport, SwarmTotals};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("cannot read trace {path}: {source}")]
    TraceIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invariant violated at t={time}: {message}")]
    InvariantViolation { time: f64, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
}

/// Piece and block sizes. The total size follows from the workload's
/// object length and playback rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub piece_size: u64,
    pub block_size: u64,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            piece_size: DEFAULT_PIECE_SIZE,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: Option<String>,
    /// Candidate count for `ynp` and `cnp`.
    pub n: Option<usize>,
}

impl PolicyConfig {
    pub fn of(kind: PolicyKind) -> Self {
        Self {
            name: Some(kind.name().to_string()),
            n: kind.n(),
        }
    }

    pub fn resolve(&self) -> Result<PolicyKind, String> {
        let valid = POLICY_NAMES.join(", ");
        let name = self
            .name
            .as_deref()
            .ok_or_else(|| format!("policy.name: missing; valid policies: {valid}"))?;
        PolicyKind::from_name(name, self.n).map_err(|e| format!("policy.name: {e}"))
    }
}

/// Where leecher sessions come from. With `trace` set the generator fields
/// are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub trace: Option<PathBuf>,
    pub profile: InteractivityProfile,
    pub sessions: usize,
    pub object_length: f64,
    pub playback_rate: f64,
    pub mean_session_gap: f64,
    pub mean_think_time: f64,
    pub start_skew: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            trace: None,
            profile: g.profile,
            sessions: g.session_count,
            object_length: g.object_length,
            playback_rate: DEFAULT_PLAYBACK_RATE,
            mean_session_gap: g.mean_session_gap,
            mean_think_time: g.mean_think_time,
            start_skew: DEFAULT_START_SKEW,
        }
    }
}

impl WorkloadConfig {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            profile: self.profile,
            session_count: self.sessions,
            object_length: self.object_length,
            playback_rate: self.playback_rate,
            mean_session_gap: self.mean_session_gap,
            mean_think_time: self.mean_think_time,
            start_skew: self.start_skew,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityClass {
    /// Upload capacity in bytes per second.
    pub upload: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeersConfig {
    pub capacity_classes: Vec<CapacityClass>,
    pub initial_seeds: usize,
    pub seed_upload: f64,
    /// Fraction of leechers that stay on as seeds after their session.
    pub linger_fraction: f64,
}

impl Default for PeersConfig {
    fn default() -> Self {
        Self {
            capacity_classes: vec![
                CapacityClass { upload: 131_072.0, fraction: 0.5 },
                CapacityClass { upload: 65_536.0, fraction: 0.3 },
                CapacityClass { upload: 32_768.0, fraction: 0.2 },
            ],
            initial_seeds: 1,
            seed_upload: 1_048_576.0,
            linger_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Simulated seconds; defaults to the observation window plus one
    /// object length.
    pub horizon: Option<f64>,
    /// Pieces buffered before a request starts playing.
    pub startup_pieces: usize,
    /// Pieces ahead of the playback frontier eligible for download.
    pub lookahead_pieces: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: None,
            startup_pieces: 1,
            lookahead_pieces: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub content: ContentConfig,
    pub swarm: SwarmConfig,
    pub policy: PolicyConfig,
    pub workload: WorkloadConfig,
    pub peers: PeersConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Collect one NDJSON line per processed event.
    pub event_log: bool,
    /// Check the swarm invariants after every event.
    pub check_invariants: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub report: QosReport,
    pub event_log: Option<String>,
}

fn positive(errors: &mut Vec<String>, field: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errors.push(format!("{field}: must be positive, got {v}"));
    }
}

impl SimConfig {
    pub fn with_policy(kind: PolicyKind) -> Self {
        Self {
            policy: PolicyConfig::of(kind),
            ..Self::default()
        }
    }

    /// Checks every field and returns the resolved policy, or one message
    /// per offending field.
    pub fn validate(&self) -> Result<PolicyKind, SimError> {
        let mut errors = Vec::new();
        let policy = self.policy.resolve().map_err(|e| errors.push(e)).ok();
        if let Err(e) = self.swarm.validate() {
            errors.push(format!("swarm: {e}"));
        }
        if self.content.piece_size == 0 {
            errors.push("content.piece_size: must be positive".into());
        }
        if self.content.block_size == 0 || !self.content.piece_size.is_multiple_of(self.content.block_size.max(1)) {
            errors.push("content.block_size: must be positive and divide piece_size".into());
        }
        if self.workload.trace.is_none() {
            if let Err(e) = self.workload.generator(0).validate() {
                errors.push(format!("workload: {e}"));
            }
        }
        let classes = &self.peers.capacity_classes;
        if classes.is_empty() {
            errors.push("peers.capacity_classes: at least one class is required".into());
        }
        for (i, c) in classes.iter().enumerate() {
            positive(&mut errors, &format!("peers.capacity_classes[{i}].upload"), c.upload);
            if !(c.fraction.is_finite() && c.fraction >= 0.0) {
                errors.push(format!("peers.capacity_classes[{i}].fraction: must be non-negative"));
            }
        }
        let total: f64 = classes.iter().map(|c| c.fraction).sum();
        if !classes.is_empty() && (total - 1.0).abs() > 1e-9 {
            errors.push(format!("peers.capacity_classes: fractions sum to {total}, expected 1"));
        }
        if self.peers.initial_seeds == 0 {
            errors.push("peers.initial_seeds: must be at least 1".into());
        }
        positive(&mut errors, "peers.seed_upload", self.peers.seed_upload);
        if !(0.0..=1.0).contains(&self.peers.linger_fraction) {
            errors.push("peers.linger_fraction: must lie in [0, 1]".into());
        }
        if let Some(h) = self.run.horizon {
            positive(&mut errors, "run.horizon", h);
        }
        if self.run.startup_pieces == 0 {
            errors.push("run.startup_pieces: must be at least 1".into());
        }
        if self.run.lookahead_pieces == 0 {
            errors.push("run.lookahead_pieces: must be at least 1".into());
        }
        match policy {
            Some(p) if errors.is_empty() => Ok(p),
            _ => Err(SimError::Config(errors)),
        }
    }

    /// The leecher workload: the trace if one is configured, otherwise a
    /// generated one seeded from the run seed.
    pub fn load_workload(&self) -> Result<Workload, SimError> {
        match &self.workload.trace {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| SimError::TraceIo {
                    path: path.clone(),
                    source,
                })?;
                Ok(parse_trace(&text, TraceOptions::default())?)
            }
            None => Ok(generate_workload(
                &self.workload.generator(derive_seed(self.run.seed, STREAM_WORKLOAD)),
            )?),
        }
    }

    pub fn content_for(&self, w: &Workload) -> ContentSpec {
        ContentSpec {
            total_size: (w.object_length * w.playback_rate).round().max(1.0) as u64,
            piece_size: self.content.piece_size,
            block_size: self.content.block_size,
            playback_rate: w.playback_rate,
        }
    }
}

const STREAM_WORKLOAD: u64 = 0x5745_4b4c;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for run (or stream) `index` under `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// Runs the configured simulation without an event log.
pub fn run(cfg: &SimConfig) -> Result<QosReport, SimError> {
    Ok(run_with(cfg, RunOptions::default())?.report)
}

pub fn run_with(cfg: &SimConfig, opts: RunOptions) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let w = cfg.load_workload()?;
    run_workload(cfg, &w, opts)
}

/// Runs `cfg` over an already built workload; the workload settings in
/// `cfg` are ignored.
pub fn run_workload(cfg: &SimConfig, workload: &Workload, opts: RunOptions) -> Result<SimOutput, SimError> {
    let policy = cfg.validate()?;
    let content = cfg.content_for(workload);
    content
        .validate()
        .map_err(|e| SimError::Config(vec![format!("content: {e}")]))?;
    engine::Engine::new(cfg, policy, content, workload, opts).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Interaction, Request, Session};

    fn single_leecher(len: f64) -> Workload {
        let s = Session::new("c0", vec![Request::new(0.0, 0.0, len, Interaction::Play).unwrap()]).unwrap();
        Workload::new(len, DEFAULT_PLAYBACK_RATE, len, vec![s]).unwrap()
    }

    #[test]
    fn missing_policy_lists_valid_names() {
        let err = SimConfig::default().validate().unwrap_err().to_string();
        assert!(err.contains("policy.name"));
        for name in POLICY_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn validation_names_each_field() {
        let mut cfg = SimConfig::with_policy(PolicyKind::Random);
        cfg.peers.capacity_classes[0].fraction = 0.9;
        cfg.peers.initial_seeds = 0;
        cfg.run.horizon = Some(-1.0);
        let SimError::Config(errs) = cfg.validate().unwrap_err() else {
            panic!("expected config error");
        };
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].starts_with("peers.capacity_classes"));
        assert!(errs[1].starts_with("peers.initial_seeds"));
        assert!(errs[2].starts_with("run.horizon"));
    }

    #[test]
    fn derived_seeds_differ_per_index() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, 0));
        assert_ne!(derive_seed(8, 0), a);
    }

    #[test]
    fn one_seed_one_leecher_plays_without_stalls() {
        let mut cfg = SimConfig::with_policy(PolicyKind::TitForTat);
        cfg.peers.seed_upload = 10.0 * 1_048_576.0;
        let w = single_leecher(300.0);
        let out = run_workload(&cfg, &w, RunOptions { event_log: false, check_invariants: true }).unwrap();
        let p = &out.report.peers[0];
        assert_eq!(p.continuity_index, Some(1.0));
        assert_eq!(p.interruption_count, 0);
        let startup = p.startup_delay.unwrap();
        let bootstrap = p.bootstrap_time.unwrap();
        assert!(startup >= bootstrap);
        // One 256 KiB piece over a fifth of 10 MiB/s.
        assert!((bootstrap - 262_144.0 / (10.0 * 1_048_576.0 / 5.0)).abs() < 1e-9);
        assert_eq!(out.report.totals.uploaded_bytes, out.report.totals.downloaded_bytes);
        assert_eq!(out.report.totals.downloaded_bytes, 300 * 65_536);
    }

    #[test]
    fn no_leechers_means_no_transfers() {
        let cfg = SimConfig::with_policy(PolicyKind::Random);
        let w = Workload {
            object_length: 300.0,
            playback_rate: DEFAULT_PLAYBACK_RATE,
            observation_window: 300.0,
            sessions: Vec::new(),
        };
        let out = run_workload(&cfg, &w, RunOptions::default()).unwrap();
        assert!(out.report.peers.is_empty());
        assert_eq!(out.report.totals.blocks_transferred, 0);
        assert_eq!(out.report.aggregate.fairness, None);
    }

    #[test]
    fn same_seed_same_report() {
        let mut cfg = SimConfig::with_policy(PolicyKind::DispersionGreedy);
        cfg.workload.sessions = 15;
        cfg.workload.mean_session_gap = 4.0;
        cfg.run.seed = 11;
        let opts = RunOptions { event_log: true, check_invariants: true };
        let a = run_with(&cfg, opts).unwrap();
        let b = run_with(&cfg, opts).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.event_log, b.event_log);
        assert!(a.event_log.unwrap().lines().count() as u64 == a.report.totals.events_processed);
    }
}
