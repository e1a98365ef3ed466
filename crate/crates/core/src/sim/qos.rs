//! Quality-of-service measures and the per-run report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::DispersionReport;
use crate::swarm::PeerId;
use crate::workload::InteractivityProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("continuity index is undefined for an empty playback path")]
    EmptyPath,
    #[error("fairness is undefined without peers")]
    NoPeers,
    #[error("fairness is undefined when every rate is zero")]
    AllZero,
    #[error("rates must be finite and non-negative, got {0}")]
    BadRate(f64),
}

/// Fraction of pieces whose arrival was no later than their playback
/// deadline. `None` arrivals never came.
pub fn continuity_index(path: &[(f64, Option<f64>)]) -> Result<f64, QosError> {
    if path.is_empty() {
        return Err(QosError::EmptyPath);
    }
    let on_time = path
        .iter()
        .filter(|(deadline, arrival)| arrival.is_some_and(|a| a <= *deadline))
        .count();
    Ok(on_time as f64 / path.len() as f64)
}

/// Jain's fairness index `(sum x)^2 / (n * sum x^2)`.
pub fn fairness(rates: &[f64]) -> Result<f64, QosError> {
    if rates.is_empty() {
        return Err(QosError::NoPeers);
    }
    if let Some(bad) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(QosError::BadRate(*bad));
    }
    let sum: f64 = rates.iter().sum();
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if sq == 0.0 {
        return Err(QosError::AllZero);
    }
    Ok(sum * sum / (rates.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerQos {
    pub peer_id: PeerId,
    pub client_id: String,
    pub profile: InteractivityProfile,
    pub join_time: f64,
    pub leave_time: f64,
    pub continuity_index: Option<f64>,
    pub startup_delay: Option<f64>,
    pub mean_seek_latency: Option<f64>,
    pub bootstrap_time: Option<f64>,
    pub interruption_count: usize,
    pub mean_time_to_return: Option<f64>,
    pub total_download_time: Option<f64>,
    pub link_utilization: f64,
    pub download_rate: f64,
    pub uploaded_bytes: u64,
    pub downloaded_bytes: u64,
    pub neighbours_at_join: usize,
    pub formation: Option<DispersionReport>,
}

/// Means over leechers where each measure is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateQos {
    pub leechers: usize,
    pub continuity_index: Option<f64>,
    pub startup_delay: Option<f64>,
    pub mean_seek_latency: Option<f64>,
    pub bootstrap_time: Option<f64>,
    pub interruption_count: Option<f64>,
    pub mean_time_to_return: Option<f64>,
    pub total_download_time: Option<f64>,
    pub link_utilization: Option<f64>,
    pub download_rate: Option<f64>,
    pub fairness: Option<f64>,
    pub formation_dispersion: Option<f64>,
}

impl AggregateQos {
    pub fn from_peers(peers: &[PeerQos]) -> Self {
        fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let v: Vec<f64> = xs.flatten().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
        let rates: Vec<f64> = peers.iter().map(|p| p.download_rate).collect();
        Self {
            leechers: peers.len(),
            continuity_index: mean(peers.iter().map(|p| p.continuity_index)),
            startup_delay: mean(peers.iter().map(|p| p.startup_delay)),
            mean_seek_latency: mean(peers.iter().map(|p| p.mean_seek_latency)),
            bootstrap_time: mean(peers.iter().map(|p| p.bootstrap_time)),
            interruption_count: mean(peers.iter().map(|p| Some(p.interruption_count as f64))),
            mean_time_to_return: mean(peers.iter().map(|p| p.mean_time_to_return)),
            total_download_time: mean(peers.iter().map(|p| p.total_download_time)),
            link_utilization: mean(peers.iter().map(|p| Some(p.link_utilization))),
            download_rate: mean(peers.iter().map(|p| Some(p.download_rate))),
            fairness: fairness(&rates).ok(),
            formation_dispersion: mean(peers.iter().map(|p| p.formation.as_ref().map(|f| f.d))),
        }
    }

    /// Named numeric fields in declaration order.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("leechers", Some(self.leechers as f64)),
            ("continuity_index", self.continuity_index),
            ("startup_delay", self.startup_delay),
            ("mean_seek_latency", self.mean_seek_latency),
            ("bootstrap_time", self.bootstrap_time),
            ("interruption_count", self.interruption_count),
            ("mean_time_to_return", self.mean_time_to_return),
            ("total_download_time", self.total_download_time),
            ("link_utilization", self.link_utilization),
            ("download_rate", self.download_rate),
            ("fairness", self.fairness),
            ("formation_dispersion", self.formation_dispersion),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmTotals {
    pub uploaded_bytes: u64,
    pub downloaded_bytes: u64,
    pub blocks_transferred: u64,
    pub events_processed: u64,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosReport {
    pub policy: String,
    pub seed: u64,
    pub aggregate: AggregateQos,
    pub totals: SwarmTotals,
    pub peers: Vec<PeerQos>,
}
