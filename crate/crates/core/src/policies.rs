//! Peer and neighbour selection policies.
//!
//! The centerpiece is [`select_neighbors_greedy`]: starting from an empty
//! set `S`, it repeatedly moves the candidate whose popularity record,
//! merged with the peer's own record and every record already in `S`,
//! yields the lowest spatial dispersion. Dispersion ties go to the
//! candidate with the higher request rate, then (for low-interactivity
//! peers) to one that has already received data, then to the lowest id.
//!
//! The remaining functions are the classical and baseline policies the
//! simulator compares against: tit-for-tat and optimistic unchoking,
//! indirect reciprocity, and per-piece request targeting (least loaded,
//! least requested, closest arrival, youngest-N, closest-N).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{merge_records, spatial_dispersion, MetricsError, PopularityRecord};
use crate::swarm::PeerId;
use crate::workload::InteractivityProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("candidate {0} has a popularity record of a different shape")]
    ShapeMismatch(PeerId),
    #[error("candidate {0} appears more than once")]
    DuplicateCandidate(PeerId),
    #[error("no neighbour holds piece {0}")]
    NoHolder(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("unknown policy `{name}`; valid policies: {valid}")]
    UnknownPolicy { name: String, valid: String },
    #[error("policy `{0}` needs n >= 2")]
    InvalidN(String),
}

/// What a peer learns about a prospective neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInfo {
    pub peer_id: PeerId,
    pub popularity_record: PopularityRecord,
    pub buffer_summary: BitVec,
    /// Requests per object duration.
    pub request_rate: f64,
    pub join_time: f64,
    pub has_started: bool,
    /// Requests waiting at this peer.
    pub queue_length: usize,
    /// Requests we have sent to this peer.
    pub requests_sent_to: u64,
    /// Bytes per second this peer forwarded onwards of what it got from us.
    pub recent_forward_rate: f64,
}

impl CandidateInfo {
    pub fn new(peer_id: PeerId, popularity_record: PopularityRecord, buffer_summary: BitVec) -> Self {
        let has_started = buffer_summary.any();
        Self {
            peer_id,
            popularity_record,
            buffer_summary,
            request_rate: 0.0,
            join_time: 0.0,
            has_started,
            queue_length: 0,
            requests_sent_to: 0,
            recent_forward_rate: 0.0,
        }
    }

    pub fn holds(&self, piece: usize) -> bool {
        self.buffer_summary.get(piece).is_some_and(|b| *b)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Peers in the order they were selected.
    pub selected: Vec<PeerId>,
    /// Dispersion of the merged set after each step.
    pub per_step_dispersion: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    DispersionGreedy,
    TitForTat,
    Random,
    Llp,
    Lrp,
    TrackerClosest,
    Ynp(usize),
    Cnp(usize),
    GiveToGet,
    PerPieceOptimistic,
}

pub const POLICY_NAMES: [&str; 10] = [
    "dispersiongreedy",
    "titfortat",
    "random",
    "llp",
    "lrp",
    "trackerclosest",
    "ynp",
    "cnp",
    "givetoget",
    "perpieceoptimistic",
];

pub const DEFAULT_POLICY_N: usize = 3;

/// How a newcomer picks neighbours from its tracker list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormationRule {
    Greedy,
    Random,
    ClosestArrival,
}

/// How a peer fills its regular unchoke slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularRule {
    TitForTat,
    ForwardRate,
    Random,
}

impl PolicyKind {
    /// Parses a lowercase policy name; `n` applies to `ynp` and `cnp`.
    pub fn from_name(name: &str, n: Option<usize>) -> Result<Self, PolicyError> {
        let lower = name.trim().to_ascii_lowercase();
        let n_or_default = || {
            let n = n.unwrap_or(DEFAULT_POLICY_N);
            if n < 2 {
                Err(PolicyError::InvalidN(lower.clone()))
            } else {
                Ok(n)
            }
        };
        Ok(match lower.as_str() {
            "dispersiongreedy" => PolicyKind::DispersionGreedy,
            "titfortat" => PolicyKind::TitForTat,
            "random" => PolicyKind::Random,
            "llp" => PolicyKind::Llp,
            "lrp" => PolicyKind::Lrp,
            "trackerclosest" => PolicyKind::TrackerClosest,
            "ynp" => PolicyKind::Ynp(n_or_default()?),
            "cnp" => PolicyKind::Cnp(n_or_default()?),
            "givetoget" => PolicyKind::GiveToGet,
            "perpieceoptimistic" => PolicyKind::PerPieceOptimistic,
            _ => {
                return Err(PolicyError::UnknownPolicy {
                    name: name.to_string(),
                    valid: POLICY_NAMES.join(", "),
                })
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DispersionGreedy => "dispersiongreedy",
            PolicyKind::TitForTat => "titfortat",
            PolicyKind::Random => "random",
            PolicyKind::Llp => "llp",
            PolicyKind::Lrp => "lrp",
            PolicyKind::TrackerClosest => "trackerclosest",
            PolicyKind::Ynp(_) => "ynp",
            PolicyKind::Cnp(_) => "cnp",
            PolicyKind::GiveToGet => "givetoget",
            PolicyKind::PerPieceOptimistic => "perpieceoptimistic",
        }
    }

    pub fn n(self) -> Option<usize> {
        match self {
            PolicyKind::Ynp(n) | PolicyKind::Cnp(n) => Some(n),
            _ => None,
        }
    }

    pub fn formation_rule(self) -> FormationRule {
        match self {
            PolicyKind::DispersionGreedy => FormationRule::Greedy,
            PolicyKind::TrackerClosest => FormationRule::ClosestArrival,
            _ => FormationRule::Random,
        }
    }

    pub fn regular_rule(self) -> RegularRule {
        match self {
            PolicyKind::GiveToGet => RegularRule::ForwardRate,
            PolicyKind::Random => RegularRule::Random,
            _ => RegularRule::TitForTat,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.n() {
            Some(n) => write!(f, "{}({n})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    /// Accepts `name` or `name(n)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((name, rest)) = s.split_once('(') {
            let n = rest
                .strip_suffix(')')
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| PolicyError::InvalidN(s.to_string()))?;
            return PolicyKind::from_name(name, Some(n));
        }
        PolicyKind::from_name(s, None)
    }
}

impl Serialize for PolicyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Exact dispersion `distinct / mass` of a merged record; an empty merge
/// ranks as fully dispersed.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    distinct: u64,
    mass: u64,
}

impl Ratio {
    fn cmp_value(&self, other: &Ratio) -> Ordering {
        let (a, b) = if self.mass == 0 { (1, 1) } else { (self.distinct, self.mass) };
        let (c, d) = if other.mass == 0 { (1, 1) } else { (other.distinct, other.mass) };
        (a as u128 * d as u128).cmp(&(c as u128 * b as u128))
    }

    fn value(&self) -> f64 {
        if self.mass == 0 {
            return 1.0;
        }
        1.0 - (self.mass - self.distinct) as f64 / self.mass as f64
    }
}

/// Running pointwise sum of records with its distinct/mass tallies.
struct MergedCounts {
    counts: Vec<u64>,
    distinct: u64,
    mass: u64,
}

impl MergedCounts {
    fn new(own: &PopularityRecord) -> Self {
        let mut m = Self {
            counts: vec![0; own.horizon()],
            distinct: 0,
            mass: 0,
        };
        m.add(own);
        m
    }

    fn with(&self, r: &PopularityRecord) -> Ratio {
        let mut distinct = self.distinct;
        let mut mass = self.mass;
        for (p, q) in r.iter() {
            if self.counts[p] == 0 {
                distinct += 1;
            }
            mass += q;
        }
        Ratio { distinct, mass }
    }

    fn add(&mut self, r: &PopularityRecord) {
        for (p, q) in r.iter() {
            if self.counts[p] == 0 {
                self.distinct += 1;
            }
            self.counts[p] += q;
            self.mass += q;
        }
    }
}

fn tiebreak(a: &CandidateInfo, b: &CandidateInfo, profile: InteractivityProfile) -> Ordering {
    b.request_rate
        .total_cmp(&a.request_rate)
        .then_with(|| {
            if profile == InteractivityProfile::Low {
                b.has_started.cmp(&a.has_started)
            } else {
                Ordering::Equal
            }
        })
        .then_with(|| a.peer_id.cmp(&b.peer_id))
}

fn check_candidates(own: &PopularityRecord, candidates: &[CandidateInfo]) -> Result<(), PolicyError> {
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !c.popularity_record.same_shape(own) {
            return Err(PolicyError::ShapeMismatch(c.peer_id));
        }
        if !seen.insert(c.peer_id) {
            return Err(PolicyError::DuplicateCandidate(c.peer_id));
        }
    }
    Ok(())
}

fn greedy(
    own: &PopularityRecord,
    candidates: &[CandidateInfo],
    max_size: usize,
    profile_hint: InteractivityProfile,
    prefer_forwarders: bool,
) -> Result<SelectionOutcome, PolicyError> {
    check_candidates(own, candidates)?;
    let mut merged = MergedCounts::new(own);
    let mut remaining: Vec<&CandidateInfo> = candidates.iter().collect();
    let mut out = SelectionOutcome::default();

    while out.selected.len() < max_size && !remaining.is_empty() {
        let scored: Vec<Ratio> = remaining
            .iter()
            .map(|c| merged.with(&c.popularity_record))
            .collect();
        let best = (0..remaining.len())
            .min_by(|&i, &j| {
                scored[i]
                    .cmp_value(&scored[j])
                    .then_with(|| {
                        if prefer_forwarders {
                            remaining[j]
                                .recent_forward_rate
                                .total_cmp(&remaining[i].recent_forward_rate)
                        } else {
                            Ordering::Equal
                        }
                    })
                    .then_with(|| tiebreak(remaining[i], remaining[j], profile_hint))
            })
            .expect("remaining is non-empty");
        let chosen = remaining.remove(best);
        merged.add(&chosen.popularity_record);
        out.selected.push(chosen.peer_id);
        out.per_step_dispersion.push(scored[best].value());
    }
    Ok(out)
}

/// Greedy dispersion-minimizing neighbour selection.
pub fn select_neighbors_greedy(
    own: &PopularityRecord,
    candidates: &[CandidateInfo],
    max_size: usize,
    profile_hint: InteractivityProfile,
) -> Result<SelectionOutcome, PolicyError> {
    greedy(own, candidates, max_size, profile_hint, false)
}

/// Spatial dispersion of `own` merged with every record in `set`.
pub fn evaluate_set_dispersion(own: &PopularityRecord, set: &[&CandidateInfo]) -> Result<f64, PolicyError> {
    let merged = merge_records(
        std::iter::once(own).chain(set.iter().map(|c| &c.popularity_record)),
    )?;
    Ok(spatial_dispersion(&merged)?)
}

/// Keeps `outcome` when the selected neighbours' expected upload to us
/// covers `demand`; otherwise redoes the greedy loop preferring, among
/// dispersion-minimizing candidates, the highest forwarders.
pub fn capacity_check_and_reselect(
    outcome: &SelectionOutcome,
    own: &PopularityRecord,
    candidates: &[CandidateInfo],
    max_size: usize,
    profile_hint: InteractivityProfile,
    capacities: &BTreeMap<PeerId, f64>,
    demand: f64,
) -> Result<SelectionOutcome, PolicyError> {
    let supply: f64 = outcome
        .selected
        .iter()
        .map(|p| capacities.get(p).copied().unwrap_or(0.0))
        .sum();
    if supply >= demand || candidates.is_empty() {
        return Ok(outcome.clone());
    }
    greedy(own, candidates, max_size, profile_hint, true)
}

/// The `k` neighbours with the highest rates, ties by lowest id, in rank order.
pub fn tit_for_tat_unchoke(rates: &[(PeerId, f64)], k: usize) -> Vec<PeerId> {
    let mut ranked = rates.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(p, _)| p).collect()
}

/// Uniform pick among choked, interested neighbours.
pub fn optimistic_unchoke<R: Rng + ?Sized>(choked: &[PeerId], rng: &mut R) -> Option<PeerId> {
    choked.choose(rng).copied()
}

fn argmin_by_key<K: PartialOrd>(holders: &[&CandidateInfo], key: impl Fn(&CandidateInfo) -> K) -> PeerId {
    holders
        .iter()
        .min_by(|a, b| {
            key(a)
                .partial_cmp(&key(b))
                .unwrap_or(Ordering::Equal)
                .then(a.peer_id.cmp(&b.peer_id))
        })
        .map(|c| c.peer_id)
        .expect("holders is non-empty")
}

/// Which neighbour to ask for `piece`. Kinds without a request rule of
/// their own pick uniformly among holders.
pub fn baseline_request_target<R: Rng + ?Sized>(
    kind: PolicyKind,
    piece: usize,
    neighbours: &[CandidateInfo],
    self_join_time: f64,
    rng: &mut R,
) -> Result<PeerId, PolicyError> {
    let holders: Vec<&CandidateInfo> = neighbours.iter().filter(|c| c.holds(piece)).collect();
    if holders.is_empty() {
        return Err(PolicyError::NoHolder(piece));
    }
    let target = match kind {
        PolicyKind::Llp => argmin_by_key(&holders, |c| c.queue_length),
        PolicyKind::Lrp => argmin_by_key(&holders, |c| c.requests_sent_to),
        PolicyKind::TrackerClosest => {
            argmin_by_key(&holders, |c| (c.join_time - self_join_time).abs())
        }
        PolicyKind::Ynp(n) => {
            let mut by_age = holders.clone();
            by_age.sort_by(|a, b| b.join_time.total_cmp(&a.join_time).then(a.peer_id.cmp(&b.peer_id)));
            by_age.truncate(n);
            by_age.choose(rng).expect("non-empty").peer_id
        }
        PolicyKind::Cnp(n) => {
            let mut by_gap = holders.clone();
            by_gap.sort_by(|a, b| {
                (a.join_time - self_join_time)
                    .abs()
                    .total_cmp(&(b.join_time - self_join_time).abs())
                    .then(a.peer_id.cmp(&b.peer_id))
            });
            by_gap.truncate(n);
            by_gap.choose(rng).expect("non-empty").peer_id
        }
        _ => holders.choose(rng).expect("non-empty").peer_id,
    };
    Ok(target)
}

/// A piece starting playback at a peer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaybackEvent {
    pub peer: PeerId,
    pub piece: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimisticTrigger {
    pub peer: PeerId,
    pub time: f64,
}

/// Per-piece optimistic unchoking: every played piece triggers a new
/// optimistic round at the playing peer.
pub fn per_piece_optimistic_hook(kind: PolicyKind, event: &PlaybackEvent) -> Option<OptimisticTrigger> {
    (kind == PolicyKind::PerPieceOptimistic).then_some(OptimisticTrigger {
        peer: event.peer,
        time: event.time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const T: usize = 8;

    fn record(pairs: &[(usize, u64)]) -> PopularityRecord {
        PopularityRecord::from_counts(1.0, T, pairs.iter().copied()).unwrap()
    }

    fn cand(id: u32, pairs: &[(usize, u64)]) -> CandidateInfo {
        CandidateInfo::new(PeerId(id), record(pairs), bitvec![0; T])
    }

    #[test]
    fn greedy_empty_candidates() {
        let out = select_neighbors_greedy(&record(&[(0, 1)]), &[], 5, InteractivityProfile::High).unwrap();
        assert!(out.selected.is_empty());
        assert!(out.per_step_dispersion.is_empty());
    }

    #[test]
    fn greedy_single_candidate() {
        let own = record(&[(0, 1)]);
        let out = select_neighbors_greedy(&own, &[cand(4, &[(0, 1), (1, 1)])], 3, InteractivityProfile::High)
            .unwrap();
        assert_eq!(out.selected, vec![PeerId(4)]);
        // merged {0:2, 1:1}: D = 1 - 1/3
        assert_eq!(out.per_step_dispersion, vec![1.0 - 1.0 / 3.0]);
    }

    #[test]
    fn greedy_prefers_overlap_then_tiebreaks_by_id() {
        let own = record(&[(0, 1)]);
        let cands = [cand(1, &[(0, 1)]), cand(2, &[(1, 1)]), cand(3, &[(2, 1)])];
        let out = select_neighbors_greedy(&own, &cands, 2, InteractivityProfile::High).unwrap();
        assert_eq!(out.selected, vec![PeerId(1), PeerId(2)]);
        assert_eq!(out.per_step_dispersion, vec![0.5, 1.0 - 1.0 / 3.0]);
    }

    #[test]
    fn greedy_tiebreak_chain() {
        let own = record(&[(0, 1)]);
        let mut a = cand(1, &[(5, 1)]);
        let mut b = cand(2, &[(6, 1)]);
        b.request_rate = 2.0;
        a.request_rate = 1.0;
        let out = select_neighbors_greedy(&own, &[a.clone(), b.clone()], 1, InteractivityProfile::High).unwrap();
        assert_eq!(out.selected, vec![PeerId(2)]);

        // Equal rates: LI prefers a started peer, other profiles fall through to id.
        b.request_rate = 1.0;
        b.has_started = true;
        let li = select_neighbors_greedy(&own, &[a.clone(), b.clone()], 1, InteractivityProfile::Low).unwrap();
        assert_eq!(li.selected, vec![PeerId(2)]);
        let hi = select_neighbors_greedy(&own, &[a, b], 1, InteractivityProfile::High).unwrap();
        assert_eq!(hi.selected, vec![PeerId(1)]);
    }

    #[test]
    fn greedy_rejects_bad_shapes_and_duplicates() {
        let own = record(&[(0, 1)]);
        let mut odd = cand(1, &[]);
        odd.popularity_record = PopularityRecord::new(2.0, T).unwrap();
        assert_eq!(
            select_neighbors_greedy(&own, &[odd], 1, InteractivityProfile::High),
            Err(PolicyError::ShapeMismatch(PeerId(1)))
        );
        assert_eq!(
            select_neighbors_greedy(&own, &[cand(1, &[]), cand(1, &[])], 1, InteractivityProfile::High),
            Err(PolicyError::DuplicateCandidate(PeerId(1)))
        );
    }

    #[test]
    fn set_dispersion_examples() {
        let own = record(&[(0, 100)]);
        assert_eq!(evaluate_set_dispersion(&own, &[]).unwrap(), 0.01);
        let c = cand(1, &[(0, 1), (1, 1), (2, 1)]);
        assert_eq!(evaluate_set_dispersion(&record(&[]), &[&c]).unwrap(), 1.0);
        let c = cand(1, &[(0, 1), (1, 1)]);
        assert_eq!(evaluate_set_dispersion(&record(&[(0, 2)]), &[&c]).unwrap(), 0.5);
        assert!(evaluate_set_dispersion(&record(&[]), &[]).is_err());
    }

    #[test]
    fn capacity_check_identity_and_reselect() {
        let own = record(&[(0, 1)]);
        let mut a = cand(1, &[(3, 1)]);
        let mut b = cand(2, &[(4, 1)]);
        a.recent_forward_rate = 10.0;
        b.recent_forward_rate = 20.0;
        let cands = [a, b];
        let first = select_neighbors_greedy(&own, &cands, 1, InteractivityProfile::High).unwrap();
        assert_eq!(first.selected, vec![PeerId(1)]);

        let rich: BTreeMap<PeerId, f64> = [(PeerId(1), 200.0), (PeerId(2), 200.0)].into();
        let same = capacity_check_and_reselect(&first, &own, &cands, 1, InteractivityProfile::High, &rich, 100.0)
            .unwrap();
        assert_eq!(same, first);

        let poor: BTreeMap<PeerId, f64> = [(PeerId(1), 10.0), (PeerId(2), 10.0)].into();
        let re = capacity_check_and_reselect(&first, &own, &cands, 1, InteractivityProfile::High, &poor, 100.0)
            .unwrap();
        assert_eq!(re.selected, vec![PeerId(2)]);

        let none = capacity_check_and_reselect(
            &SelectionOutcome::default(),
            &own,
            &[],
            1,
            InteractivityProfile::High,
            &poor,
            100.0,
        )
        .unwrap();
        assert_eq!(none, SelectionOutcome::default());
    }

    #[test]
    fn tit_for_tat_examples() {
        let rates = [(PeerId(1), 5.0), (PeerId(2), 9.0), (PeerId(3), 1.0)];
        assert!(tit_for_tat_unchoke(&rates, 0).is_empty());
        assert_eq!(tit_for_tat_unchoke(&rates, 2), vec![PeerId(2), PeerId(1)]);
        assert_eq!(tit_for_tat_unchoke(&rates, 7).len(), 3);
        let tied = [(PeerId(4), 1.0), (PeerId(2), 1.0)];
        assert_eq!(tit_for_tat_unchoke(&tied, 1), vec![PeerId(2)]);
    }

    #[test]
    fn optimistic_unchoke_uniformity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(optimistic_unchoke(&[], &mut rng), None);
        assert_eq!(optimistic_unchoke(&[PeerId(3)], &mut rng), Some(PeerId(3)));
        let peers: Vec<PeerId> = (0..10).map(PeerId).collect();
        let mut counts = BTreeMap::new();
        for _ in 0..10_000 {
            *counts.entry(optimistic_unchoke(&peers, &mut rng).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 10);
        for c in counts.values() {
            assert!((850..=1150).contains(c), "{c}");
        }
    }

    fn holders(specs: &[(u32, f64, usize, u64)]) -> Vec<CandidateInfo> {
        specs
            .iter()
            .map(|&(id, join, queue, sent)| {
                let mut c = CandidateInfo::new(PeerId(id), record(&[]), bitvec![1; T]);
                c.join_time = join;
                c.queue_length = queue;
                c.requests_sent_to = sent;
                c
            })
            .collect()
    }

    #[test]
    fn request_target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hs = holders(&[(1, 0.0, 4, 0), (2, 0.0, 1, 0), (3, 0.0, 7, 3)]);
        assert_eq!(baseline_request_target(PolicyKind::Llp, 0, &hs, 0.0, &mut rng).unwrap(), PeerId(2));
        assert_eq!(baseline_request_target(PolicyKind::Lrp, 0, &hs, 0.0, &mut rng).unwrap(), PeerId(1));

        let single = holders(&[(5, 100.0, 0, 0)]);
        assert_eq!(
            baseline_request_target(PolicyKind::Ynp(2), 0, &single, 0.0, &mut rng).unwrap(),
            PeerId(5)
        );
        let mut none = single.clone();
        none[0].buffer_summary.fill(false);
        assert_eq!(
            baseline_request_target(PolicyKind::Llp, 0, &none, 0.0, &mut rng),
            Err(PolicyError::NoHolder(0))
        );
    }

    #[test]
    fn ynp_and_cnp_pick_within_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hs = holders(&[(1, 10.0, 0, 0), (2, 50.0, 0, 0), (3, 40.0, 0, 0), (4, 20.0, 0, 0)]);
        for _ in 0..100 {
            let y = baseline_request_target(PolicyKind::Ynp(2), 0, &hs, 0.0, &mut rng).unwrap();
            assert!(y == PeerId(2) || y == PeerId(3));
            let c = baseline_request_target(PolicyKind::Cnp(2), 0, &hs, 18.0, &mut rng).unwrap();
            assert!(c == PeerId(4) || c == PeerId(1));
        }
        let t = baseline_request_target(PolicyKind::TrackerClosest, 0, &hs, 43.0, &mut rng).unwrap();
        assert_eq!(t, PeerId(3));
    }

    #[test]
    fn per_piece_hook() {
        let ev = PlaybackEvent {
            peer: PeerId(1),
            piece: 3,
            time: 12.5,
        };
        assert_eq!(
            per_piece_optimistic_hook(PolicyKind::PerPieceOptimistic, &ev),
            Some(OptimisticTrigger {
                peer: PeerId(1),
                time: 12.5
            })
        );
        assert_eq!(per_piece_optimistic_hook(PolicyKind::TitForTat, &ev), None);
    }

    #[test]
    fn policy_names_round_trip() {
        for name in POLICY_NAMES {
            let k = PolicyKind::from_name(name, None).unwrap();
            assert_eq!(k.name(), name);
            assert_eq!(k.to_string().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("YNP(4)".parse::<PolicyKind>().unwrap(), PolicyKind::Ynp(4));
        assert!(PolicyKind::from_name("cnp", Some(1)).is_err());
        let err = PolicyKind::from_name("fastest", None).unwrap_err();
        assert!(err.to_string().contains("dispersiongreedy"));
    }

    fn arb_record() -> impl Strategy<Value = PopularityRecord> {
        proptest::collection::btree_map(0..T, 1u64..4, 0..T)
            .prop_map(|m| PopularityRecord::from_counts(1.0, T, m).unwrap())
    }

    proptest! {
        #[test]
        fn greedy_step_never_beaten_by_alternative(
            own in arb_record(),
            recs in proptest::collection::vec(arb_record(), 0..7),
            max_size in 0usize..8,
        ) {
            let cands: Vec<CandidateInfo> = recs
                .into_iter()
                .enumerate()
                .map(|(i, r)| CandidateInfo::new(PeerId(i as u32), r, bitvec![0; T]))
                .collect();
            let out = select_neighbors_greedy(&own, &cands, max_size, InteractivityProfile::High).unwrap();
            prop_assert_eq!(out.selected.len(), max_size.min(cands.len()));
            let mut chosen: Vec<&CandidateInfo> = Vec::new();
            for (step, id) in out.selected.iter().enumerate() {
                let pick = cands.iter().find(|c| c.peer_id == *id).unwrap();
                let mut with_pick = chosen.clone();
                with_pick.push(pick);
                let d_pick = evaluate_set_dispersion(&own, &with_pick).unwrap_or(1.0);
                for alt in cands.iter().filter(|c| !chosen.iter().any(|s| s.peer_id == c.peer_id)) {
                    let mut with_alt = chosen.clone();
                    with_alt.push(alt);
                    let d_alt = evaluate_set_dispersion(&own, &with_alt).unwrap_or(1.0);
                    prop_assert!(d_pick <= d_alt + 1e-12, "step {step}: {d_pick} > {d_alt}");
                }
                prop_assert!((out.per_step_dispersion[step] - d_pick).abs() < 1e-12);
                chosen.push(pick);
            }
            let again = select_neighbors_greedy(&own, &cands, max_size, InteractivityProfile::High).unwrap();
            prop_assert_eq!(again, out);
        }

        #[test]
        fn tit_for_tat_is_scale_invariant(
            rates in proptest::collection::vec(0.0f64..1e6, 0..12),
            k in 0usize..8,
            scale in 0.001f64..1000.0,
        ) {
            let a: Vec<(PeerId, f64)> = rates.iter().enumerate().map(|(i, r)| (PeerId(i as u32), *r)).collect();
            let b: Vec<(PeerId, f64)> = a.iter().map(|(p, r)| (*p, r * scale)).collect();
            let sa: BTreeSet<PeerId> = tit_for_tat_unchoke(&a, k).into_iter().collect();
            let sb: BTreeSet<PeerId> = tit_for_tat_unchoke(&b, k).into_iter().collect();
            prop_assert_eq!(sa.len(), k.min(a.len()));
            let ma: Vec<f64> = { let mut v: Vec<f64> = a.iter().filter(|(p, _)| sa.contains(p)).map(|x| x.1).collect(); v.sort_by(f64::total_cmp); v };
            let mut sorted = rates.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            let mut top: Vec<f64> = sorted.into_iter().take(k).collect();
            top.sort_by(f64::total_cmp);
            prop_assert_eq!(ma, top);
            prop_assert_eq!(sa, sb);
        }
    }
}
