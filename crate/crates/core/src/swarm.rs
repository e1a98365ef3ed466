//! BitTorrent-like swarm mechanics: content geometry, per-peer buffer and
//! slot state, the tracker, rarest-first piece choice and request pipelining.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use bitvec::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::PopularityRecord;

pub const DEFAULT_PIECE_SIZE: u64 = 262_144;
pub const DEFAULT_BLOCK_SIZE: u64 = 16_384;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwarmError {
    #[error("invalid content: {0}")]
    InvalidContent(String),
    #[error("invalid swarm config: {0}")]
    InvalidConfig(String),
    #[error("peer {peer} already holds block {block:?}")]
    DuplicateBlock { peer: PeerId, block: BlockRef },
    #[error("block {0:?} is outside the content")]
    BlockOutOfRange(BlockRef),
    #[error("seed {0} cannot receive blocks")]
    SeedReceive(PeerId),
    #[error("peer {0} is already registered with the tracker")]
    DuplicateJoin(PeerId),
    #[error("peer {0} is not registered with the tracker")]
    UnknownPeer(PeerId),
    #[error("join at {now} precedes the previous join at {last}")]
    JoinOutOfOrder { now: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockRef {
    pub piece: u32,
    pub block: u32,
}

impl BlockRef {
    pub fn new(piece: usize, block: usize) -> Self {
        Self {
            piece: piece as u32,
            block: block as u32,
        }
    }
}

/// Object geometry. The last piece, and the last block of that piece, may be short.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentSpec {
    pub total_size: u64,
    pub piece_size: u64,
    pub block_size: u64,
    /// Bytes per second of playback.
    pub playback_rate: f64,
}

impl Default for ContentSpec {
    fn default() -> Self {
        Self::for_object(300.0, crate::workload::DEFAULT_PLAYBACK_RATE)
    }
}

impl ContentSpec {
    pub fn for_object(object_length: f64, playback_rate: f64) -> Self {
        Self {
            total_size: (object_length * playback_rate).round() as u64,
            piece_size: DEFAULT_PIECE_SIZE,
            block_size: DEFAULT_BLOCK_SIZE,
            playback_rate,
        }
    }

    pub fn validate(&self) -> Result<(), SwarmError> {
        let err = |m: &str| Err(SwarmError::InvalidContent(m.into()));
        if self.total_size == 0 || self.piece_size == 0 || self.block_size == 0 {
            return err("sizes must be positive");
        }
        if !self.piece_size.is_multiple_of(self.block_size) {
            return err("block_size must divide piece_size");
        }
        if !(self.playback_rate.is_finite() && self.playback_rate > 0.0) {
            return err("playback_rate must be positive");
        }
        Ok(())
    }

    pub fn num_pieces(&self) -> usize {
        self.total_size.div_ceil(self.piece_size) as usize
    }

    pub fn piece_len(&self, piece: usize) -> u64 {
        let start = piece as u64 * self.piece_size;
        self.piece_size.min(self.total_size.saturating_sub(start))
    }

    pub fn blocks_in_piece(&self, piece: usize) -> usize {
        self.piece_len(piece).div_ceil(self.block_size) as usize
    }

    pub fn block_len(&self, b: BlockRef) -> u64 {
        let start = b.block as u64 * self.block_size;
        self.block_size
            .min(self.piece_len(b.piece as usize).saturating_sub(start))
    }

    pub fn object_length(&self) -> f64 {
        self.total_size as f64 / self.playback_rate
    }

    /// Playback seconds covered by one full piece; also the popularity bin width.
    pub fn piece_duration(&self) -> f64 {
        self.piece_size as f64 / self.playback_rate
    }

    pub fn piece_start_time(&self, piece: usize) -> f64 {
        (piece as u64 * self.piece_size) as f64 / self.playback_rate
    }

    pub fn piece_end_time(&self, piece: usize) -> f64 {
        (piece as u64 * self.piece_size + self.piece_len(piece)) as f64 / self.playback_rate
    }

    /// Pieces overlapping `[start, end)` seconds, each with the playback time
    /// it contributes to that interval.
    pub fn pieces_for_interval(&self, start: f64, end: f64) -> Vec<(usize, f64)> {
        let end = end.min(self.object_length());
        if end <= start {
            return Vec::new();
        }
        let first = ((start / self.piece_duration()).floor() as usize).min(self.num_pieces() - 1);
        (first..self.num_pieces())
            .take_while(|&p| self.piece_start_time(p) < end)
            .filter_map(|p| {
                let from = self.piece_start_time(p).max(start);
                let to = self.piece_end_time(p).min(end);
                (to > from).then_some((p, to - from))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leecher,
    Seed,
}

/// Per-peer protocol state.
#[derive(Debug, Clone)]
pub struct PeerState {
    pub peer_id: PeerId,
    pub role: Role,
    pub have_map: BitVec,
    /// Received-block bitsets of pieces that are not yet complete.
    pub partial_pieces: BTreeMap<usize, BitVec>,
    pub upload_capacity: f64,
    pub neighbourhood: BTreeSet<PeerId>,
    pub regular_slots: BTreeSet<PeerId>,
    pub optimistic_slot: Option<PeerId>,
    /// Per-neighbour download rate to this peer over the last unchoke interval.
    pub download_rate_history: BTreeMap<PeerId, f64>,
    /// Per-neighbour rate of forwarding our content to third parties.
    pub forward_rate_history: BTreeMap<PeerId, f64>,
    pub popularity_record: PopularityRecord,
    pub join_time: f64,
}

impl PeerState {
    pub fn new_leecher(
        peer_id: PeerId,
        content: &ContentSpec,
        upload_capacity: f64,
        join_time: f64,
    ) -> Self {
        Self::with_role(peer_id, Role::Leecher, content, upload_capacity, join_time)
    }

    pub fn new_seed(
        peer_id: PeerId,
        content: &ContentSpec,
        upload_capacity: f64,
        join_time: f64,
    ) -> Self {
        Self::with_role(peer_id, Role::Seed, content, upload_capacity, join_time)
    }

    fn with_role(
        peer_id: PeerId,
        role: Role,
        content: &ContentSpec,
        upload_capacity: f64,
        join_time: f64,
    ) -> Self {
        let n = content.num_pieces();
        let record = PopularityRecord::new(content.piece_duration(), n)
            .expect("validated content has a positive piece duration");
        Self {
            peer_id,
            role,
            have_map: bitvec![usize, Lsb0; (role == Role::Seed) as usize; n],
            partial_pieces: BTreeMap::new(),
            upload_capacity,
            neighbourhood: BTreeSet::new(),
            regular_slots: BTreeSet::new(),
            optimistic_slot: None,
            download_rate_history: BTreeMap::new(),
            forward_rate_history: BTreeMap::new(),
            popularity_record: record,
            join_time,
        }
    }

    pub fn is_seed(&self) -> bool {
        self.role == Role::Seed
    }

    pub fn has_piece(&self, piece: usize) -> bool {
        self.have_map.get(piece).is_some_and(|b| *b)
    }

    pub fn has_block(&self, b: BlockRef) -> bool {
        let piece = b.piece as usize;
        self.has_piece(piece)
            || self
                .partial_pieces
                .get(&piece)
                .and_then(|bits| bits.get(b.block as usize).map(|x| *x))
                .unwrap_or(false)
    }

    pub fn piece_count(&self) -> usize {
        self.have_map.count_ones()
    }

    pub fn has_started(&self) -> bool {
        self.have_map.any()
    }

    /// Blocks of `piece` this peer still lacks, in block order.
    pub fn missing_blocks(&self, content: &ContentSpec, piece: usize) -> Vec<BlockRef> {
        if self.has_piece(piece) {
            return Vec::new();
        }
        let partial = self.partial_pieces.get(&piece);
        (0..content.blocks_in_piece(piece))
            .filter(|&b| !partial.is_some_and(|bits| bits[b]))
            .map(|b| BlockRef::new(piece, b))
            .collect()
    }

    /// Occupied upload slots, regular plus optimistic.
    pub fn unchoked_count(&self) -> usize {
        self.regular_slots.len() + self.optimistic_slot.is_some() as usize
    }

    pub fn unchokes(&self, peer: PeerId) -> bool {
        self.regular_slots.contains(&peer) || self.optimistic_slot == Some(peer)
    }

    /// Marks a received block. Returns `true` when it completed its piece,
    /// which the caller must announce to the neighbourhood.
    pub fn record_block(&mut self, content: &ContentSpec, b: BlockRef) -> Result<bool, SwarmError> {
        if self.is_seed() {
            return Err(SwarmError::SeedReceive(self.peer_id));
        }
        let piece = b.piece as usize;
        let nblocks = if piece < content.num_pieces() {
            content.blocks_in_piece(piece)
        } else {
            0
        };
        if (b.block as usize) >= nblocks {
            return Err(SwarmError::BlockOutOfRange(b));
        }
        if self.has_block(b) {
            return Err(SwarmError::DuplicateBlock {
                peer: self.peer_id,
                block: b,
            });
        }
        let bits = self
            .partial_pieces
            .entry(piece)
            .or_insert_with(|| bitvec![usize, Lsb0; 0; nblocks]);
        bits.set(b.block as usize, true);
        if bits.all() {
            self.partial_pieces.remove(&piece);
            self.have_map.set(piece, true);
            return Ok(true);
        }
        Ok(false)
    }
}

/// Unchoke and neighbourhood parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub unchoke_interval: f64,
    pub optimistic_interval: f64,
    pub neighbourhood_min: usize,
    pub neighbourhood_max: usize,
    /// Size a newcomer aims for inside `[neighbourhood_min, neighbourhood_max]`.
    pub neighbourhood_target: usize,
    pub neighbourhood_floor: usize,
    pub pipeline_depth: usize,
    pub regular_slots: usize,
    pub optimistic_slots: usize,
    pub tracker_list_size: usize,
    pub tracker_update_interval: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            unchoke_interval: 10.0,
            optimistic_interval: 30.0,
            neighbourhood_min: 40,
            neighbourhood_max: 80,
            neighbourhood_target: 60,
            neighbourhood_floor: 20,
            pipeline_depth: 5,
            regular_slots: 4,
            optimistic_slots: 1,
            tracker_list_size: 40,
            tracker_update_interval: 1800.0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), SwarmError> {
        let err = |m: String| Err(SwarmError::InvalidConfig(m));
        if !(self.unchoke_interval.is_finite() && self.unchoke_interval > 0.0) {
            return err("unchoke_interval must be positive".into());
        }
        let ratio = self.optimistic_interval / self.unchoke_interval;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return err("optimistic_interval must be a positive multiple of unchoke_interval".into());
        }
        if self.neighbourhood_floor >= self.neighbourhood_min {
            return err("neighbourhood_floor must be below neighbourhood_min".into());
        }
        if !(self.neighbourhood_min <= self.neighbourhood_target
            && self.neighbourhood_target <= self.neighbourhood_max)
        {
            return err("neighbourhood_target must lie in [neighbourhood_min, neighbourhood_max]".into());
        }
        if self.pipeline_depth == 0 {
            return err("pipeline_depth must be positive".into());
        }
        if self.optimistic_slots > 1 {
            return err("at most one optimistic slot is supported".into());
        }
        if self.regular_slots + self.optimistic_slots == 0 {
            return err("at least one upload slot is required".into());
        }
        if !(self.tracker_update_interval.is_finite() && self.tracker_update_interval > 0.0) {
            return err("tracker_update_interval must be positive".into());
        }
        Ok(())
    }

    pub fn total_slots(&self) -> usize {
        self.regular_slots + self.optimistic_slots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerEntry {
    pub address: String,
    pub join_time: f64,
    pub last_update: f64,
}

/// Central registry handing out random peer lists.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub registry: BTreeMap<PeerId, TrackerEntry>,
    pub update_interval: f64,
    pub list_size: usize,
    last_join: f64,
}

impl TrackerState {
    pub fn new(list_size: usize, update_interval: f64) -> Self {
        Self {
            registry: BTreeMap::new(),
            update_interval,
            list_size,
            last_join: f64::NEG_INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    pub fn contains(&self, p: PeerId) -> bool {
        self.registry.contains_key(&p)
    }

    pub fn join_time(&self, p: PeerId) -> Option<f64> {
        self.registry.get(&p).map(|e| e.join_time)
    }

    fn sample<R: Rng + ?Sized>(&self, p: PeerId, exclude: &BTreeSet<PeerId>, rng: &mut R) -> Vec<PeerId> {
        let pool: Vec<PeerId> = self
            .registry
            .keys()
            .copied()
            .filter(|q| *q != p && !exclude.contains(q))
            .collect();
        let mut picked: Vec<PeerId> = pool
            .choose_multiple(rng, self.list_size.min(pool.len()))
            .copied()
            .collect();
        picked.sort_unstable();
        picked
    }

    /// Registers `p` and returns a uniform sample of the other registered peers.
    pub fn join<R: Rng + ?Sized>(&mut self, p: PeerId, now: f64, rng: &mut R) -> Result<Vec<PeerId>, SwarmError> {
        if self.contains(p) {
            return Err(SwarmError::DuplicateJoin(p));
        }
        if now < self.last_join {
            return Err(SwarmError::JoinOutOfOrder {
                now,
                last: self.last_join,
            });
        }
        let list = self.sample(p, &BTreeSet::new(), rng);
        self.last_join = now;
        self.registry.insert(
            p,
            TrackerEntry {
                address: format!("sim://peer/{p}"),
                join_time: now,
                last_update: now,
            },
        );
        Ok(list)
    }

    /// Fresh sample for a registered peer, skipping `exclude` (its current neighbours).
    pub fn refill<R: Rng + ?Sized>(
        &self,
        p: PeerId,
        exclude: &BTreeSet<PeerId>,
        rng: &mut R,
    ) -> Result<Vec<PeerId>, SwarmError> {
        if !self.contains(p) {
            return Err(SwarmError::UnknownPeer(p));
        }
        Ok(self.sample(p, exclude, rng))
    }

    /// Up to `list_size` registered peers with join times closest to `p`'s,
    /// ties by id.
    pub fn closest_by_arrival(&self, p: PeerId, exclude: &BTreeSet<PeerId>) -> Result<Vec<PeerId>, SwarmError> {
        let own = self.join_time(p).ok_or(SwarmError::UnknownPeer(p))?;
        let mut pool: Vec<(f64, PeerId)> = self
            .registry
            .iter()
            .filter(|(q, _)| **q != p && !exclude.contains(q))
            .map(|(q, e)| ((e.join_time - own).abs(), *q))
            .collect();
        pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(pool.into_iter().take(self.list_size).map(|(_, q)| q).collect())
    }

    pub fn update(&mut self, p: PeerId, now: f64) -> Result<(), SwarmError> {
        let e = self.registry.get_mut(&p).ok_or(SwarmError::UnknownPeer(p))?;
        e.last_update = now;
        Ok(())
    }

    pub fn leave(&mut self, p: PeerId) -> Result<(), SwarmError> {
        self.registry
            .remove(&p)
            .map(|_| ())
            .ok_or(SwarmError::UnknownPeer(p))
    }
}

/// Rarest-first over every piece `peer` lacks.
pub fn rarest_first<R: Rng + ?Sized>(
    peer: &PeerState,
    neighbour_have_maps: &[&BitSlice],
    rng: &mut R,
) -> Option<usize> {
    rarest_first_among(peer, neighbour_have_maps, 0..peer.have_map.len(), rng)
}

/// Among `candidates` that `peer` lacks and at least one neighbour holds,
/// picks one with the fewest neighbour replicas; ties uniformly at random.
pub fn rarest_first_among<R, I>(
    peer: &PeerState,
    neighbour_have_maps: &[&BitSlice],
    candidates: I,
    rng: &mut R,
) -> Option<usize>
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = usize>,
{
    let mut best = usize::MAX;
    let mut ties: Vec<usize> = Vec::new();
    for piece in candidates {
        if peer.has_piece(piece) {
            continue;
        }
        let replicas = neighbour_have_maps
            .iter()
            .filter(|m| m.get(piece).is_some_and(|b| *b))
            .count();
        if replicas == 0 {
            continue;
        }
        if replicas < best {
            best = replicas;
            ties.clear();
        }
        if replicas == best {
            ties.push(piece);
        }
    }
    ties.choose(rng).copied()
}

/// New block requests that top the pipeline back up to `depth`, drawn in
/// order from `needed`.
pub fn pipeline_requests<I>(outstanding: usize, depth: usize, needed: I) -> Vec<BlockRef>
where
    I: IntoIterator<Item = BlockRef>,
{
    needed
        .into_iter()
        .take(depth.saturating_sub(outstanding))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn content(pieces: u64) -> ContentSpec {
        ContentSpec {
            total_size: pieces * DEFAULT_PIECE_SIZE,
            piece_size: DEFAULT_PIECE_SIZE,
            block_size: DEFAULT_BLOCK_SIZE,
            playback_rate: 65_536.0,
        }
    }

    fn bits(v: &[u8]) -> BitVec {
        v.iter().map(|b| *b == 1).collect()
    }

    #[test]
    fn geometry_with_short_last_piece() {
        let c = ContentSpec {
            total_size: 2 * DEFAULT_PIECE_SIZE + 20_000,
            ..content(1)
        };
        c.validate().unwrap();
        assert_eq!(c.num_pieces(), 3);
        assert_eq!(c.piece_len(2), 20_000);
        assert_eq!(c.blocks_in_piece(0), 16);
        assert_eq!(c.blocks_in_piece(2), 2);
        assert_eq!(c.block_len(BlockRef::new(2, 1)), 20_000 - DEFAULT_BLOCK_SIZE);
        assert_eq!(c.piece_duration(), 4.0);
    }

    #[test]
    fn geometry_validation() {
        let bad = ContentSpec {
            block_size: 10_000,
            ..content(2)
        };
        assert!(bad.validate().is_err());
        let zero = ContentSpec {
            total_size: 0,
            ..content(2)
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn pieces_for_interval_clips_durations() {
        let c = content(10); // 4 s per piece
        let ps = c.pieces_for_interval(2.0, 9.0);
        assert_eq!(ps, vec![(0, 2.0), (1, 4.0), (2, 1.0)]);
        assert_eq!(c.pieces_for_interval(8.0, 12.0), vec![(2, 4.0)]);
        assert!(c.pieces_for_interval(5.0, 5.0).is_empty());
        assert_eq!(c.pieces_for_interval(36.0, 100.0), vec![(9, 4.0)]);
    }

    #[test]
    fn record_block_completion_and_duplicates() {
        let c = content(2);
        let mut p = PeerState::new_leecher(PeerId(1), &c, 1.0, 0.0);
        assert!(!p.record_block(&c, BlockRef::new(0, 0)).unwrap());
        assert!(matches!(
            p.record_block(&c, BlockRef::new(0, 0)),
            Err(SwarmError::DuplicateBlock { .. })
        ));
        for b in 1..15 {
            assert!(!p.record_block(&c, BlockRef::new(0, b)).unwrap());
        }
        assert!(!p.has_piece(0));
        assert!(p.record_block(&c, BlockRef::new(0, 15)).unwrap());
        assert!(p.has_piece(0));
        assert!(p.partial_pieces.is_empty());
        assert!(matches!(
            p.record_block(&c, BlockRef::new(0, 3)),
            Err(SwarmError::DuplicateBlock { .. })
        ));
        assert!(matches!(
            p.record_block(&c, BlockRef::new(0, 16)),
            Err(SwarmError::BlockOutOfRange(_))
        ));
        let mut s = PeerState::new_seed(PeerId(0), &c, 1.0, 0.0);
        assert!(s.have_map.all());
        assert!(s.record_block(&c, BlockRef::new(1, 0)).is_err());
    }

    #[test]
    fn missing_blocks_skip_received() {
        let c = content(1);
        let mut p = PeerState::new_leecher(PeerId(1), &c, 1.0, 0.0);
        p.record_block(&c, BlockRef::new(0, 0)).unwrap();
        p.record_block(&c, BlockRef::new(0, 2)).unwrap();
        let m = p.missing_blocks(&c, 0);
        assert_eq!(m.len(), 14);
        assert_eq!(m[0], BlockRef::new(0, 1));
        assert_eq!(m[1], BlockRef::new(0, 3));
    }

    #[test]
    fn rarest_first_examples() {
        let c = content(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PeerState::new_leecher(PeerId(9), &c, 1.0, 0.0);

        let only = bits(&[0, 0, 1, 0]);
        assert_eq!(rarest_first(&p, &[&only], &mut rng), Some(2));

        // Replica counts [3, 1, 2, 1].
        let maps = [bits(&[1, 1, 1, 0]), bits(&[1, 0, 1, 1]), bits(&[1, 0, 0, 0])];
        let refs: Vec<&BitSlice> = maps.iter().map(|m| m.as_bitslice()).collect();
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let pick = rarest_first(&p, &refs, &mut rng).unwrap();
            assert!(pick == 1 || pick == 3);
            seen.insert(pick);
        }
        assert_eq!(seen.len(), 2);

        p.have_map.fill(true);
        assert_eq!(rarest_first(&p, &refs, &mut rng), None);
    }

    #[test]
    fn pipeline_examples() {
        let needed: Vec<BlockRef> = (0..16).map(|b| BlockRef::new(0, b)).collect();
        assert_eq!(pipeline_requests(0, 5, needed.iter().copied()).len(), 5);
        assert!(pipeline_requests(5, 5, needed.iter().copied()).is_empty());
        assert_eq!(pipeline_requests(0, 5, needed[..3].iter().copied()).len(), 3);
    }

    #[test]
    fn tracker_join_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = TrackerState::new(40, 1800.0);
        assert!(t.join(PeerId(0), 0.0, &mut rng).unwrap().is_empty());
        assert!(t.contains(PeerId(0)));
        assert!(matches!(
            t.join(PeerId(0), 1.0, &mut rng),
            Err(SwarmError::DuplicateJoin(_))
        ));
        for i in 1..=3 {
            t.join(PeerId(i), i as f64, &mut rng).unwrap();
        }
        let list = t.join(PeerId(10), 5.0, &mut rng).unwrap();
        assert_eq!(list, vec![PeerId(0), PeerId(1), PeerId(2), PeerId(3)]);
        assert!(matches!(
            t.join(PeerId(11), 4.0, &mut rng),
            Err(SwarmError::JoinOutOfOrder { .. })
        ));
    }

    #[test]
    fn tracker_join_sample_is_seed_reproducible() {
        let build = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = TrackerState::new(40, 1800.0);
            for i in 0..100 {
                t.join(PeerId(i), i as f64, &mut rng).unwrap();
            }
            t.join(PeerId(500), 200.0, &mut rng).unwrap()
        };
        let a = build(5);
        assert_eq!(a.len(), 40);
        assert_eq!(a, build(5));
        assert_ne!(a, build(6));
        let unique: BTreeSet<_> = a.iter().collect();
        assert_eq!(unique.len(), 40);
        assert!(!a.contains(&PeerId(500)));
    }

    #[test]
    fn tracker_refill_respects_exclusions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = TrackerState::new(40, 1800.0);
        for i in 0..10 {
            t.join(PeerId(i), 0.0, &mut rng).unwrap();
        }
        let exclude: BTreeSet<PeerId> = (0..5).map(PeerId).collect();
        let list = t.refill(PeerId(9), &exclude, &mut rng).unwrap();
        assert_eq!(list, vec![PeerId(5), PeerId(6), PeerId(7), PeerId(8)]);
        let all: BTreeSet<PeerId> = (0..9).map(PeerId).collect();
        assert!(t.refill(PeerId(9), &all, &mut rng).unwrap().is_empty());
        assert!(matches!(
            t.refill(PeerId(77), &exclude, &mut rng),
            Err(SwarmError::UnknownPeer(_))
        ));
    }

    #[test]
    fn tracker_closest_by_arrival() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = TrackerState::new(2, 1800.0);
        for (i, at) in [0.0, 10.0, 19.0, 21.0, 40.0].iter().enumerate() {
            t.join(PeerId(i as u32), *at, &mut rng).unwrap();
        }
        let got = t.closest_by_arrival(PeerId(2), &BTreeSet::new()).unwrap();
        assert_eq!(got, vec![PeerId(3), PeerId(1)]);
        t.leave(PeerId(3)).unwrap();
        assert!(t.leave(PeerId(3)).is_err());
    }

    #[test]
    fn swarm_config_validation() {
        SwarmConfig::default().validate().unwrap();
        let bad = SwarmConfig {
            optimistic_interval: 25.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SwarmConfig {
            neighbourhood_floor: 40,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SwarmConfig {
            optimistic_slots: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
