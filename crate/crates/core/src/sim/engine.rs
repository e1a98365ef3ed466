use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use bitvec::slice::BitSlice;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::playback::{Playback, PlaybackAction};
use super::qos::{continuity_index, AggregateQos, PeerQos, QosReport, SwarmTotals};
use super::{derive_seed, RunOptions, SimConfig, SimError, SimOutput};
use crate::metrics::{merge_records, DispersionReport};
use crate::policies::{
    baseline_request_target, capacity_check_and_reselect, optimistic_unchoke, per_piece_optimistic_hook,
    select_neighbors_greedy, tit_for_tat_unchoke, CandidateInfo, FormationRule, PlaybackEvent, PolicyKind,
    RegularRule,
};
use crate::swarm::{rarest_first_among, BlockRef, ContentSpec, PeerId, PeerState, SwarmConfig, TrackerState};
use crate::workload::{classify_session, InteractivityProfile, Workload};

const STREAM_TRACKER: u64 = 1;
const STREAM_PIECE: u64 = 2;
const STREAM_POLICY: u64 = 3;
const STREAM_UNCHOKE: u64 = 4;
const STREAM_SETUP: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    PeerArrival { peer: PeerId },
    RequestIssued { peer: PeerId, index: usize },
    BlockTransferComplete { from: PeerId, to: PeerId, block: BlockRef, transfer: u64 },
    UnchokeTick { peer: PeerId },
    OptimisticTick { peer: PeerId, periodic: bool },
    PlaybackTick { peer: PeerId, generation: u64 },
    TrackerUpdate { peer: PeerId },
    PeerDeparture { peer: PeerId },
}

impl Event {
    fn kind(&self) -> &'static str {
        match self {
            Event::PeerArrival { .. } => "peer_arrival",
            Event::RequestIssued { .. } => "request_issued",
            Event::BlockTransferComplete { .. } => "block_transfer_complete",
            Event::UnchokeTick { .. } => "unchoke_tick",
            Event::OptimisticTick { .. } => "optimistic_tick",
            Event::PlaybackTick { .. } => "playback_tick",
            Event::TrackerUpdate { .. } => "tracker_update",
            Event::PeerDeparture { .. } => "peer_departure",
        }
    }

    fn actor(&self) -> PeerId {
        match *self {
            Event::PeerArrival { peer }
            | Event::RequestIssued { peer, .. }
            | Event::UnchokeTick { peer }
            | Event::OptimisticTick { peer, .. }
            | Event::PlaybackTick { peer, .. }
            | Event::TrackerUpdate { peer }
            | Event::PeerDeparture { peer } => peer,
            Event::BlockTransferComplete { to, .. } => to,
        }
    }

    fn payload(&self) -> serde_json::Value {
        match *self {
            Event::RequestIssued { index, .. } => json!({ "index": index }),
            Event::BlockTransferComplete { from, block, .. } => {
                json!({ "from": from, "piece": block.piece, "block": block.block })
            }
            Event::OptimisticTick { periodic, .. } => json!({ "periodic": periodic }),
            Event::PlaybackTick { generation, .. } => json!({ "generation": generation }),
            _ => json!({}),
        }
    }
}

struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, seq) first.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct Flow {
    queue: VecDeque<BlockRef>,
    inflight: Option<(BlockRef, u64)>,
}

impl Flow {
    fn pending(&self) -> usize {
        self.queue.len() + self.inflight.is_some() as usize
    }
}

struct Peer {
    state: PeerState,
    session: Option<usize>,
    profile: Option<InteractivityProfile>,
    online: bool,
    joined: bool,
    finished: bool,
    lingers: bool,
    left_at: Option<f64>,
    playback: Playback,
    requests_issued: usize,
    arrivals: Vec<Option<f64>>,
    /// Piece -> uploader it is being fetched from.
    assigned: BTreeMap<usize, PeerId>,
    /// Blocks queued or in flight towards this peer.
    pending: BTreeSet<BlockRef>,
    requests_sent: BTreeMap<PeerId, u64>,
    recv_window: BTreeMap<PeerId, u64>,
    sent_window: BTreeMap<PeerId, u64>,
    forward_window: BTreeMap<PeerId, u64>,
    block_source: BTreeMap<BlockRef, PeerId>,
    uploaded: u64,
    downloaded: u64,
    first_piece_at: Option<f64>,
    last_block_at: Option<f64>,
    formation: Option<DispersionReport>,
    neighbours_at_join: usize,
    unchoke_ticks: u64,
}

impl Peer {
    fn new(state: PeerState, startup_pieces: usize, pieces: usize) -> Self {
        Self {
            state,
            session: None,
            profile: None,
            online: false,
            joined: false,
            finished: false,
            lingers: false,
            left_at: None,
            playback: Playback::new(startup_pieces),
            requests_issued: 0,
            arrivals: vec![None; pieces],
            assigned: BTreeMap::new(),
            pending: BTreeSet::new(),
            requests_sent: BTreeMap::new(),
            recv_window: BTreeMap::new(),
            sent_window: BTreeMap::new(),
            forward_window: BTreeMap::new(),
            block_source: BTreeMap::new(),
            uploaded: 0,
            downloaded: 0,
            first_piece_at: None,
            last_block_at: None,
            formation: None,
            neighbours_at_join: 0,
            unchoke_ticks: 0,
        }
    }

    /// Whether `piece` is ahead of the playback frontier and still missing.
    fn wants(&self, piece: usize) -> bool {
        !self.state.has_piece(piece) && self.playback.upcoming().iter().any(|(p, _)| *p == piece)
    }

    fn interested_in(&self, other: &PeerState) -> bool {
        self.playback
            .upcoming()
            .iter()
            .any(|(p, _)| !self.state.has_piece(*p) && other.has_piece(*p))
    }
}

fn idx(p: PeerId) -> usize {
    p.0 as usize
}

fn violation(time: f64, message: impl Into<String>) -> SimError {
    SimError::InvariantViolation {
        time,
        message: message.into(),
    }
}

pub(super) struct Engine<'a> {
    policy: PolicyKind,
    content: ContentSpec,
    swarm: SwarmConfig,
    workload: &'a Workload,
    seed: u64,
    lookahead: usize,
    horizon: f64,
    opts: RunOptions,
    peers: Vec<Peer>,
    seeds: BTreeSet<PeerId>,
    flows: BTreeMap<(PeerId, PeerId), Flow>,
    tracker: TrackerState,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
    next_transfer: u64,
    active_sessions: usize,
    rng_tracker: ChaCha8Rng,
    rng_piece: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
    rng_unchoke: ChaCha8Rng,
    uploaded: u64,
    downloaded: u64,
    blocks: u64,
    events: u64,
    log: Option<String>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        cfg: &SimConfig,
        policy: PolicyKind,
        content: ContentSpec,
        workload: &'a Workload,
        opts: RunOptions,
    ) -> Self {
        let seed = cfg.run.seed;
        let rng = |stream| ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
        let mut setup = rng(STREAM_SETUP);
        let pieces = content.num_pieces();
        let startup = cfg.run.startup_pieces;

        let mut peers = Vec::new();
        let mut seeds = BTreeSet::new();
        for i in 0..cfg.peers.initial_seeds {
            let id = PeerId(i as u32);
            let mut p = Peer::new(PeerState::new_seed(id, &content, cfg.peers.seed_upload, 0.0), startup, pieces);
            p.online = true;
            p.joined = true;
            p.finished = true;
            peers.push(p);
            seeds.insert(id);
        }
        let classes = WeightedIndex::new(cfg.peers.capacity_classes.iter().map(|c| c.fraction))
            .expect("validated fractions");
        for (i, s) in workload.sessions.iter().enumerate() {
            let id = PeerId((cfg.peers.initial_seeds + i) as u32);
            let upload = cfg.peers.capacity_classes[classes.sample(&mut setup)].upload;
            let mut p = Peer::new(
                PeerState::new_leecher(id, &content, upload, s.first_arrival()),
                startup,
                pieces,
            );
            p.session = Some(i);
            p.profile = Some(classify_session(s, workload.object_length));
            p.lingers = setup.gen_bool(cfg.peers.linger_fraction);
            peers.push(p);
        }

        let mut engine = Self {
            policy,
            content,
            swarm: cfg.swarm.clone(),
            workload,
            seed,
            lookahead: cfg.run.lookahead_pieces,
            horizon: cfg
                .run
                .horizon
                .unwrap_or(workload.observation_window + workload.object_length),
            opts,
            peers,
            seeds,
            flows: BTreeMap::new(),
            tracker: TrackerState::new(cfg.swarm.tracker_list_size, cfg.swarm.tracker_update_interval),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            next_transfer: 0,
            active_sessions: workload.sessions.len(),
            rng_tracker: rng(STREAM_TRACKER),
            rng_piece: rng(STREAM_PIECE),
            rng_policy: rng(STREAM_POLICY),
            rng_unchoke: rng(STREAM_UNCHOKE),
            uploaded: 0,
            downloaded: 0,
            blocks: 0,
            events: 0,
            log: opts.event_log.then(String::new),
        };

        let first = cfg.peers.initial_seeds;
        for (i, s) in workload.sessions.iter().enumerate() {
            let peer = PeerId((first + i) as u32);
            engine.schedule(s.first_arrival(), Event::PeerArrival { peer });
            for (k, r) in s.requests.iter().enumerate().skip(1) {
                engine.schedule(r.arrival_time, Event::RequestIssued { peer, index: k });
            }
        }
        if engine.active_sessions > 0 {
            for s in engine.seeds.clone() {
                engine.schedule_periodic_ticks(s, 0.0);
            }
        }
        engine
    }

    fn schedule(&mut self, time: f64, event: Event) {
        self.queue.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    fn schedule_periodic_ticks(&mut self, peer: PeerId, from: f64) {
        self.schedule(from + self.swarm.unchoke_interval, Event::UnchokeTick { peer });
        if self.policy != PolicyKind::PerPieceOptimistic || self.seeds.contains(&peer) {
            self.schedule(
                from + self.swarm.optimistic_interval,
                Event::OptimisticTick { peer, periodic: true },
            );
        }
        if !self.seeds.contains(&peer) {
            self.schedule(from + self.swarm.tracker_update_interval, Event::TrackerUpdate { peer });
        }
    }

    pub(super) fn run(mut self) -> Result<SimOutput, SimError> {
        let mut cut_short = false;
        while let Some(s) = self.queue.pop() {
            if s.time > self.horizon {
                cut_short = true;
                break;
            }
            self.now = s.time;
            self.events += 1;
            if let Some(log) = self.log.as_mut() {
                let line = json!({
                    "t": s.time,
                    "seq": s.seq,
                    "kind": s.event.kind(),
                    "actor": s.event.actor(),
                    "payload": s.event.payload(),
                });
                log.push_str(&line.to_string());
                log.push('\n');
            }
            self.handle(s.event)?;
            if self.opts.check_invariants {
                self.check_invariants()?;
            }
        }
        let end = if cut_short { self.horizon } else { self.now };
        let event_log = self.log.take();
        Ok(SimOutput {
            report: self.report(end),
            event_log,
        })
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::PeerArrival { peer } => self.on_arrival(peer),
            Event::RequestIssued { peer, index } => {
                if !self.peers[idx(peer)].online {
                    return Ok(());
                }
                self.record_request(peer, index);
                self.start_request(peer, index)
            }
            Event::BlockTransferComplete { from, to, block, transfer } => {
                self.on_block(from, to, block, transfer)
            }
            Event::UnchokeTick { peer } => self.on_unchoke_tick(peer),
            Event::OptimisticTick { peer, periodic } => self.on_optimistic_tick(peer, periodic),
            Event::PlaybackTick { peer, generation } => {
                let now = self.now;
                let p = &mut self.peers[idx(peer)];
                if !p.online {
                    return Ok(());
                }
                let state = &p.state;
                let actions = p.playback.on_tick(generation, now, |x| state.has_piece(x));
                self.apply_playback(peer, actions)
            }
            Event::TrackerUpdate { peer } => {
                if !self.peers[idx(peer)].online {
                    return Ok(());
                }
                self.tracker.update(peer, self.now)?;
                if self.leecher_neighbours(peer) < self.swarm.neighbourhood_floor {
                    self.refill(peer)?;
                }
                if self.active_sessions > 0 {
                    let next = self.now + self.swarm.tracker_update_interval;
                    self.schedule(next, Event::TrackerUpdate { peer });
                }
                Ok(())
            }
            Event::PeerDeparture { peer } => self.on_departure(peer),
        }
    }

    fn session_len(&self, peer: PeerId) -> usize {
        self.peers[idx(peer)]
            .session
            .map_or(0, |s| self.workload.sessions[s].requests.len())
    }

    fn record_request(&mut self, peer: PeerId, index: usize) {
        let p = &mut self.peers[idx(peer)];
        let s = p.session.expect("leecher has a session");
        let r = &self.workload.sessions[s].requests[index];
        p.state.popularity_record.add_interval(r.start_pos, r.end_pos);
        p.requests_issued = p.requests_issued.max(index + 1);
    }

    fn start_request(&mut self, peer: PeerId, index: usize) -> Result<(), SimError> {
        let now = self.now;
        let p = &mut self.peers[idx(peer)];
        let s = p.session.expect("leecher has a session");
        let r = &self.workload.sessions[s].requests[index];
        let region = self.content.pieces_for_interval(r.start_pos, r.end_pos);
        let state = &p.state;
        let actions = p.playback.issue(region, now, |x| state.has_piece(x));
        self.apply_playback(peer, actions)?;
        self.fill_free_slots_for(peer);
        self.schedule_downloads(peer)
    }

    fn apply_playback(&mut self, peer: PeerId, actions: Vec<PlaybackAction>) -> Result<(), SimError> {
        let mut moved = false;
        for a in actions {
            match a {
                PlaybackAction::ScheduleTick { at, generation } => {
                    self.schedule(at, Event::PlaybackTick { peer, generation });
                }
                PlaybackAction::PieceStarted { piece, at } => {
                    moved = true;
                    let ev = PlaybackEvent { peer, piece, time: at };
                    if let Some(trigger) = per_piece_optimistic_hook(self.policy, &ev) {
                        self.schedule(
                            trigger.time,
                            Event::OptimisticTick {
                                peer: trigger.peer,
                                periodic: false,
                            },
                        );
                    }
                }
                PlaybackAction::RequestFinished { .. } => {
                    let p = &self.peers[idx(peer)];
                    if !p.finished && p.requests_issued == self.session_len(peer) {
                        self.peers[idx(peer)].finished = true;
                        self.active_sessions -= 1;
                        if !self.peers[idx(peer)].lingers {
                            self.schedule(self.now, Event::PeerDeparture { peer });
                        }
                    }
                }
            }
        }
        if moved {
            self.schedule_downloads(peer)?;
        }
        Ok(())
    }

    /// Requests per object duration issued by `peer` so far.
    fn request_rate(&self, peer: PeerId) -> f64 {
        let p = &self.peers[idx(peer)];
        let len = self.workload.object_length;
        p.requests_issued as f64 * len / (self.now - p.state.join_time).max(len)
    }

    fn queue_length(&self, uploader: PeerId) -> usize {
        self.flows
            .range((uploader, PeerId(0))..=(uploader, PeerId(u32::MAX)))
            .map(|(_, f)| f.pending())
            .sum()
    }

    fn candidate_info(&self, c: PeerId, asking: PeerId) -> CandidateInfo {
        let p = &self.peers[idx(c)];
        let mut info = CandidateInfo::new(c, p.state.popularity_record.clone(), p.state.have_map.clone());
        info.request_rate = self.request_rate(c);
        info.join_time = p.state.join_time;
        info.queue_length = self.queue_length(c);
        info.requests_sent_to = self.peers[idx(asking)].requests_sent.get(&c).copied().unwrap_or(0);
        info.recent_forward_rate =
            p.uploaded as f64 / (self.now - p.state.join_time).max(self.swarm.unchoke_interval);
        info
    }

    fn leecher_neighbours(&self, peer: PeerId) -> usize {
        self.peers[idx(peer)]
            .state
            .neighbourhood
            .iter()
            .filter(|n| !self.seeds.contains(n))
            .count()
    }

    /// Picks up to `want` neighbours for `peer` among `candidates` by the
    /// policy's formation rule.
    fn select(&mut self, peer: PeerId, candidates: Vec<PeerId>, want: usize) -> Result<Vec<PeerId>, SimError> {
        let max = self.swarm.neighbourhood_max;
        let mut pool: Vec<PeerId> = candidates
            .into_iter()
            .filter(|c| {
                let q = &self.peers[idx(*c)];
                q.online && !self.seeds.contains(c) && q.state.neighbourhood.len() < max
            })
            .collect();
        if want == 0 || pool.is_empty() {
            return Ok(Vec::new());
        }
        let picked = match self.policy.formation_rule() {
            FormationRule::Random => {
                let mut v: Vec<PeerId> = pool.choose_multiple(&mut self.rng_policy, want).copied().collect();
                v.sort_unstable();
                v
            }
            FormationRule::ClosestArrival => {
                pool.truncate(want);
                pool
            }
            FormationRule::Greedy => {
                let infos: Vec<CandidateInfo> = pool.iter().map(|c| self.candidate_info(*c, peer)).collect();
                let me = &self.peers[idx(peer)];
                let own = &me.state.popularity_record;
                let hint = me.profile.unwrap_or(InteractivityProfile::Medium);
                let first = select_neighbors_greedy(own, &infos, want, hint)?;
                let slots = self.swarm.total_slots() as f64;
                let capacities: BTreeMap<PeerId, f64> = pool
                    .iter()
                    .map(|c| (*c, self.peers[idx(*c)].state.upload_capacity / slots))
                    .collect();
                let outcome = capacity_check_and_reselect(
                    &first,
                    own,
                    &infos,
                    want,
                    hint,
                    &capacities,
                    self.content.playback_rate,
                )?;
                outcome.selected
            }
        };
        Ok(picked)
    }

    fn connect(&mut self, a: PeerId, b: PeerId) {
        self.peers[idx(a)].state.neighbourhood.insert(b);
        self.peers[idx(b)].state.neighbourhood.insert(a);
    }

    fn on_arrival(&mut self, peer: PeerId) -> Result<(), SimError> {
        let now = self.now;
        {
            let p = &mut self.peers[idx(peer)];
            p.online = true;
            p.joined = true;
        }
        let list = self.tracker.join(peer, now, &mut self.rng_tracker)?;
        self.record_request(peer, 0);
        let candidates = match self.policy.formation_rule() {
            FormationRule::ClosestArrival => self.tracker.closest_by_arrival(peer, &BTreeSet::new())?,
            _ => list,
        };
        let selected = self.select(peer, candidates, self.swarm.neighbourhood_target)?;

        let me = &self.peers[idx(peer)];
        let records = std::iter::once(&me.state.popularity_record)
            .chain(selected.iter().map(|s| &self.peers[idx(*s)].state.popularity_record));
        let merged = merge_records(records).map_err(crate::policies::PolicyError::from)?;
        let rate = self.request_rate(peer) + selected.iter().map(|s| self.request_rate(*s)).sum::<f64>();
        let formation = DispersionReport::from_record(&merged, rate).ok();

        for s in self.seeds.clone() {
            self.connect(peer, s);
        }
        for s in &selected {
            self.connect(peer, *s);
        }
        let p = &mut self.peers[idx(peer)];
        p.formation = formation;
        p.neighbours_at_join = p.state.neighbourhood.len();
        self.schedule_periodic_ticks(peer, now);
        self.start_request(peer, 0)
    }

    fn refill(&mut self, peer: PeerId) -> Result<(), SimError> {
        let mut exclude = self.peers[idx(peer)].state.neighbourhood.clone();
        exclude.extend(self.seeds.iter().copied());
        let candidates = match self.policy.formation_rule() {
            FormationRule::ClosestArrival => self.tracker.closest_by_arrival(peer, &exclude)?,
            _ => self.tracker.refill(peer, &exclude, &mut self.rng_tracker)?,
        };
        let want = self
            .swarm
            .neighbourhood_target
            .saturating_sub(self.leecher_neighbours(peer));
        for s in self.select(peer, candidates, want)? {
            self.connect(peer, s);
        }
        self.fill_free_slots_for(peer);
        self.schedule_downloads(peer)
    }

    /// Neighbours with a free regular slot unchoke `peer` if it wants
    /// something they have.
    fn fill_free_slots_for(&mut self, peer: PeerId) {
        let cap = self.swarm.regular_slots;
        let neighbours: Vec<PeerId> = self.peers[idx(peer)].state.neighbourhood.iter().copied().collect();
        for u in neighbours {
            let up = &self.peers[idx(u)];
            let me = &self.peers[idx(peer)];
            if up.online && !up.state.unchokes(peer) && up.state.regular_slots.len() < cap && me.interested_in(&up.state)
            {
                self.peers[idx(u)].state.regular_slots.insert(peer);
            }
        }
    }

    fn cancel_flow(&mut self, up: PeerId, down: PeerId) {
        let Some(flow) = self.flows.remove(&(up, down)) else {
            return;
        };
        let d = &mut self.peers[idx(down)];
        for b in flow.queue.iter().chain(flow.inflight.iter().map(|(b, _)| b)) {
            d.pending.remove(b);
        }
        d.assigned.retain(|_, u| *u != up);
    }

    fn choke(&mut self, up: PeerId, down: PeerId) {
        let u = &mut self.peers[idx(up)].state;
        u.regular_slots.remove(&down);
        if u.optimistic_slot == Some(down) {
            u.optimistic_slot = None;
        }
        self.cancel_flow(up, down);
    }

    fn schedule_downloads(&mut self, down: PeerId) -> Result<(), SimError> {
        let d = &self.peers[idx(down)];
        if !d.online || d.state.is_seed() {
            return Ok(());
        }
        let depth = self.swarm.pipeline_depth;
        let window: Vec<usize> = d
            .playback
            .upcoming()
            .iter()
            .take(self.lookahead)
            .map(|(p, _)| *p)
            .filter(|p| !d.state.has_piece(*p))
            .collect();
        let ups: Vec<PeerId> = d
            .state
            .neighbourhood
            .iter()
            .copied()
            .filter(|u| {
                let q = &self.peers[idx(*u)];
                q.online && q.state.unchokes(down)
            })
            .collect();

        let assigned: Vec<(usize, PeerId)> = d.assigned.iter().map(|(p, u)| (*p, *u)).collect();
        for (piece, u) in assigned {
            self.fill(u, down, piece);
        }

        loop {
            let room: Vec<PeerId> = ups
                .iter()
                .copied()
                .filter(|u| self.flows.get(&(*u, down)).map_or(0, Flow::pending) < depth)
                .collect();
            if room.is_empty() {
                break;
            }
            let d = &self.peers[idx(down)];
            let candidates: Vec<usize> = window
                .iter()
                .copied()
                .filter(|p| {
                    !d.assigned.contains_key(p)
                        && !d.state.has_piece(*p)
                        && room.iter().any(|u| self.peers[idx(*u)].state.has_piece(*p))
                })
                .collect();
            let Some(&first) = candidates.first() else {
                break;
            };
            let piece = if first == window[0] {
                first
            } else {
                let maps: Vec<&BitSlice> = d
                    .state
                    .neighbourhood
                    .iter()
                    .filter(|n| self.peers[idx(**n)].online)
                    .map(|n| self.peers[idx(*n)].state.have_map.as_bitslice())
                    .collect();
                rarest_first_among(&d.state, &maps, candidates.iter().copied(), &mut self.rng_piece)
                    .unwrap_or(first)
            };
            let holders: Vec<CandidateInfo> = room
                .iter()
                .filter(|u| self.peers[idx(**u)].state.has_piece(piece))
                .map(|u| self.candidate_info(*u, down))
                .collect();
            let join = self.peers[idx(down)].state.join_time;
            let target = baseline_request_target(self.policy, piece, &holders, join, &mut self.rng_policy)?;
            self.peers[idx(down)].assigned.insert(piece, target);
            self.fill(target, down, piece);
        }

        for u in ups {
            self.try_start(u, down)?;
        }
        Ok(())
    }

    fn fill(&mut self, up: PeerId, down: PeerId, piece: usize) {
        let depth = self.swarm.pipeline_depth;
        let d = &self.peers[idx(down)];
        let have = self.flows.get(&(up, down)).map_or(0, Flow::pending);
        let missing = d
            .state
            .missing_blocks(&self.content, piece)
            .into_iter()
            .filter(|b| !d.pending.contains(b));
        let fresh = crate::swarm::pipeline_requests(have, depth, missing);
        if fresh.is_empty() {
            return;
        }
        let d = &mut self.peers[idx(down)];
        *d.requests_sent.entry(up).or_insert(0) += fresh.len() as u64;
        d.pending.extend(fresh.iter().copied());
        self.flows.entry((up, down)).or_default().queue.extend(fresh);
    }

    fn try_start(&mut self, up: PeerId, down: PeerId) -> Result<(), SimError> {
        let u = &self.peers[idx(up)];
        if !u.online || !self.peers[idx(down)].online || !u.state.unchokes(down) {
            return Ok(());
        }
        let rate = u.state.upload_capacity / self.swarm.total_slots() as f64;
        let Some(flow) = self.flows.get_mut(&(up, down)) else {
            return Ok(());
        };
        if flow.inflight.is_some() {
            return Ok(());
        }
        let Some(block) = flow.queue.pop_front() else {
            return Ok(());
        };
        if !u.state.has_piece(block.piece as usize) {
            return Err(violation(
                self.now,
                format!("{up} asked to serve block {block:?} of a piece it does not hold"),
            ));
        }
        let transfer = self.next_transfer;
        self.next_transfer += 1;
        flow.inflight = Some((block, transfer));
        let at = self.now + self.content.block_len(block) as f64 / rate;
        self.schedule(
            at,
            Event::BlockTransferComplete {
                from: up,
                to: down,
                block,
                transfer,
            },
        );
        Ok(())
    }

    fn on_block(&mut self, from: PeerId, to: PeerId, block: BlockRef, transfer: u64) -> Result<(), SimError> {
        let Some(flow) = self.flows.get_mut(&(from, to)) else {
            return Ok(());
        };
        if flow.inflight != Some((block, transfer)) {
            return Ok(());
        }
        flow.inflight = None;
        let now = self.now;
        let len = self.content.block_len(block);
        let d = &mut self.peers[idx(to)];
        d.pending.remove(&block);
        let completed = d
            .state
            .record_block(&self.content, block)
            .map_err(|e| violation(now, e.to_string()))?;
        d.downloaded += len;
        *d.recv_window.entry(from).or_insert(0) += len;
        d.block_source.insert(block, from);
        d.last_block_at = Some(now);

        let u = &mut self.peers[idx(from)];
        u.uploaded += len;
        *u.sent_window.entry(to).or_insert(0) += len;
        if let Some(src) = u.block_source.get(&block).copied() {
            if src != to {
                *self.peers[idx(src)].forward_window.entry(from).or_insert(0) += len;
            }
        }
        self.uploaded += len;
        self.downloaded += len;
        self.blocks += 1;

        if completed {
            let piece = block.piece as usize;
            let d = &mut self.peers[idx(to)];
            d.arrivals[piece] = Some(now);
            d.first_piece_at.get_or_insert(now);
            d.assigned.remove(&piece);
            self.announce(to, piece)?;
            let d = &mut self.peers[idx(to)];
            let state = &d.state;
            let actions = d.playback.on_piece(piece, now, |x| state.has_piece(x));
            self.apply_playback(to, actions)?;
        }
        self.schedule_downloads(to)?;
        self.try_start(from, to)
    }

    /// `peer` completed `piece`: neighbours that want it may be unchoked
    /// into a free slot and start fetching it.
    fn announce(&mut self, peer: PeerId, piece: usize) -> Result<(), SimError> {
        let cap = self.swarm.regular_slots;
        let neighbours: Vec<PeerId> = self.peers[idx(peer)].state.neighbourhood.iter().copied().collect();
        for n in neighbours {
            let q = &self.peers[idx(n)];
            if !q.online || !q.wants(piece) {
                continue;
            }
            let me = &self.peers[idx(peer)].state;
            if me.unchokes(n) {
                self.schedule_downloads(n)?;
            } else if me.regular_slots.len() < cap {
                self.peers[idx(peer)].state.regular_slots.insert(n);
                self.schedule_downloads(n)?;
            }
        }
        Ok(())
    }

    fn interested_neighbours(&self, up: PeerId) -> Vec<PeerId> {
        let u = &self.peers[idx(up)];
        u.state
            .neighbourhood
            .iter()
            .copied()
            .filter(|n| {
                let q = &self.peers[idx(*n)];
                q.online && !q.state.is_seed() && q.interested_in(&u.state)
            })
            .collect()
    }

    fn on_unchoke_tick(&mut self, up: PeerId) -> Result<(), SimError> {
        if !self.peers[idx(up)].online {
            return Ok(());
        }
        let interval = self.swarm.unchoke_interval;
        let interested = self.interested_neighbours(up);
        let u = &self.peers[idx(up)];
        let optimistic = u.state.optimistic_slot;
        let eligible: Vec<PeerId> = interested.into_iter().filter(|n| Some(*n) != optimistic).collect();
        let k = self.swarm.regular_slots;
        let rate_of = |window: &BTreeMap<PeerId, u64>, n: &PeerId, span: f64| {
            window.get(n).copied().unwrap_or(0) as f64 / span
        };
        let chosen: Vec<PeerId> = match self.policy.regular_rule() {
            RegularRule::Random => {
                let mut v: Vec<PeerId> = eligible.choose_multiple(&mut self.rng_unchoke, k).copied().collect();
                v.sort_unstable();
                v
            }
            RegularRule::TitForTat => {
                let window = if u.state.is_seed() { &u.sent_window } else { &u.recv_window };
                let rates: Vec<(PeerId, f64)> = eligible.iter().map(|n| (*n, rate_of(window, n, interval))).collect();
                tit_for_tat_unchoke(&rates, k)
            }
            RegularRule::ForwardRate => {
                let span = self.swarm.optimistic_interval;
                let rates: Vec<(PeerId, f64)> = eligible
                    .iter()
                    .map(|n| (*n, rate_of(&u.forward_window, n, span)))
                    .collect();
                tit_for_tat_unchoke(&rates, k)
            }
        };

        let rounds = (self.swarm.optimistic_interval / interval).round().max(1.0) as u64;
        let u = &mut self.peers[idx(up)];
        u.state.download_rate_history = u
            .recv_window
            .iter()
            .map(|(n, b)| (*n, *b as f64 / interval))
            .collect();
        u.recv_window.clear();
        u.sent_window.clear();
        u.unchoke_ticks += 1;
        if u.unchoke_ticks.is_multiple_of(rounds) {
            let span = self.swarm.optimistic_interval;
            u.state.forward_rate_history = u
                .forward_window
                .iter()
                .map(|(n, b)| (*n, *b as f64 / span))
                .collect();
            u.forward_window.clear();
        }

        let old: Vec<PeerId> = u.state.regular_slots.iter().copied().collect();
        let new: BTreeSet<PeerId> = chosen.into_iter().collect();
        for n in old.iter().filter(|n| !new.contains(n)) {
            self.choke(up, *n);
            self.schedule_downloads(*n)?;
        }
        for n in new.iter().filter(|n| !old.contains(n)) {
            self.peers[idx(up)].state.regular_slots.insert(*n);
            self.schedule_downloads(*n)?;
        }
        if self.active_sessions > 0 {
            self.schedule(self.now + interval, Event::UnchokeTick { peer: up });
        }
        Ok(())
    }

    fn on_optimistic_tick(&mut self, up: PeerId, periodic: bool) -> Result<(), SimError> {
        if !self.peers[idx(up)].online {
            return Ok(());
        }
        if periodic && self.active_sessions > 0 {
            self.schedule(
                self.now + self.swarm.optimistic_interval,
                Event::OptimisticTick { peer: up, periodic: true },
            );
        }
        if self.swarm.optimistic_slots == 0 {
            return Ok(());
        }
        let u = &self.peers[idx(up)].state;
        let current = u.optimistic_slot;
        let choked: Vec<PeerId> = self
            .interested_neighbours(up)
            .into_iter()
            .filter(|n| !u.regular_slots.contains(n) && Some(*n) != current)
            .collect();
        let Some(pick) = optimistic_unchoke(&choked, &mut self.rng_unchoke) else {
            return Ok(());
        };
        if let Some(old) = current {
            self.choke(up, old);
            self.schedule_downloads(old)?;
        }
        self.peers[idx(up)].state.optimistic_slot = Some(pick);
        self.schedule_downloads(pick)
    }

    fn on_departure(&mut self, peer: PeerId) -> Result<(), SimError> {
        if !self.peers[idx(peer)].online {
            return Ok(());
        }
        let now = self.now;
        {
            let p = &mut self.peers[idx(peer)];
            p.playback.finalize(now);
            p.online = false;
            p.left_at = Some(now);
        }
        if !self.peers[idx(peer)].finished {
            self.peers[idx(peer)].finished = true;
            self.active_sessions -= 1;
        }
        self.tracker.leave(peer)?;
        let touching: Vec<(PeerId, PeerId)> = self
            .flows
            .keys()
            .copied()
            .filter(|(u, d)| *u == peer || *d == peer)
            .collect();
        for (u, d) in touching {
            self.cancel_flow(u, d);
        }
        let neighbours: Vec<PeerId> = std::mem::take(&mut self.peers[idx(peer)].state.neighbourhood)
            .into_iter()
            .collect();
        {
            let s = &mut self.peers[idx(peer)].state;
            s.regular_slots.clear();
            s.optimistic_slot = None;
        }
        for n in &neighbours {
            let q = &mut self.peers[idx(*n)].state;
            q.neighbourhood.remove(&peer);
            q.regular_slots.remove(&peer);
            if q.optimistic_slot == Some(peer) {
                q.optimistic_slot = None;
            }
        }
        for n in neighbours {
            let q = &self.peers[idx(n)];
            if !q.online || q.state.is_seed() {
                continue;
            }
            if self.leecher_neighbours(n) < self.swarm.neighbourhood_floor && !q.finished {
                self.refill(n)?;
            } else {
                self.schedule_downloads(n)?;
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), SimError> {
        let now = self.now;
        let up: u64 = self.peers.iter().map(|p| p.uploaded).sum();
        let down: u64 = self.peers.iter().map(|p| p.downloaded).sum();
        if up != down || up != self.uploaded || down != self.downloaded {
            return Err(violation(now, format!("uploaded {up} bytes but downloaded {down}")));
        }
        for p in &self.peers {
            let s = &p.state;
            if s.regular_slots.len() > self.swarm.regular_slots || s.unchoked_count() > self.swarm.total_slots() {
                return Err(violation(now, format!("{} exceeds its upload slots", s.peer_id)));
            }
            let played = p.playback.stats.deadlines.len() as u64;
            if p.playback.stats.on_time > played {
                return Err(violation(now, format!("{} has more on-time pieces than played", s.peer_id)));
            }
        }
        for ((u, d), flow) in &self.flows {
            if self.seeds.contains(d) && flow.pending() > 0 {
                return Err(violation(now, format!("seed {d} requested blocks")));
            }
            if let Some((b, _)) = flow.inflight {
                if !self.peers[idx(*u)].state.has_piece(b.piece as usize) {
                    return Err(violation(now, format!("{u} serves an incomplete piece")));
                }
                if self.peers[idx(*d)].state.has_block(b) {
                    return Err(violation(now, format!("{d} is receiving a block it already has")));
                }
            }
        }
        Ok(())
    }

    fn report(mut self, end: f64) -> QosReport {
        for p in self.peers.iter_mut().filter(|p| p.online) {
            p.playback.finalize(end);
        }
        let mut peers = Vec::new();
        for p in self.peers.iter().filter(|p| p.joined && p.session.is_some()) {
            let join = p.state.join_time;
            let leave = p.left_at.unwrap_or(end).max(join);
            let online = leave - join;
            let stats = &p.playback.stats;
            let path: Vec<(f64, Option<f64>)> = stats
                .deadlines
                .iter()
                .map(|(piece, deadline)| (*deadline, p.arrivals[*piece]))
                .collect();
            let seek = (!stats.seek_latencies.is_empty())
                .then(|| stats.seek_latencies.iter().sum::<f64>() / stats.seek_latencies.len() as f64);
            let utilization = if online > 0.0 {
                (p.uploaded as f64 / (p.state.upload_capacity * online)).min(1.0)
            } else {
                0.0
            };
            peers.push(PeerQos {
                peer_id: p.state.peer_id,
                client_id: self.workload.sessions[p.session.expect("leecher")].client_id.clone(),
                profile: p.profile.expect("leecher"),
                join_time: join,
                leave_time: leave,
                continuity_index: continuity_index(&path).ok(),
                startup_delay: stats.startup_delay,
                mean_seek_latency: seek,
                bootstrap_time: p.first_piece_at.map(|t| t - join),
                interruption_count: stats.interruptions(),
                mean_time_to_return: stats.mean_time_to_return(),
                total_download_time: p.last_block_at.map(|t| t - join),
                link_utilization: utilization,
                download_rate: if online > 0.0 { p.downloaded as f64 / online } else { 0.0 },
                uploaded_bytes: p.uploaded,
                downloaded_bytes: p.downloaded,
                neighbours_at_join: p.neighbours_at_join,
                formation: p.formation.clone(),
            });
        }
        QosReport {
            policy: self.policy.to_string(),
            seed: self.seed,
            aggregate: AggregateQos::from_peers(&peers),
            totals: SwarmTotals {
                uploaded_bytes: self.uploaded,
                downloaded_bytes: self.downloaded,
                blocks_transferred: self.blocks,
                events_processed: self.events,
                end_time: end,
            },
            peers,
        }
    }
}
