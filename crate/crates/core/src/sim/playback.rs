//! Playback of a peer's session against its buffer.
//!
//! Each request plays its pieces in order at the playback rate. Playback of
//! a request starts once its first `startup_pieces` pieces are buffered. A
//! piece's deadline is the instant playback reaches it; if it is missing
//! then, playback stalls until it arrives. A new request preempts the
//! current one and resets the frontier to the jump target.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::swarm::ContentSpec;
use crate::workload::Request;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Idle,
    Startup { since: f64 },
    Playing,
    Stalled { since: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlaybackAction {
    ScheduleTick { at: f64, generation: u64 },
    PieceStarted { piece: usize, at: f64 },
    RequestFinished { at: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaybackStats {
    /// `(piece, deadline)` for every piece playback reached, in order.
    pub deadlines: Vec<(usize, f64)>,
    pub on_time: u64,
    /// Closed stalls as `(start, end)`.
    pub stalls: Vec<(f64, f64)>,
    /// Wait from the first request until playback first started.
    pub startup_delay: Option<f64>,
    /// Wait before each later request started playing, from its issue.
    pub seek_latencies: Vec<f64>,
}

impl PlaybackStats {
    pub fn interruptions(&self) -> usize {
        self.stalls.len()
    }

    pub fn mean_time_to_return(&self) -> Option<f64> {
        (!self.stalls.is_empty()).then(|| {
            self.stalls.iter().map(|(a, b)| b - a).sum::<f64>() / self.stalls.len() as f64
        })
    }
}

#[derive(Debug, Clone)]
pub struct Playback {
    startup_pieces: usize,
    region: Vec<(usize, f64)>,
    cursor: usize,
    phase: Phase,
    generation: u64,
    started_requests: usize,
    first_issue: Option<f64>,
    pub stats: PlaybackStats,
}

impl Playback {
    pub fn new(startup_pieces: usize) -> Self {
        Self {
            startup_pieces: startup_pieces.max(1),
            region: Vec::new(),
            cursor: 0,
            phase: Phase::Idle,
            generation: 0,
            started_requests: 0,
            first_issue: None,
            stats: PlaybackStats::default(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_idle(&self) -> bool {
        self.phase == Phase::Idle
    }

    /// Pieces still ahead of (and including) the playback frontier.
    pub fn upcoming(&self) -> &[(usize, f64)] {
        if self.is_idle() {
            &[]
        } else {
            &self.region[self.cursor..]
        }
    }

    fn close_stall(&mut self, now: f64) {
        if let Phase::Stalled { since } = self.phase {
            self.stats.stalls.push((since, now));
        }
    }

    /// Starts a new request over `region`, preempting whatever was playing.
    pub fn issue(
        &mut self,
        region: Vec<(usize, f64)>,
        now: f64,
        has: impl Fn(usize) -> bool,
    ) -> Vec<PlaybackAction> {
        self.close_stall(now);
        self.first_issue.get_or_insert(now);
        self.generation += 1;
        self.region = region;
        self.cursor = 0;
        let mut actions = Vec::new();
        if self.region.is_empty() {
            self.phase = Phase::Idle;
            actions.push(PlaybackAction::RequestFinished { at: now });
        } else {
            self.phase = Phase::Startup { since: now };
            self.try_start(now, &has, &mut actions);
        }
        actions
    }

    fn try_start(&mut self, now: f64, has: &impl Fn(usize) -> bool, actions: &mut Vec<PlaybackAction>) {
        let Phase::Startup { since } = self.phase else {
            return;
        };
        let need = self.startup_pieces.min(self.region.len());
        if !self.region[..need].iter().all(|(p, _)| has(*p)) {
            return;
        }
        if self.started_requests == 0 {
            self.stats.startup_delay = self.first_issue.map(|t| now - t);
        } else {
            self.stats.seek_latencies.push(now - since);
        }
        self.started_requests += 1;
        self.begin_piece(now, has, actions);
    }

    fn play(&mut self, now: f64, actions: &mut Vec<PlaybackAction>) {
        let (piece, dur) = self.region[self.cursor];
        self.phase = Phase::Playing;
        actions.push(PlaybackAction::PieceStarted { piece, at: now });
        actions.push(PlaybackAction::ScheduleTick {
            at: now + dur,
            generation: self.generation,
        });
    }

    fn begin_piece(&mut self, now: f64, has: &impl Fn(usize) -> bool, actions: &mut Vec<PlaybackAction>) {
        let piece = self.region[self.cursor].0;
        self.stats.deadlines.push((piece, now));
        if has(piece) {
            self.stats.on_time += 1;
            self.play(now, actions);
        } else {
            self.phase = Phase::Stalled { since: now };
        }
    }

    /// A piece became available.
    pub fn on_piece(&mut self, piece: usize, now: f64, has: impl Fn(usize) -> bool) -> Vec<PlaybackAction> {
        let mut actions = Vec::new();
        match self.phase {
            Phase::Stalled { since } if self.region[self.cursor].0 == piece => {
                self.stats.stalls.push((since, now));
                self.play(now, &mut actions);
            }
            Phase::Startup { .. } => self.try_start(now, &has, &mut actions),
            _ => {}
        }
        actions
    }

    /// The piece under the frontier finished playing.
    pub fn on_tick(&mut self, generation: u64, now: f64, has: impl Fn(usize) -> bool) -> Vec<PlaybackAction> {
        let mut actions = Vec::new();
        if generation != self.generation || self.phase != Phase::Playing {
            return actions;
        }
        self.cursor += 1;
        if self.cursor == self.region.len() {
            self.phase = Phase::Idle;
            actions.push(PlaybackAction::RequestFinished { at: now });
        } else {
            self.begin_piece(now, &has, &mut actions);
        }
        actions
    }

    /// Closes an open stall at `now` (end of run or departure).
    pub fn finalize(&mut self, now: f64) {
        self.close_stall(now);
        if matches!(self.phase, Phase::Stalled { .. }) {
            self.phase = Phase::Idle;
        }
    }
}

/// Offline playback outcome for a session given when each piece arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackTrace {
    pub stats: PlaybackStats,
    /// Instants at which each request finished playing.
    pub finished: Vec<f64>,
    /// Times a played piece started (the per-piece playback instants).
    pub piece_starts: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ModelEvent {
    // Declaration order is the processing order at equal times.
    Arrival(usize),
    Tick(u64),
    Issue(usize),
}

/// Replays `requests` against known piece `arrivals` (absent = never) up
/// to `until`.
pub fn playback_model(
    content: &ContentSpec,
    requests: &[Request],
    arrivals: &BTreeMap<usize, f64>,
    startup_pieces: usize,
    until: f64,
) -> PlaybackTrace {
    let mut pb = Playback::new(startup_pieces);
    let mut queue: BinaryHeap<Reverse<(OrdF64, ModelEvent)>> = BinaryHeap::new();
    for (p, t) in arrivals {
        queue.push(Reverse((OrdF64(*t), ModelEvent::Arrival(*p))));
    }
    for (i, r) in requests.iter().enumerate() {
        queue.push(Reverse((OrdF64(r.arrival_time), ModelEvent::Issue(i))));
    }
    let mut finished = Vec::new();
    let mut piece_starts = Vec::new();
    let mut now = 0.0;
    while let Some(Reverse((OrdF64(t), ev))) = queue.pop() {
        if t > until {
            break;
        }
        now = t;
        let has = |p: usize| arrivals.get(&p).is_some_and(|a| *a <= t);
        let actions = match ev {
            ModelEvent::Arrival(p) => pb.on_piece(p, t, has),
            ModelEvent::Tick(g) => pb.on_tick(g, t, has),
            ModelEvent::Issue(i) => {
                let r = &requests[i];
                pb.issue(content.pieces_for_interval(r.start_pos, r.end_pos), t, has)
            }
        };
        for a in actions {
            match a {
                PlaybackAction::ScheduleTick { at, generation } => {
                    queue.push(Reverse((OrdF64(at), ModelEvent::Tick(generation))));
                }
                PlaybackAction::PieceStarted { piece, at } => piece_starts.push((piece, at)),
                PlaybackAction::RequestFinished { at } => finished.push(at),
            }
        }
    }
    pb.finalize(now.max(until.min(f64::MAX)));
    PlaybackTrace {
        stats: pb.stats,
        finished,
        piece_starts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swarm::{DEFAULT_BLOCK_SIZE, DEFAULT_PIECE_SIZE};
    use crate::workload::Interaction;

    // 10 pieces of 4 s each.
    fn content() -> ContentSpec {
        ContentSpec {
            total_size: 10 * DEFAULT_PIECE_SIZE,
            piece_size: DEFAULT_PIECE_SIZE,
            block_size: DEFAULT_BLOCK_SIZE,
            playback_rate: 65_536.0,
        }
    }

    fn req(at: f64, start: f64, end: f64) -> Request {
        Request::new(at, start, end, Interaction::Play).unwrap()
    }

    #[test]
    fn fully_buffered_has_no_stalls() {
        let arrivals: BTreeMap<usize, f64> = (0..10).map(|p| (p, 0.0)).collect();
        let tr = playback_model(&content(), &[req(0.0, 0.0, 40.0)], &arrivals, 1, 1000.0);
        assert_eq!(tr.stats.interruptions(), 0);
        assert_eq!(tr.stats.on_time, 10);
        assert_eq!(tr.stats.deadlines.len(), 10);
        assert_eq!(tr.finished, vec![40.0]);
        assert_eq!(tr.stats.startup_delay, Some(0.0));
    }

    #[test]
    fn one_late_piece_is_one_interruption() {
        // Piece 2's deadline is 8 s; it arrives at 10 s.
        let mut arrivals: BTreeMap<usize, f64> = (0..10).map(|p| (p, 0.0)).collect();
        arrivals.insert(2, 10.0);
        let tr = playback_model(&content(), &[req(0.0, 0.0, 40.0)], &arrivals, 1, 1000.0);
        assert_eq!(tr.stats.interruptions(), 1);
        assert_eq!(tr.stats.mean_time_to_return(), Some(2.0));
        assert_eq!(tr.stats.stalls, vec![(8.0, 10.0)]);
        assert_eq!(tr.stats.on_time, 9);
        assert_eq!(tr.finished, vec![42.0]);
    }

    #[test]
    fn jump_beyond_buffer_waits_for_target() {
        // Pieces 0-1 buffered; the jump at 2 s targets piece 7, which arrives at 9 s.
        let arrivals: BTreeMap<usize, f64> = [(0, 0.0), (1, 0.0), (7, 9.0)].into();
        let tr = playback_model(
            &content(),
            &[req(0.0, 0.0, 8.0), req(2.0, 28.0, 32.0)],
            &arrivals,
            1,
            1000.0,
        );
        assert_eq!(tr.stats.startup_delay, Some(0.0));
        assert_eq!(tr.stats.seek_latencies, vec![7.0]);
        assert_eq!(tr.stats.interruptions(), 0);
        assert_eq!(tr.finished, vec![13.0]);
        assert_eq!(tr.piece_starts, vec![(0, 0.0), (7, 9.0)]);
    }

    #[test]
    fn startup_delay_runs_from_first_request_when_it_is_preempted() {
        // Request 0 never gets data; request 1 at 3 s waits for piece 5 until 6 s.
        let arrivals: BTreeMap<usize, f64> = [(5, 6.0)].into();
        let tr = playback_model(
            &content(),
            &[req(0.0, 0.0, 8.0), req(3.0, 20.0, 24.0)],
            &arrivals,
            1,
            100.0,
        );
        assert_eq!(tr.stats.startup_delay, Some(6.0));
        assert!(tr.stats.seek_latencies.is_empty());
    }

    #[test]
    fn stall_open_at_horizon_is_closed_there() {
        let arrivals: BTreeMap<usize, f64> = [(0, 0.0)].into();
        let tr = playback_model(&content(), &[req(0.0, 0.0, 12.0)], &arrivals, 1, 20.0);
        assert_eq!(tr.stats.stalls, vec![(4.0, 20.0)]);
        assert_eq!(tr.stats.deadlines.len(), 2);
    }

    #[test]
    fn stale_ticks_are_ignored_after_a_jump() {
        let mut pb = Playback::new(1);
        let all = |_| true;
        let a = pb.issue(vec![(0, 4.0), (1, 4.0)], 0.0, all);
        let gen0 = pb.generation();
        assert!(a.contains(&PlaybackAction::ScheduleTick { at: 4.0, generation: gen0 }));
        pb.issue(vec![(5, 4.0)], 1.0, all);
        assert!(pb.on_tick(gen0, 4.0, all).is_empty());
        let done = pb.on_tick(pb.generation(), 5.0, all);
        assert_eq!(done, vec![PlaybackAction::RequestFinished { at: 5.0 }]);
        assert!(pb.is_idle());
    }

    #[test]
    fn startup_waits_for_configured_pieces() {
        let mut pb = Playback::new(2);
        let has0 = |p: usize| p == 0;
        assert!(pb.issue(vec![(0, 4.0), (1, 4.0), (2, 4.0)], 0.0, has0).is_empty());
        let acts = pb.on_piece(1, 3.0, |p| p <= 1);
        assert_eq!(acts[0], PlaybackAction::PieceStarted { piece: 0, at: 3.0 });
        assert_eq!(pb.stats.startup_delay, Some(3.0));
    }
}
