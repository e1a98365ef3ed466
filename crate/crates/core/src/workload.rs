//! Interactive streaming workloads: requests, sessions, trace I/O,
//! interactivity profiles and a seeded synthetic generator.
//!
//! All times and positions are seconds. A trace is a CSV body with the
//! header `client_id,arrival_time,start_pos,end_pos,interaction`, optionally
//! preceded by a `# object_length=<s> window=<s>` metadata comment.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_HEADER: &str = "client_id,arrival_time,start_pos,end_pos,interaction";

/// Default playback rate when a trace does not carry one (512 kbit/s).
pub const DEFAULT_PLAYBACK_RATE: f64 = 65_536.0;

/// Requests shorter than this fraction of the object are "short".
pub const SHORT_REQUEST_FRACTION: f64 = 0.2;

/// Number of equal-width bins used by the start-position distribution.
pub const START_BINS: usize = 20;

/// Decay rate of the start-position distribution that puts half of the
/// probability mass in the first 20% of the object (first 4 of 20 bins).
/// Root of x^4 + x^3 + x^2 + x = 1 with x = exp(-4 * decay).
pub const DEFAULT_START_SKEW: f64 = 0.164_064;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: end_pos {end} is before start_pos {start}")]
    EndBeforeStart { line: usize, start: f64, end: f64 },
    #[error("line {line}: arrival_time {arrival} is not inside the observation window {window}")]
    ArrivalBeyondWindow {
        line: usize,
        arrival: f64,
        window: f64,
    },
    #[error("line {line}: end_pos {end} exceeds object length {object_length}")]
    BeyondObject {
        line: usize,
        end: f64,
        object_length: f64,
    },
    #[error("no sessions")]
    NoSessions,
    #[error("object length not given (use a flag or the `# object_length=` comment)")]
    MissingObjectLength,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid session `{client}`: {reason}")]
    InvalidSession { client: String, reason: String },
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    Play,
    Pause,
    #[serde(rename = "jumpf")]
    JumpForward,
    #[serde(rename = "jumpb")]
    JumpBackward,
    Stop,
}

impl Interaction {
    pub fn as_str(self) -> &'static str {
        match self {
            Interaction::Play => "play",
            Interaction::Pause => "pause",
            Interaction::JumpForward => "jumpf",
            Interaction::JumpBackward => "jumpb",
            Interaction::Stop => "stop",
        }
    }
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Interaction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "play" => Ok(Interaction::Play),
            "pause" => Ok(Interaction::Pause),
            "jumpf" => Ok(Interaction::JumpForward),
            "jumpb" => Ok(Interaction::JumpBackward),
            "stop" => Ok(Interaction::Stop),
            other => Err(format!(
                "unknown interaction `{other}` (expected play, pause, jumpf, jumpb or stop)"
            )),
        }
    }
}

/// One interactive request: the client asks for `[start_pos, end_pos)` of
/// the object at `arrival_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub arrival_time: f64,
    pub start_pos: f64,
    pub end_pos: f64,
    pub interaction: Interaction,
}

impl Request {
    pub fn new(
        arrival_time: f64,
        start_pos: f64,
        end_pos: f64,
        interaction: Interaction,
    ) -> Result<Self, WorkloadError> {
        let all_finite = [arrival_time, start_pos, end_pos]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !all_finite {
            return Err(WorkloadError::InvalidRequest(
                "times and positions must be finite and non-negative".into(),
            ));
        }
        if end_pos < start_pos {
            return Err(WorkloadError::InvalidRequest(format!(
                "end_pos {end_pos} before start_pos {start_pos}"
            )));
        }
        Ok(Self {
            arrival_time,
            start_pos,
            end_pos,
            interaction,
        })
    }

    /// Request duration D_R.
    pub fn duration(&self) -> f64 {
        self.end_pos - self.start_pos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub client_id: String,
    pub requests: Vec<Request>,
}

impl Session {
    pub fn new(client_id: impl Into<String>, requests: Vec<Request>) -> Result<Self, WorkloadError> {
        let client_id = client_id.into();
        if requests.is_empty() {
            return Err(WorkloadError::InvalidSession {
                client: client_id,
                reason: "a session needs at least one request".into(),
            });
        }
        if requests
            .windows(2)
            .any(|w| w[1].arrival_time < w[0].arrival_time)
        {
            return Err(WorkloadError::InvalidSession {
                client: client_id,
                reason: "requests must be ordered by arrival_time".into(),
            });
        }
        Ok(Self {
            client_id,
            requests,
        })
    }

    pub fn request_count(&self) -> usize {
        self.requests.len()
    }

    pub fn first_arrival(&self) -> f64 {
        self.requests[0].arrival_time
    }

    /// Session duration D_S: from the first arrival to the end of the last request.
    pub fn duration(&self) -> f64 {
        let last = self.requests[self.requests.len() - 1];
        (last.arrival_time + last.duration() - self.first_arrival()).max(0.0)
    }

    pub fn mean_request_duration(&self) -> f64 {
        self.requests.iter().map(Request::duration).sum::<f64>() / self.requests.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub object_length: f64,
    pub playback_rate: f64,
    pub observation_window: f64,
    pub sessions: Vec<Session>,
}

impl Workload {
    pub fn new(
        object_length: f64,
        playback_rate: f64,
        observation_window: f64,
        sessions: Vec<Session>,
    ) -> Result<Self, WorkloadError> {
        if !(object_length.is_finite() && object_length > 0.0) {
            return Err(WorkloadError::InvalidWorkload(
                "object_length must be positive".into(),
            ));
        }
        if !(playback_rate.is_finite() && playback_rate > 0.0) {
            return Err(WorkloadError::InvalidWorkload(
                "playback_rate must be positive".into(),
            ));
        }
        if !(observation_window.is_finite() && observation_window > 0.0) {
            return Err(WorkloadError::InvalidWorkload(
                "observation_window must be positive".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &sessions {
            if !seen.insert(s.client_id.as_str()) {
                return Err(WorkloadError::InvalidWorkload(format!(
                    "duplicate client_id `{}`",
                    s.client_id
                )));
            }
            for r in &s.requests {
                if r.arrival_time >= observation_window {
                    return Err(WorkloadError::InvalidWorkload(format!(
                        "arrival {} of `{}` is outside the observation window {}",
                        r.arrival_time, s.client_id, observation_window
                    )));
                }
                if r.end_pos > object_length {
                    return Err(WorkloadError::InvalidWorkload(format!(
                        "end_pos {} of `{}` exceeds object length {}",
                        r.end_pos, s.client_id, object_length
                    )));
                }
            }
        }
        Ok(Self {
            object_length,
            playback_rate,
            observation_window,
            sessions,
        })
    }

    pub fn total_requests(&self) -> usize {
        self.sessions.iter().map(Session::request_count).sum()
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.sessions.iter().flat_map(|s| s.requests.iter())
    }

    /// Serializes to the trace format, metadata comment included.
    pub fn to_trace(&self) -> String {
        let mut out = format!(
            "# object_length={} window={} playback_rate={}\n{}\n",
            self.object_length, self.observation_window, self.playback_rate, TRACE_HEADER
        );
        for s in &self.sessions {
            for r in &s.requests {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.client_id, r.arrival_time, r.start_pos, r.end_pos, r.interaction
                ));
            }
        }
        out
    }
}

/// Out-of-band trace parameters; each overrides the metadata comment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraceOptions {
    pub object_length: Option<f64>,
    pub observation_window: Option<f64>,
    pub playback_rate: Option<f64>,
}

fn parse_field(line: usize, name: &str, raw: &str) -> Result<f64, WorkloadError> {
    let v: f64 = raw.trim().parse().map_err(|_| WorkloadError::Malformed {
        line,
        reason: format!("{name} `{raw}` is not a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(WorkloadError::Malformed {
            line,
            reason: format!("{name} must be a non-negative decimal"),
        });
    }
    Ok(v)
}

fn parse_meta(line: usize, body: &str, meta: &mut TraceOptions) -> Result<(), WorkloadError> {
    for kv in body.split_whitespace() {
        let Some((k, v)) = kv.split_once('=') else {
            continue;
        };
        let slot = match k {
            "object_length" => &mut meta.object_length,
            "window" => &mut meta.observation_window,
            "playback_rate" => &mut meta.playback_rate,
            _ => continue,
        };
        *slot = Some(parse_field(line, k, v)?);
    }
    Ok(())
}

/// Parses a trace. Sessions are grouped by `client_id` in order of first
/// appearance; each session's requests are stably sorted by arrival time.
pub fn parse_trace(text: &str, opts: TraceOptions) -> Result<Workload, WorkloadError> {
    let mut meta = TraceOptions::default();
    let mut header_seen = false;
    let mut rows: Vec<(usize, String, Request)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if !header_seen {
                parse_meta(line, comment, &mut meta)?;
            }
            continue;
        }
        if !header_seen {
            if trimmed != TRACE_HEADER {
                return Err(WorkloadError::Malformed {
                    line,
                    reason: format!("expected header `{TRACE_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(WorkloadError::Malformed {
                line,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let client = fields[0].trim();
        if client.is_empty() {
            return Err(WorkloadError::Malformed {
                line,
                reason: "empty client_id".into(),
            });
        }
        let arrival = parse_field(line, "arrival_time", fields[1])?;
        let start = parse_field(line, "start_pos", fields[2])?;
        let end = parse_field(line, "end_pos", fields[3])?;
        let interaction: Interaction = fields[4]
            .trim()
            .parse()
            .map_err(|reason| WorkloadError::Malformed { line, reason })?;
        if end < start {
            return Err(WorkloadError::EndBeforeStart { line, start, end });
        }
        rows.push((
            line,
            client.to_string(),
            Request {
                arrival_time: arrival,
                start_pos: start,
                end_pos: end,
                interaction,
            },
        ));
    }
    if !header_seen {
        return Err(WorkloadError::Malformed {
            line: 1,
            reason: format!("missing header `{TRACE_HEADER}`"),
        });
    }
    if rows.is_empty() {
        return Err(WorkloadError::NoSessions);
    }

    let object_length = opts
        .object_length
        .or(meta.object_length)
        .ok_or(WorkloadError::MissingObjectLength)?;
    if object_length <= 0.0 {
        return Err(WorkloadError::InvalidWorkload(
            "object_length must be positive".into(),
        ));
    }
    let playback_rate = opts
        .playback_rate
        .or(meta.playback_rate)
        .unwrap_or(DEFAULT_PLAYBACK_RATE);
    let last_arrival = rows
        .iter()
        .map(|(_, _, r)| r.arrival_time)
        .fold(0.0_f64, f64::max);
    let window = opts
        .observation_window
        .or(meta.observation_window)
        .unwrap_or(last_arrival + object_length);

    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<Request>> = BTreeMap::new();
    for (line, client, r) in rows {
        if r.arrival_time >= window {
            return Err(WorkloadError::ArrivalBeyondWindow {
                line,
                arrival: r.arrival_time,
                window,
            });
        }
        if r.end_pos > object_length {
            return Err(WorkloadError::BeyondObject {
                line,
                end: r.end_pos,
                object_length,
            });
        }
        grouped
            .entry(client.clone())
            .or_insert_with(|| {
                order.push(client);
                Vec::new()
            })
            .push(r);
    }
    let sessions = order
        .into_iter()
        .map(|client| {
            let mut reqs = grouped.remove(&client).unwrap_or_default();
            reqs.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
            Session::new(client, reqs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Workload::new(object_length, playback_rate, window, sessions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InteractivityProfile {
    #[serde(rename = "hi")]
    High,
    #[serde(rename = "mi")]
    Medium,
    #[serde(rename = "li")]
    Low,
}

impl InteractivityProfile {
    pub const ALL: [InteractivityProfile; 3] = [
        InteractivityProfile::High,
        InteractivityProfile::Medium,
        InteractivityProfile::Low,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractivityProfile::High => "hi",
            InteractivityProfile::Medium => "mi",
            InteractivityProfile::Low => "li",
        }
    }
}

impl fmt::Display for InteractivityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InteractivityProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hi" | "high" => Ok(InteractivityProfile::High),
            "mi" | "medium" => Ok(InteractivityProfile::Medium),
            "li" | "low" => Ok(InteractivityProfile::Low),
            other => Err(format!("unknown profile `{other}` (expected hi, mi or li)")),
        }
    }
}

/// Labels a session. Short sessions (mean request duration under 20% of
/// the object) are HI with three or more requests and MI otherwise; long
/// sessions are LI with at most one request and MI otherwise.
pub fn classify_session(s: &Session, object_length: f64) -> InteractivityProfile {
    let short = s.mean_request_duration() < SHORT_REQUEST_FRACTION * object_length;
    let r = s.request_count();
    match (short, r) {
        (true, r) if r >= 3 => InteractivityProfile::High,
        (true, _) => InteractivityProfile::Medium,
        (false, r) if r <= 1 => InteractivityProfile::Low,
        (false, _) => InteractivityProfile::Medium,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub request_count: usize,
    pub session_duration: f64,
    pub mean_request_duration: f64,
    /// Idle time between the end of request i and the arrival of request i+1
    /// (zero when the next request preempts the previous one).
    pub inactivity_gaps: Vec<f64>,
    pub mean_inactivity_gap: Option<f64>,
    /// Signed jump distances; negative values are backward jumps.
    pub jump_distances: Vec<f64>,
}

pub fn session_stats(s: &Session) -> SessionStats {
    let mut gaps = Vec::new();
    let mut jumps = Vec::new();
    for pair in s.requests.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        gaps.push((b.arrival_time - (a.arrival_time + a.duration())).max(0.0));
        jumps.push(b.start_pos - a.end_pos);
    }
    let mean_gap = if gaps.is_empty() {
        None
    } else {
        Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
    };
    SessionStats {
        request_count: s.request_count(),
        session_duration: s.duration(),
        mean_request_duration: s.mean_request_duration(),
        inactivity_gaps: gaps,
        mean_inactivity_gap: mean_gap,
        jump_distances: jumps,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub profile: InteractivityProfile,
    pub session_count: usize,
    pub object_length: f64,
    pub playback_rate: f64,
    /// Mean gap between consecutive session arrivals (exponential).
    pub mean_session_gap: f64,
    /// Mean idle time between requests of one session (exponential).
    pub mean_think_time: f64,
    /// Decay rate of the geometric start-position distribution.
    pub start_skew: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            profile: InteractivityProfile::High,
            session_count: 100,
            object_length: 300.0,
            playback_rate: DEFAULT_PLAYBACK_RATE,
            mean_session_gap: 30.0,
            mean_think_time: 5.0,
            start_skew: DEFAULT_START_SKEW,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |what: &str| Err(WorkloadError::InvalidConfig(format!("{what} must be positive")));
        if self.session_count == 0 {
            return bad("session_count");
        }
        if !(self.object_length.is_finite() && self.object_length > 0.0) {
            return bad("object_length");
        }
        if !(self.playback_rate.is_finite() && self.playback_rate > 0.0) {
            return bad("playback_rate");
        }
        if !(self.mean_session_gap.is_finite() && self.mean_session_gap > 0.0) {
            return bad("mean_session_gap");
        }
        if !(self.mean_think_time.is_finite() && self.mean_think_time > 0.0) {
            return bad("mean_think_time");
        }
        if !(self.start_skew.is_finite() && self.start_skew > 0.0) {
            return bad("start_skew");
        }
        Ok(())
    }
}

/// Beginning-heavy start positions: bin k of [`START_BINS`] has weight
/// exp(-decay * k), uniform inside a bin.
#[derive(Debug, Clone)]
pub struct StartPositionSampler {
    bins: WeightedIndex<f64>,
}

impl StartPositionSampler {
    pub fn new(decay: f64) -> Self {
        let weights: Vec<f64> = (0..START_BINS).map(|k| (-decay * k as f64).exp()).collect();
        Self {
            bins: WeightedIndex::new(weights).expect("weights are positive"),
        }
    }

    /// Fraction of the object in [0, 1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let bin = self.bins.sample(rng);
        (bin as f64 + rng.gen::<f64>()) / START_BINS as f64
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    -mean * (1.0 - rng.gen::<f64>()).ln()
}

fn ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Generates a synthetic workload whose sessions follow `cfg.profile`.
pub fn generate_workload(cfg: &GeneratorConfig) -> Result<Workload, WorkloadError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = StartPositionSampler::new(cfg.start_skew);
    let len = cfg.object_length;

    let mut sessions = Vec::with_capacity(cfg.session_count);
    let mut session_start = 0.0;
    let mut last_arrival = 0.0_f64;
    for i in 0..cfg.session_count {
        session_start += exp_sample(&mut rng, cfg.mean_session_gap);
        let regions: Vec<(f64, f64)> = match cfg.profile {
            InteractivityProfile::High | InteractivityProfile::Medium => {
                let count = if cfg.profile == InteractivityProfile::High {
                    rng.gen_range(3..=8)
                } else {
                    rng.gen_range(1..=2)
                };
                (0..count)
                    .map(|_| {
                        let start = ms(starts.sample(&mut rng) * len);
                        let dur = rng.gen_range(0.02..0.15) * len;
                        (start, ms((start + dur).min(len)))
                    })
                    .collect()
            }
            InteractivityProfile::Low => {
                if rng.gen_bool(0.5) {
                    vec![(0.0, len)]
                } else {
                    let start = ms(starts.sample(&mut rng) * 0.5 * len);
                    let span = rng.gen_range(0.5..=1.0) * (len - start);
                    vec![(start, ms((start + span).min(len)))]
                }
            }
        };

        let mut arrival = ms(session_start);
        let mut requests = Vec::with_capacity(regions.len());
        let mut prev_end: Option<f64> = None;
        for (start, end) in regions {
            let interaction = match prev_end {
                None => Interaction::Play,
                Some(pe) if start >= pe => Interaction::JumpForward,
                Some(_) => Interaction::JumpBackward,
            };
            if let Some(prev) = requests.last() {
                let prev: &Request = prev;
                arrival = ms(prev.arrival_time + prev.duration() + exp_sample(&mut rng, cfg.mean_think_time));
            }
            requests.push(Request {
                arrival_time: arrival,
                start_pos: start,
                end_pos: end,
                interaction,
            });
            prev_end = Some(end);
        }
        last_arrival = last_arrival.max(arrival);
        sessions.push(Session::new(format!("c{i}"), requests)?);
    }
    let window = ms(last_arrival + len).max(last_arrival + 0.001);
    Workload::new(len, cfg.playback_rate, window, sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(arrival: f64, start: f64, end: f64) -> Request {
        Request::new(arrival, start, end, Interaction::Play).unwrap()
    }

    #[test]
    fn parse_single_record() {
        let text = format!("{TRACE_HEADER}\nc1,0.0,10.0,60.0,play\n");
        let w = parse_trace(
            &text,
            TraceOptions {
                object_length: Some(120.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(w.sessions.len(), 1);
        assert_eq!(w.sessions[0].requests.len(), 1);
        assert_eq!(w.sessions[0].requests[0].duration(), 50.0);
    }

    #[test]
    fn parse_header_only_is_no_sessions() {
        let err = parse_trace(
            &format!("{TRACE_HEADER}\n"),
            TraceOptions {
                object_length: Some(120.0),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err, WorkloadError::NoSessions);
        assert_eq!(err.to_string(), "no sessions");
    }

    #[test]
    fn parse_reorders_by_arrival() {
        let text = format!(
            "# object_length=100 window=50\n{TRACE_HEADER}\nc1,5.0,0,10,play\nc1,2.0,20,30,jumpf\n"
        );
        let w = parse_trace(&text, TraceOptions::default()).unwrap();
        let arrivals: Vec<f64> = w.sessions[0].requests.iter().map(|r| r.arrival_time).collect();
        assert_eq!(arrivals, vec![2.0, 5.0]);
        assert_eq!(w.observation_window, 50.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let opts = TraceOptions {
            object_length: Some(100.0),
            observation_window: Some(10.0),
            ..Default::default()
        };
        let bad_field = format!("{TRACE_HEADER}\nc1,0,0,10,play\nc2,x,0,10,play\n");
        assert!(matches!(
            parse_trace(&bad_field, opts),
            Err(WorkloadError::Malformed { line: 3, .. })
        ));
        let reversed = format!("{TRACE_HEADER}\nc1,0,20,10,play\n");
        assert!(matches!(
            parse_trace(&reversed, opts),
            Err(WorkloadError::EndBeforeStart { line: 2, .. })
        ));
        let late = format!("{TRACE_HEADER}\nc1,0,0,10,play\nc1,10,0,10,play\n");
        assert!(matches!(
            parse_trace(&late, opts),
            Err(WorkloadError::ArrivalBeyondWindow { line: 3, .. })
        ));
        let verb = format!("{TRACE_HEADER}\nc1,0,0,10,rewind\n");
        assert!(matches!(
            parse_trace(&verb, opts),
            Err(WorkloadError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            parse_trace("c1,0,0,10,play\n", opts),
            Err(WorkloadError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn parse_requires_object_length() {
        let text = format!("{TRACE_HEADER}\nc1,0,0,10,play\n");
        assert_eq!(
            parse_trace(&text, TraceOptions::default()),
            Err(WorkloadError::MissingObjectLength)
        );
    }

    #[test]
    fn flags_override_comment() {
        let text = format!("# object_length=100 window=50\n{TRACE_HEADER}\nc1,0,0,10,play\n");
        let w = parse_trace(
            &text,
            TraceOptions {
                object_length: Some(200.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(w.object_length, 200.0);
        assert_eq!(w.observation_window, 50.0);
    }

    #[test]
    fn classification_examples() {
        let len = 100.0;
        let hi = Session::new("a", (0..4).map(|i| req(i as f64, 0.0, 5.0)).collect()).unwrap();
        assert_eq!(classify_session(&hi, len), InteractivityProfile::High);
        let li = Session::new("b", vec![req(0.0, 0.0, 100.0)]).unwrap();
        assert_eq!(classify_session(&li, len), InteractivityProfile::Low);
        let mi = Session::new("c", vec![req(0.0, 0.0, 10.0), req(1.0, 50.0, 60.0)]).unwrap();
        assert_eq!(classify_session(&mi, len), InteractivityProfile::Medium);
        // Rule gap: two long requests.
        let gap = Session::new("d", vec![req(0.0, 0.0, 50.0), req(1.0, 50.0, 100.0)]).unwrap();
        assert_eq!(classify_session(&gap, len), InteractivityProfile::Medium);
        // Exactly 20% is not short.
        let edge = Session::new("e", vec![req(0.0, 0.0, 20.0)]).unwrap();
        assert_eq!(classify_session(&edge, len), InteractivityProfile::Low);
    }

    #[test]
    fn stats_single_request() {
        let s = Session::new("a", vec![req(3.0, 0.0, 10.0)]).unwrap();
        let st = session_stats(&s);
        assert_eq!(st.request_count, 1);
        assert!(st.inactivity_gaps.is_empty());
        assert!(st.jump_distances.is_empty());
        assert_eq!(st.mean_inactivity_gap, None);
        assert_eq!(st.session_duration, 10.0);
    }

    #[test]
    fn stats_forward_and_backward_jumps() {
        let s = Session::new("a", vec![req(0.0, 0.0, 10.0), req(20.0, 30.0, 40.0)]).unwrap();
        let st = session_stats(&s);
        assert_eq!(st.jump_distances, vec![20.0]);
        assert_eq!(st.inactivity_gaps, vec![10.0]);
        assert_eq!(st.session_duration, 30.0);

        let s = Session::new("b", vec![req(0.0, 0.0, 10.0), req(10.0, 2.0, 8.0)]).unwrap();
        assert_eq!(session_stats(&s).jump_distances, vec![-8.0]);
    }

    #[test]
    fn session_rejects_unordered_and_empty() {
        assert!(Session::new("a", vec![]).is_err());
        assert!(Session::new("a", vec![req(5.0, 0.0, 1.0), req(2.0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn generator_rejects_zero_sessions() {
        let cfg = GeneratorConfig {
            session_count: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_workload(&cfg),
            Err(WorkloadError::InvalidConfig(_))
        ));
    }

    #[test]
    fn generator_single_li_session() {
        let cfg = GeneratorConfig {
            profile: InteractivityProfile::Low,
            session_count: 1,
            ..Default::default()
        };
        let w = generate_workload(&cfg).unwrap();
        assert_eq!(w.sessions.len(), 1);
        assert_eq!(w.sessions[0].request_count(), 1);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = GeneratorConfig {
            seed: 99,
            ..Default::default()
        };
        let a = generate_workload(&cfg).unwrap().to_trace();
        let b = generate_workload(&cfg).unwrap().to_trace();
        assert_eq!(a, b);
        let other = generate_workload(&GeneratorConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, other.to_trace());
    }

    #[test]
    fn li_generator_classifies_li() {
        let cfg = GeneratorConfig {
            profile: InteractivityProfile::Low,
            session_count: 100,
            seed: 7,
            ..Default::default()
        };
        let w = generate_workload(&cfg).unwrap();
        let li = w
            .sessions
            .iter()
            .filter(|s| classify_session(s, w.object_length) == InteractivityProfile::Low)
            .count();
        assert!(li >= 95, "{li}");
    }

    #[test]
    fn default_skew_puts_half_the_mass_up_front() {
        let weights: Vec<f64> = (0..START_BINS)
            .map(|k| (-DEFAULT_START_SKEW * k as f64).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let head: f64 = weights[..START_BINS / 5].iter().sum();
        assert!((head / total - 0.5).abs() < 1e-4, "{}", head / total);
    }

    #[test]
    fn generated_interactions_follow_jump_sign() {
        let w = generate_workload(&GeneratorConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        for s in &w.sessions {
            assert_eq!(s.requests[0].interaction, Interaction::Play);
            for pair in s.requests.windows(2) {
                let expected = if pair[1].start_pos >= pair[0].end_pos {
                    Interaction::JumpForward
                } else {
                    Interaction::JumpBackward
                };
                assert_eq!(pair[1].interaction, expected);
            }
        }
    }
}
