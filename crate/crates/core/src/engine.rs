//! Deterministic discrete-event core.
//!
//! Time is kept as integer microseconds. The channel is a single shared
//! medium: every transmission is a half-open interval `[start, end)` and any
//! overlap between records of different owners destroys all of them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Virtual time in microseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Network {
    Nru,
    WiFi,
}

impl Network {
    pub fn as_str(self) -> &'static str {
        match self {
            Network::Nru => "nru",
            Network::WiFi => "wifi",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Data,
    Reservation,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Data => "data",
            RecordKind::Reservation => "reservation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Pending,
    Success,
    /// Overlapped at least one record of the same network.
    IntraCollision,
    /// Overlapped only records of the other network.
    CrossCollision,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pending => "pending",
            Outcome::Success => "success",
            Outcome::IntraCollision => "intra",
            Outcome::CrossCollision => "cross",
        }
    }

    pub fn is_collision(self) -> bool {
        matches!(self, Outcome::IntraCollision | Outcome::CrossCollision)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransmissionRecord {
    pub id: RecordId,
    pub owner: NodeId,
    pub network: Network,
    pub kind: RecordKind,
    pub start: SimTime,
    pub end: SimTime,
    pub outcome: Outcome,
}

impl TransmissionRecord {
    pub fn overlaps(&self, other: &TransmissionRecord) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }

    pub fn duration(&self) -> u64 {
        self.end.0 - self.start.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: at {at}, clock is {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("transmission of zero duration requested by node {0}")]
    EmptyTransmission(NodeId),
}

/// Event kinds driven by the simulation loop. `gen` fields invalidate stale
/// events after a node changes state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// A node's backoff counter reaches zero.
    BackoffSlotTick { node: NodeId, gen: u64 },
    /// Deferred data start at a slot boundary.
    TransmissionStart { node: NodeId, gen: u64 },
    TransmissionEnd { record: RecordId },
    CrSlotBoundary { lssb: SimTime, slot: usize },
    /// A silent node reaches the end of its gap.
    LssbTick { node: NodeId, gen: u64 },
    FrameTick,
    AgentTick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event<K> {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: K,
}

struct Entry<K> {
    time: SimTime,
    sequence: u64,
    kind: K,
}

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.sequence == other.sequence
    }
}
impl<K> Eq for Entry<K> {}
impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<K> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.sequence).cmp(&(other.time, other.sequence))
    }
}

/// Min-heap of events ordered by `(time, insertion sequence)`.
pub struct EventQueue<K> {
    heap: BinaryHeap<Reverse<Entry<K>>>,
    now: SimTime,
    next_seq: u64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: SimTime, kind: K) -> Result<u64, EngineError> {
        if time < self.now {
            return Err(EngineError::ScheduleInPast { at: time, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { time, sequence, kind }));
        Ok(sequence)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<K>> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        Some(Event {
            time: e.time,
            sequence: e.sequence,
            kind: e.kind,
        })
    }

    /// Moves the clock forward without dequeuing. Never moves it back.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelState {
    Busy,
    Idle,
}

/// Classifies `record` against every other-owner record in `others`.
pub fn classify<'a>(
    record: &TransmissionRecord,
    others: impl IntoIterator<Item = &'a TransmissionRecord>,
) -> Outcome {
    let mut cross = false;
    for o in others {
        if o.owner == record.owner || o.id == record.id || !o.overlaps(record) {
            continue;
        }
        if o.network == record.network {
            return Outcome::IntraCollision;
        }
        cross = true;
    }
    if cross {
        Outcome::CrossCollision
    } else {
        Outcome::Success
    }
}

/// In-flight and completed channel occupancy.
#[derive(Default)]
pub struct ChannelTimeline {
    active: BTreeMap<RecordId, TransmissionRecord>,
    history: Vec<TransmissionRecord>,
    next_id: u64,
}

impl ChannelTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = &TransmissionRecord> {
        self.active.values()
    }

    pub fn active_record(&self, id: RecordId) -> Option<&TransmissionRecord> {
        self.active.get(&id)
    }

    /// Completed records ordered by end time.
    pub fn history(&self) -> &[TransmissionRecord] {
        &self.history
    }

    pub fn into_history(self) -> Vec<TransmissionRecord> {
        self.history
    }

    pub fn sense(&self, t: SimTime) -> ChannelState {
        if self.active.values().any(|r| r.covers(t)) {
            return ChannelState::Busy;
        }
        let from = self.history.partition_point(|r| r.end <= t);
        if self.history[from..].iter().any(|r| r.covers(t)) {
            ChannelState::Busy
        } else {
            ChannelState::Idle
        }
    }

    /// Any in-flight record covering `t` owned by a node outside `exclude`.
    pub fn energy_from_others(&self, t: SimTime, exclude: &[NodeId]) -> bool {
        self.active
            .values()
            .any(|r| r.covers(t) && !exclude.contains(&r.owner))
    }

    pub fn begin_transmission(
        &mut self,
        owner: NodeId,
        network: Network,
        kind: RecordKind,
        start: SimTime,
        duration: u64,
    ) -> Result<RecordId, EngineError> {
        if duration == 0 {
            return Err(EngineError::EmptyTransmission(owner));
        }
        let id = RecordId(self.next_id);
        self.next_id += 1;
        self.active.insert(
            id,
            TransmissionRecord {
                id,
                owner,
                network,
                kind,
                start,
                end: start + duration,
                outcome: Outcome::Pending,
            },
        );
        Ok(id)
    }

    pub fn resolve_outcome(&self, record: &TransmissionRecord) -> Outcome {
        let from = self.history.partition_point(|r| r.end <= record.start);
        classify(record, self.active.values().chain(self.history[from..].iter()))
    }

    /// Finishes an active record at its natural end. Returns the resolved copy.
    pub fn complete(&mut self, id: RecordId) -> Option<TransmissionRecord> {
        let mut rec = self.active.remove(&id)?;
        rec.outcome = self.resolve_outcome(&rec);
        self.history.push(rec.clone());
        Some(rec)
    }

    /// Cuts an active record short at `at`. A record cut at its own start is
    /// withdrawn without trace.
    pub fn cut_short(&mut self, id: RecordId, at: SimTime) -> Option<TransmissionRecord> {
        let rec = self.active.get_mut(&id)?;
        debug_assert!(at >= rec.start && at <= rec.end);
        if at <= rec.start {
            self.active.remove(&id);
            return None;
        }
        rec.end = at;
        self.complete(id)
    }
}

/// Per-node random stream derived from `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn write_trace<W: Write>(history: &[TransmissionRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "start_us,end_us,owner,network,kind,outcome")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.start.0,
            r.end.0,
            r.owner,
            r.network.as_str(),
            r.kind.as_str(),
            r.outcome.as_str()
        )?;
    }
    Ok(())
}

/// SHA-256 over the trace rendering, hex encoded.
pub fn trace_hash(history: &[TransmissionRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(history, &mut buf).expect("writing to a Vec cannot fail");
    hex::encode(Sha256::digest(&buf))
}
