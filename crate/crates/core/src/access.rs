//! Channel-access rules: Wi-Fi EDCA best effort and the NR-U LBT variants.
//!
//! The functions here are the per-node decision rules. The event loop in
//! [`crate::sim`] strings them together.

use rand::Rng;

use crate::engine::{NodeId, Network, SimTime};

pub const SLOT_US: u64 = 9;
pub const SIFS_US: u64 = 16;
/// AIFS for the best-effort category: SIFS + 3 slots.
pub const AIFS_US: u64 = SIFS_US + 3 * SLOT_US;
pub const SYNC_SLOT_US: u64 = 500;
pub const TX_DURATION_US: u64 = 2_000;
pub const CW_MIN: u32 = 15;
pub const CW_MAX: u32 = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Priority {
    Pc1,
    Pc3,
    WiFiBe,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Pc1 => "pc1",
            Priority::Pc3 => "pc3",
            Priority::WiFiBe => "be",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProtocolKind {
    Edca,
    RsLbt,
    GapLbt { desync: bool },
    CrLbt { n_sl: usize },
    EcrLbt { n_sl: usize },
    GcrLbt { n_sl: usize, p_rs: f64 },
    DbLbt { d_fixed: u32, both_networks: bool },
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Edca => "edca",
            ProtocolKind::RsLbt => "rs-lbt",
            ProtocolKind::GapLbt { desync: false } => "gap-lbt",
            ProtocolKind::GapLbt { desync: true } => "gap-lbt-desync",
            ProtocolKind::CrLbt { .. } => "cr-lbt",
            ProtocolKind::EcrLbt { .. } => "ecr-lbt",
            ProtocolKind::GcrLbt { .. } => "gcr-lbt",
            ProtocolKind::DbLbt { both_networks: false, .. } => "db-lbt",
            ProtocolKind::DbLbt { both_networks: true, .. } => "db-lbt-both",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ProtocolKind::CrLbt { n_sl } | ProtocolKind::EcrLbt { n_sl } if n_sl < 1 => {
                Err("n_sl must be >= 1".into())
            }
            ProtocolKind::GcrLbt { n_sl, p_rs } => {
                if n_sl < 1 {
                    Err("n_sl must be >= 1".into())
                } else if !(0.0..=1.0).contains(&p_rs) {
                    Err(format!("p_rs must lie in [0, 1], got {p_rs}"))
                } else {
                    Ok(())
                }
            }
            ProtocolKind::DbLbt { d_fixed, .. } if d_fixed < 1 => Err("d_fixed must be >= 1".into()),
            _ => Ok(()),
        }
    }

    pub fn is_cr_family(&self) -> bool {
        matches!(
            self,
            ProtocolKind::CrLbt { .. } | ProtocolKind::EcrLbt { .. } | ProtocolKind::GcrLbt { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeConfig {
    pub id: NodeId,
    pub network: Network,
    pub protocol: ProtocolKind,
    pub priority: Priority,
    pub cw_min: u32,
    pub cw_max: u32,
    pub tx_duration: u64,
    /// Slot-boundary offset in microseconds; NR-U only.
    pub lssb_offset: u64,
}

fn is_pow2_minus_one(x: u32) -> bool {
    (x as u64 + 1).is_power_of_two()
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cw_min > self.cw_max {
            return Err(format!("node {}: cw_min {} > cw_max {}", self.id, self.cw_min, self.cw_max));
        }
        if !is_pow2_minus_one(self.cw_min) || !is_pow2_minus_one(self.cw_max) {
            return Err(format!("node {}: contention windows must be 2^k - 1", self.id));
        }
        if self.tx_duration == 0 {
            return Err(format!("node {}: tx_duration must be positive", self.id));
        }
        if self.lssb_offset >= SYNC_SLOT_US {
            return Err(format!("node {}: lssb_offset must be below {SYNC_SLOT_US}", self.id));
        }
        self.protocol.validate().map_err(|e| format!("node {}: {e}", self.id))
    }
}

/// Contention-window bookkeeping for one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackoffState {
    pub counter: u32,
    pub cw_current: u32,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Consecutive failed attempts.
    pub stage: u32,
}

impl BackoffState {
    pub fn new(cw_min: u32, cw_max: u32) -> Self {
        Self {
            counter: 0,
            cw_current: cw_min,
            cw_min,
            cw_max,
            stage: 0,
        }
    }

    pub fn on_success(&mut self) {
        self.cw_current = self.cw_min;
        self.stage = 0;
    }

    pub fn on_failure(&mut self) {
        self.cw_current = (2 * self.cw_current + 1).min(self.cw_max);
        self.stage += 1;
    }

    pub fn redraw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.counter = draw_backoff(rng, self.cw_current);
    }

    /// Pins the window to a single value, clamping the live counter.
    pub fn pin_window(&mut self, cw: u32) {
        self.cw_min = cw;
        self.cw_max = cw;
        self.cw_current = cw;
        self.counter = self.counter.min(cw);
    }
}

/// Uniform integer in `[0, cw]`.
pub fn draw_backoff<R: Rng + ?Sized>(rng: &mut R, cw: u32) -> u32 {
    rng.gen_range(0..=cw)
}

/// Smallest `offset + k * 500us` that is `>= t`.
pub fn next_lssb(t: SimTime, offset: u64) -> SimTime {
    debug_assert!(offset < SYNC_SLOT_US);
    let t = t.as_us();
    if t <= offset {
        return SimTime(offset);
    }
    let k = (t - offset).div_ceil(SYNC_SLOT_US);
    SimTime(offset + k * SYNC_SLOT_US)
}

/// An idle-channel countdown: after the defer period the counter drops by
/// one per idle slot, and the node fires when it reaches zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Countdown {
    /// Start of the first backoff slot (end of the defer period).
    pub slots_start: SimTime,
    pub counter: u32,
}

impl Countdown {
    /// Countdown resuming after the channel turned idle at `idle_at`.
    pub fn after_defer(idle_at: SimTime, counter: u32) -> Self {
        Self {
            slots_start: idle_at + AIFS_US,
            counter,
        }
    }

    pub fn completion(&self) -> SimTime {
        self.slots_start + self.counter as u64 * SLOT_US
    }

    /// Slots fully elapsed by `t`.
    fn elapsed(&self, t: SimTime) -> u32 {
        if t <= self.slots_start {
            0
        } else {
            (((t - self.slots_start).as_us() / SLOT_US) as u32).min(self.counter)
        }
    }

    /// Counter left when the medium turns busy at `t`; partial slots are not
    /// counted.
    pub fn freeze_at(&self, t: SimTime) -> u32 {
        self.counter - self.elapsed(t)
    }

    /// Same countdown re-anchored at `t` on the slot grid, so a counter can be
    /// replaced without losing slot alignment.
    pub fn rebase(&self, t: SimTime) -> Countdown {
        let e = self.elapsed(t);
        Countdown {
            slots_start: self.slots_start + e as u64 * SLOT_US,
            counter: self.counter - e,
        }
    }
}

/// Reservation-then-data schedule for a node whose backoff ended at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxPlan {
    pub reservation: Option<(SimTime, SimTime)>,
    pub data_start: SimTime,
    pub data_end: SimTime,
}

pub fn rs_lbt_complete(t: SimTime, offset: u64, tx_duration: u64) -> TxPlan {
    let l = next_lssb(t, offset);
    TxPlan {
        reservation: (l > t).then_some((t, l)),
        data_start: l,
        data_end: l + tx_duration,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapPlan {
    TransmitNow,
    /// Stay silent and sense until this boundary.
    WaitUntil(SimTime),
}

pub fn gap_lbt_complete(t: SimTime, offset: u64) -> GapPlan {
    let l = next_lssb(t, offset);
    if l == t {
        GapPlan::TransmitNow
    } else {
        GapPlan::WaitUntil(l)
    }
}

/// CR-slots that fit in `[t, lssb)`, as `(slot index, slot start)`. Slots are
/// anchored back-to-back immediately before the boundary; slot 0 is the
/// earliest. When the window is too short the earliest slots are dropped.
pub fn cr_slots(t: SimTime, lssb: SimTime, n_sl: usize) -> Vec<(usize, SimTime)> {
    (0..n_sl)
        .filter_map(|j| {
            let back = (n_sl - j) as u64 * SLOT_US;
            let start = lssb.as_us().checked_sub(back)?;
            (start >= t.as_us()).then_some((j, SimTime(start)))
        })
        .collect()
}

/// Per-slot transmit decisions (`true` = send reservation energy).
pub fn mute_plan<R: Rng + ?Sized>(
    protocol: &ProtocolKind,
    fixed_mute_slot: usize,
    rng: &mut R,
) -> Vec<bool> {
    match *protocol {
        ProtocolKind::CrLbt { n_sl } => (0..n_sl).map(|j| j != fixed_mute_slot).collect(),
        ProtocolKind::EcrLbt { n_sl } => {
            if n_sl < 2 {
                return vec![true; n_sl];
            }
            let mute = rng.gen_range(1..n_sl);
            (0..n_sl).map(|j| j != mute).collect()
        }
        ProtocolKind::GcrLbt { n_sl, p_rs } => (0..n_sl)
            .map(|j| j == 0 || rng.gen_bool(p_rs))
            .collect(),
        _ => Vec::new(),
    }
}

/// One CR-slot: every muted contender that hears energy (another contender's
/// reservation, or anything else on air) drops out. Returns the deferred ids.
pub fn cr_slot_round(alive: &[(NodeId, bool)], external_busy: bool) -> Vec<NodeId> {
    let any_tx = alive.iter().any(|&(_, tx)| tx);
    if !any_tx && !external_busy {
        return Vec::new();
    }
    alive.iter().filter(|&&(_, tx)| !tx).map(|&(id, _)| id).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TournamentResult {
    pub survivors: Vec<NodeId>,
    /// `(node, slot index)` in the order they dropped out.
    pub deferred: Vec<(NodeId, usize)>,
}

/// Runs the whole CR-slot tournament over the fitted slots.
pub fn cr_contention(
    contenders: &[(NodeId, Vec<bool>)],
    slots: &[usize],
    external_busy: impl Fn(usize) -> bool,
) -> TournamentResult {
    let mut alive: Vec<&(NodeId, Vec<bool>)> = contenders.iter().collect();
    let mut deferred = Vec::new();
    for &j in slots {
        let round: Vec<(NodeId, bool)> = alive
            .iter()
            .map(|(id, plan)| (*id, plan.get(j).copied().unwrap_or(true)))
            .collect();
        let out = cr_slot_round(&round, external_busy(j));
        alive.retain(|(id, _)| !out.contains(id));
        deferred.extend(out.into_iter().map(|id| (id, j)));
    }
    TournamentResult {
        survivors: alive.into_iter().map(|(id, _)| *id).collect(),
        deferred,
    }
}

/// Deterministic-backoff rule. `success` is `None` for the very first draw.
pub fn db_next_backoff<R: Rng + ?Sized>(
    success: Option<bool>,
    state: &mut BackoffState,
    d_fixed: u32,
    rng: &mut R,
) -> u32 {
    match success {
        None => draw_backoff(rng, d_fixed),
        Some(true) => {
            state.on_success();
            d_fixed
        }
        Some(false) => {
            state.on_failure();
            draw_backoff(rng, state.cw_current)
        }
    }
}
