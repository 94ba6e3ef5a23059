//! The simulation loop: nodes, shared channel and event dispatch.
//!
//! Countdowns are not ticked slot by slot. A counting node has a single
//! pending completion event; when the medium turns busy every counting node
//! is frozen (its event invalidated through a generation counter) and when
//! the medium turns idle again every frozen node resumes after the defer
//! period.

use std::collections::BTreeMap;

use log::trace;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::access::{
    cr_slot_round, cr_slots, db_next_backoff, gap_lbt_complete, mute_plan, next_lssb,
    rs_lbt_complete, BackoffState, Countdown, GapPlan, NodeConfig, Priority, ProtocolKind,
    SYNC_SLOT_US,
};
use crate::engine::{
    substream, ChannelTimeline, EngineError, EventKind, EventQueue, NodeId, Network, Outcome,
    RecordId, RecordKind, SimTime, TransmissionRecord,
};
use crate::metrics::{snapshot, JfiMode, MetricsSnapshot, NodeMeta, Window};
use crate::priority::{apply_skip, SkipController, SkipDirective, SkipMode};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub nodes: Vec<NodeConfig>,
    pub sim_time: SimTime,
    pub seed: u64,
    pub skip: Option<SkipMode>,
    /// Agent interaction period in microseconds.
    pub interaction_period: Option<u64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.nodes.is_empty() {
            return Err(SimError::Invalid("scenario has no nodes".into()));
        }
        if self.sim_time == SimTime::ZERO {
            return Err(SimError::Invalid("simulation time must be positive".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 as usize != i {
                return Err(SimError::Invalid(format!("node ids must be dense, got {} at {i}", n.id)));
            }
            n.validate().map_err(SimError::Invalid)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Phase {
    /// Waiting for the medium to become idle.
    Frozen,
    Counting(Countdown),
    /// Holding the medium with a reservation until the slot boundary.
    Reserving {
        lssb: SimTime,
        record: RecordId,
        plan: Vec<bool>,
    },
    /// Silent until the slot boundary; any foreign transmission aborts.
    GapWait { lssb: SimTime, voluntary: bool },
    Transmitting { record: RecordId },
}

struct Node {
    cfg: NodeConfig,
    backoff: BackoffState,
    phase: Phase,
    gen: u64,
    rng: ChaCha8Rng,
    fixed_mute_slot: usize,
    skip: SkipDirective,
}

struct Tournament {
    slots: Vec<(usize, SimTime)>,
    members: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Continue,
    AgentTick(SimTime),
    Done,
}

pub struct Simulation {
    queue: EventQueue<EventKind>,
    channel: ChannelTimeline,
    nodes: Vec<Node>,
    roster: Vec<NodeMeta>,
    end: SimTime,
    skip: Option<SkipController>,
    tournaments: BTreeMap<SimTime, Tournament>,
    success_starts: Vec<Vec<SimTime>>,
    interaction_period: Option<u64>,
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub history: Vec<TransmissionRecord>,
    pub roster: Vec<NodeMeta>,
    pub sim_time: SimTime,
    pub skip: Option<SkipController>,
}

impl RunOutput {
    pub fn metrics(&self, jfi_mode: JfiMode) -> MetricsSnapshot {
        snapshot(
            &self.history,
            &self.roster,
            Window::new(SimTime::ZERO, self.sim_time),
            jfi_mode,
        )
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut nodes = Vec::with_capacity(scenario.nodes.len());
        for cfg in &scenario.nodes {
            let mut rng = substream(scenario.seed, cfg.id.0 as u64 + 1);
            let mut cfg = cfg.clone();
            if let ProtocolKind::GapLbt { desync: true } = cfg.protocol {
                cfg.lssb_offset = rng.gen_range(0..SYNC_SLOT_US);
            }
            let fixed_mute_slot = match cfg.protocol {
                ProtocolKind::CrLbt { n_sl } => rng.gen_range(0..n_sl),
                _ => 0,
            };
            let mut backoff = BackoffState::new(cfg.cw_min, cfg.cw_max);
            backoff.counter = match cfg.protocol {
                ProtocolKind::DbLbt { d_fixed, .. } => {
                    db_next_backoff(None, &mut backoff, d_fixed, &mut rng)
                }
                _ => crate::access::draw_backoff(&mut rng, backoff.cw_current),
            };
            nodes.push(Node {
                cfg,
                backoff,
                phase: Phase::Frozen,
                gen: 0,
                rng,
                fixed_mute_slot,
                skip: SkipDirective::None,
            });
        }
        let roster = nodes
            .iter()
            .map(|n| NodeMeta {
                id: n.cfg.id,
                network: n.cfg.network,
                priority: n.cfg.priority,
            })
            .collect();
        let mut sim = Self {
            queue: EventQueue::new(),
            channel: ChannelTimeline::new(),
            success_starts: vec![Vec::new(); nodes.len()],
            nodes,
            roster,
            end: scenario.sim_time,
            skip: scenario.skip.map(SkipController::new),
            tournaments: BTreeMap::new(),
            interaction_period: scenario.interaction_period,
        };
        sim.resume_all(SimTime::ZERO)?;
        if let Some(c) = &sim.skip {
            let frame = c.frame_len;
            sim.queue.schedule(SimTime(frame), EventKind::FrameTick)?;
        }
        if let Some(p) = sim.interaction_period {
            sim.queue.schedule(SimTime(p), EventKind::AgentTick)?;
        }
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn end_time(&self) -> SimTime {
        self.end
    }

    pub fn roster(&self) -> &[NodeMeta] {
        &self.roster
    }

    pub fn history(&self) -> &[TransmissionRecord] {
        self.channel.history()
    }

    pub fn skip_controller(&self) -> Option<&SkipController> {
        self.skip.as_ref()
    }

    pub fn backoff(&self, id: NodeId) -> &BackoffState {
        &self.nodes[id.0 as usize].backoff
    }

    pub fn lssb_offset(&self, id: NodeId) -> u64 {
        self.nodes[id.0 as usize].cfg.lssb_offset
    }

    /// Metrics over completed records in `window`.
    pub fn snapshot(&self, window: Window, jfi_mode: JfiMode) -> MetricsSnapshot {
        snapshot(self.channel.history(), &self.roster, window, jfi_mode)
    }

    /// Runs to completion, including the drain of in-flight transmissions.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while self.step()? != Step::Done {}
        Ok(self.finish())
    }

    /// Runs until the next agent interaction point or the end of the run.
    pub fn run_until_agent_tick(&mut self) -> Result<Option<SimTime>, SimError> {
        loop {
            match self.step()? {
                Step::Continue => {}
                Step::AgentTick(t) => return Ok(Some(t)),
                Step::Done => return Ok(None),
            }
        }
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            history: self.channel.into_history(),
            roster: self.roster,
            sim_time: self.end,
            skip: self.skip,
        }
    }

    /// Fixes `cw_min = cw_max = cw` for every node matching `filter`.
    pub fn pin_cw(&mut self, filter: impl Fn(&NodeMeta) -> bool, cw: u32) -> Result<(), SimError> {
        let now = self.now();
        for i in 0..self.nodes.len() {
            if !filter(&self.roster[i]) {
                continue;
            }
            let node = &mut self.nodes[i];
            node.backoff.pin_window(cw);
            if let Phase::Counting(cd) = node.phase {
                let rebased = cd.rebase(now);
                let mut next = Countdown {
                    slots_start: rebased.slots_start,
                    counter: rebased.counter.min(cw),
                };
                if next.completion() < now {
                    next = Countdown { slots_start: now, counter: 0 };
                }
                node.backoff.counter = next.counter;
                node.phase = Phase::Counting(next);
                node.gen += 1;
                let ev = EventKind::BackoffSlotTick { node: node.cfg.id, gen: node.gen };
                self.queue.schedule(next.completion(), ev)?;
            }
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<Step, SimError> {
        let Some(ev) = self.queue.pop() else {
            return Ok(Step::Done);
        };
        let now = ev.time;
        let live = now < self.end;
        match ev.kind {
            EventKind::BackoffSlotTick { node, gen } => {
                if live && self.is_current(node, gen) {
                    self.on_backoff_done(node)?;
                }
            }
            EventKind::TransmissionStart { node, gen } => {
                if self.is_current(node, gen) {
                    if let Phase::Reserving { .. } = self.nodes[node.0 as usize].phase {
                        self.start_data(node)?;
                    }
                }
            }
            EventKind::LssbTick { node, gen } => {
                if self.is_current(node, gen) {
                    if let Phase::GapWait { .. } = self.nodes[node.0 as usize].phase {
                        self.start_data(node)?;
                    }
                }
            }
            EventKind::TransmissionEnd { record } => self.on_transmission_end(record)?,
            EventKind::CrSlotBoundary { lssb, slot } => self.on_cr_slot(lssb, slot)?,
            EventKind::FrameTick => {
                if live {
                    self.on_frame()?;
                }
            }
            EventKind::AgentTick => {
                if live {
                    if let Some(p) = self.interaction_period {
                        if now + p < self.end {
                            self.queue.schedule(now + p, EventKind::AgentTick)?;
                        }
                    }
                    return Ok(Step::AgentTick(now));
                }
            }
        }
        Ok(Step::Continue)
    }

    fn is_current(&self, node: NodeId, gen: u64) -> bool {
        self.nodes[node.0 as usize].gen == gen
    }

    fn set_phase(&mut self, node: NodeId, phase: Phase) -> u64 {
        let n = &mut self.nodes[node.0 as usize];
        n.phase = phase;
        n.gen += 1;
        n.gen
    }

    fn count_from(&mut self, node: NodeId, cd: Countdown) -> Result<(), SimError> {
        self.nodes[node.0 as usize].backoff.counter = cd.counter;
        let gen = self.set_phase(node, Phase::Counting(cd));
        self.queue
            .schedule(cd.completion(), EventKind::BackoffSlotTick { node, gen })?;
        Ok(())
    }

    fn on_backoff_done(&mut self, id: NodeId) -> Result<(), SimError> {
        let now = self.now();
        let i = id.0 as usize;
        self.nodes[i].backoff.counter = 0;
        match self.nodes[i].skip {
            SkipDirective::SkipNextOpportunities(k) if k > 0 => {
                let n = &mut self.nodes[i];
                n.skip = if k > 1 {
                    SkipDirective::SkipNextOpportunities(k - 1)
                } else {
                    SkipDirective::None
                };
                let cw = n.backoff.cw_current;
                let counter = crate::access::draw_backoff(&mut n.rng, cw);
                trace!("{now}: node {id} skips an opportunity, redraws {counter}");
                return self.count_from(id, Countdown { slots_start: now, counter });
            }
            SkipDirective::DeferToNextLssb => {
                self.nodes[i].skip = SkipDirective::None;
                let lssb = next_lssb(now, self.nodes[i].cfg.lssb_offset);
                if lssb > now {
                    let gen = self.set_phase(id, Phase::GapWait { lssb, voluntary: true });
                    self.queue.schedule(lssb, EventKind::LssbTick { node: id, gen })?;
                    return Ok(());
                }
            }
            _ => {}
        }
        self.attempt(id)
    }

    fn attempt(&mut self, id: NodeId) -> Result<(), SimError> {
        let now = self.now();
        let i = id.0 as usize;
        let cfg = &self.nodes[i].cfg;
        let protocol = cfg.protocol;
        let (network, offset, tx) = (cfg.network, cfg.lssb_offset, cfg.tx_duration);
        match protocol {
            ProtocolKind::Edca => self.start_data(id),
            ProtocolKind::DbLbt { .. } if network == Network::WiFi => self.start_data(id),
            ProtocolKind::RsLbt | ProtocolKind::DbLbt { .. } => {
                let plan = rs_lbt_complete(now, offset, tx);
                match plan.reservation {
                    None => self.start_data(id),
                    Some((_, lssb)) => self.reserve(id, lssb, Vec::new()),
                }
            }
            ProtocolKind::GapLbt { .. } => match gap_lbt_complete(now, offset) {
                GapPlan::TransmitNow => self.start_data(id),
                GapPlan::WaitUntil(lssb) => {
                    let gen = self.set_phase(id, Phase::GapWait { lssb, voluntary: false });
                    self.queue.schedule(lssb, EventKind::LssbTick { node: id, gen })?;
                    Ok(())
                }
            },
            ProtocolKind::CrLbt { n_sl }
            | ProtocolKind::EcrLbt { n_sl }
            | ProtocolKind::GcrLbt { n_sl, .. } => {
                let lssb = next_lssb(now, offset);
                if lssb == now {
                    return self.start_data(id);
                }
                let n = &mut self.nodes[i];
                let plan = mute_plan(&protocol, n.fixed_mute_slot, &mut n.rng);
                self.reserve(id, lssb, plan)?;
                match self.tournaments.get_mut(&lssb) {
                    Some(t) => t.members.push(id),
                    None => {
                        let slots = cr_slots(now, lssb, n_sl);
                        if let Some(&(_, first)) = slots.first() {
                            self.queue
                                .schedule(first, EventKind::CrSlotBoundary { lssb, slot: 0 })?;
                        }
                        self.tournaments.insert(lssb, Tournament { slots, members: vec![id] });
                    }
                }
                Ok(())
            }
        }
    }

    fn reserve(&mut self, id: NodeId, lssb: SimTime, plan: Vec<bool>) -> Result<(), SimError> {
        let now = self.now();
        let record = self.begin_record(id, RecordKind::Reservation, (lssb - now).as_us())?;
        let gen = self.set_phase(id, Phase::Reserving { lssb, record, plan });
        self.queue
            .schedule(lssb, EventKind::TransmissionStart { node: id, gen })?;
        Ok(())
    }

    fn start_data(&mut self, id: NodeId) -> Result<(), SimError> {
        let dur = self.nodes[id.0 as usize].cfg.tx_duration;
        let record = self.begin_record(id, RecordKind::Data, dur)?;
        self.set_phase(id, Phase::Transmitting { record });
        Ok(())
    }

    fn begin_record(&mut self, owner: NodeId, kind: RecordKind, dur: u64) -> Result<RecordId, SimError> {
        let now = self.now();
        let was_idle = self.channel.is_idle();
        let network = self.nodes[owner.0 as usize].cfg.network;
        let id = self.channel.begin_transmission(owner, network, kind, now, dur)?;
        self.queue
            .schedule(now + dur, EventKind::TransmissionEnd { record: id })?;
        trace!("{now}: node {owner} starts {kind:?} for {dur}us");

        for j in 0..self.nodes.len() {
            if j == owner.0 as usize {
                continue;
            }
            match self.nodes[j].phase {
                Phase::GapWait { lssb, voluntary } if lssb > now => {
                    let n = &mut self.nodes[j];
                    if !voluntary {
                        n.backoff.on_failure();
                    }
                    n.backoff.redraw(&mut n.rng);
                    self.set_phase(NodeId(j as u32), Phase::Frozen);
                }
                Phase::Counting(cd) if was_idle && cd.completion() > now => {
                    self.nodes[j].backoff.counter = cd.freeze_at(now);
                    self.set_phase(NodeId(j as u32), Phase::Frozen);
                }
                _ => {}
            }
        }
        Ok(id)
    }

    fn resume_all(&mut self, at: SimTime) -> Result<(), SimError> {
        for j in 0..self.nodes.len() {
            if self.nodes[j].phase == Phase::Frozen {
                let cd = Countdown::after_defer(at, self.nodes[j].backoff.counter);
                self.count_from(NodeId(j as u32), cd)?;
            }
        }
        Ok(())
    }

    fn on_transmission_end(&mut self, record: RecordId) -> Result<(), SimError> {
        let now = self.now();
        match self.channel.active_record(record) {
            Some(r) if r.end == now => {}
            _ => return Ok(()),
        }
        let rec = self.channel.complete(record).expect("record checked active");
        if rec.kind == RecordKind::Data {
            let i = rec.owner.0 as usize;
            if self.nodes[i].phase == (Phase::Transmitting { record }) {
                let success = rec.outcome == Outcome::Success;
                if success {
                    self.success_starts[i].push(rec.start);
                }
                let level = self.skip.as_ref().map(|c| c.level());
                let n = &mut self.nodes[i];
                match n.cfg.protocol {
                    ProtocolKind::DbLbt { d_fixed, .. } => {
                        n.backoff.counter =
                            db_next_backoff(Some(success), &mut n.backoff, d_fixed, &mut n.rng);
                    }
                    _ => {
                        if success {
                            n.backoff.on_success();
                        } else {
                            n.backoff.on_failure();
                        }
                        n.backoff.redraw(&mut n.rng);
                    }
                }
                if success {
                    if let Some(level) = level {
                        n.skip = apply_skip(n.cfg.priority, level);
                    }
                }
                self.set_phase(rec.owner, Phase::Frozen);
            }
        }
        if self.channel.is_idle() {
            self.resume_all(now)?;
        }
        Ok(())
    }

    fn on_cr_slot(&mut self, lssb: SimTime, pos: usize) -> Result<(), SimError> {
        let now = self.now();
        let Some(t) = self.tournaments.get(&lssb) else {
            return Ok(());
        };
        let (slot, _) = t.slots[pos];
        let last = pos + 1 == t.slots.len();
        let next = t.slots.get(pos + 1).map(|&(_, s)| s);

        let mut alive = Vec::new();
        for &id in &t.members {
            if let Phase::Reserving { lssb: l, ref plan, .. } = self.nodes[id.0 as usize].phase {
                if l == lssb {
                    alive.push((id, plan.get(slot).copied().unwrap_or(true)));
                }
            }
        }
        let ids: Vec<NodeId> = alive.iter().map(|&(id, _)| id).collect();
        let external = self.channel.energy_from_others(now, &ids);
        for id in cr_slot_round(&alive, external) {
            let Phase::Reserving { record, .. } = self.nodes[id.0 as usize].phase else {
                unreachable!("alive contenders are reserving");
            };
            self.channel.cut_short(record, now);
            let n = &mut self.nodes[id.0 as usize];
            // energy from outside the tournament means the reservation
            // collided with a foreign transmission
            if external {
                n.backoff.on_failure();
            }
            n.backoff.redraw(&mut n.rng);
            trace!("{now}: node {id} defers in CR-slot {slot}");
            self.set_phase(id, Phase::Frozen);
        }
        if self.channel.is_idle() {
            self.resume_all(now)?;
        }
        if last {
            self.tournaments.remove(&lssb);
        } else if let Some(s) = next {
            self.queue
                .schedule(s, EventKind::CrSlotBoundary { lssb, slot: pos + 1 })?;
        }
        Ok(())
    }

    /// PC1 delay observed during the frame ending now. Falls back to the open
    /// gap since the last PC1 success when no gap closed within the frame.
    fn frame_pc1_delay(&self, frame_len: u64) -> Option<f64> {
        let now = self.now();
        let from = now.saturating_sub(SimTime(frame_len));
        let mut gaps = Vec::new();
        let mut last_start: Option<SimTime> = None;
        for m in self.roster.iter().filter(|m| m.priority == Priority::Pc1) {
            let starts = &self.success_starts[m.id.0 as usize];
            gaps.extend(
                starts
                    .windows(2)
                    .filter(|w| w[1] >= from && w[1] < now)
                    .map(|w| (w[1] - w[0]).as_us() as f64),
            );
            if let Some(&s) = starts.last() {
                last_start = Some(last_start.map_or(s, |l: SimTime| l.max(s)));
            }
        }
        if !gaps.is_empty() {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        } else {
            last_start.map(|s| (now - s).as_us() as f64)
        }
    }

    fn on_frame(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let Some(frame_len) = self.skip.as_ref().map(|c| c.frame_len) else {
            return Ok(());
        };
        let sample = self.frame_pc1_delay(frame_len);
        if let Some(c) = self.skip.as_mut() {
            c.on_frame(sample);
        }
        if now + frame_len < self.end {
            self.queue.schedule(now + frame_len, EventKind::FrameTick)?;
        }
        Ok(())
    }
}
