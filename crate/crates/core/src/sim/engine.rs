//! Event scheduler driving every node stack over a shared channel.
//!
//! Events are totally ordered by `(time, insertion sequence)`; all randomness
//! comes from per-node substreams of the scenario seed, so a run is a pure
//! function of its scenario.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::mac::{MacAction, MacEvent, MacParams, MacStateKind};
use crate::message::{AppMessage, ErcCommand, ServiceError, Verdict};
use crate::model::{packet_airtime, AppType, GeoPosition, HelperPacket, NodeId, PacketKind};
use crate::node::{NodeEvent, NodeStack, StackCtx, StepOutput};
use crate::radio::{cad_latency, Channel, RxOutcome, TxId};
use crate::rng::{substream, Purpose};
use crate::routing::{DropReason, EntryId, PacketMeta, RoutingConfig};
use crate::sim::metrics::{DeliveryRecord, DropRecord, Injection, MetricsLog, Origination, SessionLog, TxRecord};
use crate::sim::scenario::{Scenario, ScenarioError, ScriptedAction, SessionSpec};
use crate::units::{Energy, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is dead")]
    Dead(NodeId),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("invalid transmission: {0}")]
    Config(#[from] crate::model::ConfigError),
}

#[derive(Debug, Clone)]
enum Ev {
    Mac { node: usize, ev: MacEvent },
    CadDone { node: usize },
    TxEnd { node: usize },
    Session { idx: usize },
    Script { idx: usize },
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    ev: Ev,
}

impl Scheduled {
    /// Scripted actions run after everything else due at the same instant,
    /// exactly as an operator acting between steps would.
    fn key(&self) -> (SimTime, bool, u64) {
        (self.at, matches!(self.ev, Ev::Script { .. }), self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    tx: TxId,
    packet: HelperPacket,
    strategy: crate::model::TransmissionStrategy,
    meta: Option<PacketMeta>,
    /// The sender's battery ran out during this frame.
    fatal: bool,
}

#[derive(Debug, Clone)]
struct SessionGen {
    spec: SessionSpec,
    generated: u32,
    stop_at: SimTime,
}

#[derive(Debug, Clone, Default)]
struct UidState {
    session: u32,
    created: SimTime,
    copies: u32,
    delivered: bool,
    dropped: bool,
    last_reject: Option<DropReason>,
}

/// Something observable that happened inside the network.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "notice", rename_all = "snake_case")]
pub enum Notice {
    /// `node`'s service layer produced a message for local subscribers.
    Message { at: SimTime, node: NodeId, from: NodeId, message: AppMessage },
    Event { at: SimTime, node: NodeId, event: NodeEvent },
    Died { at: SimTime, node: NodeId },
}

/// Externally visible state of one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub label: String,
    pub position: GeoPosition,
    pub alive: bool,
    pub residual_j: f64,
    pub initial_j: f64,
    pub queue_backlog: u32,
    pub mac_state: MacStateKind,
    pub neighbors: Vec<NodeId>,
    pub erc: Option<NodeId>,
}

/// Session-packet conservation, recounted from node queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_network: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.in_network
    }
}

pub struct Simulator {
    scenario: Scenario,
    cfg: RoutingConfig,
    params: MacParams,
    nodes: Vec<NodeStack>,
    labels: Vec<String>,
    index: BTreeMap<NodeId, usize>,
    channel: Channel,
    backoff_rng: Vec<ChaCha8Rng>,
    error_rng: Vec<ChaCha8Rng>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: SimTime,
    next_uid: u64,
    inflight: Vec<Option<InFlight>>,
    sessions: Vec<SessionGen>,
    uids: BTreeMap<u64, UidState>,
    /// Session uids neither delivered nor dropped.
    unsettled: usize,
    injection: Option<u64>,
    next_injection: u64,
    log: MetricsLog,
    notices: Option<Vec<Notice>>,
    stopped: bool,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let cfg = scenario.routing_config();
        let params = scenario.mac.params();
        let placement: Vec<(NodeId, GeoPosition)> = scenario.nodes.iter().map(|n| (n.id, n.position())).collect();
        let channel = Channel::new(scenario.link.clone(), &placement);
        let seed = scenario.rng_seed;
        let n = scenario.nodes.len();
        let nodes: Vec<NodeStack> = scenario
            .nodes
            .iter()
            .map(|s| {
                let erc = (s.id == scenario.erc).then_some(scenario.erc);
                NodeStack::new(s.id, s.position(), scenario.initial_energy(s), erc, scenario.queue_capacity)
            })
            .collect();
        let labels: Vec<String> = scenario.nodes.iter().map(|s| s.name()).collect();
        let log = MetricsLog {
            scenario: scenario.name.clone(),
            mode: scenario.routing,
            seed,
            duration: scenario.duration(),
            nodes: nodes.iter().map(|n| n.id).collect(),
            labels: labels.clone(),
            initial: nodes.iter().map(|n| n.energy.initial()).collect(),
            sessions: scenario
                .sessions
                .iter()
                .map(|s| SessionLog { src: s.src, dst: s.dst, payload_bytes: s.payload_bytes, ..Default::default() })
                .collect(),
            ..Default::default()
        };
        let sessions = scenario
            .sessions
            .iter()
            .map(|s| SessionGen {
                spec: s.clone(),
                generated: 0,
                stop_at: s.duration_s.map(|d| SimTime::from_secs_f64(s.start_s + d)).unwrap_or(SimTime::MAX),
            })
            .collect();
        let mut sim = Simulator {
            index: placement.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect(),
            cfg,
            params,
            nodes,
            labels,
            channel,
            backoff_rng: (0..n).map(|i| substream(seed, i, Purpose::Backoff)).collect(),
            error_rng: (0..n).map(|i| substream(seed, i, Purpose::ChannelErrors)).collect(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            next_uid: 0,
            inflight: vec![None; n],
            sessions,
            uids: BTreeMap::new(),
            unsettled: 0,
            injection: None,
            next_injection: 0,
            log,
            notices: None,
            stopped: false,
            scenario,
        };
        sim.boot();
        Ok(sim)
    }

    fn boot(&mut self) {
        for i in 0..self.nodes.len() {
            let out = self.call(i, |n, ctx| n.start(ctx));
            self.apply(i, out);
        }
        let erc = self.index[&self.scenario.erc];
        let id = self.scenario.erc;
        let out = self.call(erc, |n, ctx| n.send_setup(ctx, id));
        self.apply(erc, out);
        for i in 0..self.sessions.len() {
            let at = SimTime::from_secs_f64(self.sessions[i].spec.start_s);
            self.schedule(at, Ev::Session { idx: i });
        }
        for i in 0..self.scenario.events.len() {
            let at = SimTime::from_secs_f64(self.scenario.events[i].at_s);
            self.schedule(at, Ev::Script { idx: i });
        }
    }

    /// Runs `scenario` to completion.
    pub fn run(scenario: Scenario) -> Result<MetricsLog, SimError> {
        let mut sim = Simulator::new(scenario)?;
        sim.run_to_end();
        Ok(sim.finish())
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.sessions_complete() || self.queue.peek().is_none_or(|s| s.at > self.scenario.duration())
    }

    /// True once every session is bounded, has generated its last packet and
    /// has seen each packet delivered or dropped.
    pub fn sessions_complete(&self) -> bool {
        !self.sessions.is_empty()
            && self.unsettled == 0
            && self.sessions.iter().all(|g| {
                g.spec.count.is_some_and(|c| g.generated >= c) || (g.stop_at != SimTime::MAX && self.now >= g.stop_at)
            })
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeStack> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn nodes(&self) -> &[NodeStack] {
        &self.nodes
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    /// Starts buffering [`Notice`]s for [`Simulator::take_notices`].
    pub fn enable_notices(&mut self) {
        self.notices.get_or_insert_with(Vec::new);
    }

    pub fn take_notices(&mut self) -> Vec<Notice> {
        self.notices.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn snapshot(&self) -> Vec<NodeSnapshot> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeSnapshot {
                id: n.id,
                label: self.labels[i].clone(),
                position: n.position,
                alive: n.is_alive(),
                residual_j: n.energy.residual().as_joules(),
                initial_j: n.energy.initial().as_joules(),
                queue_backlog: n.net.queues.backlog(),
                mac_state: n.mac.state(),
                neighbors: n.net.neighbors.iter().map(|e| e.node).collect(),
                erc: n.service.erc,
            })
            .collect()
    }

    /// Processes one event. Returns false once the run is over.
    pub fn step(&mut self) -> bool {
        if self.is_finished() {
            return false;
        }
        let Some(s) = self.queue.pop() else { return false };
        debug_assert!(s.at >= self.now);
        self.now = s.at;
        self.dispatch(s.ev);
        true
    }

    /// Processes every event due at or before `t` and advances the clock to `t`.
    pub fn step_until(&mut self, t: SimTime) {
        while !self.is_finished() && self.queue.peek().is_some_and(|s| s.at <= t) {
            self.step();
        }
        if !self.stopped && !self.sessions_complete() {
            self.now = self.now.max(t.min(self.scenario.duration()));
        }
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
        if !self.stopped && !self.sessions_complete() {
            self.now = self.scenario.duration();
        }
    }

    /// Closes the log.
    pub fn finish(mut self) -> MetricsLog {
        self.log.end = self.now;
        self.log.final_residual = self.nodes.iter().map(|n| n.energy.residual()).collect();
        self.log
    }

    /// Session-packet conservation; `in_network` is recounted from node queues.
    pub fn conservation(&self) -> Conservation {
        let held: BTreeSet<u64> = self
            .nodes
            .iter()
            .flat_map(|n| n.net.queues.iter().filter(|qp| qp.meta.session.is_some()).map(|qp| qp.meta.uid))
            .collect();
        let mut c = Conservation { sent: 0, delivered: 0, dropped: 0, in_network: 0 };
        for (uid, u) in &self.uids {
            c.sent += 1;
            if u.delivered {
                c.delivered += 1;
            } else if u.dropped {
                c.dropped += 1;
            } else if held.contains(uid) {
                c.in_network += 1;
            }
        }
        c
    }

    // -- injection ---------------------------------------------------------

    fn idx(&self, id: NodeId) -> Result<usize, SimError> {
        self.index.get(&id).copied().ok_or(SimError::UnknownNode(id))
    }

    /// Submits a user message at `node`; returns its injection id.
    pub fn submit(&mut self, node: NodeId, message: AppMessage) -> Result<u64, SimError> {
        let i = self.idx(node)?;
        if !self.nodes[i].is_alive() {
            return Err(SimError::Dead(node));
        }
        let id = self.next_injection;
        let app_type = message.app_type;
        let out = self.call(i, |n, ctx| n.submit(ctx, message))?;
        self.next_injection += 1;
        self.log.injections.push(Injection { id, at: self.now, node, app_type });
        self.injection = Some(id);
        self.apply(i, out);
        self.injection = None;
        Ok(id)
    }

    /// Issues an operator command at the ERC.
    pub fn erc_command(&mut self, cmd: ErcCommand) -> Result<(), SimError> {
        let i = self.idx(self.scenario.erc)?;
        if !self.nodes[i].is_alive() {
            return Err(SimError::Dead(self.scenario.erc));
        }
        let out = self.call(i, |n, ctx| n.erc_command(ctx, cmd))?;
        self.apply(i, out);
        Ok(())
    }

    /// Operator verdict on a pending resource report at the ERC.
    pub fn approve(&mut self, id: u64, verdict: Verdict) -> Result<(), SimError> {
        let i = self.idx(self.scenario.erc)?;
        let out = self.call(i, |n, ctx| n.approve(ctx, id, verdict))?;
        self.apply(i, out);
        Ok(())
    }

    /// Empties `node`'s battery; it dies now.
    pub fn drain(&mut self, node: NodeId) -> Result<(), SimError> {
        let i = self.idx(node)?;
        if !self.nodes[i].is_alive() {
            return Ok(());
        }
        let left = self.nodes[i].energy.residual();
        self.nodes[i].energy.draw(left);
        self.log.drained.push((self.now, i, left));
        self.log.energy.push((self.now, i, Energy::ZERO));
        self.kill(i);
        Ok(())
    }

    // -- internals ---------------------------------------------------------

    fn schedule(&mut self, at: SimTime, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, ev });
    }

    fn call<T>(&mut self, i: usize, f: impl FnOnce(&mut NodeStack, &mut StackCtx<'_, ChaCha8Rng>) -> T) -> T {
        let mut ctx = StackCtx {
            now: self.now,
            cfg: &self.cfg,
            params: &self.params,
            rng: &mut self.backoff_rng[i],
            next_uid: &mut self.next_uid,
        };
        f(&mut self.nodes[i], &mut ctx)
    }

    fn mac(&mut self, i: usize, ev: MacEvent) {
        if !self.nodes[i].is_alive() {
            return;
        }
        let out = self.call(i, |n, ctx| n.mac_step(ctx, ev));
        self.apply(i, out);
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Mac { node, ev } => self.mac(node, ev),
            Ev::CadDone { node } => {
                let busy = self.channel.cad_busy(node, self.now);
                self.mac(node, MacEvent::CadResult { busy });
            }
            Ev::TxEnd { node } => self.tx_end(node),
            Ev::Session { idx } => self.session_tick(idx),
            Ev::Script { idx } => self.script(idx),
        }
    }

    fn session_tick(&mut self, idx: usize) {
        let g = &self.sessions[idx];
        let Ok(src) = self.idx(g.spec.src) else { return };
        if !self.nodes[src].is_alive() || self.now >= g.stop_at || g.spec.count.is_some_and(|c| g.generated >= c) {
            return;
        }
        let (dst, bytes) = (g.spec.dst, g.spec.payload_bytes);
        let session = idx as u32;
        let out = self.call(src, |n, ctx| n.send_session(ctx, session, dst, bytes));
        for e in &out.events {
            if let NodeEvent::Originated { uid, .. } = e {
                self.uids.insert(*uid, UidState { session, created: self.now, ..Default::default() });
                self.unsettled += 1;
                self.log.sessions[idx].sent += 1;
            }
        }
        self.sessions[idx].generated += 1;
        let next = self.now + SimTime::from_secs_f64(self.sessions[idx].spec.interval_s);
        self.schedule(next, Ev::Session { idx });
        self.apply(src, out);
    }

    fn script(&mut self, idx: usize) {
        let action = self.scenario.events[idx].action.clone();
        let res = match action {
            ScriptedAction::Drain { node } => self.drain(node),
            ScriptedAction::Send { node, message } => self.submit(node, message).map(|_| ()),
            ScriptedAction::Nd => self.erc_command(ErcCommand::Nd),
            ScriptedAction::Alert { text } => self.erc_command(ErcCommand::Alert(text)),
            ScriptedAction::Approve { id, verdict } => self.approve(id, verdict),
        };
        if let Err(e) = res {
            self.log.errors.push((self.now, format!("event {idx}: {e}")));
        }
    }

    fn apply(&mut self, i: usize, out: StepOutput) {
        let me = self.nodes[i].id;
        for e in out.events {
            self.account(i, &e);
            if let Some(n) = self.notices.as_mut() {
                n.push(Notice::Event { at: self.now, node: me, event: e });
            }
        }
        if let Some(n) = self.notices.as_mut() {
            for (from, message) in out.messages {
                n.push(Notice::Message { at: self.now, node: me, from, message });
            }
        }
        for a in out.actions {
            match a {
                MacAction::Transmit { packet, strategy, entry } => self.transmit(i, packet, strategy, entry),
                MacAction::StartCad => {
                    let at = self.now + cad_latency(self.channel.link().default_strategy().bitrate_bps);
                    self.schedule(at, Ev::CadDone { node: i });
                }
                MacAction::SetTimer { kind, at, gen } => {
                    self.schedule(at, Ev::Mac { node: i, ev: MacEvent::Timer { kind, gen } })
                }
                // consumed by the node stack
                MacAction::DeliverUp { .. } | MacAction::Sent { .. } | MacAction::LinkFailure { .. } | MacAction::Forwarding(_) => {}
            }
        }
    }

    fn account(&mut self, i: usize, e: &NodeEvent) {
        let now = self.now;
        let me = self.nodes[i].id;
        match e {
            NodeEvent::Originated { uid, app_type, dst, htl, .. } => self.log.originations.push(Origination {
                at: now,
                node: me,
                uid: *uid,
                app_type: *app_type,
                dst: *dst,
                htl: *htl,
                injection: self.injection,
            }),
            NodeEvent::Queued { uid } => {
                if let Some(u) = self.uids.get_mut(uid) {
                    u.copies += 1;
                }
            }
            NodeEvent::Dequeued { uid, dropped } => {
                if let Some(u) = self.uids.get_mut(uid) {
                    u.copies = u.copies.saturating_sub(1);
                    if dropped.is_some() {
                        u.last_reject = *dropped;
                    }
                }
                self.settle(*uid);
            }
            NodeEvent::Rejected { uid, reason } => {
                if let Some(u) = self.uids.get_mut(uid) {
                    u.last_reject = Some(*reason);
                }
                self.settle(*uid);
            }
            NodeEvent::Delivered { uid, origin, app_type, unicast } => {
                self.log.deliveries.push(DeliveryRecord { at: now, node: me, uid: *uid, origin: *origin, app_type: *app_type });
                if let Some(u) = self.uids.get_mut(uid) {
                    let s = u.session as usize;
                    if *unicast && !u.delivered && !u.dropped && self.log.sessions[s].dst == me {
                        u.delivered = true;
                        self.unsettled -= 1;
                        let latency = now - u.created;
                        self.log.sessions[s].delivered += 1;
                        self.log.sessions[s].deliveries.push((now, latency));
                    }
                }
            }
            NodeEvent::Forwarding(d) => self.log.forwarding.push((now, *d)),
            NodeEvent::LinkFailure { .. } => {}
        }
    }

    /// Marks a session uid dropped once no node holds it.
    fn settle(&mut self, uid: u64) {
        let Some(u) = self.uids.get_mut(&uid) else { return };
        if u.copies == 0 && !u.delivered && !u.dropped {
            u.dropped = true;
            self.unsettled -= 1;
            let s = u.session as usize;
            self.log.sessions[s].dropped += 1;
            self.log.drops.push(DropRecord {
                at: self.now,
                session: u.session,
                uid,
                reason: u.last_reject.unwrap_or(DropReason::NoRoute),
            });
        }
    }

    fn transmit(&mut self, i: usize, packet: HelperPacket, strategy: crate::model::TransmissionStrategy, entry: Option<EntryId>) {
        let meta = entry.and_then(|e| self.nodes[i].net.queues.get(e)).map(|qp| qp.meta);
        let airtime = packet_airtime(&packet, &strategy).expect("validated strategies have positive bitrate");
        let cost = strategy.tx_power.energy_over(airtime);
        let residual = self.nodes[i].energy.residual();
        let (span, charge, fatal) = if residual > cost {
            (airtime, cost, false)
        } else {
            // the battery gives out mid-frame: transmit only as long as it lasts
            let us = residual.0.div_ceil(strategy.tx_power.0.max(1));
            (SimTime(us.min(airtime.0)), residual, true)
        };
        self.nodes[i].energy.draw(charge);
        let end = self.now + span;
        self.log.energy.push((self.now, i, self.nodes[i].energy.residual()));
        self.log.tx.push(TxRecord {
            at: self.now,
            node: self.nodes[i].id,
            kind: packet.kind,
            app_type: (packet.kind == PacketKind::Data).then_some(packet.app_type),
            uid: meta.map(|m| m.uid),
            bytes: packet.wire_len(),
            cost: charge,
            truncated: fatal,
        });
        let tx = self.channel.begin_tx(i, self.now, end);
        if fatal {
            self.channel.truncate(tx, end);
        }
        self.inflight[i] = Some(InFlight { tx, packet, strategy, meta, fatal });
        self.schedule(end, Ev::TxEnd { node: i });
    }

    fn tx_end(&mut self, i: usize) {
        let Some(f) = self.inflight[i].take() else { return };
        let outcomes = self.channel.end_tx(f.tx, &f.packet, &f.strategy, &mut self.error_rng);
        let data = f.packet.kind == PacketKind::Data;
        for (r, o) in outcomes {
            match o {
                RxOutcome::Lost => self.log.lost_receptions += 1,
                RxOutcome::Clean(errors) => self.mac(
                    r,
                    MacEvent::Received {
                        packet: f.packet.clone(),
                        errors,
                        strategy: f.strategy,
                        meta: if data { f.meta } else { None },
                    },
                ),
            }
        }
        if f.fatal {
            self.kill(i);
        } else {
            self.mac(i, MacEvent::TxDone);
        }
    }

    fn kill(&mut self, i: usize) {
        if !self.nodes[i].is_alive() {
            return;
        }
        let events = self.nodes[i].die();
        self.channel.kill(i, self.now);
        let id = self.nodes[i].id;
        self.log.deaths.push((self.now, id));
        if let Some(n) = self.notices.as_mut() {
            n.push(Notice::Died { at: self.now, node: id });
        }
        self.apply(i, StepOutput { events, ..Default::default() });
        if self.scenario.stop_at_first_death {
            self.stopped = true;
        }
    }
}

/// Deliveries of `app_type` messages per node, for trace inspection.
pub fn deliveries_of(log: &MetricsLog, app_type: AppType) -> BTreeMap<NodeId, usize> {
    let mut m = BTreeMap::new();
    for d in log.deliveries.iter().filter(|d| d.app_type == app_type) {
        *m.entry(d.node).or_insert(0) += 1;
    }
    m
}
