//! CSMA/CA medium access.
//!
//! One [`Mac`] per node, driven only by [`MacEvent`]s and answering with
//! [`MacAction`]s. Unicast DATA uses RTS, CTS, DATA, ACK; broadcast DATA
//! and BEACONs go out after backoff and CAD with no handshake. Every
//! RTS, CTS and BEACON carries fresh OAI, and every one overheard with an
//! intact header refreshes the neighbor table.

use rand::Rng;
use serde::Serialize;

use crate::model::{
    airtime_for_bytes, Address, EnergyState, GeoPosition, HelperPacket, NeighborEntry, NeighborTable, NodeId,
    Oai, PacketKind, TransmissionStrategy, MAX_PAYLOAD, PROBE_BITS, WIRE_OVERHEAD,
};
use crate::radio::BitErrors;
use crate::routing::{self, EntryId, FailureOutcome, ForwardDecision, NetState, PacketMeta, RoutingConfig, Selection};
use crate::units::SimTime;

pub const MAX_RETRIES: u8 = 3;

/// Timing and smoothing constants of the MAC.
#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub max_retries: u8,
    pub w_min: SimTime,
    pub w_max: SimTime,
    pub beacon_period: SimTime,
    /// Weight of the newest goodput sample.
    pub alpha: f64,
    /// Gap between receiving a frame and answering it.
    pub turnaround: SimTime,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            max_retries: MAX_RETRIES,
            w_min: SimTime::from_millis(50),
            w_max: SimTime::from_millis(800),
            beacon_period: SimTime::from_secs(5),
            alpha: 0.3,
            turnaround: SimTime::from_millis(1),
        }
    }
}

impl MacParams {
    /// Contention window for normalized utility `u` after `retries` failures.
    pub fn window(&self, u_norm: f64, retries: u8) -> SimTime {
        let u = if u_norm.is_nan() { 0.0 } else { u_norm.clamp(0.0, 1.0) };
        let span = (self.w_max.0 - self.w_min.0) as f64;
        let base = self.w_min.0 as f64 + (1.0 - u) * span;
        SimTime((base.round() as u64) << retries.min(16))
    }

    /// Uniform draw from the contention window.
    pub fn backoff<R: Rng + ?Sized>(&self, u_norm: f64, retries: u8, rng: &mut R) -> SimTime {
        SimTime(rng.gen_range(0..=self.window(u_norm, retries).0))
    }

    /// How long to wait for CTS or ACK after sending a frame of `data_airtime`.
    pub fn response_timeout(&self, data_airtime: SimTime) -> SimTime {
        data_airtime.times(2) + self.w_min
    }
}

/// Uniform draw from `[0, W_min + (1 - u) (W_max - W_min)]`.
pub fn backoff_duration<R: Rng + ?Sized>(u_norm: f64, params: &MacParams, rng: &mut R) -> SimTime {
    params.backoff(u_norm, 0, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MacStateKind {
    Idle,
    Sense,
    Backoff,
    SendRts,
    WaitCts,
    SendData,
    WaitAck,
    Respond,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    Backoff = 0,
    CtsTimeout = 1,
    AckTimeout = 2,
    DataTimeout = 3,
    Turnaround = 4,
    BeaconCheck = 5,
    HoldRetry = 6,
}

const TIMER_KINDS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum MacEvent {
    /// Routing queued something new.
    PacketQueued,
    /// A frame arrived with its header intact or not; `errors` tells which bits were hit.
    Received {
        packet: HelperPacket,
        errors: BitErrors,
        strategy: TransmissionStrategy,
        meta: Option<PacketMeta>,
    },
    /// Our own transmission finished.
    TxDone,
    CadResult { busy: bool },
    Timer { kind: TimerKind, gen: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum MacAction {
    /// Start transmitting now. `entry` names the queued packet for DATA.
    Transmit { packet: HelperPacket, strategy: TransmissionStrategy, entry: Option<EntryId> },
    /// Run channel activity detection and report back with `CadResult`.
    StartCad,
    SetTimer { kind: TimerKind, at: SimTime, gen: u64 },
    /// Hand a received DATA packet to routing.
    DeliverUp { packet: HelperPacket, meta: Option<PacketMeta> },
    /// A queued packet left this node for good (ACKed unicast or sent broadcast).
    Sent { entry: EntryId, meta: PacketMeta, hop: Option<NodeId> },
    /// The handshake to `hop` failed `max_retries + 1` times.
    LinkFailure { entry: EntryId, hop: NodeId, dropped: Option<PacketMeta> },
    /// A unicast forwarding decision was acted on (RTS sent).
    Forwarding(ForwardDecision),
}

#[derive(Debug, Clone, PartialEq)]
enum Attempt {
    Unicast { entry: EntryId, hop: NodeId, strategy: TransmissionStrategy, u_norm: f64, decision: ForwardDecision, data_airtime: SimTime },
    Broadcast { entry: EntryId, strategy: TransmissionStrategy },
    Beacon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RespondPhase {
    SendingCts,
    AwaitData,
    SendingAck,
}

/// Per-node view handed to the MAC for one step.
pub struct MacEnv<'a, R: Rng + ?Sized> {
    pub now: SimTime,
    pub me: NodeId,
    pub position: GeoPosition,
    pub energy: &'a EnergyState,
    pub net: &'a mut NetState,
    pub cfg: &'a RoutingConfig,
    pub params: &'a MacParams,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> MacEnv<'_, R> {
    fn oai(&self) -> Oai {
        Oai::new(self.net.queues.backlog(), self.energy, self.position)
    }
}

/// MAC state machine of one node.
#[derive(Debug, Clone)]
pub struct Mac {
    state: MacStateKind,
    retries: u8,
    nav_until: SimTime,
    last_control_tx: Option<SimTime>,
    attempt: Option<Attempt>,
    respond: Option<(NodeId, RespondPhase, TransmissionStrategy)>,
    staged: Option<(HelperPacket, TransmissionStrategy, Option<EntryId>)>,
    beacon_pending: bool,
    holding: bool,
    gens: [u64; TIMER_KINDS],
}

impl Default for Mac {
    fn default() -> Self {
        Self::new()
    }
}

impl Mac {
    pub fn new() -> Self {
        Mac {
            state: MacStateKind::Idle,
            retries: 0,
            nav_until: SimTime::ZERO,
            last_control_tx: None,
            attempt: None,
            respond: None,
            staged: None,
            beacon_pending: false,
            holding: false,
            gens: [0; TIMER_KINDS],
        }
    }

    pub fn state(&self) -> MacStateKind {
        self.state
    }

    pub fn retries(&self) -> u8 {
        self.retries
    }

    pub fn nav_until(&self) -> SimTime {
        self.nav_until
    }

    pub fn last_control_tx(&self) -> Option<SimTime> {
        self.last_control_tx
    }

    pub fn is_dead(&self) -> bool {
        self.state == MacStateKind::Dead
    }

    /// Enters the absorbing DEAD state.
    pub fn kill(&mut self) {
        self.state = MacStateKind::Dead;
        self.attempt = None;
        self.staged = None;
        self.respond = None;
    }

    /// True iff a BEACON is owed at `now`.
    pub fn beacon_due(&self, now: SimTime, params: &MacParams) -> bool {
        match self.last_control_tx {
            None => true,
            Some(t) => now.saturating_sub(t) >= params.beacon_period,
        }
    }

    /// Arms the first beacon check after a random start-up jitter.
    pub fn start<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>) -> Vec<MacAction> {
        let jitter = env.params.backoff(0.5, 0, env.rng);
        vec![self.timer(TimerKind::BeaconCheck, env.now + jitter)]
    }

    fn timer(&mut self, kind: TimerKind, at: SimTime) -> MacAction {
        let g = &mut self.gens[kind as usize];
        *g += 1;
        MacAction::SetTimer { kind, at, gen: *g }
    }

    fn cancel(&mut self, kind: TimerKind) {
        self.gens[kind as usize] += 1;
    }

    pub fn step<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, ev: MacEvent) -> Vec<MacAction> {
        let mut out = Vec::new();
        if self.is_dead() {
            return out;
        }
        match ev {
            MacEvent::PacketQueued => {
                if self.state == MacStateKind::Idle {
                    self.kick(env, &mut out);
                }
            }
            MacEvent::Timer { kind, gen } => {
                if self.gens[kind as usize] == gen {
                    self.on_timer(env, kind, &mut out);
                }
            }
            MacEvent::CadResult { busy } => {
                if self.state == MacStateKind::Sense {
                    self.on_cad(env, busy, &mut out);
                }
            }
            MacEvent::TxDone => self.on_tx_done(env, &mut out),
            MacEvent::Received { packet, errors, strategy, meta } => {
                self.on_receive(env, packet, errors, strategy, meta, &mut out)
            }
        }
        out
    }

    fn on_timer<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, kind: TimerKind, out: &mut Vec<MacAction>) {
        match kind {
            TimerKind::Backoff => {
                if self.state == MacStateKind::Backoff {
                    self.state = MacStateKind::Sense;
                    out.push(MacAction::StartCad);
                }
            }
            TimerKind::CtsTimeout if self.state == MacStateKind::WaitCts => self.on_handshake_timeout(env, out),
            TimerKind::AckTimeout if self.state == MacStateKind::WaitAck => self.on_handshake_timeout(env, out),
            TimerKind::DataTimeout => {
                if matches!(self.respond, Some((_, RespondPhase::AwaitData, _))) {
                    self.finish_respond(env, out);
                }
            }
            TimerKind::Turnaround => {
                if let Some((mut packet, strategy, entry)) = self.staged.take() {
                    if packet.kind.carries_oai() {
                        packet.oai = env.oai();
                        self.last_control_tx = Some(env.now);
                    }
                    out.push(MacAction::Transmit { packet, strategy, entry });
                }
            }
            TimerKind::BeaconCheck => {
                let due = self.beacon_due(env.now, env.params);
                let next = match (due, self.last_control_tx) {
                    (false, Some(t)) => t + env.params.beacon_period,
                    _ => env.now + env.params.beacon_period,
                };
                out.push(self.timer(TimerKind::BeaconCheck, next));
                if due {
                    self.beacon_pending = true;
                    if self.state == MacStateKind::Idle {
                        self.kick(env, out);
                    }
                }
            }
            TimerKind::HoldRetry => {
                self.holding = false;
                if self.state == MacStateKind::Idle {
                    self.kick(env, out);
                }
            }
            _ => {}
        }
    }

    /// From IDLE: pick the next thing to send and start contending for it.
    fn kick<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, out: &mut Vec<MacAction>) {
        debug_assert_eq!(self.state, MacStateKind::Idle);
        if let Some(a) = self.attempt.clone() {
            self.enter_backoff(env, u_norm_of(&a), out);
            return;
        }
        if self.beacon_pending {
            self.attempt = Some(Attempt::Beacon);
            self.enter_backoff(env, u_norm_of(&Attempt::Beacon), out);
            return;
        }
        env.net.neighbors.expire(env.now, env.cfg.neighbor_ttl);
        match routing::select(env.net, env.position, env.cfg, env.now) {
            Selection::Empty => {}
            Selection::Hold => {
                if !self.holding {
                    self.holding = true;
                    out.push(self.timer(TimerKind::HoldRetry, env.now + env.params.beacon_period));
                }
            }
            Selection::Broadcast { entry, strategy } => {
                let a = Attempt::Broadcast { entry, strategy };
                self.attempt = Some(a);
                self.enter_backoff(env, 0.5, out);
            }
            Selection::Unicast { entry, hop, decision } => {
                let qp = env.net.queues.get(entry).expect("selected entry is queued");
                let data_airtime = airtime_for_bytes(qp.packet.wire_len(), hop.strategy.bitrate_bps).unwrap_or(SimTime::ZERO);
                let a = Attempt::Unicast { entry, hop: hop.node, strategy: hop.strategy, u_norm: hop.normalized, decision, data_airtime };
                self.attempt = Some(a);
                self.enter_backoff(env, hop.normalized, out);
            }
        }
    }

    fn enter_backoff<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, u_norm: f64, out: &mut Vec<MacAction>) {
        self.state = MacStateKind::Backoff;
        let start = env.now.max(self.nav_until);
        let d = env.params.backoff(u_norm, self.retries, env.rng);
        out.push(self.timer(TimerKind::Backoff, start + d));
    }

    fn on_cad<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, busy: bool, out: &mut Vec<MacAction>) {
        let Some(attempt) = self.attempt.clone() else {
            self.state = MacStateKind::Idle;
            self.kick(env, out);
            return;
        };
        if busy || env.now < self.nav_until {
            self.enter_backoff(env, u_norm_of(&attempt), out);
            return;
        }
        match attempt {
            Attempt::Beacon => {
                let p = HelperPacket::control(PacketKind::Beacon, env.me, Address::Broadcast, env.oai());
                self.last_control_tx = Some(env.now);
                self.state = MacStateKind::SendData;
                out.push(MacAction::Transmit { packet: p, strategy: env.cfg.strategies[0], entry: None });
            }
            Attempt::Broadcast { entry, strategy } => {
                let Some(qp) = env.net.queues.get(entry) else {
                    self.reset_to_idle(env, out);
                    return;
                };
                let mut p = qp.packet.clone();
                p.src = env.me;
                p.next_hop = Address::Broadcast;
                self.state = MacStateKind::SendData;
                out.push(MacAction::Transmit { packet: p, strategy, entry: Some(entry) });
            }
            Attempt::Unicast { entry, hop, strategy, decision, .. } => {
                if env.net.queues.get(entry).is_none() {
                    self.reset_to_idle(env, out);
                    return;
                }
                let p = HelperPacket::control(PacketKind::Rts, env.me, Address::Node(hop), env.oai());
                self.last_control_tx = Some(env.now);
                self.state = MacStateKind::SendRts;
                out.push(MacAction::Forwarding(decision));
                out.push(MacAction::Transmit { packet: p, strategy, entry: None });
            }
        }
    }

    fn on_tx_done<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, out: &mut Vec<MacAction>) {
        match self.state {
            MacStateKind::SendRts => {
                let Some(Attempt::Unicast { data_airtime, .. }) = self.attempt else { return };
                self.state = MacStateKind::WaitCts;
                out.push(self.timer(TimerKind::CtsTimeout, env.now + env.params.response_timeout(data_airtime)));
            }
            MacStateKind::SendData => match self.attempt.clone() {
                Some(Attempt::Unicast { data_airtime, .. }) => {
                    self.state = MacStateKind::WaitAck;
                    out.push(self.timer(TimerKind::AckTimeout, env.now + env.params.response_timeout(data_airtime)));
                }
                Some(Attempt::Broadcast { entry, .. }) => {
                    if let Some(qp) = env.net.queues.remove(entry) {
                        out.push(MacAction::Sent { entry, meta: qp.meta, hop: None });
                    }
                    self.reset_to_idle(env, out);
                }
                Some(Attempt::Beacon) => {
                    self.beacon_pending = false;
                    self.reset_to_idle(env, out);
                }
                None => self.reset_to_idle(env, out),
            },
            MacStateKind::Respond => match self.respond {
                Some((peer, RespondPhase::SendingCts, s)) => {
                    self.respond = Some((peer, RespondPhase::AwaitData, s));
                    let max_data = airtime_for_bytes(WIRE_OVERHEAD + MAX_PAYLOAD, s.bitrate_bps).unwrap_or(SimTime::ZERO);
                    out.push(self.timer(TimerKind::DataTimeout, env.now + env.params.response_timeout(max_data)));
                }
                Some((_, RespondPhase::SendingAck, _)) => self.finish_respond(env, out),
                _ => {}
            },
            _ => {}
        }
    }

    fn reset_to_idle<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, out: &mut Vec<MacAction>) {
        self.attempt = None;
        self.retries = 0;
        self.state = MacStateKind::Idle;
        self.kick(env, out);
    }

    fn finish_respond<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, out: &mut Vec<MacAction>) {
        self.cancel(TimerKind::DataTimeout);
        self.respond = None;
        self.state = MacStateKind::Idle;
        self.kick(env, out);
    }

    fn on_handshake_timeout<R: Rng + ?Sized>(&mut self, env: &mut MacEnv<'_, R>, out: &mut Vec<MacAction>) {
        let Some(Attempt::Unicast { entry, hop, u_norm, .. }) = self.attempt.clone() else {
            self.reset_to_idle(env, out);
            return;
        };
        self.retries += 1;
        if self.retries > env.params.max_retries {
            let dropped = match routing::on_link_failure(env.net, entry, hop) {
                FailureOutcome::Dropped(qp) => Some(qp.meta),
                FailureOutcome::Rerouted | FailureOutcome::Gone => None,
            };
            out.push(MacAction::LinkFailure { entry, hop, dropped });
            self.reset_to_idle(env, out);
        } else {
            self.enter_backoff(env, u_norm, out);
        }
    }

    fn can_respond(&self, now: SimTime) -> bool {
        matches!(self.state, MacStateKind::Idle | MacStateKind::Backoff | MacStateKind::Sense) && now >= self.nav_until
    }

    /// Leaves contention to answer `peer`; a pending attempt resumes afterwards.
    fn begin_respond<R: Rng + ?Sized>(
        &mut self,
        env: &mut MacEnv<'_, R>,
        peer: NodeId,
        phase: RespondPhase,
        packet: HelperPacket,
        strategy: TransmissionStrategy,
        out: &mut Vec<MacAction>,
    ) {
        self.cancel(TimerKind::Backoff);
        self.state = MacStateKind::Respond;
        self.respond = Some((peer, phase, strategy));
        self.staged = Some((packet, strategy, None));
        out.push(self.timer(TimerKind::Turnaround, env.now + env.params.turnaround));
    }

    fn defer(&mut self, until: SimTime) {
        self.nav_until = self.nav_until.max(until);
    }

    fn on_receive<R: Rng + ?Sized>(
        &mut self,
        env: &mut MacEnv<'_, R>,
        p: HelperPacket,
        errors: BitErrors,
        strategy: TransmissionStrategy,
        meta: Option<PacketMeta>,
        out: &mut Vec<MacAction>,
    ) {
        if errors.header {
            return;
        }
        if p.kind.carries_oai() {
            harvest_oai(&mut env.net.neighbors, &p, errors.probe_bits_intact(), strategy.bitrate_bps, env.now, env.params.alpha);
        }
        let t = env.params.turnaround;
        let ctl = airtime_for_bytes(WIRE_OVERHEAD, strategy.bitrate_bps).unwrap_or(SimTime::ZERO);
        let max_data = airtime_for_bytes(WIRE_OVERHEAD + MAX_PAYLOAD, strategy.bitrate_bps).unwrap_or(SimTime::ZERO);
        let for_me = p.next_hop == Address::Node(env.me);
        match p.kind {
            PacketKind::Rts if for_me => {
                if self.can_respond(env.now) {
                    let cts = HelperPacket::control(PacketKind::Cts, env.me, Address::Node(p.src), Oai::default());
                    self.begin_respond(env, p.src, RespondPhase::SendingCts, cts, strategy, out);
                }
            }
            PacketKind::Rts => self.defer(env.now + t + ctl + t + max_data + t + ctl),
            PacketKind::Cts if for_me => {
                let Some(Attempt::Unicast { entry, hop, strategy: s, .. }) = self.attempt.clone() else { return };
                if self.state != MacStateKind::WaitCts || hop != p.src {
                    return;
                }
                self.cancel(TimerKind::CtsTimeout);
                let Some(qp) = env.net.queues.get(entry) else {
                    self.reset_to_idle(env, out);
                    return;
                };
                let mut data = qp.packet.clone();
                data.src = env.me;
                data.next_hop = Address::Node(hop);
                self.state = MacStateKind::SendData;
                self.staged = Some((data, s, Some(entry)));
                out.push(self.timer(TimerKind::Turnaround, env.now + t));
            }
            PacketKind::Cts => self.defer(env.now + t + max_data + t + ctl),
            PacketKind::Data => {
                if errors.payload {
                    return;
                }
                match p.next_hop {
                    Address::Broadcast => out.push(MacAction::DeliverUp { packet: p, meta }),
                    Address::Node(n) if n == env.me => {
                        let expected = matches!(self.respond, Some((peer, RespondPhase::AwaitData, _)) if peer == p.src);
                        if expected || self.can_respond(env.now) {
                            self.cancel(TimerKind::DataTimeout);
                            let ack = HelperPacket::control(PacketKind::Ack, env.me, Address::Node(p.src), Oai::default());
                            let src = p.src;
                            out.push(MacAction::DeliverUp { packet: p, meta });
                            self.begin_respond(env, src, RespondPhase::SendingAck, ack, strategy, out);
                        }
                    }
                    Address::Node(_) => self.defer(env.now + t + ctl),
                }
            }
            PacketKind::Ack if for_me => {
                let Some(Attempt::Unicast { entry, hop, .. }) = self.attempt.clone() else { return };
                if self.state != MacStateKind::WaitAck || hop != p.src {
                    return;
                }
                self.cancel(TimerKind::AckTimeout);
                if let Some(qp) = env.net.queues.remove(entry) {
                    out.push(MacAction::Sent { entry, meta: qp.meta, hop: Some(hop) });
                }
                self.reset_to_idle(env, out);
            }
            PacketKind::Ack | PacketKind::Beacon => {}
        }
    }
}

fn u_norm_of(a: &Attempt) -> f64 {
    match a {
        Attempt::Unicast { u_norm, .. } => *u_norm,
        Attempt::Broadcast { .. } | Attempt::Beacon => 0.5,
    }
}

/// Refreshes the row for `p.src` from its OAI and folds one goodput sample
/// (`intact_probe_bits / PROBE_BITS * bitrate`) into the EWMA.
pub fn harvest_oai(
    table: &mut NeighborTable,
    p: &HelperPacket,
    intact_probe_bits: u32,
    bitrate_bps: u32,
    now: SimTime,
    alpha: f64,
) -> Option<NeighborEntry> {
    let sample = intact_probe_bits.min(PROBE_BITS) as f64 / PROBE_BITS as f64 * bitrate_bps as f64;
    let goodput = match table.get(p.src) {
        Some(row) if row.probe_bitrate_bps > 0 => {
            let prev = row.goodput_bps * bitrate_bps as f64 / row.probe_bitrate_bps as f64;
            alpha * sample + (1.0 - alpha) * prev
        }
        _ => sample,
    };
    let entry = NeighborEntry {
        node: p.src,
        queue_backlog: p.oai.queue_backlog,
        residual_energy_j: p.oai.residual_energy_j as f64,
        initial_energy_j: p.oai.initial_energy_j as f64,
        goodput_bps: goodput,
        probe_bitrate_bps: bitrate_bps,
        position: p.oai.position,
        last_heard: now,
    };
    table.upsert(entry.clone()).then_some(entry)
}
