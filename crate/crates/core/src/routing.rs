//! Network layer: dual transmit queues, energy-efficient backpressure
//! next-hop selection, the greedy geographic baseline, and HTL-bounded
//! duplicate-suppressed flooding.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{
    distance, Address, AppType, GeoPosition, HelperPacket, NeighborEntry, NeighborTable, NodeId,
    TransmissionStrategy,
};
use crate::units::SimTime;

/// Strategies whose measured goodput ratio falls below this are not used.
pub const GOODPUT_FLOOR: f64 = 0.25;

/// Total packets a node can hold across both queues.
pub const QUEUE_CAPACITY: usize = 128;

/// Duplicate-suppression memory for floods and unicast deliveries.
pub const DEDUP_TTL: SimTime = SimTime::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    #[default]
    Seek,
    Greedy,
}

impl std::str::FromStr for RoutingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seek" => Ok(RoutingMode::Seek),
            "greedy" => Ok(RoutingMode::Greedy),
            other => Err(format!("unknown routing mode `{other}` (expected seek or greedy)")),
        }
    }
}

impl std::fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoutingMode::Seek => "seek",
            RoutingMode::Greedy => "greedy",
        })
    }
}

/// Knobs the network layer needs from the scenario.
#[derive(Debug, Clone)]
pub struct RoutingConfig {
    pub mode: RoutingMode,
    pub strategies: Vec<TransmissionStrategy>,
    pub capacity_bps: u32,
    pub goodput_floor: f64,
    pub neighbor_ttl: SimTime,
    pub queue_capacity: usize,
    /// Known node locations (GPS plus the setup flood).
    pub directory: BTreeMap<NodeId, GeoPosition>,
}

impl RoutingConfig {
    pub fn position_of(&self, id: NodeId) -> Option<GeoPosition> {
        self.directory.get(&id).copied()
    }

    /// Strategies usable under the link capacity constraint.
    pub fn allowed_strategies(&self) -> impl Iterator<Item = (usize, &TransmissionStrategy)> {
        self.strategies.iter().enumerate().filter(move |(_, s)| s.bitrate_bps <= self.capacity_bps)
    }
}

// ---------------------------------------------------------------------------
// Queues
// ---------------------------------------------------------------------------

/// Simulator bookkeeping that travels with a packet but never goes on air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketMeta {
    /// Unique per application message for the whole run.
    pub uid: u64,
    pub session: Option<u32>,
    pub created_at: SimTime,
    pub enqueued_at: SimTime,
}

/// Node-local handle of a queued packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryId(pub u64);

#[derive(Debug, Clone)]
pub struct QueuedPacket {
    pub entry: EntryId,
    pub packet: HelperPacket,
    pub meta: PacketMeta,
    pub reroutes: u8,
}

/// Priority and best-effort FIFOs. HELP, ALERT and ND go to priority.
#[derive(Debug, Clone)]
pub struct RoutingQueues {
    priority: VecDeque<QueuedPacket>,
    best_effort: VecDeque<QueuedPacket>,
    capacity: usize,
}

impl RoutingQueues {
    pub fn new(capacity: usize) -> Self {
        RoutingQueues { priority: VecDeque::new(), best_effort: VecDeque::new(), capacity }
    }

    /// `q_i`: total backlog across both queues.
    pub fn backlog(&self) -> u32 {
        (self.priority.len() + self.best_effort.len()) as u32
    }

    pub fn is_full(&self) -> bool {
        self.backlog() as usize >= self.capacity
    }

    pub fn push(&mut self, qp: QueuedPacket) -> Result<(), QueuedPacket> {
        if self.is_full() {
            return Err(qp);
        }
        if qp.packet.app_type.is_priority() {
            self.priority.push_back(qp);
        } else {
            self.best_effort.push_back(qp);
        }
        Ok(())
    }

    /// Service order: priority FIFO, then best-effort FIFO.
    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> {
        self.priority.iter().chain(self.best_effort.iter())
    }

    pub fn get(&self, entry: EntryId) -> Option<&QueuedPacket> {
        self.iter().find(|q| q.entry == entry)
    }

    pub fn get_mut(&mut self, entry: EntryId) -> Option<&mut QueuedPacket> {
        self.priority.iter_mut().chain(self.best_effort.iter_mut()).find(|q| q.entry == entry)
    }

    pub fn remove(&mut self, entry: EntryId) -> Option<QueuedPacket> {
        for q in [&mut self.priority, &mut self.best_effort] {
            if let Some(i) = q.iter().position(|p| p.entry == entry) {
                return q.remove(i);
            }
        }
        None
    }

    pub fn drain_all(&mut self) -> Vec<QueuedPacket> {
        self.priority.drain(..).chain(self.best_effort.drain(..)).collect()
    }

    pub fn priority_len(&self) -> usize {
        self.priority.len()
    }

    pub fn best_effort_len(&self) -> usize {
        self.best_effort.len()
    }
}

/// Remembers recently seen message keys.
#[derive(Debug, Clone)]
pub struct FloodCache<K: Ord> {
    seen: BTreeMap<K, SimTime>,
    ttl: SimTime,
}

impl<K: Ord + Copy> FloodCache<K> {
    pub fn new(ttl: SimTime) -> Self {
        FloodCache { seen: BTreeMap::new(), ttl }
    }

    /// Records `key`; true the first time it is seen within the TTL.
    pub fn check_and_insert(&mut self, key: K, now: SimTime) -> bool {
        if self.seen.len() > 4096 {
            let ttl = self.ttl;
            self.seen.retain(|_, t| now.saturating_sub(*t) <= ttl);
        }
        match self.seen.get(&key) {
            Some(t) if now.saturating_sub(*t) <= self.ttl => false,
            _ => {
                self.seen.insert(key, now);
                true
            }
        }
    }

    pub fn contains(&self, key: &K, now: SimTime) -> bool {
        self.seen.get(key).is_some_and(|t| now.saturating_sub(*t) <= self.ttl)
    }
}

/// Everything the network layer keeps per node.
#[derive(Debug, Clone)]
pub struct NetState {
    pub queues: RoutingQueues,
    pub neighbors: NeighborTable,
    /// Broadcasts already delivered/rebroadcast, keyed by `(origin, seq)`.
    pub flood: FloodCache<(NodeId, u16)>,
    /// Unicasts already accepted, keyed by `(origin, seq, app_type)`.
    pub unicast_seen: FloodCache<(NodeId, u16, AppType)>,
    next_entry: u64,
    next_seq: u16,
}

impl NetState {
    pub fn new(owner: NodeId, queue_capacity: usize) -> Self {
        NetState {
            queues: RoutingQueues::new(queue_capacity),
            neighbors: NeighborTable::new(owner),
            flood: FloodCache::new(DEDUP_TTL),
            unicast_seen: FloodCache::new(DEDUP_TTL),
            next_entry: 0,
            next_seq: 0,
        }
    }

    pub fn alloc_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    pub fn alloc_entry(&mut self) -> EntryId {
        self.next_entry += 1;
        EntryId(self.next_entry)
    }

    /// Enqueues a packet, returning it back if the queues are full.
    pub fn enqueue(&mut self, packet: HelperPacket, meta: PacketMeta) -> Result<EntryId, QueuedPacket> {
        let entry = self.alloc_entry();
        self.queues.push(QueuedPacket { entry, packet, meta, reroutes: 0 })?;
        Ok(entry)
    }
}

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

/// What a node knows about itself when choosing a next hop.
#[derive(Debug, Clone, Copy)]
pub struct LocalView {
    pub id: NodeId,
    pub position: GeoPosition,
    /// `q_i`, counting the packet being routed.
    pub queue_backlog: u32,
}

/// Inputs of the utility for one `(neighbor, strategy)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityInputs {
    pub goodput_bps: f64,
    pub tx_power_w: f64,
    pub q_i: u32,
    pub q_j: u32,
    pub d_is: f64,
    pub d_js: f64,
    pub residual_j: f64,
    pub initial_j: f64,
}

/// `eta * (max(q_i - q_j, 0) / q_i) * (progress / d_is) * (E_r / E_0)` with
/// `eta = goodput / power`. Negative progress is clamped to zero, so a
/// score of zero marks an ineligible neighbor.
pub fn utility_score(u: &UtilityInputs) -> f64 {
    if u.q_i == 0 || u.d_is <= 0.0 || u.tx_power_w <= 0.0 || u.initial_j <= 0.0 {
        return 0.0;
    }
    let eta = u.goodput_bps / u.tx_power_w;
    let backlog = u.q_i.saturating_sub(u.q_j) as f64 / u.q_i as f64;
    let progress = ((u.d_is - u.d_js) / u.d_is).max(0.0);
    let energy = (u.residual_j / u.initial_j).max(0.0);
    eta * backlog * progress * energy
}

/// Maximum attainable utility over `j` with strategy `s`: `eta`.
pub fn efficiency(goodput_bps: f64, tx_power_w: f64) -> f64 {
    goodput_bps / tx_power_w
}

/// Goodput the link to `j` would have with strategy `s`, scaled from the
/// probe measurement; `None` when the ratio is under the floor.
pub fn strategy_goodput(j: &NeighborEntry, s: &TransmissionStrategy, floor: f64) -> Option<f64> {
    let ratio = j.goodput_ratio();
    (ratio >= floor).then_some(ratio * s.bitrate_bps as f64)
}

/// Builds the utility inputs for neighbor `j` toward `dest`.
pub fn utility_inputs(
    me: &LocalView,
    j: &NeighborEntry,
    goodput_bps: f64,
    s: &TransmissionStrategy,
    dest: NodeId,
    dest_pos: GeoPosition,
) -> UtilityInputs {
    let is_dest = j.node == dest;
    UtilityInputs {
        goodput_bps,
        tx_power_w: s.tx_power_w(),
        q_i: me.queue_backlog,
        // backlog at the destination counts as zero
        q_j: if is_dest { 0 } else { j.queue_backlog },
        d_is: distance(me.position, dest_pos),
        d_js: if is_dest { 0.0 } else { j.dist_to(dest_pos) },
        residual_j: j.residual_energy_j,
        initial_j: j.initial_energy_j,
    }
}

/// Utility of sending toward `dest` via `j` with strategy `s`.
pub fn utility(
    me: &LocalView,
    j: &NeighborEntry,
    s: &TransmissionStrategy,
    dest: NodeId,
    dest_pos: GeoPosition,
    goodput_floor: f64,
) -> f64 {
    match strategy_goodput(j, s, goodput_floor) {
        Some(g) => utility_score(&utility_inputs(me, j, g, s, dest, dest_pos)),
        None => 0.0,
    }
}

/// Result of a next-hop choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextHop {
    pub node: NodeId,
    pub strategy: TransmissionStrategy,
    pub utility: f64,
    /// Utility divided by its attainable maximum, in `[0, 1]`.
    pub normalized: f64,
    pub inputs: UtilityInputs,
}

/// Maximizes utility over neighbors x allowed strategies. Ties go to the
/// higher residual energy, then the lower `NodeId`, then the earlier strategy.
/// Returns `None` when every score is zero.
pub fn seek_next_hop<'a>(
    me: &LocalView,
    neighbors: impl IntoIterator<Item = &'a NeighborEntry>,
    cfg: &RoutingConfig,
    dest: NodeId,
    dest_pos: GeoPosition,
) -> Option<NextHop> {
    let mut best: Option<(NextHop, f64)> = None;
    for j in neighbors {
        for (_, s) in cfg.allowed_strategies() {
            let Some(g) = strategy_goodput(j, s, cfg.goodput_floor) else {
                continue;
            };
            let inputs = utility_inputs(me, j, g, s, dest, dest_pos);
            let score = utility_score(&inputs);
            if score <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b, b_res)) => {
                    score > b.utility
                        || (score == b.utility
                            && (j.residual_energy_j > *b_res
                                || (j.residual_energy_j == *b_res && j.node < b.node)))
                }
            };
            if better {
                let eta = efficiency(g, s.tx_power_w());
                let hop = NextHop {
                    node: j.node,
                    strategy: *s,
                    utility: score,
                    normalized: (score / eta).clamp(0.0, 1.0),
                    inputs,
                };
                best = Some((hop, j.residual_energy_j));
            }
        }
    }
    best.map(|(h, _)| h)
}

/// Neighbor closest to `dest` among those strictly closer than `me`;
/// ties go to the lower `NodeId`.
pub fn greedy_next_hop<'a>(
    me: &LocalView,
    neighbors: impl IntoIterator<Item = &'a NeighborEntry>,
    dest: NodeId,
    dest_pos: GeoPosition,
) -> Option<(NodeId, f64)> {
    let d_is = distance(me.position, dest_pos);
    let mut best: Option<(NodeId, f64)> = None;
    for j in neighbors {
        let d_js = if j.node == dest { 0.0 } else { j.dist_to(dest_pos) };
        if d_js >= d_is {
            continue;
        }
        if best.is_none_or(|(b, bd)| d_js < bd || (d_js == bd && j.node < b)) {
            best = Some((j.node, d_js));
        }
    }
    best
}

/// Audit record of one forwarding decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForwardDecision {
    pub node: NodeId,
    pub next_hop: NodeId,
    pub dest: NodeId,
    pub q_i: u32,
    pub q_j: u32,
    pub d_is: f64,
    pub d_js: f64,
    pub utility: f64,
}

/// Next-hop choice for `dest` under the configured routing mode.
pub fn choose_next_hop(
    me: &LocalView,
    table: &NeighborTable,
    cfg: &RoutingConfig,
    dest: NodeId,
    now: SimTime,
) -> Option<(NextHop, ForwardDecision)> {
    let dest_pos = cfg.position_of(dest)?;
    let fresh = table.iter().filter(|e| now.saturating_sub(e.last_heard) <= cfg.neighbor_ttl);
    let hop = match cfg.mode {
        RoutingMode::Seek => seek_next_hop(me, fresh, cfg, dest, dest_pos)?,
        RoutingMode::Greedy => {
            let (node, _) = greedy_next_hop(me, fresh, dest, dest_pos)?;
            let j = table.get(node)?;
            let s = cfg.allowed_strategies().next().map(|(_, s)| *s)?;
            let g = j.goodput_ratio() * s.bitrate_bps as f64;
            let inputs = utility_inputs(me, j, g, &s, dest, dest_pos);
            let utility = utility_score(&inputs);
            // same MAC as SEEK: backoff follows the utility of the hop actually chosen
            let eta = efficiency(g, s.tx_power_w());
            let normalized = if eta > 0.0 { (utility / eta).clamp(0.0, 1.0) } else { 0.0 };
            NextHop { node, strategy: s, utility, normalized, inputs }
        }
    };
    let decision = ForwardDecision {
        node: me.id,
        next_hop: hop.node,
        dest,
        q_i: hop.inputs.q_i,
        q_j: hop.inputs.q_j,
        d_is: hop.inputs.d_is,
        d_js: hop.inputs.d_js,
        utility: hop.utility,
    };
    Some((hop, decision))
}

/// What the MAC should attempt next.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Empty,
    /// Packets are queued but none has an eligible next hop.
    Hold,
    Broadcast { entry: EntryId, strategy: TransmissionStrategy },
    Unicast { entry: EntryId, hop: NextHop, decision: ForwardDecision },
}

/// Picks the first queued packet (priority first) that can be sent now.
pub fn select(net: &NetState, position: GeoPosition, cfg: &RoutingConfig, now: SimTime) -> Selection {
    if net.queues.backlog() == 0 {
        return Selection::Empty;
    }
    let me = LocalView { id: net.neighbors.owner(), position, queue_backlog: net.queues.backlog() };
    let mut tried = Vec::new();
    for qp in net.queues.iter() {
        match qp.packet.next_hop {
            Address::Broadcast => {
                let strategy = cfg.strategies[0];
                return Selection::Broadcast { entry: qp.entry, strategy };
            }
            Address::Node(_) => {
                let Some(dest) = qp.packet.final_dst.node() else { continue };
                if tried.contains(&dest) {
                    continue;
                }
                tried.push(dest);
                if let Some((hop, decision)) = choose_next_hop(&me, &net.neighbors, cfg, dest, now) {
                    return Selection::Unicast { entry: qp.entry, hop, decision };
                }
            }
        }
    }
    Selection::Hold
}

// ---------------------------------------------------------------------------
// Inbound routing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    QueueFull,
    HtlExpired,
    RetriesExhausted,
    NodeDied,
    NoRoute,
}

/// Outcome of routing one DATA packet.
#[derive(Debug, Clone, PartialEq)]
pub enum RouteAction {
    DeliverUp,
    /// Delivered locally and a copy with decremented HTL was queued.
    DeliverAndRebroadcast { entry: EntryId },
    /// Queued for unicast forwarding; the hop is what routing would pick now.
    Forward { entry: EntryId, via: Option<(NodeId, TransmissionStrategy)> },
    Drop(DropReason),
}

/// Routes an inbound (or locally originated) DATA packet at node `me`.
/// Local origination uses `local = true`, which skips delivery to self.
pub fn route(
    net: &mut NetState,
    me: NodeId,
    position: GeoPosition,
    cfg: &RoutingConfig,
    mut packet: HelperPacket,
    meta: PacketMeta,
    now: SimTime,
) -> RouteAction {
    match packet.final_dst {
        Address::Broadcast => {
            if !net.flood.check_and_insert((packet.origin, packet.seq), now) {
                return RouteAction::Drop(DropReason::Duplicate);
            }
            if packet.htl == 0 {
                return RouteAction::DeliverUp;
            }
            packet.htl -= 1;
            packet.src = me;
            packet.next_hop = Address::Broadcast;
            match net.enqueue(packet, PacketMeta { enqueued_at: now, ..meta }) {
                Ok(entry) => RouteAction::DeliverAndRebroadcast { entry },
                // still delivered locally even if the copy cannot be queued
                Err(_) => RouteAction::DeliverUp,
            }
        }
        Address::Node(dst) => {
            if !net.unicast_seen.check_and_insert(packet.message_key(), now) {
                return RouteAction::Drop(DropReason::Duplicate);
            }
            if dst == me {
                return RouteAction::DeliverUp;
            }
            if packet.htl == 0 {
                return RouteAction::Drop(DropReason::HtlExpired);
            }
            packet.htl -= 1;
            forward(net, me, position, cfg, packet, meta, now)
        }
    }
}

/// Queues a locally originated packet without decrementing its HTL.
pub fn originate(
    net: &mut NetState,
    me: NodeId,
    position: GeoPosition,
    cfg: &RoutingConfig,
    packet: HelperPacket,
    meta: PacketMeta,
    now: SimTime,
) -> RouteAction {
    match packet.final_dst {
        Address::Broadcast => {
            net.flood.check_and_insert((packet.origin, packet.seq), now);
            match net.enqueue(packet, PacketMeta { enqueued_at: now, ..meta }) {
                Ok(entry) => RouteAction::DeliverAndRebroadcast { entry },
                Err(_) => RouteAction::Drop(DropReason::QueueFull),
            }
        }
        Address::Node(dst) if dst == me => RouteAction::DeliverUp,
        Address::Node(_) => {
            net.unicast_seen.check_and_insert(packet.message_key(), now);
            forward(net, me, position, cfg, packet, meta, now)
        }
    }
}

fn forward(
    net: &mut NetState,
    me: NodeId,
    position: GeoPosition,
    cfg: &RoutingConfig,
    mut packet: HelperPacket,
    meta: PacketMeta,
    now: SimTime,
) -> RouteAction {
    packet.src = me;
    let dst = packet.final_dst.node().expect("unicast");
    match net.enqueue(packet, PacketMeta { enqueued_at: now, ..meta }) {
        Ok(entry) => {
            let view = LocalView { id: me, position, queue_backlog: net.queues.backlog() };
            let via = choose_next_hop(&view, &net.neighbors, cfg, dst, now).map(|(h, _)| (h.node, h.strategy));
            RouteAction::Forward { entry, via }
        }
        Err(_) => RouteAction::Drop(DropReason::QueueFull),
    }
}

/// What happened after the MAC gave up on a unicast.
#[derive(Debug, Clone)]
pub enum FailureOutcome {
    /// Goodput estimate halved; the packet stays queued for one more routing attempt.
    Rerouted,
    Dropped(QueuedPacket),
    /// The entry was no longer queued.
    Gone,
}

/// Halves the failed link's goodput and allows one re-route before dropping.
pub fn on_link_failure(net: &mut NetState, entry: EntryId, next_hop: NodeId) -> FailureOutcome {
    if let Some(row) = net.neighbors.get_mut(next_hop) {
        row.goodput_bps /= 2.0;
    }
    match net.queues.get_mut(entry) {
        None => FailureOutcome::Gone,
        Some(qp) if qp.reroutes == 0 => {
            qp.reroutes = 1;
            FailureOutcome::Rerouted
        }
        Some(_) => FailureOutcome::Dropped(net.queues.remove(entry).expect("present")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::SimTime;

    fn entry(id: u16, q: u32, er: f64, pos: (f64, f64)) -> NeighborEntry {
        NeighborEntry {
            node: NodeId(id),
            queue_backlog: q,
            residual_energy_j: er,
            initial_energy_j: 25.0,
            goodput_bps: 5000.0,
            probe_bitrate_bps: 5000,
            position: GeoPosition::new(pos.0, pos.1),
            last_heard: SimTime::ZERO,
        }
    }

    fn cfg(mode: RoutingMode, dest: (u16, f64, f64)) -> RoutingConfig {
        let mut directory = BTreeMap::new();
        directory.insert(NodeId(dest.0), GeoPosition::new(dest.1, dest.2));
        RoutingConfig {
            mode,
            strategies: vec![TransmissionStrategy::default()],
            capacity_bps: 5000,
            goodput_floor: GOODPUT_FLOOR,
            neighbor_ttl: SimTime::from_secs(15),
            queue_capacity: QUEUE_CAPACITY,
            directory,
        }
    }

    #[test]
    fn utility_worked_example() {
        let u = UtilityInputs {
            goodput_bps: 5000.0,
            tx_power_w: 0.1,
            q_i: 4,
            q_j: 2,
            d_is: 1000.0,
            d_js: 500.0,
            residual_j: 12.5,
            initial_j: 25.0,
        };
        // 50000 * (2/4) * 0.5 * 0.5
        assert_eq!(utility_score(&u), 6250.0);
    }

    #[test]
    fn backpressure_gate_zeroes_utility() {
        let base = UtilityInputs {
            goodput_bps: 5000.0,
            tx_power_w: 0.1,
            q_i: 4,
            q_j: 4,
            d_is: 1000.0,
            d_js: 500.0,
            residual_j: 25.0,
            initial_j: 25.0,
        };
        assert_eq!(utility_score(&base), 0.0);
        assert_eq!(utility_score(&UtilityInputs { q_j: 9, ..base }), 0.0);
    }

    #[test]
    fn destination_neighbor_reaches_eta() {
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 1 };
        let dest = entry(5, 7, 25.0, (900.0, 0.0));
        let u = utility(&me, &dest, &TransmissionStrategy::default(), NodeId(5), dest.position, GOODPUT_FLOOR);
        assert_eq!(u, 50000.0);
    }

    #[test]
    fn backwards_progress_is_clamped() {
        let u = UtilityInputs {
            goodput_bps: 5000.0,
            tx_power_w: 0.1,
            q_i: 4,
            q_j: 0,
            d_is: 1000.0,
            d_js: 1500.0,
            residual_j: 25.0,
            initial_j: 25.0,
        };
        assert_eq!(utility_score(&u), 0.0);
    }

    #[test]
    fn seek_picks_highest_utility() {
        // destination at (2000, 0); me at origin, q_i = 4
        let c = cfg(RoutingMode::Seek, (9, 2000.0, 0.0));
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 4 };
        let a = entry(1, 2, 12.5, (1000.0, 0.0)); // 50000*.5*.5*.5 = 6250
        let b = entry(2, 3, 25.0, (800.0, 0.0)); // 50000*.25*.4*1 = 5000
        let hop = seek_next_hop(&me, [&a, &b], &c, NodeId(9), GeoPosition::new(2000.0, 0.0)).unwrap();
        assert_eq!(hop.node, NodeId(1));
        assert_eq!(hop.utility, 6250.0);
        assert_eq!(hop.normalized, 0.125);
    }

    #[test]
    fn seek_holds_when_everyone_is_behind() {
        let c = cfg(RoutingMode::Seek, (9, 2000.0, 0.0));
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 4 };
        let a = entry(1, 0, 25.0, (-500.0, 0.0));
        let b = entry(2, 0, 25.0, (0.0, 2500.0));
        assert!(seek_next_hop(&me, [&a, &b], &c, NodeId(9), GeoPosition::new(2000.0, 0.0)).is_none());
    }

    #[test]
    fn seek_single_destination_neighbor() {
        let c = cfg(RoutingMode::Seek, (9, 1000.0, 0.0));
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 1 };
        let d = entry(9, 3, 25.0, (1000.0, 0.0));
        let hop = seek_next_hop(&me, [&d], &c, NodeId(9), GeoPosition::new(1000.0, 0.0)).unwrap();
        assert_eq!(hop.node, NodeId(9));
    }

    #[test]
    fn seek_tie_breaks_on_energy_then_id() {
        let c = cfg(RoutingMode::Seek, (9, 2000.0, 0.0));
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 4 };
        let dest = GeoPosition::new(2000.0, 0.0);
        let a = entry(3, 0, 20.0, (1000.0, 0.0));
        let mut b = entry(2, 0, 20.0, (1000.0, 0.0));
        let hop = seek_next_hop(&me, [&a, &b], &c, NodeId(9), dest).unwrap();
        assert_eq!(hop.node, NodeId(2));
        // same utility needs same E_r/E_0; raise both of b's energies
        b.residual_energy_j = 24.0;
        b.initial_energy_j = 30.0;
        let a2 = entry(3, 0, 20.0, (1000.0, 0.0));
        let hop = seek_next_hop(&me, [&a2, &b], &c, NodeId(9), dest).unwrap();
        assert_eq!(hop.node, NodeId(2));
    }

    #[test]
    fn greedy_examples() {
        let me = LocalView { id: NodeId(0), position: GeoPosition::new(0.0, 0.0), queue_backlog: 1 };
        let dest = GeoPosition::new(1000.0, 0.0);
        let a = entry(1, 0, 25.0, (500.0, 0.0)); // d_js = 500
        let b = entry(2, 0, 25.0, (200.0, 0.0)); // d_js = 800
        assert_eq!(greedy_next_hop(&me, [&a, &b], NodeId(9), dest), Some((NodeId(1), 500.0)));
        let c = entry(3, 0, 25.0, (0.0, 0.0)); // d_js = d_is
        assert_eq!(greedy_next_hop(&me, [&c], NodeId(9), dest), None);
    }

    fn meta() -> PacketMeta {
        PacketMeta { uid: 1, session: None, created_at: SimTime::ZERO, enqueued_at: SimTime::ZERO }
    }

    #[test]
    fn broadcast_flood_rules() {
        let c = cfg(RoutingMode::Seek, (9, 0.0, 0.0));
        let mut net = NetState::new(NodeId(1), QUEUE_CAPACITY);
        let p = HelperPacket::data(AppType::Help, NodeId(4), Address::Broadcast, 2, 11, vec![]);
        let act = route(&mut net, NodeId(1), GeoPosition::default(), &c, p.clone(), meta(), SimTime::ZERO);
        assert!(matches!(act, RouteAction::DeliverAndRebroadcast { .. }));
        let queued = net.queues.iter().next().unwrap();
        assert_eq!(queued.packet.htl, 1);
        assert_eq!(queued.packet.src, NodeId(1));
        assert_eq!(
            route(&mut net, NodeId(1), GeoPosition::default(), &c, p, meta(), SimTime::ZERO),
            RouteAction::Drop(DropReason::Duplicate)
        );
        let last = HelperPacket::data(AppType::Help, NodeId(4), Address::Broadcast, 0, 12, vec![]);
        assert_eq!(
            route(&mut net, NodeId(1), GeoPosition::default(), &c, last, meta(), SimTime::ZERO),
            RouteAction::DeliverUp
        );
        assert_eq!(net.queues.backlog(), 1);
    }

    #[test]
    fn unicast_for_me_is_delivered_and_deduplicated() {
        let c = cfg(RoutingMode::Seek, (1, 0.0, 0.0));
        let mut net = NetState::new(NodeId(1), QUEUE_CAPACITY);
        let p = HelperPacket::data(AppType::Generic, NodeId(4), Address::Node(NodeId(1)), 3, 0, vec![]);
        assert_eq!(route(&mut net, NodeId(1), GeoPosition::default(), &c, p.clone(), meta(), SimTime::ZERO), RouteAction::DeliverUp);
        assert_eq!(
            route(&mut net, NodeId(1), GeoPosition::default(), &c, p, meta(), SimTime::ZERO),
            RouteAction::Drop(DropReason::Duplicate)
        );
    }

    #[test]
    fn unicast_htl_exhaustion_drops() {
        let c = cfg(RoutingMode::Seek, (9, 0.0, 0.0));
        let mut net = NetState::new(NodeId(1), QUEUE_CAPACITY);
        let p = HelperPacket::data(AppType::Generic, NodeId(4), Address::Node(NodeId(9)), 0, 0, vec![]);
        assert_eq!(
            route(&mut net, NodeId(1), GeoPosition::default(), &c, p, meta(), SimTime::ZERO),
            RouteAction::Drop(DropReason::HtlExpired)
        );
    }

    #[test]
    fn priority_classification() {
        let mut q = RoutingQueues::new(8);
        let mk = |t: AppType, e: u64| QueuedPacket {
            entry: EntryId(e),
            packet: HelperPacket::data(t, NodeId(0), Address::Broadcast, 1, 0, vec![]),
            meta: meta(),
            reroutes: 0,
        };
        q.push(mk(AppType::Generic, 1)).unwrap();
        q.push(mk(AppType::Help, 2)).unwrap();
        q.push(mk(AppType::Nd, 3)).unwrap();
        q.push(mk(AppType::Resource, 4)).unwrap();
        q.push(mk(AppType::Alert, 5)).unwrap();
        assert_eq!(q.priority_len(), 3);
        assert_eq!(q.best_effort_len(), 2);
        assert_eq!(q.iter().map(|p| p.entry.0).collect::<Vec<_>>(), vec![2, 3, 5, 1, 4]);
        assert_eq!(q.backlog(), 5);
    }

    #[test]
    fn link_failure_reroutes_once_then_drops() {
        let mut net = NetState::new(NodeId(0), QUEUE_CAPACITY);
        net.neighbors.upsert(entry(1, 0, 25.0, (1.0, 0.0)));
        let p = HelperPacket::data(AppType::Generic, NodeId(0), Address::Node(NodeId(9)), 3, 0, vec![]);
        let e = net.enqueue(p, meta()).unwrap();
        assert!(matches!(on_link_failure(&mut net, e, NodeId(1)), FailureOutcome::Rerouted));
        assert_eq!(net.neighbors.get(NodeId(1)).unwrap().goodput_bps, 2500.0);
        assert!(matches!(on_link_failure(&mut net, e, NodeId(1)), FailureOutcome::Dropped(_)));
        assert_eq!(net.neighbors.get(NodeId(1)).unwrap().goodput_bps, 1250.0);
        assert_eq!(net.queues.backlog(), 0);
    }

    #[test]
    fn flood_cache_ttl() {
        let mut f = FloodCache::new(SimTime::from_secs(10));
        assert!(f.check_and_insert((NodeId(1), 5u16), SimTime::ZERO));
        assert!(!f.check_and_insert((NodeId(1), 5u16), SimTime::from_secs(10)));
        assert!(f.check_and_insert((NodeId(1), 5u16), SimTime::from_secs(21)));
    }
}
