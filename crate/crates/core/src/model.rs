//! Domain types shared by every layer of the stack: node identity,
//! planar geography, energy state, OAI, the over-the-air packet and the
//! per-node neighbor table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Energy, Power, SimTime};

/// Maximum hop-to-live of any packet.
pub const HTL_MAX: u8 = 16;

/// HTL used for the vicinity broadcast copy of a HELP message.
pub const HELP_BROADCAST_HTL: u8 = 2;

/// The known bit sequence carried in every packet's PROBE field.
pub const PROBE_PATTERN: [u8; 16] = [
    0xA5, 0x5A, 0xC3, 0x3C, 0x96, 0x69, 0xF0, 0x0F, 0xA5, 0x5A, 0xC3, 0x3C, 0x96, 0x69, 0xF0, 0x0F,
];

/// Number of bits in the PROBE field.
pub const PROBE_BITS: u32 = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("bitrate must be positive")]
    ZeroBitrate,
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Identity and geography
// ---------------------------------------------------------------------------

/// Identifier of one HELPER in a scenario. `0xFFFF` is reserved for broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const BROADCAST_RAW: u16 = 0xFFFF;
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Link-layer or network-layer address: a single node or everyone in range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Address {
    Node(NodeId),
    Broadcast,
}

impl Address {
    fn to_raw(self) -> u16 {
        match self {
            Address::Node(id) => id.0,
            Address::Broadcast => NodeId::BROADCAST_RAW,
        }
    }

    fn from_raw(raw: u16) -> Self {
        if raw == NodeId::BROADCAST_RAW {
            Address::Broadcast
        } else {
            Address::Node(NodeId(raw))
        }
    }

    pub fn node(self) -> Option<NodeId> {
        match self {
            Address::Node(id) => Some(id),
            Address::Broadcast => None,
        }
    }

    pub fn is_broadcast(self) -> bool {
        matches!(self, Address::Broadcast)
    }
}

/// Position in a local planar frame, meters east (`x`) and north (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPosition {
    pub x: f64,
    pub y: f64,
}

impl GeoPosition {
    pub const fn new(x: f64, y: f64) -> Self {
        GeoPosition { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rounds both coordinates to `f32` precision, the resolution carried on air.
    pub fn quantized(self) -> Self {
        GeoPosition::new(self.x as f32 as f64, self.y as f32 as f64)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: GeoPosition, b: GeoPosition) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Initial and residual battery energy of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyState {
    initial: Energy,
    residual: Energy,
}

impl EnergyState {
    pub fn new(initial: Energy) -> Self {
        EnergyState { initial, residual: initial }
    }

    pub fn initial(&self) -> Energy {
        self.initial
    }

    pub fn residual(&self) -> Energy {
        self.residual
    }

    pub fn consumed(&self) -> Energy {
        self.initial - self.residual
    }

    /// Draws `cost`, returning the amount actually drawn (capped by what is left).
    pub fn draw(&mut self, cost: Energy) -> Energy {
        let drawn = cost.min(self.residual);
        self.residual -= drawn;
        drawn
    }

    pub fn is_depleted(&self) -> bool {
        self.residual == Energy::ZERO
    }
}

// ---------------------------------------------------------------------------
// OAI and transmission strategies
// ---------------------------------------------------------------------------

/// Optimization assisting information piggybacked on RTS, CTS and BEACON.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Oai {
    pub queue_backlog: u32,
    pub residual_energy_j: f32,
    pub initial_energy_j: f32,
    /// Quantized to `f32` so it survives the wire unchanged.
    pub position: GeoPosition,
}

impl Oai {
    pub fn new(queue_backlog: u32, energy: &EnergyState, position: GeoPosition) -> Self {
        Oai {
            queue_backlog,
            residual_energy_j: energy.residual().as_joules() as f32,
            initial_energy_j: energy.initial().as_joules() as f32,
            position: position.quantized(),
        }
    }
}

/// One `(bitrate, transmit power)` choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "StrategySpec", try_from = "StrategySpec")]
pub struct TransmissionStrategy {
    pub bitrate_bps: u32,
    pub tx_power: Power,
}

#[derive(Serialize, Deserialize)]
struct StrategySpec {
    bitrate_bps: u32,
    tx_power_w: f64,
}

impl From<TransmissionStrategy> for StrategySpec {
    fn from(s: TransmissionStrategy) -> Self {
        StrategySpec { bitrate_bps: s.bitrate_bps, tx_power_w: s.tx_power.as_watts() }
    }
}

impl TryFrom<StrategySpec> for TransmissionStrategy {
    type Error = String;
    fn try_from(s: StrategySpec) -> Result<Self, String> {
        if !(s.tx_power_w.is_finite() && s.tx_power_w > 0.0) {
            return Err(format!("tx_power_w must be positive, got {}", s.tx_power_w));
        }
        Ok(TransmissionStrategy::new(s.bitrate_bps, s.tx_power_w))
    }
}

impl TransmissionStrategy {
    pub fn new(bitrate_bps: u32, tx_power_w: f64) -> Self {
        TransmissionStrategy { bitrate_bps, tx_power: Power::from_watts(tx_power_w) }
    }

    pub fn tx_power_w(&self) -> f64 {
        self.tx_power.as_watts()
    }
}

impl Default for TransmissionStrategy {
    fn default() -> Self {
        TransmissionStrategy::new(5000, 0.1)
    }
}

// ---------------------------------------------------------------------------
// Packets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PacketKind {
    Rts,
    Cts,
    Ack,
    Beacon,
    Data,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        !matches!(self, PacketKind::Data)
    }

    /// RTS, CTS and BEACON carry OAI and a PROBE worth harvesting.
    pub fn carries_oai(self) -> bool {
        matches!(self, PacketKind::Rts | PacketKind::Cts | PacketKind::Beacon)
    }

    fn code(self) -> u8 {
        match self {
            PacketKind::Rts => 0,
            PacketKind::Cts => 1,
            PacketKind::Ack => 2,
            PacketKind::Beacon => 3,
            PacketKind::Data => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => PacketKind::Rts,
            1 => PacketKind::Cts,
            2 => PacketKind::Ack,
            3 => PacketKind::Beacon,
            4 => PacketKind::Data,
            _ => return None,
        })
    }
}

/// Application message type of a DATA packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AppType {
    Local,
    Neighborhood,
    Help,
    Resource,
    Nd,
    Alert,
    ResourceUpdate,
    HelperUpdate,
    Generic,
}

impl AppType {
    pub const ALL: [AppType; 9] = [
        AppType::Local,
        AppType::Neighborhood,
        AppType::Help,
        AppType::Resource,
        AppType::Nd,
        AppType::Alert,
        AppType::ResourceUpdate,
        AppType::HelperUpdate,
        AppType::Generic,
    ];

    /// HELP, ALERT and ND ride the priority queue.
    pub fn is_priority(self) -> bool {
        matches!(self, AppType::Help | AppType::Alert | AppType::Nd)
    }

    fn code(self) -> u8 {
        AppType::ALL.iter().position(|&t| t == self).unwrap() as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        AppType::ALL.get(c as usize).copied()
    }
}

/// The over-the-air unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HelperPacket {
    pub kind: PacketKind,
    pub app_type: AppType,
    /// Transmitter of this hop.
    pub src: NodeId,
    /// Node that created the application message.
    pub origin: NodeId,
    pub final_dst: Address,
    pub next_hop: Address,
    pub htl: u8,
    pub seq: u16,
    pub oai: Oai,
    pub probe: [u8; 16],
    pub payload: Vec<u8>,
}

/// Serialized size of everything but the payload.
pub const WIRE_OVERHEAD: usize = 1 + 1 + 2 + 2 + 2 + 2 + 1 + 2 + 24 + 16 + 2;

/// Largest DATA payload: a 200-byte message text plus its envelope.
pub const MAX_PAYLOAD: usize = 256;

impl HelperPacket {
    /// A control packet (RTS, CTS, ACK or BEACON) from `src` to `next_hop`.
    pub fn control(kind: PacketKind, src: NodeId, next_hop: Address, oai: Oai) -> Self {
        debug_assert!(kind.is_control());
        HelperPacket {
            kind,
            app_type: AppType::Generic,
            src,
            origin: src,
            final_dst: next_hop,
            next_hop,
            htl: 0,
            seq: 0,
            oai: if kind == PacketKind::Ack { Oai::default() } else { oai },
            probe: PROBE_PATTERN,
            payload: Vec::new(),
        }
    }

    /// A DATA packet originating at `origin`.
    pub fn data(
        app_type: AppType,
        origin: NodeId,
        final_dst: Address,
        htl: u8,
        seq: u16,
        payload: Vec<u8>,
    ) -> Self {
        HelperPacket {
            kind: PacketKind::Data,
            app_type,
            src: origin,
            origin,
            final_dst,
            next_hop: final_dst,
            htl: htl.min(HTL_MAX),
            seq,
            oai: Oai::default(),
            probe: PROBE_PATTERN,
            payload,
        }
    }

    pub fn wire_len(&self) -> usize {
        WIRE_OVERHEAD + self.payload.len()
    }

    /// Key that identifies an application message network-wide.
    pub fn message_key(&self) -> (NodeId, u16, AppType) {
        (self.origin, self.seq, self.app_type)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(self.kind.code());
        out.push(self.app_type.code());
        out.extend_from_slice(&self.src.0.to_le_bytes());
        out.extend_from_slice(&self.origin.0.to_le_bytes());
        out.extend_from_slice(&self.final_dst.to_raw().to_le_bytes());
        out.extend_from_slice(&self.next_hop.to_raw().to_le_bytes());
        out.push(self.htl);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.oai.queue_backlog.to_le_bytes());
        out.extend_from_slice(&self.oai.residual_energy_j.to_le_bytes());
        out.extend_from_slice(&self.oai.initial_energy_j.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes()); // reserved
        out.extend_from_slice(&(self.oai.position.x as f32).to_le_bytes());
        out.extend_from_slice(&(self.oai.position.y as f32).to_le_bytes());
        out.extend_from_slice(&self.probe);
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn deserialize(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() < WIRE_OVERHEAD {
            return Err(WireError::Truncated { len: buf.len() });
        }
        let mut r = Reader { buf, pos: 0 };
        let kind = PacketKind::from_code(r.u8()).ok_or(WireError::UnknownKind(buf[0]))?;
        let app_type = AppType::from_code(r.u8()).ok_or(WireError::UnknownAppType(buf[1]))?;
        let src = NodeId(r.u16());
        let origin = NodeId(r.u16());
        let final_dst = Address::from_raw(r.u16());
        let next_hop = Address::from_raw(r.u16());
        let htl = r.u8();
        if htl > HTL_MAX {
            return Err(WireError::HtlTooLarge(htl));
        }
        let seq = r.u16();
        let queue_backlog = r.u32();
        let residual_energy_j = f32::from_bits(r.u32());
        let initial_energy_j = f32::from_bits(r.u32());
        let _reserved = r.u32();
        let x = f32::from_bits(r.u32()) as f64;
        let y = f32::from_bits(r.u32()) as f64;
        let mut probe = [0u8; 16];
        probe.copy_from_slice(r.take(16));
        let len = r.u16() as usize;
        if buf.len() != WIRE_OVERHEAD + len {
            return Err(WireError::LengthMismatch { declared: len, actual: buf.len() - WIRE_OVERHEAD });
        }
        if kind.is_control() && len != 0 {
            return Err(WireError::ControlWithPayload);
        }
        let payload = r.take(len).to_vec();
        Ok(HelperPacket {
            kind,
            app_type,
            src,
            origin,
            final_dst,
            next_hop,
            htl,
            seq,
            oai: Oai {
                queue_backlog,
                residual_energy_j,
                initial_energy_j,
                position: GeoPosition::new(x, y),
            },
            probe,
            payload,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("packet truncated: {len} bytes")]
    Truncated { len: usize },
    #[error("unknown packet kind {0}")]
    UnknownKind(u8),
    #[error("unknown app type {0}")]
    UnknownAppType(u8),
    #[error("htl {0} exceeds maximum")]
    HtlTooLarge(u8),
    #[error("payload length {declared} does not match {actual} trailing bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("control packet carries a payload")]
    ControlWithPayload,
}

/// Time on air for `bytes` at `bitrate_bps`, rounded up to the microsecond.
pub fn airtime_for_bytes(bytes: usize, bitrate_bps: u32) -> Result<SimTime, ConfigError> {
    if bitrate_bps == 0 {
        return Err(ConfigError::ZeroBitrate);
    }
    let bits = bytes as u64 * 8;
    let us = (bits * 1_000_000).div_ceil(bitrate_bps as u64);
    Ok(SimTime(us))
}

/// Time on air of `p` sent with strategy `s`.
pub fn packet_airtime(p: &HelperPacket, s: &TransmissionStrategy) -> Result<SimTime, ConfigError> {
    airtime_for_bytes(p.wire_len(), s.bitrate_bps)
}

// ---------------------------------------------------------------------------
// Neighbor table
// ---------------------------------------------------------------------------

/// One row of a node's neighbor table.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub node: NodeId,
    pub queue_backlog: u32,
    pub residual_energy_j: f64,
    pub initial_energy_j: f64,
    /// EWMA of the probe goodput, bits/second.
    pub goodput_bps: f64,
    /// Bitrate the probes were sent at.
    pub probe_bitrate_bps: u32,
    pub position: GeoPosition,
    pub last_heard: SimTime,
}

impl NeighborEntry {
    /// `d_js`: this neighbor's distance to `dest`.
    pub fn dist_to(&self, dest: GeoPosition) -> f64 {
        distance(self.position, dest)
    }

    /// Fraction of probe bits that arrive intact.
    pub fn goodput_ratio(&self) -> f64 {
        if self.probe_bitrate_bps == 0 {
            0.0
        } else {
            self.goodput_bps / self.probe_bitrate_bps as f64
        }
    }
}

/// Neighbor table of one node; never contains the owner.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    owner: NodeId,
    rows: BTreeMap<NodeId, NeighborEntry>,
}

impl NeighborTable {
    pub fn new(owner: NodeId) -> Self {
        NeighborTable { owner, rows: BTreeMap::new() }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    /// Inserts or replaces a row. Rows for the owner are ignored.
    pub fn upsert(&mut self, entry: NeighborEntry) -> bool {
        if entry.node == self.owner {
            return false;
        }
        self.rows.insert(entry.node, entry);
        true
    }

    pub fn get(&self, id: NodeId) -> Option<&NeighborEntry> {
        self.rows.get(&id)
    }

    pub fn get_mut(&mut self, id: NodeId) -> Option<&mut NeighborEntry> {
        self.rows.get_mut(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<NeighborEntry> {
        self.rows.remove(&id)
    }

    /// Drops rows last heard more than `ttl` before `now`.
    pub fn expire(&mut self, now: SimTime, ttl: SimTime) {
        self.rows.retain(|_, e| now.saturating_sub(e.last_heard) <= ttl);
    }

    /// Rows in ascending `NodeId` order.
    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(distance(GeoPosition::new(0.0, 0.0), GeoPosition::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(GeoPosition::new(7.0, 2.0), GeoPosition::new(7.0, 2.0)), 0.0);
        assert_eq!(distance(GeoPosition::new(-1.0, 0.0), GeoPosition::new(2.0, 4.0)), 5.0);
    }

    #[test]
    fn airtime_examples() {
        // 200-byte payload behind a 32-byte header
        let t = airtime_for_bytes(232, 5000).unwrap();
        assert_eq!(t, SimTime::from_micros(371_200));
        assert_eq!(t.as_secs_f64(), 0.3712);
        assert_eq!(airtime_for_bytes(32, 5000).unwrap().as_secs_f64(), 0.0512);
        assert_eq!(airtime_for_bytes(32, 0), Err(ConfigError::ZeroBitrate));
    }

    #[test]
    fn airtime_vanishes_as_bitrate_grows() {
        let p = HelperPacket::data(AppType::Generic, NodeId(1), Address::Node(NodeId(2)), 4, 0, vec![0; 200]);
        let mut last = f64::INFINITY;
        for rate in [5_000u32, 50_000, 5_000_000, u32::MAX] {
            let t = packet_airtime(&p, &TransmissionStrategy::new(rate, 0.1)).unwrap().as_secs_f64();
            assert!(t < last);
            last = t;
        }
        assert!(last <= 1e-6);
    }

    #[test]
    fn packet_airtime_uses_serialized_size() {
        let oai = Oai::default();
        let beacon = HelperPacket::control(PacketKind::Beacon, NodeId(3), Address::Broadcast, oai);
        assert_eq!(beacon.wire_len(), WIRE_OVERHEAD);
        assert_eq!(beacon.serialize().len(), WIRE_OVERHEAD);
        let t = packet_airtime(&beacon, &TransmissionStrategy::default()).unwrap();
        assert_eq!(t, SimTime::from_micros((WIRE_OVERHEAD as u64 * 8 * 1_000_000) / 5000));
    }

    #[test]
    fn golden_beacon_bytes() {
        let oai = Oai {
            queue_backlog: 4,
            residual_energy_j: 20.0,
            initial_energy_j: 25.0,
            position: GeoPosition::new(1000.0, -250.5),
        };
        let p = HelperPacket::control(PacketKind::Beacon, NodeId(0x0102), Address::Broadcast, oai);
        let bytes = p.serialize();
        let mut expected = vec![
            3, 8, // kind, app_type
            0x02, 0x01, // src
            0x02, 0x01, // origin
            0xFF, 0xFF, // final_dst
            0xFF, 0xFF, // next_hop
            0,    // htl
            0, 0, // seq
            4, 0, 0, 0, // queue backlog
        ];
        expected.extend_from_slice(&20.0f32.to_le_bytes());
        expected.extend_from_slice(&25.0f32.to_le_bytes());
        expected.extend_from_slice(&[0, 0, 0, 0]);
        expected.extend_from_slice(&1000.0f32.to_le_bytes());
        expected.extend_from_slice(&(-250.5f32).to_le_bytes());
        expected.extend_from_slice(&PROBE_PATTERN);
        expected.extend_from_slice(&[0, 0]);
        assert_eq!(bytes, expected);
        assert_eq!(HelperPacket::deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn deserialize_rejects_malformed() {
        let p = HelperPacket::data(AppType::Help, NodeId(1), Address::Node(NodeId(9)), 16, 7, b"hi".to_vec());
        let mut bytes = p.serialize();
        assert!(matches!(HelperPacket::deserialize(&bytes[..10]), Err(WireError::Truncated { .. })));
        bytes.push(0);
        assert!(matches!(HelperPacket::deserialize(&bytes), Err(WireError::LengthMismatch { .. })));
        let mut bad = p.serialize();
        bad[0] = 9;
        assert_eq!(HelperPacket::deserialize(&bad), Err(WireError::UnknownKind(9)));
        let mut bad = p.serialize();
        bad[10] = HTL_MAX + 1;
        assert_eq!(HelperPacket::deserialize(&bad), Err(WireError::HtlTooLarge(HTL_MAX + 1)));
    }

    #[test]
    fn ack_carries_no_oai() {
        let oai = Oai { queue_backlog: 9, ..Oai::default() };
        let ack = HelperPacket::control(PacketKind::Ack, NodeId(1), Address::Node(NodeId(2)), oai);
        assert_eq!(ack.oai, Oai::default());
    }

    #[test]
    fn table_never_holds_owner_and_expires() {
        let mut t = NeighborTable::new(NodeId(1));
        let row = |id: u16, heard: u64| NeighborEntry {
            node: NodeId(id),
            queue_backlog: 0,
            residual_energy_j: 25.0,
            initial_energy_j: 25.0,
            goodput_bps: 5000.0,
            probe_bitrate_bps: 5000,
            position: GeoPosition::default(),
            last_heard: SimTime::from_secs(heard),
        };
        assert!(!t.upsert(row(1, 0)));
        assert!(t.upsert(row(2, 0)));
        assert!(t.upsert(row(3, 10)));
        t.expire(SimTime::from_secs(16), SimTime::from_secs(15));
        assert_eq!(t.iter().map(|e| e.node).collect::<Vec<_>>(), vec![NodeId(3)]);
    }

    #[test]
    fn energy_draw_caps_at_residual() {
        let mut e = EnergyState::new(Energy(100));
        assert_eq!(e.draw(Energy(30)), Energy(30));
        assert_eq!(e.draw(Energy(300)), Energy(70));
        assert!(e.is_depleted());
        assert_eq!(e.consumed(), Energy(100));
    }
}
