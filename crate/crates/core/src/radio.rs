//! Simulated LoRa-class channel.
//!
//! Reachability is a hard range cutoff, links are symmetric, and any two
//! transmissions that overlap in time at a receiver in range of both are
//! lost there (no capture). Bit errors are drawn per receiver from the
//! configured per-strategy BER. Only transmissions cost energy.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    distance, packet_airtime, ConfigError, GeoPosition, HelperPacket, NodeId, TransmissionStrategy,
    PROBE_BITS, WIRE_OVERHEAD,
};
use crate::units::{Energy, SimTime};

/// Range, strategy set, per-strategy BER and link capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub range_m: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<TransmissionStrategy>,
    /// Per-bit error probability for each entry of `strategies`.
    #[serde(default = "default_ber")]
    pub ber: Vec<f64>,
    #[serde(default = "default_capacity")]
    pub capacity_bps: u32,
}

fn default_strategies() -> Vec<TransmissionStrategy> {
    vec![TransmissionStrategy::default()]
}

fn default_ber() -> Vec<f64> {
    vec![0.0]
}

fn default_capacity() -> u32 {
    5000
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            range_m: 1500.0,
            strategies: default_strategies(),
            ber: default_ber(),
            capacity_bps: default_capacity(),
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(ConfigError::Invalid(format!("range_m must be positive, got {}", self.range_m)));
        }
        if self.strategies.is_empty() {
            return Err(ConfigError::Invalid("at least one transmission strategy is required".into()));
        }
        if self.ber.len() != self.strategies.len() {
            return Err(ConfigError::Invalid(format!(
                "ber has {} entries but there are {} strategies",
                self.ber.len(),
                self.strategies.len()
            )));
        }
        for s in &self.strategies {
            if s.bitrate_bps == 0 {
                return Err(ConfigError::ZeroBitrate);
            }
            if s.tx_power.0 == 0 {
                return Err(ConfigError::Invalid("tx_power_w must be positive".into()));
            }
        }
        if let Some(b) = self.ber.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(ConfigError::Invalid(format!("ber {b} outside [0, 1]")));
        }
        if self.capacity_bps == 0 {
            return Err(ConfigError::Invalid("capacity_bps must be positive".into()));
        }
        Ok(())
    }

    /// A link exists iff the endpoints are within range.
    pub fn in_range(&self, a: GeoPosition, b: GeoPosition) -> bool {
        distance(a, b) <= self.range_m
    }

    pub fn ber_for(&self, s: &TransmissionStrategy) -> f64 {
        self.strategies.iter().position(|x| x == s).map(|i| self.ber[i]).unwrap_or(0.0)
    }

    pub fn default_strategy(&self) -> TransmissionStrategy {
        self.strategies[0]
    }
}

/// Transmission energy accounting.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyModel;

impl EnergyModel {
    /// `tx_power x airtime`, charged for control and data packets alike.
    pub fn tx_cost(p: &HelperPacket, s: &TransmissionStrategy) -> Result<Energy, ConfigError> {
        Ok(s.tx_power.energy_over(packet_airtime(p, s)?))
    }
}

/// Which parts of a received packet took bit errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BitErrors {
    pub header: bool,
    /// Bit `k` set means probe bit `k` was flipped.
    pub probe_mask: u128,
    pub payload: bool,
}

impl BitErrors {
    pub fn any(&self) -> bool {
        self.header || self.probe_mask != 0 || self.payload
    }

    pub fn probe_bits_intact(&self) -> u32 {
        PROBE_BITS - self.probe_mask.count_ones()
    }
}

/// Draws independent per-bit errors over the header, probe and payload.
pub fn sample_bit_errors<R: Rng + ?Sized>(p: &HelperPacket, ber: f64, rng: &mut R) -> BitErrors {
    if ber <= 0.0 {
        return BitErrors::default();
    }
    let survive = |bits: usize, rng: &mut R| -> bool {
        let ok = (1.0 - ber).powi(bits as i32);
        rng.gen::<f64>() < ok
    };
    let header_bits = (WIRE_OVERHEAD - 16) * 8;
    let header = !survive(header_bits, rng);
    let mut probe_mask = 0u128;
    for k in 0..PROBE_BITS {
        if rng.gen::<f64>() < ber {
            probe_mask |= 1 << k;
        }
    }
    let payload = !p.payload.is_empty() && !survive(p.payload.len() * 8, rng);
    BitErrors { header, probe_mask, payload }
}

/// Result of one transmission at one receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    /// Overlapped another audible transmission, was cut short, or the
    /// receiver started transmitting mid-packet.
    Lost,
    /// Arrived without interference; may still carry bit errors.
    Clean(BitErrors),
}

impl RxOutcome {
    pub fn corrupted(&self) -> bool {
        match self {
            RxOutcome::Lost => true,
            RxOutcome::Clean(e) => e.any(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

#[derive(Debug, Clone)]
struct ActiveTx {
    sender: usize,
    start: SimTime,
    end: SimTime,
    truncated: bool,
}

/// Shared medium for a fixed node placement. Nodes are addressed by dense
/// index; the owner maps indices to `NodeId`s.
#[derive(Debug, Clone)]
pub struct Channel {
    link: LinkModel,
    ids: Vec<NodeId>,
    positions: Vec<GeoPosition>,
    neighbors: Vec<Vec<usize>>,
    alive: Vec<bool>,
    active: BTreeMap<TxId, ActiveTx>,
    transmitting: Vec<Option<TxId>>,
    /// Ongoing receptions per node: `(tx, lost)`.
    receiving: Vec<Vec<(TxId, bool)>>,
    next_tx: u64,
}

impl Channel {
    pub fn new(link: LinkModel, nodes: &[(NodeId, GeoPosition)]) -> Self {
        let n = nodes.len();
        let positions: Vec<GeoPosition> = nodes.iter().map(|(_, p)| *p).collect();
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && link.in_range(positions[i], positions[j]))
                    .collect()
            })
            .collect();
        Channel {
            link,
            ids: nodes.iter().map(|(id, _)| *id).collect(),
            positions,
            neighbors,
            alive: vec![true; n],
            active: BTreeMap::new(),
            transmitting: vec![None; n],
            receiving: vec![Vec::new(); n],
            next_tx: 0,
        }
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id_of(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }

    pub fn position(&self, idx: usize) -> GeoPosition {
        self.positions[idx]
    }

    /// Indices of nodes within range of `idx`, ascending.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.neighbors[idx]
    }

    pub fn is_alive(&self, idx: usize) -> bool {
        self.alive[idx]
    }

    pub fn is_transmitting(&self, idx: usize) -> bool {
        self.transmitting[idx].is_some()
    }

    /// Starts a transmission by `sender` occupying `[start, end)`.
    pub fn begin_tx(&mut self, sender: usize, start: SimTime, end: SimTime) -> TxId {
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        // half duplex: whatever the sender was hearing is lost
        for r in self.receiving[sender].iter_mut() {
            r.1 = true;
        }
        for &r in &self.neighbors[sender] {
            if !self.alive[r] || self.transmitting[r].is_some() {
                continue;
            }
            let rx = &mut self.receiving[r];
            let collided = !rx.is_empty();
            if collided {
                for other in rx.iter_mut() {
                    other.1 = true;
                }
            }
            rx.push((id, collided));
        }
        self.transmitting[sender] = Some(id);
        self.active.insert(id, ActiveTx { sender, start, end, truncated: false });
        id
    }

    /// Cuts an ongoing transmission short; every receiver loses it.
    pub fn truncate(&mut self, id: TxId, at: SimTime) {
        if let Some(tx) = self.active.get_mut(&id) {
            tx.end = tx.end.min(at);
            tx.truncated = true;
        }
    }

    pub fn tx_end(&self, id: TxId) -> Option<SimTime> {
        self.active.get(&id).map(|t| t.end)
    }

    /// Finishes a transmission; returns per-receiver outcomes in index order.
    /// Bit errors for receiver `r` are drawn from `rngs[r]`.
    pub fn end_tx<R: Rng>(
        &mut self,
        id: TxId,
        p: &HelperPacket,
        s: &TransmissionStrategy,
        rngs: &mut [R],
    ) -> Vec<(usize, RxOutcome)> {
        let Some(tx) = self.active.remove(&id) else {
            return Vec::new();
        };
        if self.transmitting[tx.sender] == Some(id) {
            self.transmitting[tx.sender] = None;
        }
        let ber = self.link.ber_for(s);
        let mut out = Vec::new();
        for &r in &self.neighbors[tx.sender] {
            let rx = &mut self.receiving[r];
            let Some(pos) = rx.iter().position(|(t, _)| *t == id) else {
                continue;
            };
            let (_, lost) = rx.remove(pos);
            if !self.alive[r] {
                continue;
            }
            let outcome = if lost || tx.truncated {
                RxOutcome::Lost
            } else {
                RxOutcome::Clean(sample_bit_errors(p, ber, &mut rngs[r]))
            };
            out.push((r, outcome));
        }
        out
    }

    /// True iff some in-range node is mid-transmission at `t`.
    pub fn cad_busy(&self, listener: usize, t: SimTime) -> bool {
        self.active.values().any(|tx| {
            tx.sender != listener && tx.start <= t && t < tx.end && self.neighbors[listener].contains(&tx.sender)
        })
    }

    /// Marks a node dead: it stops hearing and its own transmission, if any,
    /// is cut at `at`.
    pub fn kill(&mut self, idx: usize, at: SimTime) {
        self.alive[idx] = false;
        self.receiving[idx].clear();
        if let Some(id) = self.transmitting[idx] {
            self.truncate(id, at);
        }
    }

    /// Symmetry of the reachability relation; holds by construction.
    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|i| self.neighbors[i].iter().all(|&j| self.neighbors[j].contains(&i)))
    }
}

/// Two-symbol channel activity detection latency at `bitrate_bps`
/// (one symbol taken as 8 bits).
pub fn cad_latency(bitrate_bps: u32) -> SimTime {
    let us = (2u64 * 8 * 1_000_000).div_ceil(bitrate_bps.max(1) as u64);
    SimTime(us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Address, AppType, Oai, PacketKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rngs() -> Vec<ChaCha8Rng> {
        (0..4).map(|i| ChaCha8Rng::seed_from_u64(i)).collect()
    }

    fn data() -> HelperPacket {
        HelperPacket::data(AppType::Generic, NodeId(0), Address::Node(NodeId(1)), 4, 0, vec![0; 200])
    }

    fn chan(points: &[(f64, f64)], range: f64) -> Channel {
        let nodes: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (NodeId(i as u16), GeoPosition::new(x, y)))
            .collect();
        Channel::new(LinkModel { range_m: range, ..LinkModel::default() }, &nodes)
    }

    #[test]
    fn ideal_channel_delivers_in_range() {
        let mut c = chan(&[(0.0, 0.0), (100.0, 0.0)], 2000.0);
        let s = TransmissionStrategy::default();
        let id = c.begin_tx(0, SimTime::ZERO, SimTime::from_millis(408));
        let out = c.end_tx(id, &data(), &s, &mut rngs());
        assert_eq!(out, vec![(1, RxOutcome::Clean(BitErrors::default()))]);
    }

    #[test]
    fn out_of_range_hears_nothing() {
        let mut c = chan(&[(0.0, 0.0), (2500.0, 0.0)], 2000.0);
        let id = c.begin_tx(0, SimTime::ZERO, SimTime::from_millis(10));
        assert!(c.end_tx(id, &data(), &TransmissionStrategy::default(), &mut rngs()).is_empty());
    }

    #[test]
    fn cad_sees_only_in_range_senders() {
        // 0 and 2 are both 1500 m from 1 but 3000 m apart
        let mut c = chan(&[(0.0, 0.0), (1500.0, 0.0), (3000.0, 0.0), (3001.0, 0.0)], 1500.0);
        assert!(!c.cad_busy(0, SimTime::ZERO));
        let _ = c.begin_tx(1, SimTime::ZERO, SimTime::from_secs(1));
        assert!(c.cad_busy(0, SimTime::from_millis(500)));
        assert!(!c.cad_busy(0, SimTime::from_secs(1)));
        let mut c = chan(&[(0.0, 0.0), (1500.0, 0.0), (3000.0, 0.0)], 1500.0);
        let _ = c.begin_tx(2, SimTime::ZERO, SimTime::from_secs(1));
        assert!(!c.cad_busy(0, SimTime::from_millis(500)), "hidden sender must not register");
    }

    #[test]
    fn half_duplex_receiver_misses_packet() {
        let mut c = chan(&[(0.0, 0.0), (100.0, 0.0)], 2000.0);
        let s = TransmissionStrategy::default();
        let a = c.begin_tx(0, SimTime::ZERO, SimTime::from_millis(100));
        let b = c.begin_tx(1, SimTime::from_millis(10), SimTime::from_millis(50));
        let out_b = c.end_tx(b, &data(), &s, &mut rngs());
        let out_a = c.end_tx(a, &data(), &s, &mut rngs());
        // node 1 was receiving `a` when it keyed up: `a` lost at 1
        assert_eq!(out_a, vec![(1, RxOutcome::Lost)]);
        // node 0 was transmitting during all of `b`
        assert!(out_b.is_empty());
    }

    #[test]
    fn truncated_transmission_is_lost_everywhere() {
        let mut c = chan(&[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)], 2000.0);
        let id = c.begin_tx(0, SimTime::ZERO, SimTime::from_millis(100));
        c.kill(0, SimTime::from_millis(40));
        assert_eq!(c.tx_end(id), Some(SimTime::from_millis(40)));
        let out = c.end_tx(id, &data(), &TransmissionStrategy::default(), &mut rngs());
        assert!(out.iter().all(|(_, o)| *o == RxOutcome::Lost));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn energy_cost_is_power_times_airtime() {
        let s = TransmissionStrategy::default();
        let beacon = HelperPacket::control(PacketKind::Beacon, NodeId(0), Address::Broadcast, Oai::default());
        let airtime = packet_airtime(&beacon, &s).unwrap();
        assert_eq!(EnergyModel::tx_cost(&beacon, &s).unwrap(), Energy(100_000 * airtime.0));
    }

    #[test]
    fn bit_error_rate_matches_probability() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let p = data();
        let ber = 1e-3;
        let n = 4000;
        let hits = (0..n).filter(|_| sample_bit_errors(&p, ber, &mut r).payload).count();
        let expect = 1.0 - (1.0 - ber).powi(1600);
        let got = hits as f64 / n as f64;
        assert!((got - expect).abs() < 0.03, "got {got}, expected {expect}");
        let probe_flips: u32 = (0..n).map(|_| sample_bit_errors(&p, ber, &mut r).probe_mask.count_ones()).sum();
        let mean = probe_flips as f64 / n as f64;
        assert!((mean - 0.128).abs() < 0.03);
    }

    #[test]
    fn cad_latency_is_two_symbols() {
        assert_eq!(cad_latency(5000), SimTime::from_micros(3200));
    }
}
