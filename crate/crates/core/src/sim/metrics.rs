//! Run log and the metrics derived from it.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Address, AppType, NodeId, PacketKind};
use crate::routing::{DropReason, ForwardDecision, RoutingMode};
use crate::units::{Energy, SimTime};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("link throughput calibration is missing or zero")]
    MissingCalibration,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One transmission as charged to its sender.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub at: SimTime,
    pub node: NodeId,
    pub kind: PacketKind,
    pub app_type: Option<AppType>,
    pub uid: Option<u64>,
    pub bytes: usize,
    pub cost: Energy,
    /// Cut short because the battery ran out.
    pub truncated: bool,
}

/// A DATA packet created by a node's service layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Origination {
    pub at: SimTime,
    pub node: NodeId,
    pub uid: u64,
    pub app_type: AppType,
    pub dst: Address,
    pub htl: u8,
    /// Index of the injected user message this packet came from.
    pub injection: Option<u64>,
}

/// A DATA packet handed to a node's service layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub at: SimTime,
    pub node: NodeId,
    pub uid: u64,
    pub origin: NodeId,
    pub app_type: AppType,
}

/// A user message injected into the network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Injection {
    pub id: u64,
    pub at: SimTime,
    pub node: NodeId,
    pub app_type: AppType,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropRecord {
    pub at: SimTime,
    pub session: u32,
    pub uid: u64,
    pub reason: DropReason,
}

/// Per-session counters and latencies.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SessionLog {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload_bytes: usize,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// `(delivery time, latency)` of each first delivery.
    pub deliveries: Vec<(SimTime, SimTime)>,
}

impl SessionLog {
    pub fn mean_latency(&self) -> Option<f64> {
        if self.deliveries.is_empty() {
            return None;
        }
        Some(self.deliveries.iter().map(|(_, l)| l.as_secs_f64()).sum::<f64>() / self.deliveries.len() as f64)
    }
}

/// Everything a run records. Identical scenario and seed give identical logs.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub scenario: String,
    pub mode: RoutingMode,
    pub seed: u64,
    pub duration: SimTime,
    /// Time the run actually stopped.
    pub end: SimTime,
    pub nodes: Vec<NodeId>,
    pub labels: Vec<String>,
    pub initial: Vec<Energy>,
    pub final_residual: Vec<Energy>,
    /// `(time, node index, residual after the charge)`, time-ordered.
    pub energy: Vec<(SimTime, usize, Energy)>,
    pub tx: Vec<TxRecord>,
    pub sessions: Vec<SessionLog>,
    pub drops: Vec<DropRecord>,
    pub forwarding: Vec<(SimTime, ForwardDecision)>,
    pub deaths: Vec<(SimTime, NodeId)>,
    pub originations: Vec<Origination>,
    pub deliveries: Vec<DeliveryRecord>,
    pub injections: Vec<Injection>,
    /// Energy removed without transmitting (scripted battery drain).
    pub drained: Vec<(SimTime, usize, Energy)>,
    /// Receptions lost to collisions, half duplex or truncation.
    pub lost_receptions: u64,
    /// Scripted events that could not be carried out.
    pub errors: Vec<(SimTime, String)>,
}

impl MetricsLog {
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Residual energy of node `idx` at time `t` (charges at `t` included).
    pub fn residual_at(&self, idx: usize, t: SimTime) -> Energy {
        let end = self.energy.partition_point(|(at, _, _)| *at <= t);
        self.energy[..end]
            .iter()
            .rev()
            .find(|(_, n, _)| *n == idx)
            .map(|(_, _, e)| *e)
            .unwrap_or(self.initial[idx])
    }

    /// Sum of transmission charges of node `idx`.
    pub fn tx_cost_of(&self, idx: usize) -> Energy {
        let id = self.nodes[idx];
        self.tx.iter().filter(|r| r.node == id).map(|r| r.cost).sum()
    }

    /// Energy drained from node `idx` outside transmissions.
    pub fn drained_of(&self, idx: usize) -> Energy {
        self.drained.iter().filter(|d| d.1 == idx).map(|d| d.2).sum()
    }

    /// True iff every node's consumed energy equals its charges exactly.
    pub fn energy_conserved(&self) -> bool {
        (0..self.nodes.len())
            .all(|i| self.initial[i] - self.final_residual[i] == self.tx_cost_of(i) + self.drained_of(i))
    }

    pub fn total_sent(&self) -> u64 {
        self.sessions.iter().map(|s| s.sent).sum()
    }

    pub fn total_delivered(&self) -> u64 {
        self.sessions.iter().map(|s| s.delivered).sum()
    }

    /// Session packets delivered no later than `t`.
    pub fn delivered_by(&self, t: SimTime) -> u64 {
        self.sessions.iter().map(|s| s.deliveries.iter().filter(|(at, _)| *at <= t).count() as u64).sum()
    }

    /// Session payload bits delivered no later than `t`.
    pub fn delivered_bits_by(&self, t: SimTime) -> u64 {
        self.sessions
            .iter()
            .map(|s| s.deliveries.iter().filter(|(at, _)| *at <= t).count() as u64 * s.payload_bytes as u64 * 8)
            .sum()
    }

    /// Mean end-to-end latency over all delivered session packets, seconds.
    pub fn mean_delay(&self) -> Option<f64> {
        let all: Vec<f64> = self.sessions.iter().flat_map(|s| s.deliveries.iter().map(|(_, l)| l.as_secs_f64())).collect();
        (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
    }

    /// `(time, residual)` of every change in the network minimum.
    pub fn min_residual_series(&self) -> Vec<(SimTime, Energy)> {
        let mut cur = self.initial.clone();
        let mut out = vec![(SimTime::ZERO, cur.iter().copied().min().unwrap_or_default())];
        for &(t, i, e) in &self.energy {
            cur[i] = e;
            let m = cur.iter().copied().min().unwrap_or_default();
            if m != out.last().unwrap().1 {
                out.push((t, m));
            }
        }
        out
    }

    /// Writes the run as CSV files into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["metric", "value"])?;
        for (k, v) in self.summary() {
            w.write_record([k, v])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("sessions.csv"))?;
        w.write_record(["session", "src", "dst", "sent", "delivered", "dropped", "mean_delay_s"])?;
        for (i, s) in self.sessions.iter().enumerate() {
            w.write_record([
                i.to_string(),
                s.src.0.to_string(),
                s.dst.0.to_string(),
                s.sent.to_string(),
                s.delivered.to_string(),
                s.dropped.to_string(),
                s.mean_latency().map(|d| format!("{d:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("energy.csv"))?;
        w.write_record(["time_s", "node", "residual_j"])?;
        for (i, e) in self.initial.iter().enumerate() {
            w.write_record(["0.000000".to_string(), self.labels[i].clone(), format!("{:.9}", e.as_joules())])?;
        }
        for (t, i, e) in &self.energy {
            w.write_record([format!("{:.6}", t.as_secs_f64()), self.labels[*i].clone(), format!("{:.9}", e.as_joules())])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("deliveries.csv"))?;
        w.write_record(["session", "delivered_s", "latency_s"])?;
        for (i, s) in self.sessions.iter().enumerate() {
            for (t, l) in &s.deliveries {
                w.write_record([i.to_string(), format!("{:.6}", t.as_secs_f64()), format!("{:.6}", l.as_secs_f64())])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("forwarding.csv"))?;
        w.write_record(["time_s", "node", "next_hop", "dest", "q_i", "q_j", "d_is", "d_js", "utility"])?;
        for (t, d) in &self.forwarding {
            w.write_record([
                format!("{:.6}", t.as_secs_f64()),
                d.node.0.to_string(),
                d.next_hop.0.to_string(),
                d.dest.0.to_string(),
                d.q_i.to_string(),
                d.q_j.to_string(),
                format!("{:.3}", d.d_is),
                format!("{:.3}", d.d_js),
                format!("{:.6}", d.utility),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Headline numbers as `(metric, value)` pairs.
    pub fn summary(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("scenario".to_string(), self.scenario.clone()),
            ("routing".into(), self.mode.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("end_s".into(), format!("{:.6}", self.end.as_secs_f64())),
            ("network_lifetime_s".into(), format!("{:.6}", network_lifetime(self).as_secs_f64())),
            ("sent".into(), self.total_sent().to_string()),
            ("delivered".into(), self.total_delivered().to_string()),
            ("delivered_within_lifetime".into(), self.delivered_by(network_lifetime(self)).to_string()),
            ("mean_delay_s".into(), self.mean_delay().map(|d| format!("{d:.6}")).unwrap_or_default()),
            ("transmissions".into(), self.tx.len().to_string()),
            ("lost_receptions".into(), self.lost_receptions.to_string()),
            ("min_residual_j".into(), format!("{:.9}", min_residual(self, self.end).as_joules())),
        ];
        for (label, e) in self.labels.iter().zip(&self.final_residual) {
            v.push((format!("residual_j[{label}]"), format!("{:.9}", e.as_joules())));
        }
        v
    }

    /// Writes the summary as JSON lines to `w`.
    pub fn write_summary_json(&self, mut w: impl Write) -> std::io::Result<()> {
        let map: serde_json::Map<String, serde_json::Value> =
            self.summary().into_iter().map(|(k, v)| (k, serde_json::Value::String(v))).collect();
        writeln!(w, "{}", serde_json::Value::Object(map))
    }
}

/// Minimum residual energy over all nodes at time `t`.
pub fn min_residual(log: &MetricsLog, t: SimTime) -> Energy {
    (0..log.nodes.len()).map(|i| log.residual_at(i, t)).min().unwrap_or_default()
}

/// Time of the first node death, or the run duration if none died.
pub fn network_lifetime(log: &MetricsLog) -> SimTime {
    log.deaths.iter().map(|(t, _)| *t).min().unwrap_or(log.duration)
}

/// Delivered session bits per second over `[0, lifetime]`, divided by the
/// single-link throughput `th_link_bps`.
pub fn normalized_throughput(log: &MetricsLog, th_link_bps: Option<f64>) -> Result<f64, MetricsError> {
    let th_l = th_link_bps.filter(|t| *t > 0.0 && t.is_finite()).ok_or(MetricsError::MissingCalibration)?;
    let life = network_lifetime(log);
    if life == SimTime::ZERO {
        return Ok(0.0);
    }
    let th_net = log.delivered_bits_by(life) as f64 / life.as_secs_f64();
    Ok(th_net / th_l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log() -> MetricsLog {
        MetricsLog {
            nodes: vec![NodeId(0), NodeId(1)],
            labels: vec!["A".into(), "B".into()],
            initial: vec![Energy::from_joules(25.0); 2],
            final_residual: vec![Energy::from_joules(25.0); 2],
            duration: SimTime::from_secs(100),
            ..Default::default()
        }
    }

    #[test]
    fn min_residual_steps() {
        let mut l = log();
        assert_eq!(min_residual(&l, SimTime::ZERO), Energy::from_joules(25.0));
        let cost = Energy(37_120_000_000);
        l.energy.push((SimTime::from_secs(1), 1, Energy::from_joules(25.0) - cost));
        l.energy.push((SimTime::from_secs(50), 0, Energy::ZERO));
        l.deaths.push((SimTime::from_secs(50), NodeId(0)));
        assert_eq!(min_residual(&l, SimTime::from_millis(999)), Energy::from_joules(25.0));
        assert_eq!(min_residual(&l, SimTime::from_secs(1)), Energy::from_joules(25.0) - cost);
        assert_eq!(min_residual(&l, SimTime::from_secs(60)), Energy::ZERO);
        assert_eq!(network_lifetime(&l), SimTime::from_secs(50));
        assert_eq!(l.min_residual_series().len(), 3);
    }

    #[test]
    fn lifetime_defaults_to_duration() {
        assert_eq!(network_lifetime(&log()), SimTime::from_secs(100));
    }

    #[test]
    fn throughput_needs_calibration() {
        let l = log();
        assert!(matches!(normalized_throughput(&l, None), Err(MetricsError::MissingCalibration)));
        assert!(matches!(normalized_throughput(&l, Some(0.0)), Err(MetricsError::MissingCalibration)));
        let mut l = log();
        l.sessions.push(SessionLog {
            src: NodeId(0),
            dst: NodeId(1),
            payload_bytes: 100,
            sent: 10,
            delivered: 10,
            dropped: 0,
            deliveries: (1..=10).map(|i| (SimTime::from_secs(i * 10), SimTime::from_secs(1))).collect(),
        });
        // 10 * 800 bits over 100 s = 80 bps
        assert!((normalized_throughput(&l, Some(160.0)).unwrap() - 0.5).abs() < 1e-12);
    }
}
