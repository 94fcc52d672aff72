//! The six-node reference grid and the scenarios built on it.
//!
//! ```text
//!   B(0,1000) --- E(1000,1000) --- F(2000,1000)
//!      |      \/       |       \/       |
//!   A(0,0) ------ D(1000,0) ------ C(2000,0)
//! ```
//! Spacing 1000 m, range 1500 m: adjacent nodes and single-cell diagonals
//! are linked; A-F and B-C are not.

use crate::model::NodeId;
use crate::radio::LinkModel;
use crate::routing::RoutingMode;
use crate::sim::engine::{SimError, Simulator};
use crate::sim::scenario::{NodeSpec, Scenario, SessionSpec};

/// `(label, x, y)` in id order.
pub const GRID: [(&str, f64, f64); 6] = [
    ("A", 0.0, 0.0),
    ("B", 0.0, 1000.0),
    ("C", 2000.0, 0.0),
    ("D", 1000.0, 0.0),
    ("E", 1000.0, 1000.0),
    ("F", 2000.0, 1000.0),
];

/// Session endpoints, added in this order as the session count grows.
pub const SESSIONS: [(&str, &str); 4] = [("A", "F"), ("B", "C"), ("C", "E"), ("F", "A")];

pub const ERC_LABEL: &str = "F";
pub const INITIAL_ENERGY_J: f64 = 25.0;
pub const PAYLOAD_BYTES: usize = 200;
pub const INTERVAL_S: f64 = 0.1;
pub const DURATION_S: f64 = 7200.0;
pub const DELAY_PACKETS: u32 = 100;
pub const CALIBRATION_S: f64 = 300.0;

/// Node id of a grid label.
pub fn id(label: &str) -> NodeId {
    let i = GRID.iter().position(|(l, _, _)| *l == label).unwrap_or_else(|| panic!("no grid node {label}"));
    NodeId(i as u16)
}

pub fn grid_nodes() -> Vec<NodeSpec> {
    GRID.iter()
        .enumerate()
        .map(|(i, (l, x, y))| NodeSpec {
            label: Some(l.to_string()),
            energy_j: INITIAL_ENERGY_J,
            ..NodeSpec::new(i as u16, *x, *y)
        })
        .collect()
}

fn session(src: &str, dst: &str) -> SessionSpec {
    SessionSpec {
        src: id(src),
        dst: id(dst),
        payload_bytes: PAYLOAD_BYTES,
        interval_s: INTERVAL_S,
        count: None,
        duration_s: None,
        start_s: 0.0,
    }
}

/// The grid with the first `sessions` reference sessions, constant-rate and
/// unbounded, over the full experiment duration.
pub fn grid_scenario(sessions: usize, mode: RoutingMode, seed: u64) -> Scenario {
    let mut sc = Scenario::new(format!("grid-{sessions}"), grid_nodes(), id(ERC_LABEL), DURATION_S);
    sc.routing = mode;
    sc.rng_seed = seed;
    sc.sessions = SESSIONS.iter().take(sessions).map(|(s, d)| session(s, d)).collect();
    sc
}

/// Two sources, A and B, both reporting to the ERC at F.
pub fn convergecast_scenario(mode: RoutingMode, seed: u64) -> Scenario {
    let mut sc = grid_scenario(0, mode, seed);
    sc.name = "convergecast".into();
    sc.sessions = vec![session("A", ERC_LABEL), session("B", ERC_LABEL)];
    sc
}

/// Runs until the first node dies.
pub fn lifetime_scenario(sessions: usize, mode: RoutingMode, seed: u64) -> Scenario {
    let mut sc = grid_scenario(sessions, mode, seed);
    sc.name = format!("lifetime-{sessions}");
    sc.stop_at_first_death = true;
    sc
}

/// Each session sends [`DELAY_PACKETS`] packets.
pub fn delay_scenario(sessions: usize, mode: RoutingMode, seed: u64) -> Scenario {
    let mut sc = grid_scenario(sessions, mode, seed);
    sc.name = format!("delay-{sessions}");
    for s in &mut sc.sessions {
        s.count = Some(DELAY_PACKETS);
    }
    sc
}

/// Two nodes one grid step apart exchanging one saturated session on
/// `link`, with energy to spare.
pub fn calibration_scenario(link: &LinkModel, seed: u64) -> Scenario {
    let nodes = vec![
        NodeSpec { label: Some("S".into()), energy_j: 1.0e6, ..NodeSpec::new(0, 0.0, 0.0) },
        NodeSpec { label: Some("R".into()), energy_j: 1.0e6, ..NodeSpec::new(1, 1000.0, 0.0) },
    ];
    let mut sc = Scenario::new("calibration", nodes, NodeId(1), CALIBRATION_S);
    sc.link = link.clone();
    sc.rng_seed = seed;
    sc.sessions.push(SessionSpec { src: NodeId(0), dst: NodeId(1), ..session("A", "B") });
    sc
}

/// Observed point-to-point throughput on `link`, payload bits per second.
pub fn calibrate(link: &LinkModel, seed: u64) -> Result<f64, SimError> {
    let log = Simulator::run(calibration_scenario(link, seed))?;
    Ok(log.delivered_bits_by(log.end) as f64 / log.end.as_secs_f64())
}
