//! One forwarding decision, scored both ways.
//!
//! Node I at the origin holds 12 packets for a destination 3 km east. Its
//! three neighbors trade off backlog, progress and remaining battery; the
//! backpressure utility picks one, the greedy rule picks another.

use std::collections::BTreeMap;

use helper_core::model::{distance, NeighborEntry};
use helper_core::routing::{greedy_next_hop, seek_next_hop, utility, LocalView, RoutingConfig};
use helper_core::{GeoPosition, NodeId, RoutingMode, SimTime, TransmissionStrategy};

fn neighbor(id: u16, x: f64, y: f64, backlog: u32, residual_j: f64) -> NeighborEntry {
    NeighborEntry {
        node: NodeId(id),
        queue_backlog: backlog,
        residual_energy_j: residual_j,
        initial_energy_j: 25.0,
        goodput_bps: 4800.0,
        probe_bitrate_bps: 5000,
        position: GeoPosition { x, y },
        last_heard: SimTime::ZERO,
    }
}

fn main() {
    let dest = NodeId(9);
    let dest_pos = GeoPosition { x: 3000.0, y: 0.0 };
    let me = LocalView { id: NodeId(0), position: GeoPosition { x: 0.0, y: 0.0 }, queue_backlog: 12 };
    let neighbors = [
        // closest to the destination, but congested and nearly drained
        neighbor(1, 1000.0, 0.0, 10, 4.0),
        // less progress, idle and full
        neighbor(2, 700.0, 700.0, 1, 24.0),
        // behind us: never eligible
        neighbor(3, -800.0, 0.0, 0, 25.0),
    ];
    let cfg = RoutingConfig {
        mode: RoutingMode::Seek,
        strategies: vec![TransmissionStrategy::default()],
        capacity_bps: 5000,
        goodput_floor: 0.25,
        neighbor_ttl: SimTime::from_secs(30),
        queue_capacity: 128,
        directory: BTreeMap::from([(dest, dest_pos)]),
    };

    let s = cfg.strategies[0];
    println!("q_i = {}, d_is = {:.0} m", me.queue_backlog, distance(me.position, dest_pos));
    for j in &neighbors {
        let u = utility(&me, j, &s, dest, dest_pos, cfg.goodput_floor);
        println!(
            "  via {}: q_j = {:2}, d_js = {:5.0} m, E_r = {:4.1} J -> utility {:8.2}",
            j.node,
            j.queue_backlog,
            j.dist_to(dest_pos),
            j.residual_energy_j,
            u
        );
    }

    let hop = seek_next_hop(&me, &neighbors, &cfg, dest, dest_pos).expect("an eligible neighbor");
    println!("backpressure picks {} (normalized utility {:.3})", hop.node, hop.normalized);
    let (greedy, d) = greedy_next_hop(&me, &neighbors, dest, dest_pos).expect("a closer neighbor");
    println!("greedy picks {greedy} ({d:.0} m from the destination)");
}
