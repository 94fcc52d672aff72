//! Twenty minutes of the six-node grid with three saturated sessions, once
//! per routing mode, and the headline numbers of each run.
//!
//! `cargo run --example grid_run -- [out_dir]` also writes the CSVs.

use std::path::PathBuf;

use helper_core::sim::canonical;
use helper_core::sim::metrics::network_lifetime;
use helper_core::sim::Simulator;
use helper_core::RoutingMode;

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from);
    for mode in [RoutingMode::Seek, RoutingMode::Greedy] {
        let mut sc = canonical::grid_scenario(3, mode, 1);
        sc.duration_s = 20.0 * 60.0;
        let log = Simulator::run(sc).expect("valid scenario");
        println!(
            "{mode:>6}: sent {:5}, delivered {:5}, mean delay {:6.2} s, lifetime {}, {} transmissions",
            log.total_sent(),
            log.total_delivered(),
            log.mean_delay().unwrap_or(f64::NAN),
            network_lifetime(&log),
            log.tx.len()
        );
        for (label, e) in log.labels.iter().zip(&log.final_residual) {
            print!(" {label}={:.2}J", e.as_joules());
        }
        println!();
        if let Some(dir) = &out {
            log.write_csv(&dir.join(mode.to_string())).expect("writable output");
        }
    }
}
