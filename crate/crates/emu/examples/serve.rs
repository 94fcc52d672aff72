//! Serves the six-node grid at ten times real time on ws://127.0.0.1:8765.
//!
//! Try it with any WebSocket client:
//! ```text
//! {"op":"nd"}
//! {"op":"send","node":0,"body":{"type":"HELP","text":"trapped"}}
//! {"op":"alert","body":{"text":"evacuate"}}
//! ```

use helper_core::sim::canonical;
use helper_core::RoutingMode;
use helper_emu::{serve_blocking, World};

fn main() {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 0);
    sc.duration_s = 24.0 * 3600.0;
    let world = World::new(sc).expect("valid scenario");
    let addr = "127.0.0.1:8765".parse().unwrap();
    println!("listening on ws://{addr}");
    if let Err(e) = serve_blocking(addr, world, 10.0) {
        eprintln!("serve: {e}");
        std::process::exit(1);
    }
}
