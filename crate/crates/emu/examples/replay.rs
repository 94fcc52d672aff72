//! A scripted operator session driven through the bridge, then replayed
//! offline: the recorded session and the plain simulation agree on every
//! transmission and delivery.

use helper_core::sim::canonical;
use helper_core::sim::Simulator;
use helper_core::{RoutingMode, SimTime};
use helper_emu::{Op, World};

fn main() {
    let mut sc = canonical::grid_scenario(1, RoutingMode::Seek, 4);
    sc.duration_s = 300.0;
    let mut world = World::new(sc).expect("valid scenario");
    println!("{}", world.snapshot().to_json());

    let session = [
        (10, r#"{"op":"nd"}"#),
        (60, r#"{"op":"send","node":3,"body":{"type":"HELP","text":"stuck in the stairwell"}}"#),
        (61, r#"{"op":"warp","body":{}}"#),
        (120, r#"{"op":"alert","body":{"text":"medics en route"}}"#),
    ];
    let mut frames = 0;
    for (at, frame) in session {
        frames += world.advance_to(SimTime::from_secs(at)).len();
        let reply = world.handle_text(frame);
        for m in reply.direct.iter().filter(|m| m.op == Op::Error) {
            println!("error reply: {}", m.to_json());
        }
        frames += reply.broadcast.len();
    }
    frames += world.advance_to(SimTime::from_secs(300)).len();
    println!("{frames} frames broadcast; {} operations recorded", world.recorded().len());

    let replay = Simulator::run(world.replay_scenario()).expect("replayable");
    let live = world.finish();
    println!(
        "live: {} transmissions, {} deliveries; replay: {} transmissions, {} deliveries; identical: {}",
        live.tx.len(),
        live.deliveries.len(),
        replay.tx.len(),
        replay.deliveries.len(),
        live.tx == replay.tx && live.deliveries == replay.deliveries
    );
}
