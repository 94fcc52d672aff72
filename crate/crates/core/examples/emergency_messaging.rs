//! The operator loop on the grid: discovery, a distress call, a resource
//! report awaiting approval, and an alert flooded to every node.

use helper_core::message::{AppMessage, ErcCommand, ResourceKind, Verdict};
use helper_core::sim::canonical::{self, id};
use helper_core::sim::engine::Notice;
use helper_core::sim::Simulator;
use helper_core::{AppType, GeoPosition, RoutingMode, SimTime};

fn show(sim: &mut Simulator) {
    for n in sim.take_notices() {
        if let Notice::Message { at, node, from, message } = n {
            println!("  {at} {node} <- {from}: {} {:?}", serde_json::to_string(&message.app_type).unwrap(), message.text);
        }
    }
}

fn main() {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 2);
    sc.duration_s = 900.0;
    let mut sim = Simulator::new(sc).expect("valid scenario");
    sim.enable_notices();
    sim.step_until(SimTime::from_secs(15));
    sim.take_notices();

    println!("ERC starts network discovery");
    sim.erc_command(ErcCommand::Nd).unwrap();
    sim.step_until(SimTime::from_secs(120));
    show(&mut sim);

    println!("A calls for help");
    sim.submit(id("A"), AppMessage::new(AppType::Help, "trapped under debris")).unwrap();
    sim.step_until(SimTime::from_secs(180));
    show(&mut sim);

    println!("B reports drinking water");
    let water = AppMessage::new(AppType::Resource, "water tank").resource(ResourceKind::Water).at(GeoPosition { x: 40.0, y: 1010.0 });
    sim.submit(id("B"), water).unwrap();
    sim.step_until(SimTime::from_secs(300));
    show(&mut sim);
    let pending: Vec<u64> = sim.node(id("F")).unwrap().service.pending.iter().map(|p| p.id).collect();
    for p in pending {
        println!("operator approves resource #{p}");
        sim.approve(p, Verdict::Approve).unwrap();
    }

    println!("ERC floods an alert");
    sim.erc_command(ErcCommand::Alert("aftershock expected, move to open ground".into())).unwrap();
    sim.step_until(SimTime::from_secs(420));
    show(&mut sim);

    let erc = &sim.node(id("F")).unwrap().service;
    println!("discovered: {:?}", erc.discovered.iter().map(|n| n.to_string()).collect::<Vec<_>>());
    for d in &erc.distress {
        println!("distress from {} at {:?}", d.from, d.location);
    }
    for r in erc.resource_map.values() {
        println!("resource map: {}", serde_json::to_string(r).unwrap());
    }
}
