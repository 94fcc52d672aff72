//! Writes the reference scenarios and battery configuration as JSON, ready
//! for `helper run`, `helper validate` and `helper battery`.
//!
//! `cargo run --example export_scenarios -- <dir>`

use std::path::PathBuf;

use helper_core::message::AppMessage;
use helper_core::sim::battery::BatteryConfig;
use helper_core::sim::canonical::{self, id};
use helper_core::sim::scenario::{ScriptedAction, ScriptedEvent};
use helper_core::{AppType, RoutingMode};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir).expect("writable directory");
    let write = |name: &str, json: String| {
        let path = dir.join(name);
        std::fs::write(&path, json + "\n").expect("writable file");
        println!("wrote {}", path.display());
    };

    let mut grid = canonical::grid_scenario(2, RoutingMode::Seek, 0);
    grid.name = "grid".into();
    grid.duration_s = 1800.0;
    write("grid.json", grid.to_json());

    write("convergecast.json", {
        let mut sc = canonical::convergecast_scenario(RoutingMode::Seek, 0);
        sc.stop_at_first_death = true;
        sc.to_json()
    });

    let mut field = canonical::grid_scenario(0, RoutingMode::Seek, 0);
    field.name = "field-exercise".into();
    field.duration_s = 600.0;
    field.events = vec![
        ScriptedEvent { at_s: 20.0, action: ScriptedAction::Nd },
        ScriptedEvent {
            at_s: 90.0,
            action: ScriptedAction::Send { node: id("A"), message: AppMessage::new(AppType::Help, "trapped") },
        },
        ScriptedEvent { at_s: 200.0, action: ScriptedAction::Alert { text: "evacuate to the school".into() } },
    ];
    write("field.json", field.to_json());

    write("battery.json", serde_json::to_string_pretty(&BatteryConfig::default()).unwrap());
}
