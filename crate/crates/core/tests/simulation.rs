use helper_core::model::{AppType, NodeId, PacketKind};
use helper_core::radio::LinkModel;
use helper_core::routing::RoutingMode;
use helper_core::sim::battery::{run_battery, BatteryConfig, Experiment};
use helper_core::sim::canonical::{self, id};
use helper_core::sim::engine::{SimError, Simulator};
use helper_core::sim::metrics::{min_residual, network_lifetime, normalized_throughput, MetricsError};
use helper_core::sim::scenario::{NodeSpec, Scenario, ScriptedAction, ScriptedEvent, SessionSpec};
use helper_core::{Energy, SimTime};

fn session(src: u16, dst: u16, count: Option<u32>) -> SessionSpec {
    SessionSpec {
        src: NodeId(src),
        dst: NodeId(dst),
        payload_bytes: 200,
        interval_s: 0.1,
        count,
        duration_s: None,
        start_s: 0.0,
    }
}

fn line(n: u16, spacing: f64, energy_j: f64) -> Vec<NodeSpec> {
    (0..n).map(|i| NodeSpec { energy_j, ..NodeSpec::new(i, spacing * i as f64, 0.0) }).collect()
}

/// Energy of sending `bytes` at `bitrate` with `watts`, computed in picojoules.
fn tx_cost(bytes: usize, bitrate: u64, watts: f64) -> Energy {
    let airtime_us = (bytes as u64 * 8 * 1_000_000).div_ceil(bitrate);
    Energy((watts * 1e6) as u64 * airtime_us)
}

#[test]
fn evaluation_parameters() {
    assert_eq!(canonical::PAYLOAD_BYTES, 200);
    assert_eq!(canonical::INTERVAL_S, 0.1);
    assert_eq!(canonical::INITIAL_ENERGY_J, 25.0);
    assert_eq!(canonical::DURATION_S, 120.0 * 60.0);
    assert_eq!(canonical::DELAY_PACKETS, 100);
    let cc = canonical::convergecast_scenario(RoutingMode::Seek, 0);
    let ends: Vec<_> = cc.sessions.iter().map(|s| (s.src, s.dst)).collect();
    assert_eq!(ends, vec![(id("A"), id("F")), (id("B"), id("F"))]);
}

#[test]
fn two_nodes_on_an_ideal_channel_deliver_everything() {
    let mut sc = Scenario::new("pair", line(2, 1000.0, 25.0), NodeId(1), 300.0);
    // below link capacity, so the queue never overflows
    sc.sessions.push(SessionSpec { interval_s: 1.0, ..session(0, 1, Some(200)) });
    let log = Simulator::run(sc).unwrap();
    assert_eq!(log.sessions[0].sent, 200);
    assert_eq!(log.sessions[0].delivered, 200);
    assert!(log.end < log.duration, "run stops once the session completes");
}

#[test]
fn malformed_scenario_is_rejected_up_front() {
    let mut sc = Scenario::new("bad", line(2, 1000.0, 25.0), NodeId(1), 60.0);
    sc.sessions.push(session(0, 0, Some(1)));
    assert!(matches!(Simulator::new(sc), Err(SimError::Scenario(_))));
    let sc = Scenario::new("bad", line(2, 1000.0, 25.0), NodeId(9), 60.0);
    assert!(Simulator::new(sc).is_err());
}

#[test]
fn min_residual_follows_energy_arithmetic() {
    let sc = canonical::grid_scenario(1, RoutingMode::Seek, 4);
    let log = Simulator::run(Scenario { duration_s: 120.0, ..sc }).unwrap();
    assert_eq!(min_residual(&log, SimTime::ZERO), Energy::from_joules(25.0));
    let first = &log.tx[0];
    let second_at = log.tx[1].at;
    assert!(second_at > first.at);
    let s = LinkModel::default().default_strategy();
    let cost = tx_cost(first.bytes, s.bitrate_bps as u64, s.tx_power_w());
    assert_eq!(first.cost, cost);
    assert_eq!(min_residual(&log, first.at), Energy::from_joules(25.0) - cost);
}

#[test]
fn min_residual_is_zero_after_first_death() {
    let log = Simulator::run(canonical::lifetime_scenario(2, RoutingMode::Greedy, 1)).unwrap();
    let (t, _) = log.deaths[0];
    assert_eq!(network_lifetime(&log), t);
    assert_eq!(log.end, t, "lifetime runs stop at the first death");
    assert_eq!(min_residual(&log, t), Energy::ZERO);
}

#[test]
fn scripted_drain_sets_lifetime() {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 0);
    sc.duration_s = 1200.0;
    sc.events.push(ScriptedEvent { at_s: 900.0, action: ScriptedAction::Drain { node: id("C") } });
    let log = Simulator::run(sc).unwrap();
    assert_eq!(network_lifetime(&log), SimTime::from_secs(900));
    assert!(log.energy_conserved());
}

#[test]
fn lifetime_without_deaths_is_duration() {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 0);
    sc.duration_s = 60.0;
    let log = Simulator::run(sc).unwrap();
    assert!(log.deaths.is_empty());
    assert_eq!(network_lifetime(&log), SimTime::from_secs(60));
}

#[test]
fn single_hop_throughput_normalizes_to_one() {
    let link = LinkModel::default();
    let th_l = canonical::calibrate(&link, 1).unwrap();
    let log = Simulator::run(canonical::calibration_scenario(&link, 2)).unwrap();
    let nt = normalized_throughput(&log, Some(th_l)).unwrap();
    assert!((nt - 1.0).abs() <= 0.05, "normalized throughput {nt}");
    assert!(matches!(normalized_throughput(&log, None), Err(MetricsError::MissingCalibration)));
}

#[test]
fn relay_chain_is_half_duplex_bound() {
    let link = LinkModel::default();
    let th_l = canonical::calibrate(&link, 1).unwrap();
    let mut sc = Scenario::new("chain", line(3, 1000.0, 1.0e6), NodeId(2), 300.0);
    sc.sessions.push(session(0, 2, None));
    let log = Simulator::run(sc).unwrap();
    assert!(log.total_delivered() > 0);
    let nt = normalized_throughput(&log, Some(th_l)).unwrap();
    assert!(nt <= 0.5, "normalized throughput {nt}");
}

#[test]
fn deliveries_respect_airtime() {
    let log = Simulator::run(canonical::delay_scenario(2, RoutingMode::Seek, 8)).unwrap();
    let bitrate = LinkModel::default().default_strategy().bitrate_bps as u64;
    for d in &log.deliveries {
        let earliest = log
            .tx
            .iter()
            .filter(|t| t.uid == Some(d.uid) && t.kind == PacketKind::Data && t.at <= d.at)
            .map(|t| t.at + SimTime((t.bytes as u64 * 8 * 1_000_000).div_ceil(bitrate)))
            .min()
            .expect("delivered packet was transmitted");
        assert!(d.at >= earliest, "uid {} delivered at {} before {}", d.uid, d.at, earliest);
    }
    for s in &log.sessions {
        assert!(s.delivered <= s.sent);
    }
    assert!(log.tx.windows(2).all(|w| w[0].at <= w[1].at));
    assert!(log.energy.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn help_reaches_erc_with_location() {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 2);
    sc.duration_s = 300.0;
    let msg = helper_core::message::AppMessage::new(AppType::Help, "trapped");
    sc.events.push(ScriptedEvent { at_s: 30.0, action: ScriptedAction::Send { node: id("A"), message: msg } });
    let mut sim = Simulator::new(sc).unwrap();
    sim.run_to_end();
    let erc = sim.node(id("F")).unwrap();
    let d = erc.service.distress.iter().find(|d| d.from == id("A")).expect("distress at ERC");
    assert_eq!(d.location, Some(canonical::grid_nodes()[0].position()));
}

#[test]
fn seek_keeps_min_residual_above_greedy_after_warmup() {
    let run = |mode| {
        let mut sc = canonical::convergecast_scenario(mode, 0);
        sc.stop_at_first_death = true;
        Simulator::run(sc).unwrap()
    };
    let (seek, greedy) = (run(RoutingMode::Seek), run(RoutingMode::Greedy));
    let horizon = network_lifetime(&seek).min(network_lifetime(&greedy));
    let warmup = SimTime::from_secs(5 * 60);
    assert!(horizon > warmup, "both networks outlive the warm-up");
    let mut t = warmup;
    while t <= horizon {
        assert!(min_residual(&seek, t) >= min_residual(&greedy, t), "at {t}");
        t += SimTime::from_secs(30);
    }
    assert!(network_lifetime(&seek) >= network_lifetime(&greedy));
}

#[test]
fn battery_counts_rows_and_writes_report() {
    let config = BatteryConfig { seeds: (0..5).collect(), th_link_bps: Some(2000.0), ..BatteryConfig::default() };
    let report = run_battery(&config).unwrap();
    let per = |exp| report.rows.iter().filter(|r| r.experiment == exp).count();
    // 2 modes x 4 session counts x 5 seeds, per metric
    assert_eq!(per(Experiment::Lifetime), 40 * 3);
    assert_eq!(per(Experiment::Delay), 40 * 2);
    assert_eq!(report.failed_rows(), 0);
    assert_eq!(report.audits.len(), 80);
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path(), true).unwrap();
    for f in ["rows.csv", "summary.csv", "audit.csv", "min_residual.svg", "lifetime.svg", "delay.svg"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let rows = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 200);
}
