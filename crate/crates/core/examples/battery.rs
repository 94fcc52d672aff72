//! A reduced routing comparison: three seeds over one to four sessions,
//! reported as means and written as CSV and SVG.
//!
//! `cargo run --release --example battery -- [out_dir]`

use std::path::PathBuf;

use helper_core::sim::battery::{self as metric, run_battery, BatteryConfig, Experiment};

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "battery-example".into()));
    let config = BatteryConfig { seeds: vec![0, 1, 2], ..BatteryConfig::default() };
    let report = run_battery(&config).expect("battery runs");
    println!("link throughput {:.1} bps", report.th_link_bps);
    println!("{:>2} {:>22} {:>22} {:>22}", "k", "lifetime s (seek/gr)", "norm. thr (seek/gr)", "delay s (seek/gr)");
    for k in config.session_counts.iter().copied() {
        let pair = |exp, m| {
            let s = report.mean(exp, k, "seek", m).unwrap_or(f64::NAN);
            let g = report.mean(exp, k, "greedy", m).unwrap_or(f64::NAN);
            format!("{s:.3}/{g:.3}")
        };
        println!(
            "{k:>2} {:>22} {:>22} {:>22}",
            pair(Experiment::Lifetime, metric::LIFETIME_S),
            pair(Experiment::Lifetime, metric::NORMALIZED_THROUGHPUT),
            pair(Experiment::Delay, metric::MEAN_DELAY_S)
        );
    }
    report.write(&out, true).expect("writable output");
    println!("report in {}", out.display());
}
