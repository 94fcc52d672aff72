//! `helper`: run, compare and serve HELPER networks from the command line.

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use helper_core::radio::LinkModel;
use helper_core::routing::RoutingMode;
use helper_core::sim::battery::{self, run_battery, BatteryConfig, BatteryError};
use helper_core::sim::canonical;
use helper_core::sim::plot::{line_chart, Series};
use helper_core::sim::{MetricsLog, Scenario, Simulator};
use helper_emu::World;

const USAGE: u8 = 2;
const INVALID: u8 = 3;
const RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "helper", version, about = "Emergency ad hoc network simulator and emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Routing {
    Seek,
    Greedy,
}

impl From<Routing> for RoutingMode {
    fn from(r: Routing) -> Self {
        match r {
            Routing::Seek => RoutingMode::Seek,
            Routing::Greedy => RoutingMode::Greedy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write CSVs (and plots) to the output directory.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        routing: Option<Routing>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Run the routing comparison battery; defaults apply without a config.
    Battery {
        config: Option<PathBuf>,
        #[arg(long, default_value = "battery-out")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Measure point-to-point link throughput for a scenario's link model.
    Calibrate {
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a scenario without running it.
    Validate { scenario: PathBuf },
    /// Serve a scenario in real time over WebSocket.
    Serve {
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        time_scale: f64,
        #[arg(long, value_enum)]
        routing: Option<Routing>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// A failure and its exit code.
struct Failure(u8, String);

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(INVALID, e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure(RUNTIME, e.to_string())
}

fn load(path: &Path, routing: Option<Routing>, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut sc = Scenario::load(path).map_err(invalid)?;
    if let Some(r) = routing {
        sc.routing = r.into();
    }
    if let Some(s) = seed {
        sc.rng_seed = s;
    }
    sc.validate().map_err(invalid)?;
    Ok(sc)
}

fn run_plots(log: &MetricsLog, out: &Path) -> Result<(), Failure> {
    let mode = log.mode.to_string();
    let residual = battery::residual_curve(log).into_iter().map(|(t, e)| (t.as_secs_f64() / 60.0, e)).collect();
    line_chart(
        &out.join("min_residual.svg"),
        "Minimum residual energy",
        "time (min)",
        "energy (J)",
        &[Series { name: mode.clone(), points: residual }],
    )
    .map_err(runtime)?;
    let mut delivered: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut n = 0.0;
    let mut times: Vec<f64> =
        log.sessions.iter().flat_map(|s| s.deliveries.iter().map(|(t, _)| t.as_secs_f64() / 60.0)).collect();
    times.sort_by(f64::total_cmp);
    for t in times {
        n += 1.0;
        delivered.push((t, n));
    }
    line_chart(
        &out.join("delivered.svg"),
        "Delivered packets",
        "time (min)",
        "packets",
        &[Series { name: mode, points: delivered }],
    )
    .map_err(runtime)
}

/// Runs `command`, returning what to print on success.
fn execute(command: Command) -> Result<String, Failure> {
    let mut text = String::new();
    match command {
        Command::Run { scenario, routing, seed, out, no_plots } => {
            let sc = load(&scenario, routing, seed)?;
            let log = Simulator::run(sc).map_err(runtime)?;
            log.write_csv(&out).map_err(runtime)?;
            if !no_plots {
                run_plots(&log, &out)?;
            }
            for (k, v) in log.summary() {
                let _ = writeln!(text, "{k}\t{v}");
            }
        }
        Command::Battery { config, out, no_plots } => {
            let config = match config {
                Some(p) => BatteryConfig::load(&p).map_err(invalid)?,
                None => BatteryConfig::default(),
            };
            config.validate().map_err(invalid)?;
            let report = run_battery(&config).map_err(|e| match e {
                BatteryError::Invalid(_) => invalid(e),
                e => runtime(e),
            })?;
            report.write(&out, !no_plots).map_err(runtime)?;
            let _ = writeln!(text, "th_link_bps\t{:.3}", report.th_link_bps);
            for s in &report.summary {
                let _ = writeln!(
                    text,
                    "{}\tk={}\t{}\t{}\tmean={:.6}\tsd={:.6}\tn={}",
                    s.experiment.as_str(),
                    s.sessions,
                    s.routing,
                    s.metric,
                    s.mean,
                    s.stddev,
                    s.n
                );
            }
            let failed = report.failed_rows();
            if failed > 0 {
                return Err(runtime(format!("{failed} battery rows failed; see {}", out.join("rows.csv").display())));
            }
        }
        Command::Calibrate { scenario, seed } => {
            let link = match scenario {
                Some(p) => load(&p, None, None)?.link,
                None => LinkModel::default(),
            };
            let th = canonical::calibrate(&link, seed).map_err(runtime)?;
            let _ = writeln!(text, "th_link_bps\t{th:.3}");
        }
        Command::Validate { scenario } => {
            let sc = load(&scenario, None, None)?;
            let _ = writeln!(
                text,
                "ok\t{}\t{} nodes\t{} sessions\t{} events",
                sc.name,
                sc.nodes.len(),
                sc.sessions.len(),
                sc.events.len()
            );
        }
        Command::Serve { scenario, bind, time_scale, routing, seed } => {
            if !(time_scale.is_finite() && time_scale > 0.0) {
                return Err(Failure(USAGE, format!("--time-scale must be positive, got {time_scale}")));
            }
            let sc = match scenario {
                Some(p) => load(&p, routing, seed)?,
                None => {
                    let mut sc = canonical::grid_scenario(0, routing.map_or(RoutingMode::Seek, Into::into), seed.unwrap_or(0));
                    sc.duration_s = 24.0 * 3600.0;
                    sc
                }
            };
            let world = World::new(sc).map_err(invalid)?;
            eprintln!("serving on ws://{bind} at {time_scale}x");
            helper_emu::serve_blocking(bind, world, time_scale).map_err(runtime)?;
        }
    }
    Ok(text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.render().to_string();
            let line = first.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("helper: {line}");
            return ExitCode::from(USAGE);
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            // a closed pipe downstream is not a failure of the command
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(Failure(code, msg)) => {
            eprintln!("helper: {}", msg.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
