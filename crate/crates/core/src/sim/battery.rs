//! The routing comparison battery: lifetime, throughput, delivery and delay
//! on the reference grid, over session counts, routing modes and seeds.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::LinkModel;
use crate::routing::RoutingMode;
use crate::sim::canonical;
use crate::sim::engine::Simulator;
use crate::sim::metrics::{min_residual, network_lifetime, normalized_throughput, MetricsError, MetricsLog};
use crate::sim::plot::{self, PlotError, Series};
use crate::sim::scenario::Scenario;
use crate::units::SimTime;

#[derive(Debug, Error)]
pub enum BatteryError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed battery config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid battery config: {0}")]
    Invalid(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Saturated sessions until the first node dies.
    Lifetime,
    /// A fixed number of packets per session.
    Delay,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Lifetime => "lifetime",
            Experiment::Delay => "delay",
        }
    }

    fn metrics(self) -> &'static [&'static str] {
        match self {
            Experiment::Lifetime => &[LIFETIME_S, NORMALIZED_THROUGHPUT, DELIVERED],
            Experiment::Delay => &[MEAN_DELAY_S, DELIVERED],
        }
    }
}

pub const LIFETIME_S: &str = "lifetime_s";
pub const NORMALIZED_THROUGHPUT: &str = "normalized_throughput";
pub const DELIVERED: &str = "delivered";
pub const MEAN_DELAY_S: &str = "mean_delay_s";
/// Percentage more packets delivered by SEEK than by greedy.
pub const DELIVERED_GAIN_PCT: &str = "delivered_gain_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_counts")]
    pub session_counts: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<RoutingMode>,
    #[serde(default = "default_experiments")]
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub link: LinkModel,
    /// Point-to-point throughput, bits/s; measured when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub th_link_bps: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

fn default_counts() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

fn default_modes() -> Vec<RoutingMode> {
    vec![RoutingMode::Seek, RoutingMode::Greedy]
}

fn default_experiments() -> Vec<Experiment> {
    vec![Experiment::Lifetime, Experiment::Delay]
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            seeds: default_seeds(),
            session_counts: default_counts(),
            modes: default_modes(),
            experiments: default_experiments(),
            link: LinkModel::default(),
            th_link_bps: None,
        }
    }
}

impl BatteryConfig {
    pub fn from_json(text: &str) -> Result<Self, BatteryError> {
        let c: BatteryConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, BatteryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| BatteryError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), BatteryError> {
        let bad = |m: String| Err(BatteryError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if let Some(k) = self.session_counts.iter().find(|k| !(1..=canonical::SESSIONS.len()).contains(*k)) {
            return bad(format!("session count {k} outside 1..={}", canonical::SESSIONS.len()));
        }
        if self.modes.is_empty() || self.experiments.is_empty() || self.session_counts.is_empty() {
            return bad("modes, experiments and session_counts must be non-empty".into());
        }
        if let Some(t) = self.th_link_bps {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("th_link_bps must be positive, got {t}"));
            }
        }
        self.link.validate().map_err(|e| BatteryError::Invalid(format!("link: {e}")))
    }

    /// Scenario run for one battery cell.
    pub fn scenario(&self, exp: Experiment, sessions: usize, mode: RoutingMode, seed: u64) -> Scenario {
        let mut sc = match exp {
            Experiment::Lifetime => canonical::lifetime_scenario(sessions, mode, seed),
            Experiment::Delay => canonical::delay_scenario(sessions, mode, seed),
        };
        sc.link = self.link.clone();
        sc
    }
}

/// One measured value, or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: Experiment,
    pub sessions: usize,
    pub routing: String,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: Experiment,
    pub sessions: usize,
    pub routing: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// Trace checks of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAudit {
    pub experiment: Experiment,
    pub sessions: usize,
    pub routing: RoutingMode,
    pub seed: u64,
    pub forwarding_events: usize,
    /// Forwarding events with `q_i <= q_j`.
    pub backlog_violations: usize,
    /// Forwarding events with `d_js >= d_is`.
    pub progress_violations: usize,
    /// Per node, energy spent equals transmit cost plus drains.
    pub energy_conserved: bool,
}

impl RunAudit {
    pub fn of(experiment: Experiment, sessions: usize, log: &MetricsLog) -> Self {
        let f = log.forwarding.iter().map(|(_, d)| d);
        RunAudit {
            experiment,
            sessions,
            routing: log.mode,
            seed: log.seed,
            forwarding_events: log.forwarding.len(),
            backlog_violations: f.clone().filter(|d| d.q_i <= d.q_j).count(),
            progress_violations: f.filter(|d| d.d_js >= d.d_is).count(),
            energy_conserved: log.energy_conserved(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub config: BatteryConfig,
    pub th_link_bps: f64,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
    pub audits: Vec<RunAudit>,
    /// Minimum-residual curves of the two-source run, per mode.
    pub residual_traces: Vec<(RoutingMode, Vec<(SimTime, f64)>)>,
    /// Cumulative normalized throughput of the two-source run, per mode.
    pub throughput_traces: Vec<(RoutingMode, Vec<(SimTime, f64)>)>,
}

fn measure(exp: Experiment, log: &MetricsLog, th_l: f64) -> Vec<(&'static str, Result<f64, String>)> {
    match exp {
        Experiment::Lifetime => {
            let life = network_lifetime(log);
            vec![
                (LIFETIME_S, Ok(life.as_secs_f64())),
                (NORMALIZED_THROUGHPUT, normalized_throughput(log, Some(th_l)).map_err(|e| e.to_string())),
                (DELIVERED, Ok(log.delivered_by(life) as f64)),
            ]
        }
        Experiment::Delay => vec![
            (MEAN_DELAY_S, log.mean_delay().ok_or_else(|| "no packet delivered".to_string())),
            (DELIVERED, Ok(log.total_delivered() as f64)),
        ],
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (experiment, session count, mode, seed) cell in parallel.
pub fn run_battery(config: &BatteryConfig) -> Result<BatteryReport, BatteryError> {
    config.validate()?;
    let th_l = match config.th_link_bps {
        Some(t) => t,
        None => canonical::calibrate(&config.link, config.seeds[0]).map_err(|e| BatteryError::Calibration(e.to_string()))?,
    };
    if th_l.is_nan() || th_l <= 0.0 {
        return Err(BatteryError::Calibration("measured link throughput is zero".into()));
    }
    let mut jobs = Vec::new();
    for &exp in &config.experiments {
        for &k in &config.session_counts {
            for &mode in &config.modes {
                for &seed in &config.seeds {
                    jobs.push((exp, k, mode, seed));
                }
            }
        }
    }
    let results: Vec<(Vec<Row>, Option<RunAudit>)> = jobs
        .par_iter()
        .map(|&(exp, k, mode, seed)| {
            let row = |metric: &str, r: Result<f64, String>| Row {
                experiment: exp,
                sessions: k,
                routing: mode.to_string(),
                seed,
                metric: metric.to_string(),
                value: r.as_ref().ok().copied(),
                error: r.err(),
            };
            match Simulator::run(config.scenario(exp, k, mode, seed)) {
                Ok(log) => {
                    let rows = measure(exp, &log, th_l).into_iter().map(|(m, r)| row(m, r)).collect();
                    (rows, Some(RunAudit::of(exp, k, &log)))
                }
                Err(e) => (exp.metrics().iter().map(|m| row(m, Err(e.to_string()))).collect(), None),
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for (r, a) in results {
        rows.extend(r);
        audits.extend(a);
    }
    let summary = summarize(&rows);

    let traces: Vec<(RoutingMode, Option<MetricsLog>)> = config
        .modes
        .par_iter()
        .map(|&mode| {
            let mut sc = canonical::convergecast_scenario(mode, config.seeds[0]);
            sc.link = config.link.clone();
            (mode, Simulator::run(sc).ok())
        })
        .collect();
    let mut residual_traces = Vec::new();
    let mut throughput_traces = Vec::new();
    for (mode, log) in traces {
        let Some(log) = log else { continue };
        residual_traces.push((mode, residual_curve(&log)));
        throughput_traces.push((mode, throughput_curve(&log, th_l)));
    }
    Ok(BatteryReport { config: config.clone(), th_link_bps: th_l, rows, summary, audits, residual_traces, throughput_traces })
}

/// `E_r^min(t)` in joules, sampled each minute.
pub fn residual_curve(log: &MetricsLog) -> Vec<(SimTime, f64)> {
    sample_times(log).map(|t| (t, min_residual(log, t).as_joules())).collect()
}

/// Delivered bits over `[0, t]` divided by `t * th_l`, sampled each minute.
pub fn throughput_curve(log: &MetricsLog, th_l: f64) -> Vec<(SimTime, f64)> {
    sample_times(log)
        .filter(|t| *t > SimTime::ZERO)
        .map(|t| (t, log.delivered_bits_by(t) as f64 / t.as_secs_f64() / th_l))
        .collect()
}

fn sample_times(log: &MetricsLog) -> impl Iterator<Item = SimTime> + '_ {
    let step = SimTime::from_secs(60);
    let n = log.end.0 / step.0;
    (0..=n).map(move |i| step.times(i))
}

fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Experiment, usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.value {
            groups.entry((r.experiment, r.sessions, r.routing.clone(), r.metric.clone())).or_default().push(v);
        }
    }
    let mut out: Vec<SummaryRow> = groups
        .iter()
        .map(|((e, k, m, metric), v)| {
            let (mean, stddev) = mean_std(v);
            SummaryRow { experiment: *e, sessions: *k, routing: m.clone(), metric: metric.clone(), n: v.len(), mean, stddev }
        })
        .collect();
    // seek vs greedy delivery gain, from per-mode means
    let seek = RoutingMode::Seek.to_string();
    let greedy = RoutingMode::Greedy.to_string();
    let mut gains = Vec::new();
    for s in out.iter().filter(|s| s.metric == DELIVERED && s.routing == seek && s.experiment == Experiment::Lifetime) {
        if let Some(g) = out.iter().find(|g| {
            g.metric == DELIVERED && g.routing == greedy && g.experiment == s.experiment && g.sessions == s.sessions
        }) {
            if g.mean > 0.0 {
                gains.push(SummaryRow {
                    experiment: s.experiment,
                    sessions: s.sessions,
                    routing: format!("{seek}-vs-{greedy}"),
                    metric: DELIVERED_GAIN_PCT.into(),
                    n: s.n.min(g.n),
                    mean: 100.0 * (s.mean - g.mean) / g.mean,
                    stddev: 0.0,
                });
            }
        }
    }
    out.extend(gains);
    out
}

impl BatteryReport {
    /// Mean of `metric` for one cell, if measured.
    pub fn mean(&self, exp: Experiment, sessions: usize, routing: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.experiment == exp && s.sessions == sessions && s.routing == routing && s.metric == metric)
            .map(|s| s.mean)
    }

    /// Per-seed values of `metric` for one cell, in seed order.
    pub fn values(&self, exp: Experiment, sessions: usize, mode: RoutingMode, metric: &str) -> Vec<(u64, f64)> {
        let mode = mode.to_string();
        self.rows
            .iter()
            .filter(|r| r.experiment == exp && r.sessions == sessions && r.routing == mode && r.metric == metric)
            .filter_map(|r| r.value.map(|v| (r.seed, v)))
            .collect()
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// Writes `rows.csv`, `summary.csv`, `audit.csv` and, if asked, SVG plots into `dir`.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<(), BatteryError> {
        std::fs::create_dir_all(dir).map_err(MetricsError::from)?;
        let mut w = csv::Writer::from_path(dir.join("rows.csv")).map_err(MetricsError::from)?;
        w.write_record(["experiment", "sessions", "routing", "seed", "metric", "value", "error"]).map_err(MetricsError::from)?;
        for r in &self.rows {
            w.write_record([
                r.experiment.as_str().to_string(),
                r.sessions.to_string(),
                r.routing.clone(),
                r.seed.to_string(),
                r.metric.clone(),
                r.value.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(MetricsError::from)?;
        }
        w.flush().map_err(MetricsError::from)?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(MetricsError::from)?;
        w.write_record(["experiment", "sessions", "routing", "metric", "n", "mean", "stddev"]).map_err(MetricsError::from)?;
        for s in &self.summary {
            w.write_record([
                s.experiment.as_str().to_string(),
                s.sessions.to_string(),
                s.routing.clone(),
                s.metric.clone(),
                s.n.to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.stddev),
            ])
            .map_err(MetricsError::from)?;
        }
        w.flush().map_err(MetricsError::from)?;

        let mut w = csv::Writer::from_path(dir.join("audit.csv")).map_err(MetricsError::from)?;
        for a in &self.audits {
            w.serialize(a).map_err(MetricsError::from)?;
        }
        w.flush().map_err(MetricsError::from)?;
        if plots {
            self.plot(dir)?;
        }
        Ok(())
    }

    fn by_count(&self, exp: Experiment, routing: &str, metric: &str) -> Vec<(f64, f64)> {
        self.config
            .session_counts
            .iter()
            .filter_map(|&k| self.mean(exp, k, routing, metric).map(|m| (k as f64, m)))
            .collect()
    }

    fn per_mode(&self, exp: Experiment, metric: &str) -> Vec<Series> {
        self.config
            .modes
            .iter()
            .map(|m| Series { name: m.to_string(), points: self.by_count(exp, &m.to_string(), metric) })
            .collect()
    }

    fn plot(&self, dir: &Path) -> Result<(), BatteryError> {
        let minutes = |v: &[(SimTime, f64)]| v.iter().map(|(t, y)| (t.as_secs_f64() / 60.0, *y)).collect::<Vec<_>>();
        let traces = |tr: &[(RoutingMode, Vec<(SimTime, f64)>)]| {
            tr.iter().map(|(m, v)| Series { name: m.to_string(), points: minutes(v) }).collect::<Vec<_>>()
        };
        plot::line_chart(
            &dir.join("min_residual.svg"),
            "Minimum residual energy, two sources to the ERC",
            "time (min)",
            "E_r min (J)",
            &traces(&self.residual_traces),
        )?;
        plot::line_chart(
            &dir.join("throughput_time.svg"),
            "Normalized throughput over time, two sources to the ERC",
            "time (min)",
            "normalized throughput",
            &traces(&self.throughput_traces),
        )?;
        plot::line_chart(
            &dir.join("lifetime.svg"),
            "Network lifetime",
            "sessions",
            "lifetime (s)",
            &self.per_mode(Experiment::Lifetime, LIFETIME_S),
        )?;
        plot::line_chart(
            &dir.join("throughput.svg"),
            "Normalized throughput",
            "sessions",
            "normalized throughput",
            &self.per_mode(Experiment::Lifetime, NORMALIZED_THROUGHPUT),
        )?;
        let gain = format!("{}-vs-{}", RoutingMode::Seek, RoutingMode::Greedy);
        plot::line_chart(
            &dir.join("delivered_gain.svg"),
            "Packets delivered, SEEK over greedy",
            "sessions",
            "increase (%)",
            &[Series { name: gain.clone(), points: self.by_count(Experiment::Lifetime, &gain, DELIVERED_GAIN_PCT) }],
        )?;
        plot::line_chart(
            &dir.join("delay.svg"),
            "Average delay",
            "sessions",
            "delay (s)",
            &self.per_mode(Experiment::Delay, MEAN_DELAY_S),
        )?;
        Ok(())
    }
}
