//! Deterministic discrete-event simulation of a HELPER network.

pub mod battery;
pub mod canonical;
pub mod engine;
pub mod metrics;
pub mod plot;
pub mod scenario;

pub use engine::{SimError, Simulator};
pub use metrics::MetricsLog;
pub use scenario::{Scenario, ScenarioError};
