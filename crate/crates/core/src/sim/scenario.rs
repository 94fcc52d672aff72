//! Scenario documents: topology, link, routing mode, traffic and scripted
//! events. Versioned by `schema`; validated before any event runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::MacParams;
use crate::message::{AppMessage, Verdict};
use crate::model::{GeoPosition, NodeId, MAX_PAYLOAD};
use crate::radio::LinkModel;
use crate::routing::{RoutingConfig, RoutingMode, GOODPUT_FLOOR, QUEUE_CAPACITY};
use crate::units::{Energy, SimTime};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub x: f64,
    pub y: f64,
    /// Display-only coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default = "default_energy")]
    pub energy_j: f64,
}

fn default_energy() -> f64 {
    25.0
}

impl NodeSpec {
    pub fn new(id: u16, x: f64, y: f64) -> Self {
        NodeSpec { id: NodeId(id), label: None, x, y, lat: None, lon: None, energy_j: default_energy() }
    }

    pub fn position(&self) -> GeoPosition {
        GeoPosition::new(self.x, self.y)
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.id.to_string())
    }
}

/// Constant-rate unicast traffic between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    /// Packets to generate; unbounded when both this and `duration_s` are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub start_s: f64,
}

fn default_payload() -> usize {
    200
}

fn default_interval() -> f64 {
    0.1
}

/// MAC timing overrides; omitted fields keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MacSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_min_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_max_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beacon_period_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl MacSpec {
    pub fn params(&self) -> MacParams {
        let d = MacParams::default();
        MacParams {
            max_retries: self.max_retries.unwrap_or(d.max_retries),
            w_min: self.w_min_s.map(SimTime::from_secs_f64).unwrap_or(d.w_min),
            w_max: self.w_max_s.map(SimTime::from_secs_f64).unwrap_or(d.w_max),
            beacon_period: self.beacon_period_s.map(SimTime::from_secs_f64).unwrap_or(d.beacon_period),
            alpha: self.alpha.unwrap_or(d.alpha),
            turnaround: d.turnaround,
        }
    }
}

/// Something that happens at a fixed time during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedAction {
    /// Empties the node's battery.
    Drain { node: NodeId },
    /// A user message submitted at `node`.
    Send { node: NodeId, message: AppMessage },
    /// ERC network discovery.
    Nd,
    /// ERC alert flood.
    Alert { text: String },
    /// Operator verdict on pending resource `id`.
    Approve { id: u64, verdict: Verdict },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: ScriptedAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    pub erc: NodeId,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub routing: RoutingMode,
    #[serde(default)]
    pub sessions: Vec<SessionSpec>,
    pub duration_s: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// End the run when the first node dies.
    #[serde(default)]
    pub stop_at_first_death: bool,
    #[serde(default)]
    pub mac: MacSpec,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_floor")]
    pub goodput_floor: f64,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
}

fn default_queue() -> usize {
    QUEUE_CAPACITY
}

fn default_floor() -> f64 {
    GOODPUT_FLOOR
}

impl Scenario {
    /// An empty scenario over `nodes` with default link and MAC settings.
    pub fn new(name: impl Into<String>, nodes: Vec<NodeSpec>, erc: NodeId, duration_s: f64) -> Self {
        Scenario {
            schema: SCHEMA_VERSION,
            name: name.into(),
            nodes,
            erc,
            link: LinkModel::default(),
            routing: RoutingMode::Seek,
            sessions: Vec::new(),
            duration_s,
            rng_seed: 0,
            stop_at_first_death: false,
            mac: MacSpec::default(),
            queue_capacity: QUEUE_CAPACITY,
            goodput_floor: GOODPUT_FLOOR,
            events: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Node id for a label such as `"A"`.
    pub fn by_label(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.label.as_deref() == Some(label)).map(|n| n.id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.nodes.is_empty() {
            return invalid("scenario has no nodes");
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.0 == NodeId::BROADCAST_RAW {
                return invalid(format!("node id {} is reserved", n.id.0));
            }
            if !ids.insert(n.id) {
                return invalid(format!("duplicate node id {}", n.id.0));
            }
            if !n.position().is_finite() {
                return invalid(format!("node {} has a non-finite position", n.id.0));
            }
            if !(n.energy_j.is_finite() && n.energy_j > 0.0) {
                return invalid(format!("node {} needs positive energy_j", n.id.0));
            }
        }
        if !ids.contains(&self.erc) {
            return invalid(format!("erc {} is not a node", self.erc.0));
        }
        self.link.validate().map_err(|e| ScenarioError::Invalid(format!("link: {e}")))?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration_s must be positive");
        }
        for (i, s) in self.sessions.iter().enumerate() {
            if s.src == s.dst {
                return invalid(format!("session {i}: src equals dst"));
            }
            for end in [s.src, s.dst] {
                if !ids.contains(&end) {
                    return invalid(format!("session {i}: unknown node {}", end.0));
                }
            }
            if s.payload_bytes > MAX_PAYLOAD {
                return invalid(format!("session {i}: payload_bytes exceeds {MAX_PAYLOAD}"));
            }
            if !(s.interval_s.is_finite() && s.interval_s > 0.0) {
                return invalid(format!("session {i}: interval_s must be positive"));
            }
            if s.start_s < 0.0 || !s.start_s.is_finite() {
                return invalid(format!("session {i}: start_s must be non-negative"));
            }
        }
        let mac = self.mac.params();
        if mac.w_min > mac.w_max {
            return invalid("mac: w_min_s exceeds w_max_s");
        }
        if !(0.0..=1.0).contains(&mac.alpha) {
            return invalid("mac: alpha outside [0, 1]");
        }
        if mac.beacon_period == SimTime::ZERO {
            return invalid("mac: beacon_period_s must be positive");
        }
        if self.queue_capacity == 0 {
            return invalid("queue_capacity must be positive");
        }
        if !(0.0..=1.0).contains(&self.goodput_floor) {
            return invalid("goodput_floor outside [0, 1]");
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.at_s.is_finite() && e.at_s >= 0.0) {
                return invalid(format!("event {i}: at_s must be non-negative"));
            }
            let node = match &e.action {
                ScriptedAction::Drain { node } | ScriptedAction::Send { node, .. } => Some(*node),
                _ => None,
            };
            if let Some(n) = node {
                if !ids.contains(&n) {
                    return invalid(format!("event {i}: unknown node {}", n.0));
                }
            }
            if let ScriptedAction::Send { message, .. } = &e.action {
                message.validate().map_err(|err| ScenarioError::Invalid(format!("event {i}: {err}")))?;
            }
        }
        Ok(())
    }

    pub fn initial_energy(&self, n: &NodeSpec) -> Energy {
        Energy::from_joules(n.energy_j)
    }

    /// Network-layer configuration; every node knows every position.
    pub fn routing_config(&self) -> RoutingConfig {
        let directory: BTreeMap<NodeId, GeoPosition> = self.nodes.iter().map(|n| (n.id, n.position())).collect();
        RoutingConfig {
            mode: self.routing,
            strategies: self.link.strategies.clone(),
            capacity_bps: self.link.capacity_bps,
            goodput_floor: self.goodput_floor,
            neighbor_ttl: self.mac.params().beacon_period.times(3),
            queue_capacity: self.queue_capacity,
            directory,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes() -> Scenario {
        let mut sc = Scenario::new("pair", vec![NodeSpec::new(0, 0.0, 0.0), NodeSpec::new(1, 100.0, 0.0)], NodeId(1), 10.0);
        sc.sessions.push(SessionSpec {
            src: NodeId(0),
            dst: NodeId(1),
            payload_bytes: 200,
            interval_s: 0.1,
            count: Some(5),
            duration_s: None,
            start_s: 0.0,
        });
        sc
    }

    #[test]
    fn json_round_trip() {
        let sc = two_nodes();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn rejects_bad_documents() {
        let mut sc = two_nodes();
        sc.sessions[0].dst = NodeId(0);
        assert!(matches!(sc.validate(), Err(ScenarioError::Invalid(m)) if m.contains("src equals dst")));
        let mut sc = two_nodes();
        sc.erc = NodeId(9);
        assert!(sc.validate().is_err());
        let mut sc = two_nodes();
        sc.schema = 2;
        assert!(sc.validate().is_err());
        assert!(matches!(Scenario::from_json("{\"schema\":1}"), Err(ScenarioError::Parse(_))));
        let mut sc = two_nodes();
        sc.nodes.push(NodeSpec::new(0, 5.0, 5.0));
        assert!(sc.validate().is_err());
    }

    #[test]
    fn scripted_events_parse() {
        let text = r#"{"schema":1,"nodes":[{"id":0,"x":0,"y":0}],"erc":0,"duration_s":5,
            "events":[{"at_s":1,"kind":"drain","node":0},{"at_s":2,"kind":"alert","text":"HIGH WIND"},
                      {"at_s":3,"kind":"send","node":0,"message":{"type":"LOCAL","text":"hi"}}]}"#;
        let sc = Scenario::from_json(text).unwrap();
        assert_eq!(sc.events.len(), 3);
        assert_eq!(sc.events[0].action, ScriptedAction::Drain { node: NodeId(0) });
    }

    #[test]
    fn neighbor_ttl_is_three_beacon_periods() {
        assert_eq!(two_nodes().routing_config().neighbor_ttl, SimTime::from_secs(15));
    }
}
