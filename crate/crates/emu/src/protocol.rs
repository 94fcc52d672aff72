//! Wire frames: one JSON object per WebSocket text frame.
//!
//! ```json
//! {"op":"send","node":0,"body":{"type":"HELP","text":"trapped"}}
//! {"op":"receive","tick":42,"node":5,"body":{"time_s":61.2,"from":0,"message":{"type":"HELP", ...}}}
//! ```
//! Server frames always carry `tick`, strictly increasing across everything
//! the server emits.

use std::collections::BTreeMap;

use helper_core::message::{AppMessage, Distress, PendingResource, ResourceEntry, Verdict};
use helper_core::sim::engine::NodeSnapshot;
use helper_core::NodeId;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::BridgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Snapshot,
    Send,
    Receive,
    Nd,
    Alert,
    Approve,
    NodeEvent,
    MetricsTick,
    Error,
}

impl Op {
    pub fn parse(s: &str) -> Option<Op> {
        serde_json::from_value(Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeMessage {
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub body: Value,
}

impl BridgeMessage {
    pub fn new(op: Op, node: Option<NodeId>, body: impl Serialize) -> Self {
        let body = serde_json::to_value(body).expect("bridge bodies serialize");
        BridgeMessage { op, tick: None, node, body }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge frames serialize")
    }
}

/// A client operation, validated.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Snapshot,
    Send { node: NodeId, message: AppMessage },
    Nd,
    Alert { text: String },
    Approve { id: u64, verdict: Verdict },
}

#[derive(Deserialize)]
struct AlertBody {
    text: String,
}

#[derive(Deserialize)]
struct ApproveBody {
    id: u64,
    verdict: Verdict,
}

/// Parses one client frame.
pub fn parse_request(text: &str) -> Result<Request, BridgeError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BridgeError::Malformed(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| BridgeError::Malformed("frame is not a JSON object".into()))?;
    let op_name = obj.get("op").and_then(Value::as_str).ok_or_else(|| BridgeError::Malformed("missing op".into()))?;
    let op = Op::parse(op_name).ok_or_else(|| BridgeError::UnknownOp(op_name.to_string()))?;
    let body = obj.get("body").cloned().unwrap_or(Value::Null);
    let bad = |e: serde_json::Error| BridgeError::BadBody { op: op_name.to_string(), message: e.to_string() };
    match op {
        Op::Snapshot => Ok(Request::Snapshot),
        Op::Nd => Ok(Request::Nd),
        Op::Send => {
            let node = obj
                .get("node")
                .cloned()
                .ok_or_else(|| BridgeError::BadBody { op: op_name.into(), message: "missing node".into() })?;
            let node: NodeId = serde_json::from_value(node).map_err(bad)?;
            let message: AppMessage = serde_json::from_value(body).map_err(bad)?;
            Ok(Request::Send { node, message })
        }
        Op::Alert => {
            let b: AlertBody = serde_json::from_value(body).map_err(bad)?;
            Ok(Request::Alert { text: b.text })
        }
        Op::Approve => {
            let b: ApproveBody = serde_json::from_value(body).map_err(bad)?;
            Ok(Request::Approve { id: b.id, verdict: b.verdict })
        }
        Op::Receive | Op::NodeEvent | Op::MetricsTick | Op::Error => Err(BridgeError::ServerOnly(op_name.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotBody {
    pub time_s: f64,
    pub erc: NodeId,
    pub nodes: Vec<NodeSnapshot>,
    pub resource_map: Vec<ResourceEntry>,
    pub pending: Vec<PendingResource>,
    pub discovered: Vec<NodeId>,
    pub distress: Vec<Distress>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceiveBody {
    pub time_s: f64,
    pub from: NodeId,
    pub message: AppMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeEventBody {
    pub time_s: f64,
    /// A node-stack event, or `{"event":"died"}`.
    pub event: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBody {
    pub time_s: f64,
    pub alive: usize,
    pub min_residual_j: f64,
    pub residual_j: BTreeMap<NodeId, f64>,
    pub sent: u64,
    pub delivered: u64,
    pub discovered: Vec<NodeId>,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use helper_core::AppType;

    #[test]
    fn parses_client_ops() {
        assert_eq!(parse_request(r#"{"op":"nd"}"#).unwrap(), Request::Nd);
        let r = parse_request(r#"{"op":"send","node":0,"body":{"type":"HELP"}}"#).unwrap();
        match r {
            Request::Send { node, message } => {
                assert_eq!(node, NodeId(0));
                assert_eq!(message.app_type, AppType::Help);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            parse_request(r#"{"op":"approve","body":{"id":3,"verdict":"approve"}}"#).unwrap(),
            Request::Approve { id: 3, verdict: Verdict::Approve }
        );
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(parse_request("{nope"), Err(BridgeError::Malformed(_))));
        assert!(matches!(parse_request("[1]"), Err(BridgeError::Malformed(_))));
        assert!(matches!(parse_request(r#"{"op":"dance"}"#), Err(BridgeError::UnknownOp(op)) if op == "dance"));
        assert!(matches!(parse_request(r#"{"op":"metrics_tick"}"#), Err(BridgeError::ServerOnly(_))));
        assert!(matches!(parse_request(r#"{"op":"send","body":{"type":"HELP"}}"#), Err(BridgeError::BadBody { .. })));
        assert!(matches!(parse_request(r#"{"op":"alert"}"#), Err(BridgeError::BadBody { .. })));
    }

    #[test]
    fn frames_omit_empty_fields() {
        let m = BridgeMessage::new(Op::Nd, None, Value::Null);
        assert_eq!(m.to_json(), r#"{"op":"nd"}"#);
    }
}
