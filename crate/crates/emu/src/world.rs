//! The emulated world: a simulator advanced on demand, translating its
//! notices into bridge frames and client requests into stack operations.

use helper_core::message::ErcCommand;
use helper_core::node::NodeEvent;
use helper_core::sim::engine::{Notice, SimError, Simulator};
use helper_core::sim::metrics::MetricsLog;
use helper_core::sim::scenario::{Scenario, ScriptedAction, ScriptedEvent};
use helper_core::{NodeId, SimTime};
use serde_json::json;

use crate::protocol::{
    parse_request, BridgeMessage, ErrorBody, MetricsBody, NodeEventBody, Op, ReceiveBody, Request, SnapshotBody,
};
use crate::BridgeError;

/// Emulated time between `metrics_tick` frames.
pub const METRICS_PERIOD: SimTime = SimTime::from_secs(1);

/// Frames produced by one world operation.
#[derive(Debug, Default, PartialEq)]
pub struct Reply {
    /// For the requesting client only.
    pub direct: Vec<BridgeMessage>,
    /// For every client.
    pub broadcast: Vec<BridgeMessage>,
}

pub struct World {
    sim: Simulator,
    tick: u64,
    next_metrics: SimTime,
    recorded: Vec<ScriptedEvent>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let mut sim = Simulator::new(scenario)?;
        sim.enable_notices();
        sim.take_notices();
        Ok(World { sim, tick: 0, next_metrics: METRICS_PERIOD, recorded: Vec::new() })
    }

    pub fn now(&self) -> SimTime {
        self.sim.now()
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Client operations applied so far, as scripted events.
    pub fn recorded(&self) -> &[ScriptedEvent] {
        &self.recorded
    }

    /// The scenario with every recorded client operation scripted in, so a
    /// plain simulator run replays this session.
    pub fn replay_scenario(&self) -> Scenario {
        let mut sc = self.sim.scenario().clone();
        sc.events.extend(self.recorded.iter().cloned());
        sc
    }

    fn stamp(&mut self, mut m: BridgeMessage) -> BridgeMessage {
        self.tick += 1;
        m.tick = Some(self.tick);
        m
    }

    pub fn snapshot(&mut self) -> BridgeMessage {
        let erc = self.sim.scenario().erc;
        let s = &self.sim.node(erc).expect("erc exists").service;
        let body = SnapshotBody {
            time_s: self.now().as_secs_f64(),
            erc,
            nodes: self.sim.snapshot(),
            resource_map: s.resource_map.values().cloned().collect(),
            pending: s.pending.clone(),
            discovered: s.discovered.iter().copied().collect(),
            distress: s.distress.clone(),
        };
        let m = BridgeMessage::new(Op::Snapshot, None, body);
        self.stamp(m)
    }

    fn metrics(&mut self) -> BridgeMessage {
        let nodes = self.sim.snapshot();
        let erc = self.sim.scenario().erc;
        let s = &self.sim.node(erc).expect("erc exists").service;
        let log = self.sim.log();
        let body = MetricsBody {
            time_s: self.now().as_secs_f64(),
            alive: nodes.iter().filter(|n| n.alive).count(),
            min_residual_j: nodes.iter().map(|n| n.residual_j).fold(f64::INFINITY, f64::min),
            residual_j: nodes.iter().map(|n| (n.id, n.residual_j)).collect(),
            sent: log.total_sent(),
            delivered: log.total_delivered(),
            discovered: s.discovered.iter().copied().collect(),
            pending: s.pending.len(),
        };
        let m = BridgeMessage::new(Op::MetricsTick, None, body);
        self.stamp(m)
    }

    fn error(&mut self, e: &BridgeError) -> BridgeMessage {
        let m = BridgeMessage::new(Op::Error, None, ErrorBody { message: e.to_string() });
        self.stamp(m)
    }

    /// Frames for the buffered notices. Queue bookkeeping and per-hop
    /// forwarding decisions stay internal.
    fn drain_notices(&mut self) -> Vec<BridgeMessage> {
        let mut out = Vec::new();
        for n in self.sim.take_notices() {
            let m = match n {
                Notice::Message { at, node, from, message } => {
                    BridgeMessage::new(Op::Receive, Some(node), ReceiveBody { time_s: at.as_secs_f64(), from, message })
                }
                Notice::Event { at, node, event } => {
                    let shown = match &event {
                        NodeEvent::Queued { .. } | NodeEvent::Forwarding(_) => false,
                        NodeEvent::Dequeued { dropped, .. } => dropped.is_some(),
                        _ => true,
                    };
                    if !shown {
                        continue;
                    }
                    let event = serde_json::to_value(&event).expect("events serialize");
                    BridgeMessage::new(Op::NodeEvent, Some(node), NodeEventBody { time_s: at.as_secs_f64(), event })
                }
                Notice::Died { at, node } => BridgeMessage::new(
                    Op::NodeEvent,
                    Some(node),
                    NodeEventBody { time_s: at.as_secs_f64(), event: json!({ "event": "died" }) },
                ),
            };
            out.push(self.stamp(m));
        }
        out
    }

    /// Runs the network up to `t`, emitting a `metrics_tick` each emulated second.
    pub fn advance_to(&mut self, t: SimTime) -> Vec<BridgeMessage> {
        let end = t.min(self.sim.scenario().duration());
        let mut out = Vec::new();
        while self.next_metrics <= end {
            self.sim.step_until(self.next_metrics);
            out.extend(self.drain_notices());
            out.push(self.metrics());
            self.next_metrics += METRICS_PERIOD;
        }
        self.sim.step_until(end);
        out.extend(self.drain_notices());
        out
    }

    fn apply(&mut self, req: Request) -> Result<Reply, BridgeError> {
        let now = self.now();
        let action = match req {
            Request::Snapshot => {
                let s = self.snapshot();
                return Ok(Reply { direct: vec![s], broadcast: Vec::new() });
            }
            Request::Send { node, message } => {
                self.sim.submit(node, message.clone())?;
                ScriptedAction::Send { node, message }
            }
            Request::Nd => {
                self.sim.erc_command(ErcCommand::Nd)?;
                ScriptedAction::Nd
            }
            Request::Alert { text } => {
                self.sim.erc_command(ErcCommand::Alert(text.clone()))?;
                ScriptedAction::Alert { text }
            }
            Request::Approve { id, verdict } => {
                self.sim.approve(id, verdict)?;
                ScriptedAction::Approve { id, verdict }
            }
        };
        self.recorded.push(ScriptedEvent { at_s: now.as_secs_f64(), action });
        // zero-delay consequences settle before the next operation, as they do on replay
        self.sim.step_until(now);
        Ok(Reply { direct: Vec::new(), broadcast: self.drain_notices() })
    }

    /// Handles one client frame. Failures become an `error` frame for the
    /// sender; the world is unchanged.
    pub fn handle_text(&mut self, text: &str) -> Reply {
        match parse_request(text).and_then(|r| self.apply(r)) {
            Ok(r) => r,
            Err(e) => Reply { direct: vec![self.error(&e)], broadcast: Vec::new() },
        }
    }

    pub fn handle(&mut self, req: Request) -> Reply {
        match self.apply(req) {
            Ok(r) => r,
            Err(e) => Reply { direct: vec![self.error(&e)], broadcast: Vec::new() },
        }
    }

    /// Closes the session's log.
    pub fn finish(self) -> MetricsLog {
        self.sim.finish()
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.sim.node(node).is_some_and(|n| n.is_alive())
    }
}
