//! Real-time emulation service.
//!
//! A [`World`] advances a simulated network against the wall clock and
//! speaks a JSON protocol over WebSocket: clients inject application
//! messages and operator commands, and receive deliveries, node events and
//! per-second metrics. Every client sees the same frames in the same order.

pub mod protocol;
pub mod server;
pub mod world;

pub use protocol::{parse_request, BridgeMessage, Op, Request};
pub use server::{serve, serve_blocking};
pub use world::{Reply, World};

use helper_core::sim::engine::SimError;

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown op {0:?}")]
    UnknownOp(String),
    #[error("op {0:?} is sent by the server only")]
    ServerOnly(String),
    #[error("bad {op} body: {message}")]
    BadBody { op: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
