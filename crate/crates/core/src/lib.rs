//! HELPER emergency ad hoc network stack.
//!
//! Layers, bottom up: [`radio`] (shared LoRa-class channel), [`mac`]
//! (CSMA/CA with RTS/CTS/ACK and beacons), [`routing`] (energy-efficient
//! backpressure next-hop selection and flooding), [`message`] (emergency
//! message taxonomy). [`node`] stacks them into one node and [`sim`] runs
//! many nodes in a deterministic discrete-event simulator.

pub mod mac;
pub mod message;
pub mod model;
pub mod node;
pub mod radio;
pub mod rng;
pub mod routing;
pub mod sim;
pub mod units;

pub use model::{Address, AppType, GeoPosition, HelperPacket, NodeId, PacketKind, TransmissionStrategy};
pub use routing::RoutingMode;
pub use units::{Energy, Power, SimTime};
