//! Service layer: the emergency message taxonomy, translation between
//! application messages and DATA packets, and ERC-side state (discovery,
//! distress, resource approval).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Address, AppType, GeoPosition, HelperPacket, NodeId, HELP_BROADCAST_HTL, HTL_MAX};
use crate::units::SimTime;

/// Longest message text in bytes.
pub const MAX_TEXT: usize = 200;
/// Longest display name in bytes.
pub const MAX_USER: usize = 32;
/// Grid used to key the resource map, meters.
pub const RESOURCE_GRID_M: f64 = 10.0;

const SETUP_MAGIC: &[u8; 4] = b"HSET";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ResourceKind {
    Water,
    Food,
    Gas,
    Medicine,
    Internet,
    Electricity,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 6] = [
        ResourceKind::Water,
        ResourceKind::Food,
        ResourceKind::Gas,
        ResourceKind::Medicine,
        ResourceKind::Internet,
        ResourceKind::Electricity,
    ];
}

/// App-facing message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMessage {
    #[serde(rename = "type")]
    pub app_type: AppType,
    #[serde(default)]
    pub origin_user: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPosition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_kind: Option<ResourceKind>,
    /// Reporting node's residual energy (HELPER_UPDATE only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_j: Option<f32>,
}

impl AppMessage {
    pub fn new(app_type: AppType, text: impl Into<String>) -> Self {
        AppMessage {
            app_type,
            origin_user: String::new(),
            text: text.into(),
            location: None,
            resource_kind: None,
            energy_j: None,
        }
    }

    pub fn with_user(mut self, user: impl Into<String>) -> Self {
        self.origin_user = user.into();
        self
    }

    pub fn at(mut self, location: GeoPosition) -> Self {
        self.location = Some(location);
        self
    }

    pub fn resource(mut self, kind: ResourceKind) -> Self {
        self.resource_kind = Some(kind);
        self
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.text.len() > MAX_TEXT {
            return Err(ServiceError::Invalid(format!("text is {} bytes, limit {MAX_TEXT}", self.text.len())));
        }
        if self.origin_user.len() > MAX_USER {
            return Err(ServiceError::Invalid(format!("user name exceeds {MAX_USER} bytes")));
        }
        if matches!(self.app_type, AppType::Resource | AppType::ResourceUpdate)
            && (self.resource_kind.is_none() || self.location.is_none())
        {
            return Err(ServiceError::Invalid("resource messages need resource_kind and location".into()));
        }
        if let Some(p) = self.location {
            if !p.is_finite() {
                return Err(ServiceError::Invalid("location must be finite".into()));
            }
        }
        Ok(())
    }

    /// Compact binary form carried as DATA payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut flags = 0u8;
        if self.location.is_some() {
            flags |= 1;
        }
        if self.resource_kind.is_some() {
            flags |= 2;
        }
        if self.energy_j.is_some() {
            flags |= 4;
        }
        let mut out = vec![flags, self.origin_user.len() as u8];
        out.extend_from_slice(self.origin_user.as_bytes());
        out.push(self.text.len() as u8);
        out.extend_from_slice(self.text.as_bytes());
        if let Some(p) = self.location {
            out.extend_from_slice(&(p.x as f32).to_le_bytes());
            out.extend_from_slice(&(p.y as f32).to_le_bytes());
        }
        if let Some(k) = self.resource_kind {
            out.push(ResourceKind::ALL.iter().position(|&r| r == k).unwrap() as u8);
        }
        if let Some(e) = self.energy_j {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out
    }

    pub fn decode(app_type: AppType, buf: &[u8]) -> Option<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Option<&[u8]> {
            let s = buf.get(pos..pos + n)?;
            pos += n;
            Some(s)
        };
        let flags = take(1)?[0];
        let ulen = take(1)?[0] as usize;
        let user = String::from_utf8(take(ulen)?.to_vec()).ok()?;
        let tlen = take(1)?[0] as usize;
        let text = String::from_utf8(take(tlen)?.to_vec()).ok()?;
        let f32_at = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let location = if flags & 1 != 0 {
            let b = take(8)?;
            Some(GeoPosition::new(f32_at(&b[0..4]) as f64, f32_at(&b[4..8]) as f64))
        } else {
            None
        };
        let resource_kind = if flags & 2 != 0 { Some(*ResourceKind::ALL.get(take(1)?[0] as usize)?) } else { None };
        let energy_j = if flags & 4 != 0 { Some(f32_at(take(4)?)) } else { None };
        if pos != buf.len() {
            return None;
        }
        Some(AppMessage { app_type, origin_user: user, text, location, resource_kind, energy_j })
    }
}

/// Payload of the setup flood announcing the ERC.
pub fn setup_payload(erc: NodeId) -> Vec<u8> {
    let mut v = SETUP_MAGIC.to_vec();
    v.extend_from_slice(&erc.0.to_le_bytes());
    v
}

pub fn parse_setup(payload: &[u8]) -> Option<NodeId> {
    (payload.len() == 6 && &payload[..4] == SETUP_MAGIC).then(|| NodeId(u16::from_le_bytes([payload[4], payload[5]])))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("operation is reserved for the ERC")]
    NotErc,
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("no pending resource with id {0}")]
    UnknownPending(u64),
}

/// Operator verdict on a reported resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Reject,
}

/// ERC-originated flood contents.
#[derive(Debug, Clone, PartialEq)]
pub enum ErcCommand {
    Nd,
    Alert(String),
    ResourceUpdate(AppMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingResource {
    pub id: u64,
    pub from: NodeId,
    pub message: AppMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceEntry {
    pub kind: ResourceKind,
    pub location: GeoPosition,
    pub text: String,
    pub updated_at: SimTime,
}

/// What a node learned from the last report of another node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeReport {
    pub position: Option<GeoPosition>,
    pub energy_j: Option<f32>,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distress {
    pub from: NodeId,
    pub location: Option<GeoPosition>,
    pub text: String,
    pub at: SimTime,
}

/// A message handed to local subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub at: SimTime,
    pub from: NodeId,
    pub message: AppMessage,
}

/// A DATA packet requested by the service layer, before sequencing.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub app_type: AppType,
    pub dst: Address,
    pub htl: u8,
    pub payload: Vec<u8>,
}

impl Outgoing {
    pub fn into_packet(self, origin: NodeId, seq: u16) -> HelperPacket {
        HelperPacket::data(self.app_type, origin, self.dst, self.htl, seq, self.payload)
    }
}

/// Per-node service state. ERC-only fields stay empty elsewhere.
#[derive(Debug, Clone, Default)]
pub struct ServiceState {
    me: Option<NodeId>,
    pub erc: Option<NodeId>,
    pub deferred: Vec<AppMessage>,
    pub inbox: Vec<Delivery>,
    pub resource_map: BTreeMap<(ResourceKind, i64, i64), ResourceEntry>,
    pub discovered: BTreeSet<NodeId>,
    pub reports: BTreeMap<NodeId, NodeReport>,
    pub pending: Vec<PendingResource>,
    pub distress: Vec<Distress>,
    /// Contents approved by the operator, in approval order.
    pub approved: Vec<AppMessage>,
    next_pending: u64,
}

/// Resource-map key: kind plus the location snapped to the grid.
pub fn resource_key(kind: ResourceKind, at: GeoPosition) -> (ResourceKind, i64, i64) {
    (kind, (at.x / RESOURCE_GRID_M).round() as i64, (at.y / RESOURCE_GRID_M).round() as i64)
}

impl ServiceState {
    pub fn new(me: NodeId, erc: Option<NodeId>) -> Self {
        ServiceState { me: Some(me), erc, ..Default::default() }
    }

    pub fn me(&self) -> NodeId {
        self.me.expect("service bound to a node")
    }

    pub fn is_erc(&self) -> bool {
        self.erc == self.me
    }

    /// Translates a user message into DATA packets. HELP and RESOURCE are
    /// deferred while the ERC is unknown.
    pub fn dispatch(&mut self, mut m: AppMessage, here: GeoPosition, now: SimTime) -> Result<Vec<Outgoing>, ServiceError> {
        m.validate()?;
        if m.app_type == AppType::Help && m.location.is_none() {
            m.location = Some(here);
        }
        match m.app_type {
            AppType::Local => {
                self.inbox.push(Delivery { at: now, from: self.me(), message: m });
                Ok(Vec::new())
            }
            AppType::Neighborhood => Ok(vec![Outgoing {
                app_type: AppType::Neighborhood,
                dst: Address::Broadcast,
                htl: 1,
                payload: m.encode(),
            }]),
            AppType::Help | AppType::Resource => {
                let Some(erc) = self.erc else {
                    self.deferred.push(m);
                    return Ok(Vec::new());
                };
                let payload = m.encode();
                let mut out = vec![Outgoing { app_type: m.app_type, dst: Address::Node(erc), htl: HTL_MAX, payload: payload.clone() }];
                if m.app_type == AppType::Help {
                    out.push(Outgoing { app_type: AppType::Help, dst: Address::Broadcast, htl: HELP_BROADCAST_HTL, payload });
                }
                Ok(out)
            }
            AppType::Generic => Ok(vec![Outgoing { app_type: AppType::Generic, dst: Address::Broadcast, htl: 1, payload: m.encode() }]),
            AppType::Nd | AppType::Alert | AppType::ResourceUpdate | AppType::HelperUpdate => {
                Err(ServiceError::Invalid(format!("{:?} is not a user message", m.app_type)))
            }
        }
    }

    /// ERC floods: ND, ALERT and RESOURCE_UPDATE, each at maximum HTL.
    pub fn erc_dispatch(&mut self, cmd: ErcCommand) -> Result<Outgoing, ServiceError> {
        if !self.is_erc() {
            return Err(ServiceError::NotErc);
        }
        let m = match cmd {
            ErcCommand::Nd => AppMessage::new(AppType::Nd, ""),
            ErcCommand::Alert(text) => AppMessage::new(AppType::Alert, text),
            ErcCommand::ResourceUpdate(mut m) => {
                m.app_type = AppType::ResourceUpdate;
                if !self.approved.contains(&m) {
                    return Err(ServiceError::Invalid("resource update without operator approval".into()));
                }
                m
            }
        };
        m.validate()?;
        Ok(Outgoing { app_type: m.app_type, dst: Address::Broadcast, htl: HTL_MAX, payload: m.encode() })
    }

    /// Reply to a network discovery flood.
    pub fn on_nd(&self, here: GeoPosition, energy_j: f64) -> Option<Outgoing> {
        let erc = self.erc?;
        if erc == self.me() {
            return None;
        }
        let mut m = AppMessage::new(AppType::HelperUpdate, "").at(here);
        m.energy_j = Some(energy_j as f32);
        Some(Outgoing { app_type: AppType::HelperUpdate, dst: Address::Node(erc), htl: HTL_MAX, payload: m.encode() })
    }

    /// Operator decision on a pending resource. Approval floods a
    /// RESOURCE_UPDATE; rejection discards it.
    pub fn approve_resource(&mut self, id: u64, verdict: Verdict, now: SimTime) -> Result<Option<Outgoing>, ServiceError> {
        if !self.is_erc() {
            return Err(ServiceError::NotErc);
        }
        let idx = self.pending.iter().position(|p| p.id == id).ok_or(ServiceError::UnknownPending(id))?;
        let p = self.pending.remove(idx);
        match verdict {
            Verdict::Reject => Ok(None),
            Verdict::Approve => {
                let mut m = p.message;
                m.app_type = AppType::ResourceUpdate;
                self.approved.push(m.clone());
                self.apply_resource(&m, now);
                self.erc_dispatch(ErcCommand::ResourceUpdate(m)).map(Some)
            }
        }
    }

    /// Takes deferred messages once the ERC is known.
    pub fn take_deferred(&mut self) -> Vec<AppMessage> {
        if self.erc.is_none() {
            return Vec::new();
        }
        std::mem::take(&mut self.deferred)
    }

    fn apply_resource(&mut self, m: &AppMessage, now: SimTime) {
        if let (Some(kind), Some(at)) = (m.resource_kind, m.location) {
            self.resource_map.insert(
                resource_key(kind, at),
                ResourceEntry { kind, location: at, text: m.text.clone(), updated_at: now },
            );
        }
    }

    /// Handles a DATA packet delivered up by routing. Returns what the
    /// service wants sent in response and the decoded message, if any.
    pub fn on_deliver(
        &mut self,
        p: &HelperPacket,
        here: GeoPosition,
        energy_j: f64,
        now: SimTime,
    ) -> (Vec<Outgoing>, Option<AppMessage>) {
        let mut out = Vec::new();
        if p.app_type == AppType::Generic {
            if let Some(erc) = parse_setup(&p.payload) {
                self.erc = Some(erc);
            }
            return (out, None);
        }
        let Some(m) = AppMessage::decode(p.app_type, &p.payload) else {
            return (out, None);
        };
        match p.app_type {
            AppType::Nd => {
                self.erc = Some(p.origin);
                out.extend(self.on_nd(here, energy_j));
            }
            AppType::HelperUpdate if self.is_erc() => {
                self.discovered.insert(p.origin);
                self.reports.insert(p.origin, NodeReport { position: m.location, energy_j: m.energy_j, at: now });
            }
            AppType::Help => {
                self.distress.push(Distress { from: p.origin, location: m.location, text: m.text.clone(), at: now });
            }
            AppType::Resource if self.is_erc() => {
                self.next_pending += 1;
                self.pending.push(PendingResource { id: self.next_pending, from: p.origin, message: m.clone() });
            }
            AppType::ResourceUpdate => self.apply_resource(&m, now),
            _ => {}
        }
        self.inbox.push(Delivery { at: now, from: p.origin, message: m.clone() });
        (out, Some(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn erc() -> ServiceState {
        ServiceState::new(NodeId(5), Some(NodeId(5)))
    }

    #[test]
    fn help_yields_unicast_then_vicinity_broadcast() {
        let mut s = ServiceState::new(NodeId(0), Some(NodeId(5)));
        let out = s.dispatch(AppMessage::new(AppType::Help, "trapped"), GeoPosition::new(1.0, 2.0), SimTime::ZERO).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].dst, out[0].htl), (Address::Node(NodeId(5)), HTL_MAX));
        assert_eq!((out[1].dst, out[1].htl), (Address::Broadcast, 2));
        let m = AppMessage::decode(AppType::Help, &out[0].payload).unwrap();
        assert_eq!(m.location, Some(GeoPosition::new(1.0, 2.0)));
    }

    #[test]
    fn local_never_leaves_the_node() {
        let mut s = ServiceState::new(NodeId(0), Some(NodeId(5)));
        let out = s.dispatch(AppMessage::new(AppType::Local, "hi"), GeoPosition::default(), SimTime::ZERO).unwrap();
        assert!(out.is_empty());
        assert_eq!(s.inbox.len(), 1);
    }

    #[test]
    fn neighborhood_is_one_hop_broadcast() {
        let mut s = ServiceState::new(NodeId(0), None);
        let out = s.dispatch(AppMessage::new(AppType::Neighborhood, "x"), GeoPosition::default(), SimTime::ZERO).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].dst, out[0].htl), (Address::Broadcast, 1));
    }

    #[test]
    fn resource_goes_to_erc_and_help_waits_for_it() {
        let mut s = ServiceState::new(NodeId(0), None);
        let m = AppMessage::new(AppType::Help, "").at(GeoPosition::new(0.0, 0.0));
        assert!(s.dispatch(m, GeoPosition::default(), SimTime::ZERO).unwrap().is_empty());
        assert_eq!(s.deferred.len(), 1);
        assert!(s.take_deferred().is_empty());
        let setup = HelperPacket::data(AppType::Generic, NodeId(5), Address::Broadcast, 3, 0, setup_payload(NodeId(5)));
        s.on_deliver(&setup, GeoPosition::default(), 25.0, SimTime::ZERO);
        assert_eq!(s.erc, Some(NodeId(5)));
        assert_eq!(s.take_deferred().len(), 1);
        let r = AppMessage::new(AppType::Resource, "well").at(GeoPosition::new(3.0, 4.0)).resource(ResourceKind::Water);
        let out = s.dispatch(r, GeoPosition::default(), SimTime::ZERO).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].dst, out[0].htl), (Address::Node(NodeId(5)), HTL_MAX));
    }

    #[test]
    fn erc_only_operations_are_guarded() {
        let mut s = ServiceState::new(NodeId(0), Some(NodeId(5)));
        assert_eq!(s.erc_dispatch(ErcCommand::Nd), Err(ServiceError::NotErc));
        assert_eq!(s.approve_resource(1, Verdict::Approve, SimTime::ZERO), Err(ServiceError::NotErc));
        let mut e = erc();
        let o = e.erc_dispatch(ErcCommand::Alert("HIGH WIND".into())).unwrap();
        assert_eq!((o.app_type, o.dst, o.htl), (AppType::Alert, Address::Broadcast, HTL_MAX));
    }

    #[test]
    fn resource_update_requires_approval() {
        let mut e = erc();
        let m = AppMessage::new(AppType::ResourceUpdate, "").at(GeoPosition::new(1.0, 1.0)).resource(ResourceKind::Food);
        assert!(e.erc_dispatch(ErcCommand::ResourceUpdate(m)).is_err());
    }

    #[test]
    fn approval_queue_flow() {
        let mut e = erc();
        let report = AppMessage::new(AppType::Resource, "tank").at(GeoPosition::new(10.0, 20.0)).resource(ResourceKind::Water);
        let p = HelperPacket::data(AppType::Resource, NodeId(1), Address::Node(NodeId(5)), 9, 0, report.encode());
        e.on_deliver(&p, GeoPosition::default(), 25.0, SimTime::ZERO);
        let p2 = HelperPacket::data(AppType::Resource, NodeId(2), Address::Node(NodeId(5)), 9, 0, report.encode());
        e.on_deliver(&p2, GeoPosition::default(), 25.0, SimTime::ZERO);
        assert_eq!(e.pending.len(), 2);
        let id = e.pending[0].id;
        let flood = e.approve_resource(id, Verdict::Approve, SimTime::ZERO).unwrap().unwrap();
        assert_eq!(flood.app_type, AppType::ResourceUpdate);
        let m = AppMessage::decode(AppType::ResourceUpdate, &flood.payload).unwrap();
        assert_eq!((m.resource_kind, m.location), (Some(ResourceKind::Water), Some(GeoPosition::new(10.0, 20.0))));
        assert_eq!(e.pending.len(), 1);
        assert_eq!(e.resource_map.len(), 1);
        let other = e.pending[0].id;
        assert_eq!(e.approve_resource(other, Verdict::Reject, SimTime::ZERO), Ok(None));
        assert!(e.pending.is_empty());
        assert_eq!(e.approve_resource(other, Verdict::Reject, SimTime::ZERO), Err(ServiceError::UnknownPending(other)));
    }

    #[test]
    fn resource_map_is_last_writer_wins_per_cell() {
        let mut s = ServiceState::new(NodeId(0), Some(NodeId(5)));
        for (i, x) in [100.0, 102.0, 130.0].into_iter().enumerate() {
            let m = AppMessage::new(AppType::ResourceUpdate, format!("v{i}")).at(GeoPosition::new(x, 0.0)).resource(ResourceKind::Gas);
            let p = HelperPacket::data(AppType::ResourceUpdate, NodeId(5), Address::Broadcast, 1, i as u16, m.encode());
            s.on_deliver(&p, GeoPosition::default(), 25.0, SimTime::from_secs(i as u64));
        }
        assert_eq!(s.resource_map.len(), 2);
        assert_eq!(s.resource_map[&resource_key(ResourceKind::Gas, GeoPosition::new(100.0, 0.0))].text, "v1");
    }

    #[test]
    fn nd_reply_and_discovery() {
        let mut s = ServiceState::new(NodeId(1), None);
        let nd = HelperPacket::data(AppType::Nd, NodeId(5), Address::Broadcast, 16, 0, AppMessage::new(AppType::Nd, "").encode());
        let (out, _) = s.on_deliver(&nd, GeoPosition::new(7.0, 8.0), 12.5, SimTime::ZERO);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].app_type, out[0].dst, out[0].htl), (AppType::HelperUpdate, Address::Node(NodeId(5)), HTL_MAX));
        let mut e = erc();
        let upd = out[0].clone().into_packet(NodeId(1), 3);
        e.on_deliver(&upd, GeoPosition::default(), 25.0, SimTime::ZERO);
        assert!(e.discovered.contains(&NodeId(1)));
        assert_eq!(e.reports[&NodeId(1)].energy_j, Some(12.5));
    }

    #[test]
    fn text_limit_is_enforced() {
        let mut s = ServiceState::new(NodeId(0), Some(NodeId(5)));
        let long = "x".repeat(MAX_TEXT + 1);
        assert!(s.dispatch(AppMessage::new(AppType::Neighborhood, long), GeoPosition::default(), SimTime::ZERO).is_err());
    }

    #[test]
    fn largest_message_fits_a_packet() {
        let mut m = AppMessage::new(AppType::HelperUpdate, "x".repeat(MAX_TEXT))
            .with_user("u".repeat(MAX_USER))
            .at(GeoPosition::new(1.0, 2.0))
            .resource(ResourceKind::Medicine);
        m.energy_j = Some(1.0);
        let enc = m.encode();
        assert!(enc.len() <= crate::model::MAX_PAYLOAD);
        assert_eq!(AppMessage::decode(AppType::HelperUpdate, &enc), Some(m));
    }
}
