//! One HELPER: MAC, network and service layers stacked over a battery.

use rand::Rng;
use serde::Serialize;

use crate::mac::{Mac, MacAction, MacEnv, MacEvent, MacParams};
use crate::message::{AppMessage, ErcCommand, Outgoing, ServiceError, ServiceState, Verdict};
use crate::model::{Address, AppType, EnergyState, GeoPosition, HelperPacket, NodeId, Oai};
use crate::routing::{self, DropReason, ForwardDecision, NetState, PacketMeta, RouteAction, RoutingConfig};
use crate::units::{Energy, SimTime};

/// Shared, read-only configuration plus the run-wide uid counter.
pub struct StackCtx<'a, R: Rng + ?Sized> {
    pub now: SimTime,
    pub cfg: &'a RoutingConfig,
    pub params: &'a MacParams,
    pub rng: &'a mut R,
    pub next_uid: &'a mut u64,
}

/// Something the engine must log or account for.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    /// The service layer created a DATA packet.
    Originated { uid: u64, app_type: AppType, dst: Address, htl: u8, seq: u16 },
    /// A copy entered this node's queues.
    Queued { uid: u64 },
    /// A copy left this node's queues; `dropped` is set unless it was sent.
    Dequeued { uid: u64, dropped: Option<DropReason> },
    /// A DATA packet was delivered to this node's service layer.
    Delivered { uid: u64, origin: NodeId, app_type: AppType, unicast: bool },
    /// A packet was refused without being queued.
    Rejected { uid: u64, reason: DropReason },
    Forwarding(ForwardDecision),
    LinkFailure { hop: NodeId },
}

/// What one stack step produced.
#[derive(Debug, Default)]
pub struct StepOutput {
    /// Transmit / StartCad / SetTimer for the engine to carry out.
    pub actions: Vec<MacAction>,
    pub events: Vec<NodeEvent>,
    /// Messages decoded for local subscribers.
    pub messages: Vec<(NodeId, AppMessage)>,
}

#[derive(Debug, Clone)]
pub struct NodeStack {
    pub id: NodeId,
    pub position: GeoPosition,
    pub energy: EnergyState,
    pub mac: Mac,
    pub net: NetState,
    pub service: ServiceState,
}

impl NodeStack {
    pub fn new(id: NodeId, position: GeoPosition, initial: Energy, erc: Option<NodeId>, queue_capacity: usize) -> Self {
        NodeStack {
            id,
            position,
            energy: EnergyState::new(initial),
            mac: Mac::new(),
            net: NetState::new(id, queue_capacity),
            service: ServiceState::new(id, erc),
        }
    }

    pub fn is_alive(&self) -> bool {
        !self.mac.is_dead()
    }

    /// OAI describing this node right now.
    pub fn oai(&self) -> Oai {
        Oai::new(self.net.queues.backlog(), &self.energy, self.position)
    }

    pub fn start<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>) -> StepOutput {
        let mut out = StepOutput::default();
        let mut env = MacEnv {
            now: ctx.now,
            me: self.id,
            position: self.position,
            energy: &self.energy,
            net: &mut self.net,
            cfg: ctx.cfg,
            params: ctx.params,
            rng: &mut *ctx.rng,
        };
        out.actions = self.mac.start(&mut env);
        out
    }

    /// Feeds one event to the MAC and carries deliveries up the stack.
    pub fn mac_step<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, ev: MacEvent) -> StepOutput {
        let mut out = StepOutput::default();
        self.run_mac(ctx, ev, &mut out);
        out
    }

    fn run_mac<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, ev: MacEvent, out: &mut StepOutput) {
        if !self.is_alive() {
            return;
        }
        let acts = {
            let mut env = MacEnv {
                now: ctx.now,
                me: self.id,
                position: self.position,
                energy: &self.energy,
                net: &mut self.net,
                cfg: ctx.cfg,
                params: ctx.params,
                rng: &mut *ctx.rng,
            };
            self.mac.step(&mut env, ev)
        };
        let mut queued = false;
        for a in acts {
            match a {
                MacAction::DeliverUp { packet, meta } => {
                    queued |= self.on_data(ctx, packet, meta, out);
                }
                MacAction::Sent { meta, .. } => out.events.push(NodeEvent::Dequeued { uid: meta.uid, dropped: None }),
                MacAction::LinkFailure { hop, dropped, .. } => {
                    out.events.push(NodeEvent::LinkFailure { hop });
                    if let Some(meta) = dropped {
                        out.events.push(NodeEvent::Dequeued { uid: meta.uid, dropped: Some(DropReason::RetriesExhausted) });
                    }
                }
                MacAction::Forwarding(d) => out.events.push(NodeEvent::Forwarding(d)),
                other => out.actions.push(other),
            }
        }
        if queued {
            self.run_mac(ctx, MacEvent::PacketQueued, out);
        }
    }

    /// Routes an inbound DATA packet. Returns true if something was queued.
    fn on_data<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut StackCtx<'_, R>,
        packet: HelperPacket,
        meta: Option<PacketMeta>,
        out: &mut StepOutput,
    ) -> bool {
        let meta = meta.unwrap_or(PacketMeta { uid: 0, session: None, created_at: ctx.now, enqueued_at: ctx.now });
        let action = routing::route(&mut self.net, self.id, self.position, ctx.cfg, packet.clone(), meta, ctx.now);
        let (deliver, queued) = match action {
            RouteAction::DeliverUp => (true, false),
            RouteAction::DeliverAndRebroadcast { .. } => (true, true),
            RouteAction::Forward { .. } => (false, true),
            RouteAction::Drop(reason) => {
                out.events.push(NodeEvent::Rejected { uid: meta.uid, reason });
                (false, false)
            }
        };
        if queued {
            out.events.push(NodeEvent::Queued { uid: meta.uid });
        }
        let mut more = false;
        if deliver {
            out.events.push(NodeEvent::Delivered {
                uid: meta.uid,
                origin: packet.origin,
                app_type: packet.app_type,
                unicast: !packet.final_dst.is_broadcast(),
            });
            let had_erc = self.service.erc.is_some();
            let (replies, msg) = self.service.on_deliver(&packet, self.position, self.energy.residual().as_joules(), ctx.now);
            if let Some(m) = msg {
                out.messages.push((packet.origin, m));
            }
            for o in replies {
                more |= self.send_outgoing(ctx, o, None, out);
            }
            if !had_erc && self.service.erc.is_some() {
                for m in self.service.take_deferred() {
                    if let Ok(outs) = self.service.dispatch(m, self.position, ctx.now) {
                        for o in outs {
                            more |= self.send_outgoing(ctx, o, None, out);
                        }
                    }
                }
            }
        }
        queued || more
    }

    /// Sequences and originates one service-layer packet.
    fn send_outgoing<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut StackCtx<'_, R>,
        o: Outgoing,
        session: Option<u32>,
        out: &mut StepOutput,
    ) -> bool {
        let seq = self.net.alloc_seq();
        let packet = o.into_packet(self.id, seq);
        self.originate_packet(ctx, packet, session, out)
    }

    fn originate_packet<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut StackCtx<'_, R>,
        packet: HelperPacket,
        session: Option<u32>,
        out: &mut StepOutput,
    ) -> bool {
        *ctx.next_uid += 1;
        let meta = PacketMeta { uid: *ctx.next_uid, session, created_at: ctx.now, enqueued_at: ctx.now };
        out.events.push(NodeEvent::Originated {
            uid: meta.uid,
            app_type: packet.app_type,
            dst: packet.final_dst,
            htl: packet.htl,
            seq: packet.seq,
        });
        if !self.is_alive() {
            out.events.push(NodeEvent::Rejected { uid: meta.uid, reason: DropReason::NodeDied });
            return false;
        }
        match routing::originate(&mut self.net, self.id, self.position, ctx.cfg, packet.clone(), meta, ctx.now) {
            RouteAction::DeliverUp => {
                // addressed to ourselves: hand straight to the service layer
                out.events.push(NodeEvent::Delivered {
                    uid: meta.uid,
                    origin: self.id,
                    app_type: packet.app_type,
                    unicast: true,
                });
                let (_, msg) = self.service.on_deliver(&packet, self.position, self.energy.residual().as_joules(), ctx.now);
                if let Some(m) = msg {
                    out.messages.push((self.id, m));
                }
                false
            }
            RouteAction::Drop(reason) => {
                out.events.push(NodeEvent::Rejected { uid: meta.uid, reason });
                false
            }
            RouteAction::DeliverAndRebroadcast { .. } | RouteAction::Forward { .. } => {
                out.events.push(NodeEvent::Queued { uid: meta.uid });
                true
            }
        }
    }

    fn kick_if<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, queued: bool, out: &mut StepOutput) {
        if queued {
            self.run_mac(ctx, MacEvent::PacketQueued, out);
        }
    }

    /// Injects a user message at this node.
    pub fn submit<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, m: AppMessage) -> Result<StepOutput, ServiceError> {
        let mut out = StepOutput::default();
        let local = m.app_type == AppType::Local;
        let outs = self.service.dispatch(m.clone(), self.position, ctx.now)?;
        if local {
            out.messages.push((self.id, m));
        }
        let mut queued = false;
        for o in outs {
            queued |= self.send_outgoing(ctx, o, None, &mut out);
        }
        self.kick_if(ctx, queued, &mut out);
        Ok(out)
    }

    /// ERC operator flood (ND, ALERT).
    pub fn erc_command<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, cmd: ErcCommand) -> Result<StepOutput, ServiceError> {
        let mut out = StepOutput::default();
        let o = self.service.erc_dispatch(cmd)?;
        let queued = self.send_outgoing(ctx, o, None, &mut out);
        self.kick_if(ctx, queued, &mut out);
        Ok(out)
    }

    /// ERC operator verdict on a pending resource report.
    pub fn approve<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut StackCtx<'_, R>,
        id: u64,
        verdict: Verdict,
    ) -> Result<StepOutput, ServiceError> {
        let mut out = StepOutput::default();
        if let Some(o) = self.service.approve_resource(id, verdict, ctx.now)? {
            let queued = self.send_outgoing(ctx, o, None, &mut out);
            self.kick_if(ctx, queued, &mut out);
        }
        Ok(out)
    }

    /// Originates one session packet of opaque payload toward `dst`.
    pub fn send_session<R: Rng + ?Sized>(
        &mut self,
        ctx: &mut StackCtx<'_, R>,
        session: u32,
        dst: NodeId,
        payload_bytes: usize,
    ) -> StepOutput {
        let mut out = StepOutput::default();
        let seq = self.net.alloc_seq();
        let p = HelperPacket::data(AppType::Generic, self.id, Address::Node(dst), crate::model::HTL_MAX, seq, vec![0; payload_bytes]);
        let queued = self.originate_packet(ctx, p, Some(session), &mut out);
        self.kick_if(ctx, queued, &mut out);
        out
    }

    /// Originates the setup flood announcing `erc`.
    pub fn send_setup<R: Rng + ?Sized>(&mut self, ctx: &mut StackCtx<'_, R>, erc: NodeId) -> StepOutput {
        let mut out = StepOutput::default();
        let o = Outgoing {
            app_type: AppType::Generic,
            dst: Address::Broadcast,
            htl: crate::model::HTL_MAX,
            payload: crate::message::setup_payload(erc),
        };
        let queued = self.send_outgoing(ctx, o, None, &mut out);
        self.kick_if(ctx, queued, &mut out);
        out
    }

    /// Enters DEAD and discards every queued copy.
    pub fn die(&mut self) -> Vec<NodeEvent> {
        self.mac.kill();
        self.net
            .queues
            .drain_all()
            .into_iter()
            .map(|qp| NodeEvent::Dequeued { uid: qp.meta.uid, dropped: Some(DropReason::NodeDied) })
            .collect()
    }
}
