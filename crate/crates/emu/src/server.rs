//! WebSocket front end. One task owns the world; every frame it emits goes
//! through a single broadcast channel, so ticks reach each client in order.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use helper_core::SimTime;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio::time::Instant;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::BridgeMessage;
use crate::world::World;
use crate::BridgeError;

/// Wall-clock period between world advances.
const STEP: Duration = Duration::from_millis(20);
/// Frames a client may fall behind before it is disconnected.
const BACKLOG: usize = 8192;

type ClientId = u64;

enum Command {
    /// A client joined and needs its initial snapshot.
    Join(ClientId),
    Text(ClientId, String),
}

/// A frame and its audience: `None` for everyone.
#[derive(Clone)]
struct Outbound {
    to: Option<ClientId>,
    json: Arc<str>,
}

fn publish(tx: &broadcast::Sender<Outbound>, to: Option<ClientId>, frames: Vec<BridgeMessage>) {
    for m in frames {
        // no subscribers is fine
        let _ = tx.send(Outbound { to, json: m.to_json().into() });
    }
}

async fn run_world(mut world: World, time_scale: f64, mut rx: mpsc::Receiver<Command>, tx: broadcast::Sender<Outbound>) {
    let start = Instant::now();
    let t0 = world.now();
    let mut clock = tokio::time::interval(STEP);
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            cmd = rx.recv() => match cmd {
                Some(Command::Join(c)) => {
                    let s = world.snapshot();
                    publish(&tx, Some(c), vec![s]);
                }
                Some(Command::Text(c, text)) => {
                    let r = world.handle_text(&text);
                    publish(&tx, Some(c), r.direct);
                    publish(&tx, None, r.broadcast);
                }
                None => return,
            },
            _ = clock.tick() => {
                let elapsed = start.elapsed().as_secs_f64() * time_scale;
                let target = t0 + SimTime::from_secs_f64(elapsed);
                let frames = world.advance_to(target);
                publish(&tx, None, frames);
            }
        }
    }
}

async fn run_client(
    stream: TcpStream,
    id: ClientId,
    cmds: mpsc::Sender<Command>,
    mut frames: broadcast::Receiver<Outbound>,
) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else { return };
    let (mut sink, mut source) = ws.split();
    if cmds.send(Command::Join(id)).await.is_err() {
        return;
    }
    // frames before our own snapshot predate the state it describes
    let mut synced = false;
    loop {
        tokio::select! {
            incoming = source.next() => match incoming {
                Some(Ok(Message::Text(t))) => {
                    if cmds.send(Command::Text(id, t)).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Binary(b))) => {
                    let t = String::from_utf8_lossy(&b).into_owned();
                    if cmds.send(Command::Text(id, t)).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            out = frames.recv() => match out {
                Ok(o) => {
                    if !synced {
                        if o.to != Some(id) {
                            continue;
                        }
                        synced = true;
                    } else if o.to.is_some_and(|to| to != id) {
                        continue;
                    }
                    if sink.send(Message::Text(o.json.to_string())).await.is_err() {
                        return;
                    }
                }
                // a gap would break tick order; the client reconnects for a fresh snapshot
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let _ = sink.send(Message::Close(None)).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
        }
    }
}

/// Serves `world` on `listener` until the process ends. Emulated time runs
/// `time_scale` times faster than the wall clock.
pub async fn serve(listener: TcpListener, world: World, time_scale: f64) -> Result<(), BridgeError> {
    let (cmd_tx, cmd_rx) = mpsc::channel(1024);
    let (out_tx, _) = broadcast::channel(BACKLOG);
    tokio::spawn(run_world(world, time_scale, cmd_rx, out_tx.clone()));
    let mut next_id: ClientId = 0;
    loop {
        let (stream, _) = listener.accept().await?;
        next_id += 1;
        // subscribe before joining so the snapshot cannot be missed
        let frames = out_tx.subscribe();
        tokio::spawn(run_client(stream, next_id, cmd_tx.clone(), frames));
    }
}

/// Binds `addr` and serves on a fresh runtime, blocking the caller.
pub fn serve_blocking(addr: SocketAddr, world: World, time_scale: f64) -> Result<(), BridgeError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = TcpListener::bind(addr).await?;
        serve(listener, world, time_scale).await
    })
}
