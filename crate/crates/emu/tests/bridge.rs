use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use helper_core::routing::RoutingMode;
use helper_core::sim::canonical::{self, id};
use helper_emu::{serve, World};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>;

const SCALE: f64 = 20.0;
const WAIT: Duration = Duration::from_secs(30);

async fn start() -> String {
    let mut sc = canonical::grid_scenario(0, RoutingMode::Seek, 3);
    sc.duration_s = 3600.0;
    let world = World::new(sc).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, world, SCALE));
    format!("ws://{addr}")
}

async fn connect(url: &str) -> Ws {
    connect_async(url).await.unwrap().0
}

async fn next(ws: &mut Ws) -> Value {
    loop {
        let m = tokio::time::timeout(WAIT, ws.next()).await.expect("frame in time").unwrap().unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn until(ws: &mut Ws, pred: impl Fn(&Value) -> bool) -> Value {
    loop {
        let v = next(ws).await;
        if pred(&v) {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, frame: &str) {
    ws.send(Message::Text(frame.to_string())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn clients_share_one_ordered_stream() {
    let url = start().await;
    let mut a = connect(&url).await;
    let mut b = connect(&url).await;
    let sa = next(&mut a).await;
    let sb = next(&mut b).await;
    assert_eq!(sa["op"], "snapshot");
    assert_eq!(sb["op"], "snapshot");
    assert_eq!(sa["body"]["nodes"].as_array().unwrap().len(), 6);

    let collect = |mut ws: Ws| async move {
        let mut frames = Vec::new();
        while frames.len() < 40 {
            frames.push(next(&mut ws).await);
        }
        frames
    };
    let (fa, fb) = tokio::join!(collect(a), collect(b));
    for f in [&fa, &fb] {
        let ticks: Vec<u64> = f.iter().map(|v| v["tick"].as_u64().unwrap()).collect();
        assert!(ticks.windows(2).all(|w| w[0] < w[1]), "{ticks:?}");
    }
    // after both snapshots, broadcast frames are identical
    let from = sa["tick"].as_u64().unwrap().max(sb["tick"].as_u64().unwrap());
    let common = |f: &[Value]| f.iter().filter(|v| v["tick"].as_u64().unwrap() > from).cloned().collect::<Vec<_>>();
    let (ca, cb) = (common(&fa), common(&fb));
    let n = ca.len().min(cb.len());
    assert!(n > 20);
    assert_eq!(ca[..n], cb[..n]);
    assert!(ca.iter().any(|v| v["op"] == "metrics_tick"));
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_do_not_close_the_connection() {
    let url = start().await;
    let mut ws = connect(&url).await;
    next(&mut ws).await;
    send(&mut ws, "{broken").await;
    let e = until(&mut ws, |v| v["op"] == "error").await;
    assert!(e["body"]["message"].as_str().unwrap().contains("malformed"));
    send(&mut ws, r#"{"op":"teleport"}"#).await;
    let e = until(&mut ws, |v| v["op"] == "error").await;
    assert!(e["body"]["message"].as_str().unwrap().contains("teleport"));
    send(&mut ws, r#"{"op":"snapshot"}"#).await;
    until(&mut ws, |v| v["op"] == "snapshot").await;
}

#[tokio::test(flavor = "multi_thread")]
async fn help_reaches_the_erc_and_discovery_completes() {
    let url = start().await;
    let mut ws = connect(&url).await;
    next(&mut ws).await;
    // let beacons populate neighbor tables
    until(&mut ws, |v| v["op"] == "metrics_tick" && v["body"]["time_s"].as_f64().unwrap() >= 15.0).await;

    send(&mut ws, r#"{"op":"send","node":0,"body":{"type":"HELP","text":"trapped"}}"#).await;
    let erc = id("F").0;
    let r = until(&mut ws, |v| {
        v["op"] == "receive" && v["node"] == erc && v["body"]["message"]["type"] == "HELP"
    })
    .await;
    assert_eq!(r["body"]["from"], 0);
    let here = canonical::grid_nodes()[0].position();
    assert_eq!(r["body"]["message"]["location"]["x"].as_f64().unwrap(), here.x);
    assert_eq!(r["body"]["message"]["location"]["y"].as_f64().unwrap(), here.y);

    send(&mut ws, r#"{"op":"nd"}"#).await;
    // every node but the ERC itself reports in
    until(&mut ws, |v| v["op"] == "metrics_tick" && v["body"]["discovered"].as_array().unwrap().len() == 5).await;
    send(&mut ws, r#"{"op":"snapshot"}"#).await;
    let s = until(&mut ws, |v| v["op"] == "snapshot").await;
    // the unicast copy and the local broadcast copy both reach the ERC
    let distress = s["body"]["distress"].as_array().unwrap();
    assert!(!distress.is_empty());
    assert!(distress.iter().all(|d| d["from"] == 0 && d["text"] == "trapped"));
}
