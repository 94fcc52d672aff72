//! A HELP message from application JSON down to air bytes and back.

use helper_core::message::AppMessage;
use helper_core::model::packet_airtime;
use helper_core::radio::EnergyModel;
use helper_core::{Address, AppType, GeoPosition, HelperPacket, NodeId, TransmissionStrategy};

fn main() {
    let json = r#"{"type":"HELP","origin_user":"jithin","text":"trapped on the second floor"}"#;
    let msg: AppMessage = serde_json::from_str(json).expect("valid message");
    let msg = msg.at(GeoPosition { x: 120.0, y: 480.0 });
    msg.validate().expect("within limits");

    let payload = msg.encode();
    let packet = HelperPacket::data(AppType::Help, NodeId(0), Address::Node(NodeId(5)), 16, 7, payload);
    let bytes = packet.serialize();
    println!("{} payload bytes, {} on air", packet.payload.len(), bytes.len());
    for row in bytes.chunks(16).take(4) {
        let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
        println!("  {}", hex.join(" "));
    }

    let back = HelperPacket::deserialize(&bytes).expect("round trip");
    assert_eq!(back, packet);
    let decoded = AppMessage::decode(back.app_type, &back.payload).expect("payload decodes");
    assert_eq!(decoded, msg);
    println!("decoded: {}", serde_json::to_string(&decoded).unwrap());

    let s = TransmissionStrategy::default();
    let airtime = packet_airtime(&packet, &s).unwrap();
    let cost = EnergyModel::tx_cost(&packet, &s).unwrap();
    println!("at {} bps and {} W: {} airtime, {:.6} J", s.bitrate_bps, s.tx_power_w(), airtime, cost.as_joules());
}
