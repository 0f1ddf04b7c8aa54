// An OTAA node joining, sending confirmed uplinks and receiving acks.

use firewatch::server::RecordStore;
use firewatch::sim::{EventBody, EventLog, Scenario, Simulation};

const SCENARIO: &str = r#"{
  "seed": 8,
  "duration_s": 70,
  "gateway": { "position": { "x": 0, "y": 0 } },
  "applications": [{
    "app_id": "firewatch",
    "app_eui": "70B3D57ED0014F64",
    "access_key": "k",
    "devices": [{ "dev_id": "node-otaa", "activation": "otaa", "dev_eui": "00E0136E0847D7F9", "appkey": "2B7E151628AED2A6ABF7158809CF4F3C" }]
  }],
  "nodes": [{ "dev_id": "node-otaa", "position": { "x": 50, "y": 0 }, "config": { "confirmed": true } }]
}"#;

pub fn run() -> anyhow::Result<()> {
    let scenario = Scenario::from_json(SCENARIO, "otaa.json")?;
    let mut sim = Simulation::new(&scenario, RecordStore::in_memory(), EventLog::in_memory(), false)?;
    sim.run_to_end();
    for ev in sim.log().events() {
        let line = match &ev.body {
            EventBody::UplinkTx { kind, freq_hz, dr, .. } => format!("uplink {kind} on {freq_hz} Hz DR{dr}"),
            EventBody::Joined { dev_addr, .. } => format!("server: joined as {dev_addr}"),
            EventBody::DownlinkScheduled { at_s, dr, .. } => format!("gateway: downlink at {at_s:.3} s DR{dr}"),
            EventBody::DownlinkRx { reply, .. } => format!("modem: {reply}"),
            EventBody::Modem { outcome, .. } => format!("modem event {outcome}"),
            EventBody::ModemError { command, reply, .. } => format!("{command} -> {reply}"),
            _ => continue,
        };
        println!("{:>8.3}  {line}", ev.t);
    }
    let node = sim.node("node-otaa").expect("placed");
    println!("session address {}, fcnt {}", node.modem.state().dev_addr, node.modem.state().fcnt_up);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
