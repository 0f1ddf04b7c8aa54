// A node 3 m from a fire lit at t = 0: what the server stores, second by
// second.

use firewatch::server::RecordStore;
use firewatch::sim::{lock, EventBody, EventLog, Scenario, Simulation};

const DRILL: &str = r#"{
  "seed": 11,
  "duration_s": 40,
  "gateway": { "position": { "x": 0, "y": 0 } },
  "applications": [{
    "app_id": "firewatch",
    "app_eui": "70B3D57ED0014F64",
    "access_key": "drill",
    "devices": [{
      "dev_id": "node-1", "activation": "abp", "dev_addr": "2603172D",
      "nwkskey": "F6012FAD4F28BEA501A4E9841D8A0EBC", "appskey": "A484A36F909D5A74D7456BBB2C511058"
    }]
  }],
  "nodes": [{ "dev_id": "node-1", "position": { "x": 100, "y": 0 } }],
  "fires": [{ "id": 1, "position": { "x": 100, "y": 3 }, "start_s": 0 }],
  "commands": [{ "at_s": 21, "command": { "type": "extinguish", "fire_id": 1 } }]
}"#;

pub fn run() -> anyhow::Result<()> {
    let scenario = Scenario::from_json(DRILL, "drill.json")?;
    let mut sim = Simulation::new(&scenario, RecordStore::in_memory(), EventLog::in_memory(), false)?;
    sim.run_to_end();
    for ev in sim.log().events() {
        match &ev.body {
            EventBody::Sample { gas_raw, fire_raw, temp_c, level, send, .. } => println!(
                "{:>7.3}  sample gas {gas_raw:>4} fire {fire_raw:>4} temp {temp_c:>3}  {:<6} {}",
                ev.t,
                level.name(),
                send.map(|s| format!("send ({s:?})")).unwrap_or_default()
            ),
            EventBody::Stored { fcnt, risk, .. } => {
                println!("{:>7.3}  stored fcnt {fcnt} as {}", ev.t, risk.map_or("?", |r| r.name()))
            }
            EventBody::Command { command, ack } => println!("{:>7.3}  {} -> ok={}", ev.t, command.name(), ack.ok),
            _ => {}
        }
    }
    println!("{} records stored", lock(sim.shared()).store().len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
