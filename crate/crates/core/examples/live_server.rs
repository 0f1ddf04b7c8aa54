// Serve the campus scenario and watch it from a WebSocket client: list the
// devices over HTTP, light a fire next to one and print the uplinks that
// follow.
//
// `cargo run --example live_server -- 3000` keeps a server on port 3000
// running until Ctrl-C after the demo.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use firewatch::serve::{self, AppState, Dashboard, ServerMessage};
use firewatch::sim::{self, Scenario};
use futures::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

pub async fn demo(port: u16) -> anyhow::Result<()> {
    let scenario = Scenario::from_json(sim::CAMPUS_SCENARIO, "campus.json")?;
    let sim = Arc::new(Mutex::new(serve::open_simulation(&scenario, None)?));
    let listener = serve::bind(port).await?;
    let addr = listener.local_addr()?;
    println!("listening on {addr}");
    tokio::spawn(serve::drive_clock(sim.clone(), 50.0, serve::CLOCK_TICK));
    let app = serve::router(AppState::attached(sim.clone()), &Dashboard::Placeholder);
    tokio::spawn(async move { axum::serve(listener, app).await });

    let key = "ttn-account-v2.firewatch";
    let base = format!("http://127.0.0.1:{}", addr.port());
    let devices = reqwest::get(format!("{base}/api/apps/firewatch/devices?key={key}")).await?.text().await?;
    println!("devices: {devices}");

    let url = format!("ws://127.0.0.1:{}/live?app=firewatch&key={key}", addr.port());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await?;
    let cmd =
        serde_json::json!({ "type": "command", "id": 1, "command": { "type": "inject_fire", "x": -118, "y": -90 } });
    ws.send(Message::Text(cmd.to_string().into())).await?;

    let mut seen = 0;
    while seen < 6 {
        let Some(msg) = tokio::time::timeout(Duration::from_secs(20), ws.next()).await?.transpose()? else { break };
        match serde_json::from_str::<ServerMessage>(msg.to_text()?)? {
            ServerMessage::Uplink(ev) => {
                seen += 1;
                let fields = match ev.payload_fields {
                    Some(f) => {
                        format!("gas {:>4} fire {:>4} temp {:>3}", f.payload_gas, f.payload_fire, f.payload_temp)
                    }
                    None => "undecoded".into(),
                };
                println!("{:>16} fcnt {:>3} {fields} {:?}", ev.dev_id, ev.metadata.fcnt, ev.metadata.risk);
            }
            ServerMessage::Ack { ack, .. } => println!("ack: {ack:?}"),
            ServerMessage::Error { message } => println!("error: {message}"),
        }
    }
    Ok(())
}

pub fn run() -> anyhow::Result<()> {
    tokio::runtime::Runtime::new()?.block_on(demo(0))
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let port: u16 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        demo(port).await?;
        if port != 0 {
            println!("still serving on port {port}; Ctrl-C to stop");
            tokio::signal::ctrl_c().await?;
        }
        anyhow::Ok(())
    })
}
