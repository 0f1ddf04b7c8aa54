//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use firewatch::firmware::{classify, decode_payload, encode_payload, RiskLevel, RiskThresholds};
use firewatch::gateway::{Gateway, UplinkMessage};
use firewatch::geo::Position;
use firewatch::medium::{EnvironmentKind, LinkEnvironment, RadioFrame, ReceivedFrame};
use firewatch::modem::{boot_script_lines, Channel, DeviceClass, Mode, Modem, ModemState, WindowParams};
use firewatch::phy::{bit_rate, chip_rate, symbol_period, ModulationParams, BANDWIDTHS_HZ};
use firewatch::server::{Decoded, PayloadFields};
use firewatch::sim::{self, lock, range_test, EventLog, Scenario, Simulation, TABLE_DISTANCES_M};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn phy_numerics() -> Check {
    let start = Instant::now();
    let p = ModulationParams::new(12, 125_000, 1).unwrap();
    ensure!(rel_close(symbol_period(&p), 0.032768, 1e-9), "SF12/125k symbol period {}", symbol_period(&p));
    let mut pairs = 0;
    for sf in 7..=12 {
        for bw in BANDWIDTHS_HZ {
            let p = ModulationParams::new(sf, bw, 1).unwrap();
            ensure!(rel_close(chip_rate(&p), f64::from(bw), 1e-9), "chip rate at SF{sf}/{bw}: {}", chip_rate(&p));
            pairs += 1;
        }
    }
    ensure!(pairs == 24, "checked {pairs} pairs");
    let p = ModulationParams::new(7, 125_000, 1).unwrap();
    ensure!(rel_close(bit_rate(&p), 5468.75, 1e-9), "SF7/125k bit rate {}", bit_rate(&p));
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("Ts 32.768 ms, 24 chip-rate pairs, Rb 5468.75 bps in {took:?}"))
}

fn range_table() -> Check {
    let start = Instant::now();
    let report = range_test(&LinkEnvironment::preset(EnvironmentKind::Urban), &TABLE_DISTANCES_M, 10_000, 1);
    let took = start.elapsed();
    let delivery = [100.0, 95.0, 10.0, 0.0];
    let rssi = [-112.0, -112.0, -115.0];
    let latency_ms = [51.5, 102.9, 185.3];
    for (i, row) in report.rows.iter().enumerate() {
        ensure!((row.received_pct - delivery[i]).abs() <= 2.0, "{} m: {}% received", row.distance_m, row.received_pct);
        if i < 3 {
            let r = row.median_rssi_dbm.ok_or(format!("{} m: no RSSI", row.distance_m))?;
            ensure!((r - rssi[i]).abs() <= 1.0, "{} m: median RSSI {r}", row.distance_m);
            let l = row.uplink_latency_ms.ok_or(format!("{} m: no latency", row.distance_m))?;
            ensure!(rel_close(l, latency_ms[i], 0.05), "{} m: median latency {l} ms", row.distance_m);
        }
    }
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    let pct: Vec<String> = report.rows.iter().map(|r| format!("{:.1}%", r.received_pct)).collect();
    Ok(format!("received {} over 10000 trials in {took:?}", pct.join("/")))
}

fn payload_pipeline() -> Check {
    let bytes = encode_payload(985, 400, 28).map_err(|e| e.to_string())?;
    ensure!(hex::encode_upper(bytes) == "03D90190001C", "encoded {}", hex::encode_upper(bytes));

    // through the modem, the gateway wrapper and the server decoder
    let mut modem = Modem::new(ModemState::seeded(1));
    for line in boot_script_lines() {
        modem.execute(line);
    }
    let (reply, uplink) = modem.execute("AT+MSGHEX=\"03D90190001C\"");
    let uplink = uplink.ok_or(format!("modem refused: {}", reply.to_wire().trim_end()))?;
    let gw = Gateway::new("B827EBFFFE000001".parse().unwrap(), Position::default());
    let rx = ReceivedFrame {
        frame: RadioFrame {
            tx_airtime: uplink.airtime("AU915"),
            payload: uplink.phy_payload,
            freq_hz: uplink.freq_hz,
            dr_index: uplink.dr_index,
            tx_start: 1.0,
            source: 1,
        },
        rssi_dbm: -112.0,
        rx_time: 1.2,
    };
    let line = gw.wrap(&rx).to_line();
    let s = Scenario::from_json(sim::CAMPUS_SCENARIO, "campus.json").map_err(|e| e.to_string())?;
    let mut server =
        firewatch::server::NetworkServer::new(s.registry().map_err(|e| e.to_string())?, Default::default());
    let outcome = server.ingest_line(&line, 1.3);
    let rec = server.store().latest("node-lab").ok_or(format!("not stored: {outcome:?}"))?;
    let want = Decoded::Fields(PayloadFields { payload_gas: 985, payload_fire: 400, payload_temp: 28 });
    ensure!(rec.decoded.as_ref() == Some(&want), "decoded {:?}", rec.decoded);
    let json = serde_json::to_value(&rec.decoded).unwrap();
    ensure!(json["payload_gas"] == 985 && json["payload_fire"] == 400 && json["payload_temp"] == 28, "json {json}");

    let mut n = 0u64;
    for temp in -40..=80i16 {
        for gas in 0..=1023u16 {
            for fire in 0..=1023u16 {
                let p = decode_payload(&encode_payload(gas, fire, temp).unwrap()).unwrap();
                ensure!((p.gas, p.fire, p.temp) == (gas, fire, temp), "round trip {gas}/{fire}/{temp}");
                n += 1;
            }
        }
    }

    let shifted = (u16::from(bytes[0]) << 4) | u16::from(bytes[1]);
    ensure!(shifted == 249, "shift-by-4 decode gave {shifted}");
    Ok(format!("03D90190001C decoded as 985/400/28, {n} round trips, shift-by-4 decode = 249"))
}

fn classifier() -> Check {
    let t = RiskThresholds::default();
    use RiskLevel::*;
    let cases = [
        ("gas", &t.gas, [(15.0, NoRisk), (250.0, Alert), (700.0, Risk), (100.0, Alert), (600.0, Risk)]),
        ("temp", &t.temp, [(25.0, NoRisk), (45.0, Alert), (70.0, Risk), (30.0, Alert), (60.0, Risk)]),
        ("flame", &t.flame, [(780.0, NoRisk), (950.0, Alert), (1100.0, Risk), (900.0, Alert), (1100.0, Risk)]),
    ];
    for (name, band, pts) in cases {
        for (v, want) in pts {
            let got = classify(v, band);
            ensure!(got == want, "{name} {v}: {got:?}, want {want:?}");
        }
    }
    Ok("9 table values and 6 boundaries".into())
}

fn script_replay() -> Check {
    let mut modem = Modem::new(ModemState::seeded(7));
    let mut errors = Vec::new();
    for line in boot_script_lines() {
        let (reply, _) = modem.execute(line);
        if reply.is_error() {
            errors.push(format!("{line} -> {}", reply.to_wire().trim_end()));
        }
    }
    ensure!(errors.is_empty(), "errors: {errors:?}");
    let st = modem.state();
    for i in 0..8u32 {
        let want = Channel { freq_hz: 915_200_000 + 200_000 * i, dr_min: 2, dr_max: 5 };
        ensure!(st.channels[i as usize] == Some(want), "channel {i}: {:?}", st.channels[i as usize]);
    }
    for i in 8..72 {
        ensure!(st.channels[i].is_none(), "channel {i} still enabled: {:?}", st.channels[i]);
    }
    ensure!(st.rxwin2 == WindowParams { freq_hz: 923_300_000, dr_index: 8 }, "rxwin2 {:?}", st.rxwin2);
    ensure!(st.mode == Mode::Abp, "mode {:?}", st.mode);
    ensure!(st.device_class == DeviceClass::A, "class {:?}", st.device_class);
    ensure!(st.dr_index == 3, "DR{}", st.dr_index);
    ensure!(st.adr, "ADR off");
    Ok("channels 0-7 915.2..916.6 MHz, 8-71 off, RX2 923.3 MHz DR8, LWABP, class A, DR3, ADR on".into())
}

const DRILL: &str = r#"{
  "seed": 314,
  "duration_s": 60,
  "gateway": { "position": { "x": 0, "y": 0 } },
  "applications": [{
    "app_id": "firewatch",
    "app_eui": "70B3D57ED0014F64",
    "access_key": "drill",
    "devices": [{
      "dev_id": "node-1",
      "activation": "abp",
      "dev_addr": "2603172D",
      "nwkskey": "F6012FAD4F28BEA501A4E9841D8A0EBC",
      "appskey": "A484A36F909D5A74D7456BBB2C511058"
    }]
  }],
  "nodes": [{ "dev_id": "node-1", "position": { "x": 100, "y": 0 } }],
  "commands": [{ "at_s": 0, "command": { "type": "inject_fire", "x": 100, "y": 3, "intensity": 1.0 } }]
}"#;

fn drill_run(scenario: &Scenario) -> Result<(String, usize, usize, Option<f64>), String> {
    let mut sim =
        Simulation::new(scenario, Default::default(), EventLog::in_memory(), false).map_err(|e| e.to_string())?;
    let (_, mut rx) = lock(sim.shared()).subscribe("firewatch", Some("drill")).ok_or("subscribe refused")?;
    sim.run_to_end();
    let mut events = 0;
    while rx.try_recv().is_ok() {
        events += 1;
    }
    let server = lock(sim.shared());
    let first_risk = server.store().all().iter().find(|r| r.risk == Some(RiskLevel::Risk)).map(|r| r.server_time_s);
    Ok((server.store().to_jsonl(), server.store().len(), events, first_risk))
}

fn fire_drill() -> Check {
    let scenario = Scenario::from_json(DRILL, "drill.json").map_err(|e| e.to_string())?;
    let (store_a, records, events, first_risk) = drill_run(&scenario)?;
    let t = first_risk.ok_or("no Risk record stored")?;
    ensure!(t <= 15.0, "first Risk record at {t} s");
    ensure!(records > 0 && events == records, "{events} live events for {records} records");
    let (store_b, ..) = drill_run(&scenario)?;
    ensure!(store_a == store_b, "stores differ between runs");
    Ok(format!("Risk stored at {t:.3} s, {records} records = {events} live events, identical stores"))
}

const VERBS: [&str; 24] = [
    "AT", "ID", "KEY", "DR", "CH", "RXWIN1", "RXWIN2", "RESET", "ADR", "MODE", "CLASS", "MSGHEX", "CMSGHEX", "MSG",
    "PORT", "JOIN", "LW", "POWER", "FDEFAULT", "LOWPOWER", "VER", "DELAY", "REPT", "RETRY",
];

fn random_at(rng: &mut ChaCha8Rng, seeds: &[&str]) -> String {
    const ALPHABET: &[u8] = b"AT+=,?\"0123456789ABCDEFabcdef.-_ DRxyzLWOTA\t";
    match rng.random_range(0..4) {
        0 => {
            let n = rng.random_range(0..40);
            (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
        }
        1 => {
            let n = rng.random_range(0..30);
            String::from_utf8_lossy(&(0..n).map(|_| rng.random::<u8>()).collect::<Vec<_>>()).into_owned()
        }
        2 => {
            let mut b = seeds[rng.random_range(0..seeds.len())].as_bytes().to_vec();
            for _ in 0..rng.random_range(1..4) {
                if b.is_empty() {
                    break;
                }
                let i = rng.random_range(0..b.len());
                match rng.random_range(0..3) {
                    0 => b[i] = ALPHABET[rng.random_range(0..ALPHABET.len())],
                    1 => b.truncate(i),
                    _ => b.insert(i, ALPHABET[rng.random_range(0..ALPHABET.len())]),
                }
            }
            String::from_utf8_lossy(&b).into_owned()
        }
        _ => {
            let verb = VERBS[rng.random_range(0..VERBS.len())];
            let args: Vec<String> = (0..rng.random_range(0..4))
                .map(|_| match rng.random_range(0..4) {
                    0 => rng.random_range(-5..100).to_string(),
                    1 => format!("{:.1}", rng.random_range(900.0..930.0)),
                    2 => format!("\"{:x}\"", rng.random::<u64>()),
                    _ => ["ON", "OFF", "DR8", "LWABP", "C", "DevAddr", "AppKey", "?"][rng.random_range(0..8)].into(),
                })
                .collect();
            if args.is_empty() {
                format!("AT+{verb}")
            } else {
                format!("AT+{verb}={}", args.join(","))
            }
        }
    }
}

fn random_backhaul(rng: &mut ChaCha8Rng, valid: &str) -> String {
    match rng.random_range(0..3) {
        0 => {
            let n = rng.random_range(0..120);
            String::from_utf8_lossy(&(0..n).map(|_| rng.random::<u8>()).collect::<Vec<_>>()).into_owned()
        }
        1 => {
            let mut b = valid.as_bytes().to_vec();
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(0..b.len());
                match rng.random_range(0..3) {
                    0 => b[i] = rng.random_range(0x20..0x7f),
                    1 => {
                        b.remove(i);
                    }
                    _ => b.insert(i, b"{}[]\",:0123456789eE-."[rng.random_range(0..21)]),
                }
                if b.is_empty() {
                    break;
                }
            }
            String::from_utf8_lossy(&b).into_owned()
        }
        _ => {
            let hex: String = (0..rng.random_range(0..40)).map(|_| format!("{:02X}", rng.random::<u8>())).collect();
            format!(
                "{{\"gw_id\":\"B827EBFFFE000001\",\"dev_payload_hex\":\"{hex}\",\"freq_hz\":{},\"dr\":{},\"rssi_dbm\":{},\"gw_time_s\":{}}}",
                rng.random::<u32>(),
                rng.random::<u8>(),
                rng.random_range(-200.0..10.0),
                rng.random_range(-1e9..1e9)
            )
        }
    }
}

fn robustness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1AE);
    let seeds: Vec<&str> = boot_script_lines().chain(["AT+MSGHEX=\"0102\"", "AT+JOIN", "AT+MODE=LWOTAA"]).collect();
    let mut modem = Modem::new(ModemState::seeded(3));
    let mut errors = 0;
    for i in 0..10_000 {
        let input = random_at(&mut rng, &seeds);
        let before = modem.state().clone();
        let (reply, _) = modem.execute(&input);
        if reply.is_error() {
            errors += 1;
            ensure!(modem.state() == &before, "ERROR reply to {input:?} changed modem state");
        }
        if i % 1000 == 999 {
            modem = Modem::new(ModemState::seeded(i));
            for line in boot_script_lines() {
                modem.execute(line);
            }
        }
    }

    let s = Scenario::from_json(sim::CAMPUS_SCENARIO, "campus.json").map_err(|e| e.to_string())?;
    let mut server =
        firewatch::server::NetworkServer::new(s.registry().map_err(|e| e.to_string())?, Default::default());
    let valid = UplinkMessage {
        gw_id: "B827EBFFFE000001".parse().unwrap(),
        dev_payload_hex: vec![0x40, 0x2D, 0x17, 0x03, 0x26, 0x00, 0x01, 0x00, 0x08, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
        freq_hz: 915_200_000,
        dr: 3,
        rssi_dbm: -112.0,
        gw_time_s: 1.0,
    }
    .to_line();
    for i in 0..10_000 {
        server.ingest_line(&random_backhaul(&mut rng, &valid), f64::from(i));
    }
    let received = server.stats().received;
    ensure!(received == 10_000, "server counted {received} lines");
    Ok(format!("10000 AT inputs ({errors} ERROR replies, state untouched), 10000 backhaul lines ingested"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("modulation numerics", phy_numerics),
        ("range table", range_table),
        ("payload pipeline", payload_pipeline),
        ("risk classifier", classifier),
        ("boot script replay", script_replay),
        ("fire drill", fire_drill),
        ("parser robustness", robustness),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
