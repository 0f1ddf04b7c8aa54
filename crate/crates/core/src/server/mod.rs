//! Network and application server: sessions, dedup, decoding, storage.

pub mod api;
pub mod live;
pub mod registry;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::Serialize;

use crate::firmware::{decode_payload, RiskThresholds};
use crate::gateway::{DownlinkRequest, TxMode, UplinkMessage};
use crate::geo::Position;
use crate::ids::{DevAddr, Key128};
use crate::mac::{derive_session_keys, DataFrame, JoinAccept, JoinRequest, MType, MacFrame};
use crate::sensors::{flame_from_raw, gas_ppm_from_raw, PhysicalReading};

pub use api::{query_api, ApiRequest, ApiResponse};
pub use live::{LiveEvent, LiveHub, Subscription};
pub use registry::{Activation, Application, Decoder, DeviceRegistration, LatLon, Registry, RegistryError};
pub use store::{Decoded, PayloadFields, RecordStore, UplinkRecord};

/// Frames behind the newest counter still accepted as reordered.
pub const DEDUP_WINDOW: u32 = 16;
/// Largest forward counter jump accepted across a 16-bit wrap.
pub const MAX_FCNT_GAP: u32 = 16_384;
pub const FIRST_OTAA_ADDR: u32 = 0x2600_0001;
pub const NET_ID: [u8; 3] = [0x00, 0x00, 0x13];
/// Delay from the end of an uplink to the RX1 downlink slot.
pub const RX1_DELAY_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Session {
    dev_addr: DevAddr,
    nwkskey: Key128,
    appskey: Key128,
}

#[derive(Debug, Clone, Default)]
struct DeviceRuntime {
    session: Option<Session>,
    max_fcnt: Option<u32>,
    seen: BTreeSet<u32>,
    fcnt_down: u16,
    nonces: BTreeSet<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropCause {
    Malformed,
    UnknownDevice,
    Replay,
    NotUplink,
    Storage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Stored { record: Box<UplinkRecord>, downlink: Option<DownlinkRequest> },
    Joined { dev_id: String, dev_addr: DevAddr, downlink: DownlinkRequest },
    Duplicate { dev_id: String, fcnt: u32 },
    Dropped(DropCause),
}

impl IngestOutcome {
    pub fn downlink(&self) -> Option<&DownlinkRequest> {
        match self {
            IngestOutcome::Stored { downlink, .. } => downlink.as_ref(),
            IngestOutcome::Joined { downlink, .. } => Some(downlink),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeviceStats {
    pub stored: u64,
    pub duplicates: u64,
    pub last_fcnt: Option<u32>,
    pub last_seen_s: Option<f64>,
    pub last_rssi_dbm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NetworkStats {
    pub received: u64,
    pub stored: u64,
    pub duplicates: u64,
    pub unknown_device: u64,
    pub malformed: u64,
    pub replays: u64,
    pub not_uplink: u64,
    pub storage_errors: u64,
    pub decode_errors: u64,
    pub joins: u64,
    pub acks: u64,
    pub live_events: u64,
    pub live_disconnects: u64,
    pub per_device: BTreeMap<String, DeviceStats>,
    pub per_gateway: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub struct NetworkServer {
    registry: Registry,
    store: RecordStore,
    live: LiveHub,
    runtime: BTreeMap<String, DeviceRuntime>,
    stats: NetworkStats,
    next_addr: u32,
    join_count: u32,
    thresholds: RiskThresholds,
    positions: BTreeMap<String, Position>,
}

impl NetworkServer {
    pub fn new(registry: Registry, store: RecordStore) -> Self {
        let runtime = registry
            .devices()
            .map(|d| {
                let session = match d.activation {
                    Activation::Abp { dev_addr, nwkskey, appskey } => Some(Session { dev_addr, nwkskey, appskey }),
                    Activation::Otaa { .. } => None,
                };
                (d.dev_id.clone(), DeviceRuntime { session, ..DeviceRuntime::default() })
            })
            .collect();
        let mut server = Self {
            registry,
            store,
            live: LiveHub::default(),
            runtime,
            stats: NetworkStats::default(),
            next_addr: FIRST_OTAA_ADDR,
            join_count: 0,
            thresholds: RiskThresholds::default(),
            positions: BTreeMap::new(),
        };
        server.restore_counters();
        server
    }

    fn restore_counters(&mut self) {
        for r in self.store.all() {
            if let Some(rt) = self.runtime.get_mut(&r.dev_id) {
                rt.max_fcnt = Some(rt.max_fcnt.map_or(r.fcnt, |m| m.max(r.fcnt)));
                rt.seen.insert(r.fcnt);
            }
        }
        for rt in self.runtime.values_mut() {
            if let Some(max) = rt.max_fcnt {
                rt.seen.retain(|&f| f + DEDUP_WINDOW > max);
            }
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn stats(&self) -> NetworkStats {
        let mut s = self.stats.clone();
        s.live_events = self.live.published();
        s.live_disconnects = self.live.overflowed();
        s
    }

    pub fn live(&mut self) -> &mut LiveHub {
        &mut self.live
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.store.flush()
    }

    /// Display position reported by the simulation.
    pub fn set_position(&mut self, dev_id: &str, pos: Position) {
        self.positions.insert(dev_id.to_string(), pos);
    }

    pub fn position(&self, dev_id: &str) -> Option<Position> {
        self.positions.get(dev_id).copied()
    }

    /// Current network address of a device, once it has a session.
    pub fn session_addr(&self, dev_id: &str) -> Option<DevAddr> {
        self.runtime.get(dev_id)?.session.map(|s| s.dev_addr)
    }

    /// Subscribe to live events; `None` when the key does not open the app.
    pub fn subscribe(&mut self, app_id: &str, key: Option<&str>) -> Option<(u64, Subscription)> {
        self.registry.authorized(app_id, key).then(|| self.live.subscribe(app_id))
    }

    /// Parse and ingest one backhaul line.
    pub fn ingest_line(&mut self, line: &str, now: f64) -> IngestOutcome {
        match UplinkMessage::from_line(line) {
            Ok(msg) => self.ingest(&msg, now),
            Err(e) => {
                log::debug!("dropping backhaul line: {e}");
                self.stats.received += 1;
                self.drop(DropCause::Malformed)
            }
        }
    }

    fn drop(&mut self, cause: DropCause) -> IngestOutcome {
        match cause {
            DropCause::Malformed => self.stats.malformed += 1,
            DropCause::UnknownDevice => self.stats.unknown_device += 1,
            DropCause::Replay => self.stats.replays += 1,
            DropCause::NotUplink => self.stats.not_uplink += 1,
            DropCause::Storage => self.stats.storage_errors += 1,
        }
        IngestOutcome::Dropped(cause)
    }

    pub fn ingest(&mut self, msg: &UplinkMessage, now: f64) -> IngestOutcome {
        self.stats.received += 1;
        *self.stats.per_gateway.entry(msg.gw_id.to_string()).or_default() += 1;
        match MacFrame::decode(&msg.dev_payload_hex) {
            Ok(MacFrame::Data(frame)) if frame.is_uplink() => self.ingest_data(msg, frame, now),
            Ok(MacFrame::JoinRequest(req)) => self.ingest_join(msg, req),
            Ok(_) => self.drop(DropCause::NotUplink),
            Err(_) => self.drop(DropCause::Malformed),
        }
    }

    fn resolve(&self, frame: &DataFrame) -> Option<String> {
        self.runtime.iter().find_map(|(dev_id, rt)| {
            let s = rt.session?;
            (s.dev_addr == frame.dev_addr && frame.verify(&s.nwkskey, &s.appskey)).then(|| dev_id.clone())
        })
    }

    fn ingest_data(&mut self, msg: &UplinkMessage, frame: DataFrame, now: f64) -> IngestOutcome {
        let Some(dev_id) = self.resolve(&frame) else {
            return self.drop(DropCause::UnknownDevice);
        };
        let rt = self.runtime.get_mut(&dev_id).expect("resolved device has runtime");
        let fcnt = match rt.max_fcnt {
            None => u32::from(frame.fcnt),
            Some(max) => {
                let low = (max & !0xFFFF) | u32::from(frame.fcnt);
                if low + DEDUP_WINDOW > max {
                    low
                } else if low + 0x1_0000 - max <= MAX_FCNT_GAP {
                    low + 0x1_0000
                } else {
                    return self.drop(DropCause::Replay);
                }
            }
        };
        if rt.seen.contains(&fcnt) {
            self.stats.duplicates += 1;
            self.stats.per_device.entry(dev_id.clone()).or_default().duplicates += 1;
            return IngestOutcome::Duplicate { dev_id, fcnt };
        }
        let max = rt.max_fcnt.map_or(fcnt, |m| m.max(fcnt));
        rt.max_fcnt = Some(max);
        rt.seen.insert(fcnt);
        rt.seen.retain(|&f| f + DEDUP_WINDOW > max);
        let session = rt.session.expect("resolved device has session");

        let device = self.registry.device(&dev_id).expect("runtime device is registered");
        let app = self.registry.app(&device.app_id).expect("device app is registered");
        let (decoded, decode_error) = match app.decoder {
            Decoder::RawHex => (Some(Decoded::Raw { raw_hex: hex::encode_upper(&frame.payload) }), false),
            Decoder::U16beTriple => match decode_payload(&frame.payload) {
                Ok(p) => (
                    Some(Decoded::Fields(PayloadFields {
                        payload_gas: p.gas,
                        payload_fire: p.fire,
                        payload_temp: p.temp,
                    })),
                    false,
                ),
                Err(_) => (None, true),
            },
        };
        let risk = decoded.as_ref().and_then(Decoded::fields).map(|f| {
            let physical = PhysicalReading {
                gas_ppm: gas_ppm_from_raw(f.payload_gas, 1.0),
                flame: flame_from_raw(f.payload_fire),
                temp_c: f64::from(f.payload_temp),
            };
            self.thresholds.levels(&physical).combined()
        });
        let record = UplinkRecord {
            dev_id: dev_id.clone(),
            app_id: app.app_id.clone(),
            fcnt,
            port: frame.fport,
            payload_hex: frame.payload.clone(),
            decoded,
            decode_error,
            risk,
            confirmed: frame.confirmed(),
            rssi_dbm: msg.rssi_dbm,
            freq_hz: msg.freq_hz,
            dr: msg.dr,
            gw_id: msg.gw_id,
            gw_time_s: msg.gw_time_s,
            server_time_s: now,
        };
        if let Err(e) = self.store.append(record.clone()) {
            log::error!("store append failed: {e}");
            return self.drop(DropCause::Storage);
        }
        self.stats.stored += 1;
        if decode_error {
            self.stats.decode_errors += 1;
        }
        let ds = self.stats.per_device.entry(dev_id.clone()).or_default();
        ds.stored += 1;
        ds.last_fcnt = Some(fcnt);
        ds.last_seen_s = Some(now);
        ds.last_rssi_dbm = Some(msg.rssi_dbm);
        self.live.publish(&LiveEvent::from_record(&record));

        let downlink = frame.confirmed().then(|| {
            self.stats.acks += 1;
            let rt = self.runtime.get_mut(&dev_id).expect("resolved device has runtime");
            let ack = DataFrame {
                mtype: MType::UnconfirmedDown,
                dev_addr: session.dev_addr,
                ack: true,
                fcnt: rt.fcnt_down,
                fport: 0,
                payload: Vec::new(),
                tag: [0; 4],
            }
            .seal(&session.nwkskey, &session.appskey);
            rt.fcnt_down = rt.fcnt_down.wrapping_add(1);
            rx1_downlink(msg, MacFrame::Data(ack).encode())
        });
        IngestOutcome::Stored { record: Box::new(record), downlink }
    }

    fn allocate_addr(&mut self) -> DevAddr {
        loop {
            let addr = DevAddr::from_u32(self.next_addr);
            self.next_addr = self.next_addr.wrapping_add(1);
            if !self.runtime.values().any(|rt| rt.session.is_some_and(|s| s.dev_addr == addr)) {
                return addr;
            }
        }
    }

    fn ingest_join(&mut self, msg: &UplinkMessage, req: JoinRequest) -> IngestOutcome {
        let found = self.registry.devices().find_map(|d| match d.activation {
            Activation::Otaa { dev_eui, appkey } if dev_eui == req.dev_eui => {
                let app = self.registry.app(&d.app_id)?;
                (app.app_eui == req.app_eui && req.verify(&appkey)).then(|| (d.dev_id.clone(), appkey))
            }
            _ => None,
        });
        let Some((dev_id, appkey)) = found else {
            return self.drop(DropCause::UnknownDevice);
        };
        if self.runtime.get(&dev_id).is_some_and(|rt| rt.nonces.contains(&req.dev_nonce)) {
            return self.drop(DropCause::Replay);
        }
        self.join_count += 1;
        let n = self.join_count.to_le_bytes();
        let app_nonce = [n[0], n[1], n[2]];
        let dev_addr = self.allocate_addr();
        let (nwkskey, appskey) = derive_session_keys(&appkey, app_nonce, NET_ID, req.dev_nonce);
        let rt = self.runtime.entry(dev_id.clone()).or_default();
        rt.nonces.insert(req.dev_nonce);
        rt.session = Some(Session { dev_addr, nwkskey, appskey });
        rt.max_fcnt = None;
        rt.seen.clear();
        rt.fcnt_down = 0;
        self.stats.joins += 1;
        let accept = JoinAccept::sealed(app_nonce, NET_ID, dev_addr, RX1_DELAY_S as u8, &appkey);
        log::info!("{dev_id} joined as {dev_addr}");
        IngestOutcome::Joined { dev_id, dev_addr, downlink: rx1_downlink(msg, MacFrame::JoinAccept(accept).encode()) }
    }
}

fn rx1_downlink(msg: &UplinkMessage, payload: Vec<u8>) -> DownlinkRequest {
    DownlinkRequest {
        payload,
        freq_hz: msg.freq_hz,
        dr: msg.dr,
        mode: TxMode::Timestamp { at_s: msg.gw_time_s + RX1_DELAY_S },
    }
}
