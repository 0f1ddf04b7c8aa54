//! Virtual RHF76-052 LoRaWAN modem.
//!
//! [`handle_command`] is the pure AT interpreter: it takes a state and one
//! command line and returns the next state, the reply, and possibly a radio
//! action for the host to carry out. [`Modem`] wraps it with the class A/C
//! receive-window bookkeeping a real modem does after each uplink, and
//! [`serial::SerialPort`] exposes the CR LF byte stream.
//!
//! Replies always take the form `+NAME: body` or `+NAME: ERROR(code)`:
//!
//! | code | meaning |
//! |-----:|---------|
//! | -1   | unknown command |
//! | -2   | malformed argument |
//! | -11  | no enabled channel admits the current data rate |
//! | -12  | OTAA mode but not joined |
//! | -13  | join requested outside OTAA mode |

mod command;
pub mod serial;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use command::{handle_command, msghex, otaa_join, CommandOutcome};

use crate::ids::{DevAddr, Eui64, Key128};
use crate::mac::{derive_session_keys, DataFrame, MacFrame};
use crate::phy;

pub const CHANNEL_COUNT: usize = 72;
/// Default uplink port of the RHF76 firmware.
pub const DEFAULT_PORT: u8 = 8;
/// RX2 opens this long after RX1.
pub const RX2_OFFSET_S: f64 = 1.0;
/// A receive window stays open for this many symbols of its data rate.
pub const RX_WINDOW_SYMBOLS: f64 = 8.0;

/// The bundled boot script of the sensor-node firmware, CR LF terminated.
pub const BOOT_SCRIPT: &str = include_str!("../../assets/boot.at");

pub fn boot_script_lines() -> impl Iterator<Item = &'static str> {
    BOOT_SCRIPT.split("\r\n").filter(|l| !l.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "LWABP")]
    Abp,
    #[serde(rename = "LWOTAA")]
    Otaa,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Abp => "LWABP",
            Mode::Otaa => "LWOTAA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceClass {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub freq_hz: u32,
    pub dr_min: u8,
    pub dr_max: u8,
}

impl Channel {
    pub fn admits(&self, dr: u8) -> bool {
        (self.dr_min..=self.dr_max).contains(&dr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowParams {
    pub freq_hz: u32,
    pub dr_index: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModemState {
    pub dev_addr: DevAddr,
    pub dev_eui: Eui64,
    pub app_eui: Eui64,
    pub nwkskey: Key128,
    pub appskey: Key128,
    pub appkey: Key128,
    pub mode: Mode,
    pub device_class: DeviceClass,
    pub adr: bool,
    pub region: &'static str,
    pub dr_index: u8,
    pub channels: Vec<Option<Channel>>,
    pub rxwin2: WindowParams,
    /// Per-channel RX1 frequency overrides set with `RXWIN1`.
    pub rxwin1: BTreeMap<u8, u32>,
    pub rx1_delay_ms: u32,
    pub fcnt_up: u32,
    pub lowpower: bool,
    pub joined: bool,
    pub dev_nonce: u16,
    pub port: u8,
    /// Round-robin position for uplink channel selection.
    pub channel_cursor: usize,
}

/// AU915 sub-band layout: 64 x 125 kHz channels from 915.2 MHz in 200 kHz
/// steps (DR0..DR5), then 8 x 500 kHz channels from 915.9 MHz in 1.6 MHz
/// steps (DR6).
pub fn au915_default_channels() -> Vec<Option<Channel>> {
    (0..CHANNEL_COUNT as u32)
        .map(|n| {
            Some(if n < 64 {
                Channel { freq_hz: 915_200_000 + 200_000 * n, dr_min: 0, dr_max: 5 }
            } else {
                Channel { freq_hz: 915_900_000 + 1_600_000 * (n - 64), dr_min: 6, dr_max: 6 }
            })
        })
        .collect()
}

impl Default for ModemState {
    fn default() -> Self {
        Self {
            dev_addr: DevAddr::default(),
            dev_eui: Eui64::default(),
            app_eui: Eui64::default(),
            nwkskey: Key128::default(),
            appskey: Key128::default(),
            appkey: Key128::default(),
            mode: Mode::Abp,
            device_class: DeviceClass::A,
            adr: false,
            region: "AU915",
            dr_index: 0,
            channels: au915_default_channels(),
            rxwin2: WindowParams { freq_hz: 923_300_000, dr_index: 8 },
            rxwin1: BTreeMap::new(),
            rx1_delay_ms: 1000,
            fcnt_up: 0,
            lowpower: false,
            joined: false,
            dev_nonce: 0,
            port: DEFAULT_PORT,
            channel_cursor: 0,
        }
    }
}

impl ModemState {
    /// Default state with the channel round-robin started at a seeded offset.
    pub fn seeded(seed: u64) -> Self {
        Self { channel_cursor: (seed % CHANNEL_COUNT as u64) as usize, ..Self::default() }
    }

    /// Radio defaults restored by `FDEFAULT`; identities, keys and counters
    /// survive.
    pub fn factory_radio_defaults(&self) -> Self {
        let d = Self::default();
        Self {
            mode: d.mode,
            device_class: d.device_class,
            adr: d.adr,
            region: d.region,
            dr_index: d.dr_index,
            channels: d.channels,
            rxwin2: d.rxwin2,
            rxwin1: d.rxwin1,
            rx1_delay_ms: d.rx1_delay_ms,
            lowpower: d.lowpower,
            joined: false,
            ..self.clone()
        }
    }

    pub fn enabled_channels(&self) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels.iter().enumerate().filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }

    pub fn can_send(&self) -> bool {
        self.mode == Mode::Abp || self.joined
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtReply {
    pub lines: Vec<String>,
}

impl AtReply {
    pub fn line(name: &str, body: impl AsRef<str>) -> Self {
        Self { lines: vec![format!("+{name}: {}", body.as_ref())] }
    }

    pub fn error(name: &str, code: i32) -> Self {
        Self::line(name, format!("ERROR({code})"))
    }

    pub fn push(&mut self, name: &str, body: impl AsRef<str>) {
        self.lines.push(format!("+{name}: {}", body.as_ref()));
    }

    pub fn is_error(&self) -> bool {
        self.lines.iter().any(|l| l.contains(": ERROR("))
    }

    pub fn error_code(&self) -> Option<i32> {
        let l = self.lines.iter().find(|l| l.contains(": ERROR("))?;
        let start = l.find("ERROR(")? + 6;
        l[start..].trim_end_matches(')').parse().ok()
    }

    /// CR LF terminated wire form.
    pub fn to_wire(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\r\n")).collect()
    }
}

/// Something the modem wants put on the air.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UplinkRequest {
    pub phy_payload: Vec<u8>,
    pub freq_hz: u32,
    pub dr_index: u8,
    pub channel: usize,
    pub kind: UplinkKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UplinkKind {
    Unconfirmed,
    Confirmed,
    Join,
}

impl UplinkRequest {
    pub fn airtime(&self, region: &str) -> f64 {
        let entry = phy::dr_lookup(region, self.dr_index).expect("modem only sends on table data rates");
        phy::airtime(self.phy_payload.len(), &entry.modulation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RxWindow {
    pub open: f64,
    pub close: f64,
    pub freq_hz: u32,
    pub dr_index: u8,
}

impl RxWindow {
    fn new(open: f64, params: WindowParams, region: &str) -> Self {
        let len = phy::dr_lookup(region, params.dr_index)
            .map(|e| RX_WINDOW_SYMBOLS * phy::symbol_period(&e.modulation()))
            .unwrap_or(0.0);
        Self { open, close: open + len, freq_hz: params.freq_hz, dr_index: params.dr_index }
    }

    pub fn admits(&self, t: f64, freq_hz: u32, dr_index: u8) -> bool {
        freq_hz == self.freq_hz && dr_index == self.dr_index && t >= self.open && t <= self.close
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RxSchedule {
    pub uplink_end: f64,
    pub rx1: RxWindow,
    pub rx2: RxWindow,
}

/// Receive windows following an uplink that ended at `uplink_end` on
/// `channel` at data rate `dr_index`.
pub fn class_a_cycle(state: &ModemState, uplink_end: f64, channel: usize, dr_index: u8) -> RxSchedule {
    let uplink_freq = state.channels.get(channel).copied().flatten().map(|c| c.freq_hz).unwrap_or(0);
    let rx1_freq = state.rxwin1.get(&(channel as u8)).copied().unwrap_or(uplink_freq);
    let rx1_open = uplink_end + f64::from(state.rx1_delay_ms) / 1000.0;
    RxSchedule {
        uplink_end,
        rx1: RxWindow::new(rx1_open, WindowParams { freq_hz: rx1_freq, dr_index }, state.region),
        rx2: RxWindow::new(rx1_open + RX2_OFFSET_S, state.rxwin2, state.region),
    }
}

/// A downlink the modem accepted, or the end of a confirmed exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModemEvent {
    Joined { dev_addr: DevAddr },
    Ack,
    Downlink { fport: u8, payload: Vec<u8> },
    AckTimeout,
    JoinFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Awaiting {
    Nothing,
    Ack,
    JoinAccept,
}

/// Modem with its receive-window state machine.
#[derive(Debug, Clone)]
pub struct Modem {
    state: ModemState,
    schedule: Option<RxSchedule>,
    last_uplink: Option<(usize, u8, UplinkKind)>,
    awaiting: Awaiting,
    transmitting_until: f64,
}

impl Modem {
    pub fn new(state: ModemState) -> Self {
        Self {
            state,
            schedule: None,
            last_uplink: None,
            awaiting: Awaiting::Nothing,
            transmitting_until: f64::NEG_INFINITY,
        }
    }

    pub fn state(&self) -> &ModemState {
        &self.state
    }

    pub fn schedule(&self) -> Option<&RxSchedule> {
        self.schedule.as_ref()
    }

    /// Run one AT command line.
    pub fn execute(&mut self, line: &str) -> (AtReply, Option<UplinkRequest>) {
        let out = handle_command(&self.state, line);
        self.state = out.state;
        if let Some(req) = &out.action {
            self.last_uplink = Some((req.channel, req.dr_index, req.kind));
            self.awaiting = match req.kind {
                UplinkKind::Unconfirmed => Awaiting::Nothing,
                UplinkKind::Confirmed => Awaiting::Ack,
                UplinkKind::Join => Awaiting::JoinAccept,
            };
            self.schedule = None;
        }
        (out.reply, out.action)
    }

    /// The host reports that the last uplink left the antenna at `tx_end`.
    pub fn tx_done(&mut self, tx_end: f64) -> Option<RxSchedule> {
        let (channel, dr, _) = self.last_uplink?;
        self.transmitting_until = tx_end;
        let s = class_a_cycle(&self.state, tx_end, channel, dr);
        self.schedule = Some(s);
        Some(s)
    }

    /// Whether a downlink starting at `t` on (`freq_hz`, `dr_index`) would be
    /// heard.
    pub fn listening(&self, t: f64, freq_hz: u32, dr_index: u8) -> bool {
        if let Some(s) = &self.schedule {
            if s.rx1.admits(t, freq_hz, dr_index) || s.rx2.admits(t, freq_hz, dr_index) {
                return true;
            }
        }
        self.state.device_class == DeviceClass::C
            && t >= self.transmitting_until
            && freq_hz == self.state.rxwin2.freq_hz
            && dr_index == self.state.rxwin2.dr_index
    }

    /// Offer a downlink to the modem. Returns the reply lines it prints and
    /// the decoded event, when the frame was heard and accepted.
    pub fn receive(&mut self, t: f64, freq_hz: u32, dr_index: u8, bytes: &[u8]) -> Option<(AtReply, ModemEvent)> {
        if !self.listening(t, freq_hz, dr_index) {
            return None;
        }
        match MacFrame::decode(bytes).ok()? {
            MacFrame::JoinAccept(accept) if self.awaiting == Awaiting::JoinAccept => {
                if !accept.verify(&self.state.appkey) {
                    return None;
                }
                let (nwk, app) =
                    derive_session_keys(&self.state.appkey, accept.app_nonce, accept.net_id, self.state.dev_nonce);
                self.state.dev_addr = accept.dev_addr;
                self.state.nwkskey = nwk;
                self.state.appskey = app;
                self.state.joined = true;
                self.state.fcnt_up = 0;
                self.state.rx1_delay_ms = u32::from(accept.rx_delay.max(1)) * 1000;
                self.awaiting = Awaiting::Nothing;
                self.schedule = None;
                let mut reply = AtReply::line("JOIN", "Network joined");
                reply.push(
                    "JOIN",
                    format!("NetID {} DevAddr {}", hex::encode_upper(accept.net_id), accept.dev_addr.to_colon_string()),
                );
                reply.push("JOIN", "Done");
                Some((reply, ModemEvent::Joined { dev_addr: accept.dev_addr }))
            }
            MacFrame::Data(frame) if !frame.is_uplink() => {
                if frame.dev_addr != self.state.dev_addr || !frame.verify(&self.state.nwkskey, &self.state.appskey) {
                    return None;
                }
                let DataFrame { ack, fport, payload, .. } = frame;
                self.schedule = None;
                if ack && self.awaiting == Awaiting::Ack {
                    self.awaiting = Awaiting::Nothing;
                    let mut reply = AtReply::line("CMSGHEX", "ACK received");
                    reply.push("CMSGHEX", "Done");
                    Some((reply, ModemEvent::Ack))
                } else {
                    let reply =
                        AtReply::line("MSGHEX", format!("PORT: {fport}; RX: \"{}\"", hex::encode_upper(&payload)));
                    Some((reply, ModemEvent::Downlink { fport, payload }))
                }
            }
            _ => None,
        }
    }

    /// Time at which the current receive windows close, if any.
    pub fn windows_close_at(&self) -> Option<f64> {
        self.schedule.map(|s| s.rx2.close)
    }

    /// Close the receive windows at `t`; reports a missing ack or join
    /// accept.
    pub fn close_windows(&mut self, t: f64) -> Option<(AtReply, ModemEvent)> {
        let s = self.schedule?;
        if t < s.rx2.close {
            return None;
        }
        self.schedule = None;
        let waiting = std::mem::replace(&mut self.awaiting, Awaiting::Nothing);
        match waiting {
            Awaiting::Ack => {
                let mut reply = AtReply::line("CMSGHEX", "Timeout");
                reply.push("CMSGHEX", "Done");
                Some((reply, ModemEvent::AckTimeout))
            }
            Awaiting::JoinAccept => Some((AtReply::line("JOIN", "Join failed"), ModemEvent::JoinFailed)),
            Awaiting::Nothing => None,
        }
    }
}
