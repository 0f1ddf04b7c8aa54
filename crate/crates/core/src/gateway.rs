//! Packet forwarder between the radio medium and the network server.
//!
//! Uplinks go to the server as one JSON object per line:
//!
//! ```text
//! {"gw_id":"B827EBFFFE000001","dev_payload_hex":"402D170326...","freq_hz":915200000,"dr":3,"rssi_dbm":-112.4,"gw_time_s":12.5}
//! ```
//!
//! `gw_time_s` is the gateway clock when reception ended, which is also the
//! reference for timestamp-mode downlinks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Position;
use crate::ids::{hex_bytes, Eui64};
use crate::medium::{RadioFrame, ReceivedFrame};
use crate::phy::{airtime, dr_lookup};

pub const BACKHAUL_QUEUE: usize = 1024;
/// Delay between a triggered-mode confirmation and emission.
pub const TRIGGER_DELAY_S: f64 = 0.0015;
/// Lead time at which the radio is prepared before a timestamped emission.
pub const TIMESTAMP_LEAD_S: f64 = 0.0015;
pub const DEFAULT_TX_START_DELAY_S: f64 = 0.0005;
/// Source id used for gateway emissions on the medium.
pub const GATEWAY_SOURCE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UplinkMessage {
    pub gw_id: Eui64,
    #[serde(with = "hex_bytes")]
    pub dev_payload_hex: Vec<u8>,
    pub freq_hz: u32,
    pub dr: u8,
    pub rssi_dbm: f64,
    pub gw_time_s: f64,
}

#[derive(Debug, Error)]
pub enum BackhaulError {
    #[error("backhaul line too long ({0} bytes)")]
    TooLong(usize),
    #[error("bad backhaul line: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

pub const MAX_LINE: usize = 8192;

impl UplinkMessage {
    /// One line of the backhaul stream, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("uplink message serializes");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, BackhaulError> {
        if line.len() > MAX_LINE {
            return Err(BackhaulError::TooLong(line.len()));
        }
        let msg: UplinkMessage = serde_json::from_str(line.trim_end_matches(['\r', '\n']))?;
        if !msg.rssi_dbm.is_finite() {
            return Err(BackhaulError::NonFinite("rssi_dbm"));
        }
        if !msg.gw_time_s.is_finite() {
            return Err(BackhaulError::NonFinite("gw_time_s"));
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TxMode {
    /// Emit at a gateway-clock time.
    Timestamp { at_s: f64 },
    /// Emit as soon as possible.
    Immediate,
    /// Emit shortly after an external trigger.
    Triggered { trigger_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkRequest {
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub freq_hz: u32,
    pub dr: u8,
    pub mode: TxMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("too late: emission at {at:.6} s is before now ({now:.6} s)")]
    TooLate { at: f64, now: f64 },
    #[error("unknown downlink data rate DR{0}")]
    DataRate(u8),
}

#[derive(Debug, Clone)]
pub struct Gateway {
    pub id: Eui64,
    pub position: Position,
    pub region: &'static str,
    pub channels: Vec<u32>,
    pub tx_start_delay_s: f64,
    backhaul_up: bool,
    queue: VecDeque<UplinkMessage>,
    dropped: u64,
    forwarded: u64,
}

/// The eight 125 kHz channels the node script enables.
pub fn default_channels() -> Vec<u32> {
    (0..8).map(|i| 915_200_000 + i * 200_000).collect()
}

impl Gateway {
    pub fn new(id: Eui64, position: Position) -> Self {
        Self {
            id,
            position,
            region: "AU915",
            channels: default_channels(),
            tx_start_delay_s: DEFAULT_TX_START_DELAY_S,
            backhaul_up: true,
            queue: VecDeque::new(),
            dropped: 0,
            forwarded: 0,
        }
    }

    pub fn backhaul_up(&self) -> bool {
        self.backhaul_up
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Messages discarded because the backhaul queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    pub fn wrap(&self, rx: &ReceivedFrame) -> UplinkMessage {
        UplinkMessage {
            gw_id: self.id,
            dev_payload_hex: rx.frame.payload.clone(),
            freq_hz: rx.frame.freq_hz,
            dr: rx.frame.dr_index,
            rssi_dbm: rx.rssi_dbm,
            gw_time_s: rx.frame.tx_end(),
        }
    }

    /// Wrap a received frame; returns what reaches the server now.
    pub fn forward_uplink(&mut self, rx: &ReceivedFrame) -> Vec<UplinkMessage> {
        let msg = self.wrap(rx);
        if self.backhaul_up {
            self.forwarded += 1;
            return vec![msg];
        }
        if self.queue.len() >= BACKHAUL_QUEUE {
            self.queue.pop_front();
            self.dropped += 1;
        }
        self.queue.push_back(msg);
        Vec::new()
    }

    /// Switch the backhaul; bringing it up flushes the queue in order.
    pub fn set_backhaul(&mut self, up: bool) -> Vec<UplinkMessage> {
        self.backhaul_up = up;
        if !up {
            return Vec::new();
        }
        let out: Vec<_> = self.queue.drain(..).collect();
        self.forwarded += out.len() as u64;
        out
    }

    /// Emission time for a downlink requested at `now`.
    pub fn emission_time(&self, now: f64, mode: TxMode) -> Result<f64, GatewayError> {
        let at = match mode {
            TxMode::Timestamp { at_s } => at_s,
            TxMode::Immediate => return Ok(now + self.tx_start_delay_s),
            TxMode::Triggered { trigger_s } => trigger_s + TRIGGER_DELAY_S,
        };
        if at < now {
            return Err(GatewayError::TooLate { at, now });
        }
        Ok(at)
    }

    /// Schedule a downlink and build the frame it puts on the air.
    pub fn schedule_downlink(&self, now: f64, req: &DownlinkRequest) -> Result<RadioFrame, GatewayError> {
        let entry = dr_lookup(self.region, req.dr).map_err(|_| GatewayError::DataRate(req.dr))?;
        let tx_start = self.emission_time(now, req.mode)?;
        if let TxMode::Timestamp { at_s } = req.mode {
            log::trace!("gateway {}: radio prepared at {:.4} s", self.id, at_s - TIMESTAMP_LEAD_S);
        }
        Ok(RadioFrame {
            payload: req.payload.clone(),
            freq_hz: req.freq_hz,
            dr_index: req.dr,
            tx_start,
            tx_airtime: airtime(req.payload.len(), &entry.modulation()),
            source: GATEWAY_SOURCE,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gw() -> Gateway {
        Gateway::new("B827EBFFFE000001".parse().unwrap(), Position::default())
    }

    fn rx(rssi: f64, t: f64) -> ReceivedFrame {
        ReceivedFrame {
            frame: RadioFrame {
                payload: vec![1, 2, 3],
                freq_hz: 915_200_000,
                dr_index: 3,
                tx_start: t,
                tx_airtime: 0.5,
                source: 1,
            },
            rssi_dbm: rssi,
            rx_time: t + 0.55,
        }
    }

    #[test]
    fn golden_line() {
        let msg = gw().wrap(&rx(-112.0, 12.0));
        let line = msg.to_line();
        assert_eq!(
            line,
            "{\"gw_id\":\"B827EBFFFE000001\",\"dev_payload_hex\":\"010203\",\"freq_hz\":915200000,\"dr\":3,\"rssi_dbm\":-112.0,\"gw_time_s\":12.5}\n"
        );
        assert_eq!(UplinkMessage::from_line(&line).unwrap(), msg);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(UplinkMessage::from_line("").is_err());
        assert!(UplinkMessage::from_line("{\"gw_id\":\"XYZ\"}").is_err());
        let missing =
            "{\"gw_id\":\"B827EBFFFE000001\",\"dev_payload_hex\":\"01\",\"freq_hz\":1,\"dr\":3,\"rssi_dbm\":-1}";
        assert!(UplinkMessage::from_line(missing).is_err());
        assert!(UplinkMessage::from_line(&"x".repeat(MAX_LINE + 1)).is_err());
    }

    #[test]
    fn rssi_passes_through() {
        let mut g = gw();
        assert_eq!(g.forward_uplink(&rx(-112.0, 0.0))[0].rssi_dbm, -112.0);
    }

    #[test]
    fn backhaul_buffers_in_order() {
        let mut g = gw();
        g.set_backhaul(false);
        for t in 0..3 {
            assert!(g.forward_uplink(&rx(-100.0, t as f64)).is_empty());
        }
        let out = g.set_backhaul(true);
        let times: Vec<f64> = out.iter().map(|m| m.gw_time_s).collect();
        assert_eq!(times, vec![0.5, 1.5, 2.5]);
        assert_eq!(g.queued(), 0);
    }

    #[test]
    fn backhaul_overflow_drops_oldest() {
        let mut g = gw();
        g.set_backhaul(false);
        for t in 0..=BACKHAUL_QUEUE {
            g.forward_uplink(&rx(-100.0, t as f64));
        }
        assert_eq!(g.dropped(), 1);
        let out = g.set_backhaul(true);
        assert_eq!(out.len(), BACKHAUL_QUEUE);
        assert_eq!(out[0].gw_time_s, 1.5);
    }

    #[test]
    fn tx_modes() {
        let g = Gateway { tx_start_delay_s: 0.0005, ..gw() };
        assert_eq!(g.emission_time(10.0, TxMode::Immediate).unwrap(), 10.0005);
        assert_eq!(g.emission_time(10.0, TxMode::Triggered { trigger_s: 10.0 }).unwrap(), 10.0015);
        assert_eq!(g.emission_time(10.0, TxMode::Timestamp { at_s: 11.0 }).unwrap(), 11.0);
        let late = g.emission_time(10.0, TxMode::Timestamp { at_s: 9.0 }).unwrap_err();
        assert!(late.to_string().starts_with("too late"));
    }

    #[test]
    fn downlink_frame_airtime() {
        let req = DownlinkRequest { payload: vec![0; 12], freq_hz: 923_300_000, dr: 8, mode: TxMode::Immediate };
        let f = gw().schedule_downlink(1.0, &req).unwrap();
        assert_eq!(f.tx_start, 1.0005);
        assert!(f.tx_airtime > 0.0);
        let bad = DownlinkRequest { dr: 7, ..req };
        assert_eq!(gw().schedule_downlink(1.0, &bad), Err(GatewayError::DataRate(7)));
    }

    proptest! {
        #[test]
        fn parse_is_total(s in ".{0,200}") {
            let _ = UplinkMessage::from_line(&s);
        }

        #[test]
        fn line_round_trip(payload in proptest::collection::vec(any::<u8>(), 0..64), rssi in -140.0f64..0.0, t in 0.0f64..1e6) {
            let msg = UplinkMessage { gw_id: Eui64([7; 8]), dev_payload_hex: payload, freq_hz: 915_200_000, dr: 2, rssi_dbm: rssi, gw_time_s: t };
            prop_assert_eq!(UplinkMessage::from_line(&msg.to_line()).unwrap(), msg);
        }
    }
}
