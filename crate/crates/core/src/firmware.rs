//! The node sketch: sample, classify, encode, send.
//!
//! Classification works in physical units against banded thresholds with
//! closed lower bounds: a value at a band floor belongs to that band.
//!
//! | sensor | alert floor | risk floor |
//! |--------|------------:|-----------:|
//! | gas    | 100 ppm     | 600 ppm    |
//! | flame  | 900         | 1100       |
//! | temp   | 30 °C       | 60 °C      |
//!
//! The original sketch also guarded on raw ADC counts (gas > 255 and fire >
//! 255 to report, gas < 16 and fire < 40 for its test branch, gas > 300 and
//! fire < 400 for the alarm loop). Those do not line up with the bands above
//! and are not used here.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Position;
use crate::medium::NodeId;
use crate::modem::{AtReply, Modem, UplinkRequest};
use crate::sensors::{AdcReading, FieldSample, PhysicalReading, SensorSuite, ADC_MAX};

pub const PAYLOAD_LEN: usize = 6;
pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 5.0;
pub const DEFAULT_HEARTBEAT_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    NoRisk,
    Alert,
    Risk,
}

impl RiskLevel {
    pub fn name(self) -> &'static str {
        match self {
            RiskLevel::NoRisk => "NoRisk",
            RiskLevel::Alert => "Alert",
            RiskLevel::Risk => "Risk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FirmwareError {
    #[error("{name}: alert floor {alert} must be below risk floor {risk}")]
    Thresholds { name: &'static str, alert: f64, risk: f64 },
    #[error("{field} out of range: {value}")]
    OutOfRange { field: &'static str, value: i32 },
    #[error("payload must be {PAYLOAD_LEN} bytes, got {0}")]
    Length(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub alert: f64,
    pub risk: f64,
}

impl Band {
    pub fn new(alert: f64, risk: f64) -> Self {
        Self { alert, risk }
    }

    fn validate(&self, name: &'static str) -> Result<(), FirmwareError> {
        if self.alert < self.risk {
            Ok(())
        } else {
            Err(FirmwareError::Thresholds { name, alert: self.alert, risk: self.risk })
        }
    }
}

pub fn classify(value: f64, band: &Band) -> RiskLevel {
    if value >= band.risk {
        RiskLevel::Risk
    } else if value >= band.alert {
        RiskLevel::Alert
    } else {
        RiskLevel::NoRisk
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskThresholds {
    pub gas: Band,
    pub flame: Band,
    pub temp: Band,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self { gas: Band::new(100.0, 600.0), flame: Band::new(900.0, 1100.0), temp: Band::new(30.0, 60.0) }
    }
}

impl RiskThresholds {
    pub fn validate(&self) -> Result<(), FirmwareError> {
        self.gas.validate("gas")?;
        self.flame.validate("flame")?;
        self.temp.validate("temp")
    }

    pub fn levels(&self, r: &PhysicalReading) -> SensorLevels {
        SensorLevels {
            gas: classify(r.gas_ppm, &self.gas),
            flame: classify(r.flame, &self.flame),
            temp: classify(r.temp_c, &self.temp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLevels {
    pub gas: RiskLevel,
    pub flame: RiskLevel,
    pub temp: RiskLevel,
}

impl SensorLevels {
    pub fn combined(&self) -> RiskLevel {
        self.gas.max(self.flame).max(self.temp)
    }
}

/// The three fields carried in every uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Payload {
    pub gas: u16,
    pub fire: u16,
    pub temp: i16,
}

/// Big-endian pairs: gas, fire, temp (two's complement).
pub fn encode_payload(gas_raw: u16, fire_raw: u16, temp_c: i16) -> Result<[u8; PAYLOAD_LEN], FirmwareError> {
    if gas_raw > ADC_MAX {
        return Err(FirmwareError::OutOfRange { field: "gas", value: gas_raw.into() });
    }
    if fire_raw > ADC_MAX {
        return Err(FirmwareError::OutOfRange { field: "fire", value: fire_raw.into() });
    }
    if !(-40..=80).contains(&temp_c) {
        return Err(FirmwareError::OutOfRange { field: "temp", value: temp_c.into() });
    }
    let [g0, g1] = gas_raw.to_be_bytes();
    let [f0, f1] = fire_raw.to_be_bytes();
    let [t0, t1] = temp_c.to_be_bytes();
    Ok([g0, g1, f0, f1, t0, t1])
}

pub fn decode_payload(bytes: &[u8]) -> Result<Payload, FirmwareError> {
    let b: &[u8; PAYLOAD_LEN] = bytes.try_into().map_err(|_| FirmwareError::Length(bytes.len()))?;
    Ok(Payload {
        gas: u16::from_be_bytes([b[0], b[1]]),
        fire: u16::from_be_bytes([b[2], b[3]]),
        temp: i16::from_be_bytes([b[4], b[5]]),
    })
}

impl Payload {
    pub fn from_reading(r: &AdcReading) -> Self {
        Self { gas: r.gas_raw.min(ADC_MAX), fire: r.fire_raw.min(ADC_MAX), temp: r.temp_c.clamp(-40, 80) }
    }

    pub fn encode(&self) -> Result<[u8; PAYLOAD_LEN], FirmwareError> {
        encode_payload(self.gas, self.fire, self.temp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    pub sample_period_s: f64,
    pub heartbeat_s: f64,
    pub gas_gain: f64,
    pub thresholds: RiskThresholds,
    /// Send with CMSGHEX instead of MSGHEX.
    pub confirmed: bool,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            sample_period_s: DEFAULT_SAMPLE_PERIOD_S,
            heartbeat_s: DEFAULT_HEARTBEAT_S,
            gas_gain: 1.0,
            thresholds: RiskThresholds::default(),
            confirmed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SendReason {
    LevelChange,
    Elevated,
    Heartbeat,
}

/// What one sampling tick did.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub reading: AdcReading,
    pub physical: PhysicalReading,
    pub levels: SensorLevels,
    pub reason: Option<SendReason>,
    pub command: Option<String>,
    pub reply: Option<AtReply>,
    pub uplink: Option<UplinkRequest>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub dev_id: String,
    pub position: Position,
    pub config: NodeConfig,
    pub sensors: SensorSuite,
    pub modem: Modem,
    last_levels: Option<SensorLevels>,
    last_send: Option<f64>,
}

impl Node {
    pub fn new(id: NodeId, dev_id: impl Into<String>, position: Position, modem: Modem, config: NodeConfig) -> Self {
        let mut sensors = SensorSuite::default();
        sensors.gas.gain = config.gas_gain;
        Self { id, dev_id: dev_id.into(), position, config, sensors, modem, last_levels: None, last_send: None }
    }

    /// Run boot lines through the modem, returning each line with its reply.
    pub fn boot<'a>(&mut self, lines: impl IntoIterator<Item = &'a str>) -> Vec<(String, AtReply)> {
        lines
            .into_iter()
            .map(|line| {
                let (reply, _) = self.modem.execute(line);
                (line.to_string(), reply)
            })
            .collect()
    }

    pub fn last_levels(&self) -> Option<SensorLevels> {
        self.last_levels
    }

    fn send_reason(&self, levels: &SensorLevels, t: f64) -> Option<SendReason> {
        if self.last_levels.is_some_and(|prev| prev != *levels) {
            return Some(SendReason::LevelChange);
        }
        if levels.combined() >= RiskLevel::Alert {
            return Some(SendReason::Elevated);
        }
        match self.last_send {
            None => Some(SendReason::Heartbeat),
            Some(last) if t - last >= self.config.heartbeat_s - 1e-9 => Some(SendReason::Heartbeat),
            _ => None,
        }
    }

    /// One sampling tick at sim-time `t`.
    pub fn tick<R: Rng + ?Sized>(&mut self, field: &FieldSample, t: f64, rng: &mut R) -> Tick {
        let reading = self.sensors.sample(field, t, rng);
        let physical = reading.physical(self.sensors.gas.gain);
        let levels = self.config.thresholds.levels(&physical);
        let reason = self.send_reason(&levels, t);
        self.last_levels = Some(levels);

        let mut tick = Tick { reading, physical, levels, reason, command: None, reply: None, uplink: None };
        if reason.is_none() {
            return tick;
        }
        let bytes = Payload::from_reading(&reading).encode().expect("payload clamped to range");
        let verb = if self.config.confirmed { "CMSGHEX" } else { "MSGHEX" };
        let command = format!("AT+{verb}=\"{}\"", hex::encode_upper(bytes));
        let (reply, uplink) = self.modem.execute(&command);
        if uplink.is_some() {
            self.last_send = Some(t);
        } else {
            log::warn!("node {}: {} -> {}", self.dev_id, command, reply.to_wire().trim_end());
        }
        tick.command = Some(command);
        tick.reply = Some(reply);
        tick.uplink = uplink;
        tick
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{boot_script_lines, ModemState};
    use crate::sensors::{field_at, FireEvent};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classifier_bands() {
        let th = RiskThresholds::default();
        assert_eq!(classify(15.0, &th.gas), RiskLevel::NoRisk);
        assert_eq!(classify(250.0, &th.gas), RiskLevel::Alert);
        assert_eq!(classify(700.0, &th.gas), RiskLevel::Risk);
        assert_eq!(classify(100.0, &th.gas), RiskLevel::Alert);
        assert_eq!(classify(600.0, &th.gas), RiskLevel::Risk);
        assert_eq!(classify(30.0, &th.temp), RiskLevel::Alert);
        assert_eq!(classify(60.0, &th.temp), RiskLevel::Risk);
        assert_eq!(classify(900.0, &th.flame), RiskLevel::Alert);
        assert_eq!(classify(1100.0, &th.flame), RiskLevel::Risk);
        assert!(th.validate().is_ok());
        let bad = RiskThresholds { temp: Band::new(60.0, 30.0), ..th };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn payload_examples() {
        assert_eq!(encode_payload(985, 400, 28).unwrap(), [0x03, 0xD9, 0x01, 0x90, 0x00, 0x1C]);
        assert_eq!(encode_payload(0, 0, 0).unwrap(), [0; 6]);
        assert_eq!(encode_payload(10, 20, -5).unwrap(), [0x00, 0x0A, 0x00, 0x14, 0xFF, 0xFB]);
        assert!(encode_payload(1024, 0, 0).is_err());
        assert!(encode_payload(0, 0, 81).is_err());
        assert_eq!(
            decode_payload(&[0x03, 0xD9, 0x01, 0x90, 0x00, 0x1C]).unwrap(),
            Payload { gas: 985, fire: 400, temp: 28 }
        );
        assert_eq!(decode_payload(&[0; 5]), Err(FirmwareError::Length(5)));
    }

    #[test]
    fn four_bit_shift_does_not_invert() {
        let b = [0x03u8, 0xD9];
        assert_eq!((u16::from(b[0]) << 4) | u16::from(b[1]), 249);
    }

    // String(b, HEX) drops leading zeros; the sketch pads by hand.
    fn sketch_monitoring_line(p: &[u8; 6]) -> String {
        let h = |b: u8| format!("{b:x}");
        format!("AT+MSGHEX=0{}{}0{}{}0{}{}", h(p[0]), h(p[1]), h(p[2]), h(p[3]), h(p[4]), h(p[5]))
    }

    #[test]
    fn sketch_string_matches_only_by_luck() {
        let p = encode_payload(985, 400, 28).unwrap();
        assert_eq!(sketch_monitoring_line(&p), "AT+MSGHEX=03d90190001c");
        // a two-digit high byte breaks the hand padding
        let p = encode_payload(10, 20, -5).unwrap();
        assert_ne!(sketch_monitoring_line(&p)[10..], hex::encode(p));
    }

    #[test]
    fn exhaustive_round_trip() {
        for gas in 0..=ADC_MAX {
            for fire in (0..=ADC_MAX).step_by(31).chain([ADC_MAX]) {
                for temp in -40..=80i16 {
                    let b = encode_payload(gas, fire, temp).unwrap();
                    assert_eq!(decode_payload(&b).unwrap(), Payload { gas, fire, temp });
                }
            }
        }
    }

    fn booted_node(pos: Position) -> Node {
        let mut node = Node::new(1, "node-1", pos, Modem::new(ModemState::default()), NodeConfig::default());
        node.sensors.noise_free = true;
        node.boot(boot_script_lines());
        node
    }

    #[test]
    fn steady_state_heartbeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut node = booted_node(Position::new(100.0, 0.0));
        let sends: Vec<f64> = (0..24)
            .map(|k| k as f64 * 5.0)
            .filter(|&t| node.tick(&FieldSample::AMBIENT, t, &mut rng).uplink.is_some())
            .collect();
        assert_eq!(sends, vec![0.0, 60.0]);
    }

    #[test]
    fn crossing_sends_on_next_tick() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut node = booted_node(Position::default());
        let mut first_alert = None;
        for k in 0..10 {
            let t = k as f64 * 5.0;
            let field =
                if t >= 17.0 { FieldSample { gas: 250.0, ..FieldSample::AMBIENT } } else { FieldSample::AMBIENT };
            let tick = node.tick(&field, t, &mut rng);
            if tick.levels.gas == RiskLevel::Alert && first_alert.is_none() {
                assert_eq!(tick.reason, Some(SendReason::LevelChange));
                assert!(tick.uplink.is_some());
                first_alert = Some(t);
            } else if t > 20.0 {
                assert_eq!(tick.reason, Some(SendReason::Elevated));
            }
        }
        assert_eq!(first_alert, Some(20.0));
    }

    #[test]
    fn fire_at_three_metres_reaches_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut node = booted_node(Position::new(3.0, 0.0));
        let fires = vec![FireEvent::new(1, Position::default(), 0.0, 1.0)];
        let tick = node.tick(&field_at(&fires, node.position, 0.0), 0.0, &mut rng);
        assert_eq!(tick.levels.combined(), RiskLevel::Risk);
        assert_eq!(tick.levels.gas, RiskLevel::Alert);
        assert_eq!(tick.reading.fire_raw, 0);
        let expected = hex::encode_upper(Payload::from_reading(&tick.reading).encode().unwrap());
        assert_eq!(tick.command, Some(format!("AT+MSGHEX=\"{expected}\"")));
    }

    proptest! {
        #[test]
        fn classify_monotone(a in -100.0f64..2000.0, d in 0.0f64..500.0) {
            let th = RiskThresholds::default();
            for band in [th.gas, th.flame, th.temp] {
                prop_assert!(classify(a, &band) <= classify(a + d, &band));
            }
        }

        #[test]
        fn combined_is_max(g in 0.0f64..1200.0, f in 0.0f64..1100.0, t in -40.0f64..80.0) {
            let th = RiskThresholds::default();
            let l = th.levels(&PhysicalReading { gas_ppm: g, flame: f, temp_c: t });
            let max = [l.gas, l.flame, l.temp].into_iter().max().unwrap();
            prop_assert_eq!(l.combined(), max);
        }
    }
}
