//! Radio medium between sensor nodes and the gateway.
//!
//! There is no path-loss law here. Delivery fraction, median RSSI and median
//! uplink latency are piecewise-linear interpolations through field-measured
//! calibration points, with small random spread added on top:
//!
//! | distance | delivered | median RSSI | median latency |
//! |---------:|----------:|------------:|---------------:|
//! | 100 m    | 100 %     | -112 dBm    | 51.5 ms        |
//! | 200 m    | 95 %      | -112 dBm    | 102.9 ms       |
//! | 350 m    | 10 %      | -115 dBm    | 185.3 ms       |
//! | 700 m    | 0 %       | n/a         | n/a            |
//!
//! The 350 m row stands for a measurement band of 300 to 400 m. The forest
//! environment is the urban table with every distance halved; it is not
//! calibrated against measurements.
//!
//! The gateway's nominal -142 dBm sensitivity at 300 bps is not simulated;
//! reception is decided by the delivery table alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Position;
use crate::ids::hex_bytes;

/// Standard deviation of RSSI around the interpolated median, dB.
pub const RSSI_SIGMA_DB: f64 = 2.0;
/// Half-width of the uniform latency jitter, as a fraction of the median.
pub const LATENCY_JITTER: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediumError {
    #[error("negative distance {0} m")]
    NegativeDistance(f64),
    #[error("invalid calibration table: {0}")]
    Calibration(String),
    #[error("frequency {0} Hz is not an enabled channel")]
    DisabledChannel(u32),
    #[error("non-finite position")]
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EnvironmentKind {
    Urban,
    Forest,
}

/// One measured point. RSSI and latency are absent where nothing arrived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub distance_m: f64,
    pub delivery: f64,
    #[serde(default)]
    pub rssi_dbm: Option<f64>,
    #[serde(default)]
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvironment")]
pub struct LinkEnvironment {
    kind: EnvironmentKind,
    calibration: Vec<CalibrationPoint>,
}

#[derive(Deserialize)]
struct RawEnvironment {
    kind: EnvironmentKind,
    calibration: Vec<CalibrationPoint>,
}

impl TryFrom<RawEnvironment> for LinkEnvironment {
    type Error = MediumError;

    fn try_from(raw: RawEnvironment) -> Result<Self, Self::Error> {
        Self::new(raw.kind, raw.calibration)
    }
}

const URBAN_TABLE: [CalibrationPoint; 4] = [
    CalibrationPoint { distance_m: 100.0, delivery: 1.00, rssi_dbm: Some(-112.0), latency_s: Some(0.0515) },
    CalibrationPoint { distance_m: 200.0, delivery: 0.95, rssi_dbm: Some(-112.0), latency_s: Some(0.1029) },
    CalibrationPoint { distance_m: 350.0, delivery: 0.10, rssi_dbm: Some(-115.0), latency_s: Some(0.1853) },
    CalibrationPoint { distance_m: 700.0, delivery: 0.00, rssi_dbm: None, latency_s: None },
];

/// Distance scale applied to the urban table to obtain the forest table.
pub const FOREST_DISTANCE_SCALE: f64 = 0.5;

impl LinkEnvironment {
    pub fn new(kind: EnvironmentKind, calibration: Vec<CalibrationPoint>) -> Result<Self, MediumError> {
        let bad = |m: &str| Err(MediumError::Calibration(m.to_string()));
        if calibration.is_empty() {
            return bad("no calibration points");
        }
        for w in calibration.windows(2) {
            if w[1].distance_m.partial_cmp(&w[0].distance_m) != Some(std::cmp::Ordering::Greater) {
                return bad("distances must be strictly increasing");
            }
            if w[1].delivery > w[0].delivery {
                return bad("delivery must be non-increasing with distance");
            }
        }
        for c in &calibration {
            if !c.distance_m.is_finite() || c.distance_m < 0.0 {
                return bad("distances must be finite and non-negative");
            }
            if !(0.0..=1.0).contains(&c.delivery) {
                return bad("delivery fractions must lie in [0, 1]");
            }
            if c.rssi_dbm.is_some_and(|r| !r.is_finite() || r > 0.0) {
                return bad("rssi must be finite and <= 0 dBm");
            }
            if c.latency_s.is_some_and(|l| !l.is_finite() || l < 0.0) {
                return bad("latency must be finite and non-negative");
            }
        }
        if calibration.iter().all(|c| c.rssi_dbm.is_none()) || calibration.iter().all(|c| c.latency_s.is_none()) {
            return bad("at least one point needs rssi and latency");
        }
        Ok(Self { kind, calibration })
    }

    pub fn urban() -> Self {
        Self { kind: EnvironmentKind::Urban, calibration: URBAN_TABLE.to_vec() }
    }

    pub fn forest() -> Self {
        let calibration = URBAN_TABLE
            .iter()
            .map(|c| CalibrationPoint { distance_m: c.distance_m * FOREST_DISTANCE_SCALE, ..*c })
            .collect();
        Self { kind: EnvironmentKind::Forest, calibration }
    }

    pub fn preset(kind: EnvironmentKind) -> Self {
        match kind {
            EnvironmentKind::Urban => Self::urban(),
            EnvironmentKind::Forest => Self::forest(),
        }
    }

    pub fn kind(&self) -> EnvironmentKind {
        self.kind
    }

    pub fn calibration(&self) -> &[CalibrationPoint] {
        &self.calibration
    }

    pub fn median_rssi(&self, distance: f64) -> f64 {
        interpolate(self.calibration.iter().filter_map(|c| c.rssi_dbm.map(|r| (c.distance_m, r))), distance)
    }

    pub fn median_latency(&self, distance: f64) -> f64 {
        interpolate(self.calibration.iter().filter_map(|c| c.latency_s.map(|l| (c.distance_m, l))), distance)
    }
}

/// Piecewise-linear through `points` (ascending x), flat outside the span.
fn interpolate(points: impl Iterator<Item = (f64, f64)>, x: f64) -> f64 {
    let pts: Vec<(f64, f64)> = points.collect();
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x == x1 {
            return y1;
        }
        if x < x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    last.1
}

pub fn delivery_probability(distance: f64, env: &LinkEnvironment) -> Result<f64, MediumError> {
    if distance < 0.0 || distance.is_nan() {
        return Err(MediumError::NegativeDistance(distance));
    }
    let p = interpolate(env.calibration.iter().map(|c| (c.distance_m, c.delivery)), distance);
    Ok(p.clamp(0.0, 1.0))
}

/// Interpolated median RSSI plus Gaussian noise, capped at 0 dBm.
pub fn rssi_at<R: Rng + ?Sized>(distance: f64, env: &LinkEnvironment, rng: &mut R) -> f64 {
    let noise: f64 = rng.sample(StandardNormal);
    (env.median_rssi(distance) + RSSI_SIGMA_DB * noise).min(0.0)
}

/// Interpolated median latency with uniform ±10 % jitter.
pub fn uplink_latency<R: Rng + ?Sized>(distance: f64, env: &LinkEnvironment, rng: &mut R) -> f64 {
    let jitter = rng.random_range(-LATENCY_JITTER..=LATENCY_JITTER);
    env.median_latency(distance) * (1.0 + jitter)
}

pub type NodeId = u32;

/// A frame on the air.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioFrame {
    #[serde(rename = "payload_hex", with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub freq_hz: u32,
    pub dr_index: u8,
    pub tx_start: f64,
    pub tx_airtime: f64,
    pub source: NodeId,
}

impl RadioFrame {
    pub fn tx_end(&self) -> f64 {
        self.tx_start + self.tx_airtime
    }

    pub fn overlaps(&self, other: &RadioFrame) -> bool {
        self.freq_hz == other.freq_hz
            && self.dr_index == other.dr_index
            && self.tx_start < other.tx_end()
            && other.tx_start < self.tx_end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedFrame {
    pub frame: RadioFrame,
    pub rssi_dbm: f64,
    pub rx_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Range,
    Collision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Delivered(ReceivedFrame),
    Dropped(DropReason),
}

impl Delivery {
    pub fn received(self) -> Option<ReceivedFrame> {
        match self {
            Delivery::Delivered(rx) => Some(rx),
            Delivery::Dropped(_) => None,
        }
    }
}

/// Single-frame link draw with no collision handling.
///
/// Always consumes the same number of random draws, so the RNG stream does
/// not depend on outcomes.
pub fn transmit<R: Rng + ?Sized>(
    frame: RadioFrame,
    node_pos: Position,
    gw_pos: Position,
    env: &LinkEnvironment,
    rng: &mut R,
) -> Result<Delivery, MediumError> {
    if !node_pos.is_finite() || !gw_pos.is_finite() {
        return Err(MediumError::Position);
    }
    let distance = node_pos.distance_to(&gw_pos);
    let p = delivery_probability(distance, env)?;
    let draw: f64 = rng.random();
    let rssi_dbm = rssi_at(distance, env, rng);
    let latency = uplink_latency(distance, env, rng);
    if draw >= p {
        return Ok(Delivery::Dropped(DropReason::Range));
    }
    let rx_time = frame.tx_end() + latency;
    Ok(Delivery::Delivered(ReceivedFrame { frame, rssi_dbm, rx_time }))
}

pub type TxId = u64;

#[derive(Debug, Clone)]
struct InFlight {
    id: TxId,
    frame: RadioFrame,
    draw: Delivery,
}

/// Shared medium for a scenario: channel gate, collisions and ordering.
///
/// Frames are submitted in non-decreasing `tx_start` order (the simulator's
/// event queue guarantees this); a frame is resolved once the clock passes
/// its end, by which point every overlapping frame has been submitted.
#[derive(Debug, Clone)]
pub struct RadioMedium {
    env: LinkEnvironment,
    gw_pos: Position,
    enabled: Option<BTreeSet<u32>>,
    in_flight: Vec<InFlight>,
    // Resolved frames that may still overlap something in flight.
    recent: Vec<RadioFrame>,
    next_id: TxId,
    last_rx: BTreeMap<NodeId, f64>,
}

impl RadioMedium {
    pub fn new(env: LinkEnvironment, gw_pos: Position) -> Self {
        Self {
            env,
            gw_pos,
            enabled: None,
            in_flight: Vec::new(),
            recent: Vec::new(),
            next_id: 0,
            last_rx: BTreeMap::new(),
        }
    }

    /// Restrict the medium to the gateway's listening frequencies.
    pub fn with_channels(mut self, freqs: impl IntoIterator<Item = u32>) -> Self {
        self.enabled = Some(freqs.into_iter().collect());
        self
    }

    pub fn env(&self) -> &LinkEnvironment {
        &self.env
    }

    pub fn gateway_position(&self) -> Position {
        self.gw_pos
    }

    pub fn channel_enabled(&self, freq_hz: u32) -> bool {
        self.enabled.as_ref().is_none_or(|set| set.contains(&freq_hz))
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn submit<R: Rng + ?Sized>(
        &mut self,
        frame: RadioFrame,
        node_pos: Position,
        rng: &mut R,
    ) -> Result<TxId, MediumError> {
        if !self.channel_enabled(frame.freq_hz) {
            return Err(MediumError::DisabledChannel(frame.freq_hz));
        }
        let draw = transmit(frame.clone(), node_pos, self.gw_pos, &self.env, rng)?;
        let id = self.next_id;
        self.next_id += 1;
        self.in_flight.push(InFlight { id, frame, draw });
        Ok(id)
    }

    /// Resolve every frame whose airtime has ended by `now`.
    pub fn resolve_until(&mut self, now: f64) -> Vec<(TxId, Delivery)> {
        let (mut done, pending): (Vec<InFlight>, Vec<InFlight>) =
            self.in_flight.drain(..).partition(|f| f.frame.tx_end() <= now);
        self.in_flight = pending;
        done.sort_by(|a, b| {
            a.frame
                .tx_end()
                .total_cmp(&b.frame.tx_end())
                .then(a.frame.source.cmp(&b.frame.source))
                .then(a.id.cmp(&b.id))
        });

        let mut out = Vec::with_capacity(done.len());
        for (i, flight) in done.iter().enumerate() {
            let collided = done.iter().enumerate().any(|(j, o)| j != i && flight.frame.overlaps(&o.frame))
                || self.in_flight.iter().any(|o| flight.frame.overlaps(&o.frame))
                || self.recent.iter().any(|o| flight.frame.overlaps(o));
            let outcome = match &flight.draw {
                _ if collided => Delivery::Dropped(DropReason::Collision),
                Delivery::Delivered(rx) => {
                    let mut rx = rx.clone();
                    let last = self.last_rx.entry(flight.frame.source).or_insert(f64::NEG_INFINITY);
                    rx.rx_time = rx.rx_time.max(*last);
                    *last = rx.rx_time;
                    Delivery::Delivered(rx)
                }
                dropped => dropped.clone(),
            };
            out.push((flight.id, outcome));
        }

        self.recent.extend(done.into_iter().map(|f| f.frame));
        let earliest_pending = self.in_flight.iter().map(|f| f.frame.tx_start).fold(f64::INFINITY, f64::min);
        self.recent.retain(|f| f.tx_end() > earliest_pending);
        out
    }

    /// Downlink draw: the same link table, no collisions, arrival at emission.
    pub fn downlink<R: Rng + ?Sized>(&self, frame: &RadioFrame, node_pos: Position, rng: &mut R) -> Option<f64> {
        let distance = node_pos.distance_to(&self.gw_pos);
        let p = delivery_probability(distance, &self.env).ok()?;
        let draw: f64 = rng.random();
        (draw < p).then_some(frame.tx_start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(start: f64, freq: u32, source: NodeId) -> RadioFrame {
        RadioFrame { payload: vec![0; 6], freq_hz: freq, dr_index: 3, tx_start: start, tx_airtime: 0.1, source }
    }

    #[test]
    fn delivery_examples() {
        let env = LinkEnvironment::urban();
        assert_eq!(delivery_probability(100.0, &env).unwrap(), 1.0);
        assert_eq!(delivery_probability(700.0, &env).unwrap(), 0.0);
        assert!((delivery_probability(150.0, &env).unwrap() - 0.975).abs() < 1e-12);
        assert_eq!(delivery_probability(0.0, &env).unwrap(), 1.0);
        assert_eq!(delivery_probability(5000.0, &env).unwrap(), 0.0);
        assert!(delivery_probability(-1.0, &env).is_err());
    }

    #[test]
    fn medians_pass_through_calibration() {
        let env = LinkEnvironment::urban();
        assert_eq!(env.median_rssi(100.0), -112.0);
        assert_eq!(env.median_rssi(200.0), -112.0);
        assert_eq!(env.median_rssi(350.0), -115.0);
        assert_eq!(env.median_rssi(700.0), -115.0);
        assert_eq!(env.median_latency(100.0), 0.0515);
        assert_eq!(env.median_latency(200.0), 0.1029);
        assert_eq!(env.median_latency(350.0), 0.1853);
    }

    #[test]
    fn forest_halves_distances() {
        let env = LinkEnvironment::forest();
        assert_eq!(delivery_probability(100.0, &env).unwrap(), 0.95);
        assert_eq!(delivery_probability(350.0, &env).unwrap(), 0.0);
    }

    #[test]
    fn calibration_validation() {
        let mut pts = URBAN_TABLE.to_vec();
        pts[1].delivery = 1.0;
        pts[0].delivery = 0.5;
        assert!(LinkEnvironment::new(EnvironmentKind::Urban, pts).is_err());
        let mut pts = URBAN_TABLE.to_vec();
        pts[2].distance_m = 150.0;
        assert!(LinkEnvironment::new(EnvironmentKind::Urban, pts).is_err());
        assert!(LinkEnvironment::new(EnvironmentKind::Urban, vec![]).is_err());
    }

    #[test]
    fn far_frames_always_drop() {
        let env = LinkEnvironment::urban();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d =
                transmit(frame(0.0, 915_200_000, 1), Position::new(700.0, 0.0), Position::default(), &env, &mut rng)
                    .unwrap();
            assert_eq!(d, Delivery::Dropped(DropReason::Range));
        }
    }

    #[test]
    fn zero_distance_always_delivers() {
        let env = LinkEnvironment::urban();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d =
                transmit(frame(1.0, 915_200_000, 1), Position::default(), Position::default(), &env, &mut rng).unwrap();
            let rx = d.received().expect("delivered");
            assert!(rx.rssi_dbm <= 0.0);
            assert!(rx.rx_time >= rx.frame.tx_end());
        }
    }

    #[test]
    fn overlapping_frames_collide() {
        let mut medium = RadioMedium::new(LinkEnvironment::urban(), Position::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        medium.submit(frame(0.0, 915_200_000, 1), Position::new(10.0, 0.0), &mut rng).unwrap();
        medium.submit(frame(0.05, 915_200_000, 2), Position::new(20.0, 0.0), &mut rng).unwrap();
        let out = medium.resolve_until(1.0);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(_, d)| *d == Delivery::Dropped(DropReason::Collision)));
    }

    #[test]
    fn collision_detected_across_resolve_calls() {
        let mut medium = RadioMedium::new(LinkEnvironment::urban(), Position::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        medium.submit(frame(0.0, 915_200_000, 1), Position::new(10.0, 0.0), &mut rng).unwrap();
        medium.submit(frame(0.09, 915_200_000, 2), Position::new(10.0, 0.0), &mut rng).unwrap();
        // first ends at 0.1, second at 0.19
        let first = medium.resolve_until(0.1);
        assert_eq!(first[0].1, Delivery::Dropped(DropReason::Collision));
        let second = medium.resolve_until(0.2);
        assert_eq!(second.len(), 1);
        assert_eq!(second[0].1, Delivery::Dropped(DropReason::Collision));
    }

    #[test]
    fn different_channels_do_not_collide() {
        let mut medium = RadioMedium::new(LinkEnvironment::urban(), Position::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        medium.submit(frame(0.0, 915_200_000, 1), Position::new(10.0, 0.0), &mut rng).unwrap();
        medium.submit(frame(0.05, 915_400_000, 2), Position::new(10.0, 0.0), &mut rng).unwrap();
        let out = medium.resolve_until(1.0);
        assert!(out.iter().all(|(_, d)| matches!(d, Delivery::Delivered(_))));
    }

    #[test]
    fn disabled_channel_rejected() {
        let mut medium = RadioMedium::new(LinkEnvironment::urban(), Position::default()).with_channels([915_200_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = medium.submit(frame(0.0, 923_300_000, 1), Position::default(), &mut rng).unwrap_err();
        assert_eq!(err, MediumError::DisabledChannel(923_300_000));
    }

    #[test]
    fn same_source_order_preserved() {
        let mut medium = RadioMedium::new(LinkEnvironment::urban(), Position::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let node = Position::new(150.0, 0.0);
        let mut last = f64::NEG_INFINITY;
        for k in 0..200 {
            let f = RadioFrame { tx_airtime: 0.001, ..frame(k as f64 * 0.002, 915_200_000, 7) };
            medium.submit(f, node, &mut rng).unwrap();
            for (_, d) in medium.resolve_until(k as f64 * 0.002 + 0.001) {
                if let Delivery::Delivered(rx) = d {
                    assert!(rx.rx_time >= last);
                    last = rx.rx_time;
                }
            }
        }
    }
}
