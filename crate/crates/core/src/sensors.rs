//! Fire fields and the three virtual sensors that sample them.
//!
//! Each fire adds an exponentially decaying excess over ambient:
//!
//! ```text
//! value(d) = ambient + sum_fires intensity * amplitude * exp(-d / decay)
//! ```
//!
//! | field | ambient | amplitude | decay  |
//! |-------|--------:|----------:|-------:|
//! | gas   | 15 ppm  | 1320 ppm  | 2.66 m |
//! | temp  | 28 °C   | 70 °C     | 1.5 m  |
//! | flame | 780     | 8000      | 1.0 m  |
//!
//! At full intensity this gives gas >= 600 ppm inside 2 m, >= 100 ppm out
//! to 7 m and under 20 ppm from 15 m; temperature >= 60 °C inside 1 m;
//! a saturated flame reading (1100) out to 3.2 m and background by 7 m.
//! Sensors are omnidirectional.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geo::Position;

pub const AMBIENT_GAS_PPM: f64 = 15.0;
pub const AMBIENT_FLAME: f64 = 780.0;
pub const AMBIENT_TEMP_C: f64 = 28.0;

pub const GAS_AMPLITUDE_PPM: f64 = 1320.0;
pub const GAS_DECAY_M: f64 = 2.66;
pub const TEMP_AMPLITUDE_C: f64 = 70.0;
pub const TEMP_DECAY_M: f64 = 1.5;
pub const FLAME_AMPLITUDE: f64 = 8000.0;
pub const FLAME_DECAY_M: f64 = 1.0;

/// Upper end of the flame sensor's band (nm).
pub const FLAME_MAX: f64 = 1100.0;
/// Flame proxy at which the digital output drops to 0.
pub const FLAME_DIGITAL_THRESHOLD: f64 = 900.0;
/// Full scale of the MQ-135 at unit gain.
pub const GAS_FULL_SCALE_PPM: f64 = 1000.0;

pub const ADC_MAX: u16 = 1023;
pub const TEMP_MIN_C: f64 = -40.0;
pub const TEMP_MAX_C: f64 = 80.0;

pub const DHT22_RESPONSE_S: f64 = 2.0;
pub const DHT22_SIGMA_C: f64 = 0.5;
pub const MQ135_SIGMA_COUNTS: f64 = 5.0;

pub type FireId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireEvent {
    #[serde(default)]
    pub id: FireId,
    pub position: Position,
    #[serde(default, rename = "start_s")]
    pub start: f64,
    #[serde(default = "full")]
    pub intensity: f64,
    #[serde(default = "yes")]
    pub active: bool,
}

fn yes() -> bool {
    true
}

fn full() -> f64 {
    1.0
}

impl FireEvent {
    pub fn new(id: FireId, position: Position, start: f64, intensity: f64) -> Self {
        Self { id, position, start, intensity: intensity.clamp(0.0, 1.0), active: true }
    }

    fn weight(&self, t: f64) -> f64 {
        if self.active && t >= self.start {
            self.intensity.clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub gas: f64,
    pub flame: f64,
    pub temp: f64,
}

impl FieldSample {
    pub const AMBIENT: FieldSample = FieldSample { gas: AMBIENT_GAS_PPM, flame: AMBIENT_FLAME, temp: AMBIENT_TEMP_C };
}

pub fn field_at(fires: &[FireEvent], pos: Position, t: f64) -> FieldSample {
    let mut s = FieldSample::AMBIENT;
    for fire in fires {
        let w = fire.weight(t);
        if w == 0.0 {
            continue;
        }
        let d = fire.position.distance_to(&pos);
        s.gas += w * GAS_AMPLITUDE_PPM * (-d / GAS_DECAY_M).exp();
        s.temp += w * TEMP_AMPLITUDE_C * (-d / TEMP_DECAY_M).exp();
        s.flame += w * FLAME_AMPLITUDE * (-d / FLAME_DECAY_M).exp();
    }
    s.gas = s.gas.max(0.0);
    s.flame = s.flame.clamp(0.0, FLAME_MAX);
    s
}

/// DHT22: first-order lag with a 2 s time constant, 0.5 °C noise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dht22 {
    lagged: Option<f64>,
    last: Option<(f64, f64)>,
}

impl Dht22 {
    pub fn sample<R: Rng + ?Sized>(&mut self, field_temp: f64, t: f64, rng: &mut R, noise: bool) -> f64 {
        if let Some((last_t, reading)) = self.last {
            if t - last_t < DHT22_RESPONSE_S {
                return reading;
            }
        }
        let lagged = match (self.lagged, self.last) {
            (Some(prev), Some((last_t, _))) => {
                let alpha = 1.0 - (-(t - last_t) / DHT22_RESPONSE_S).exp();
                prev + (field_temp - prev) * alpha
            }
            _ => field_temp,
        };
        self.lagged = Some(lagged);
        let n: f64 = if noise { rng.sample(StandardNormal) } else { 0.0 };
        let reading = (lagged + DHT22_SIGMA_C * n).clamp(TEMP_MIN_C, TEMP_MAX_C);
        self.last = Some((t, reading));
        reading
    }
}

/// IR flame sensor with inverted analog output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlameSensor {
    /// A damaged element reads like open circuit: raw pinned at 1023.
    #[serde(default)]
    pub damaged: bool,
}

impl FlameSensor {
    /// Returns `(analog raw, digital)`; digital 0 means flame present.
    pub fn sample(&self, field: &FieldSample) -> (u16, u8) {
        if self.damaged {
            return (ADC_MAX, 1);
        }
        let scaled = (field.flame.clamp(0.0, FLAME_MAX) * f64::from(ADC_MAX) / FLAME_MAX).round() as u16;
        let digital = if field.flame >= FLAME_DIGITAL_THRESHOLD { 0 } else { 1 };
        (ADC_MAX - scaled, digital)
    }
}

/// MQ-135 gas sensor; `gain` models the sensitivity potentiometer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mq135 {
    pub gain: f64,
}

impl Default for Mq135 {
    fn default() -> Self {
        Self { gain: 1.0 }
    }
}

impl Mq135 {
    pub fn sample<R: Rng + ?Sized>(&self, field: &FieldSample, rng: &mut R, noise: bool) -> u16 {
        let n: f64 = if noise { rng.sample(StandardNormal) } else { 0.0 };
        let ideal = field.gas * self.gain * f64::from(ADC_MAX) / GAS_FULL_SCALE_PPM;
        (ideal + MQ135_SIGMA_COUNTS * n).round().clamp(0.0, f64::from(ADC_MAX)) as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcReading {
    pub gas_raw: u16,
    pub fire_raw: u16,
    pub temp_c: i16,
    pub fire_digital: u8,
}

/// Readings converted back to physical units (gas ppm, flame band, °C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalReading {
    pub gas_ppm: f64,
    pub flame: f64,
    pub temp_c: f64,
}

pub fn gas_ppm_from_raw(raw: u16, gain: f64) -> f64 {
    f64::from(raw) * GAS_FULL_SCALE_PPM / (f64::from(ADC_MAX) * gain)
}

/// Undo the flame sensor's inverted output.
pub fn flame_from_raw(raw: u16) -> f64 {
    f64::from(ADC_MAX - raw.min(ADC_MAX)) * FLAME_MAX / f64::from(ADC_MAX)
}

impl AdcReading {
    pub fn physical(&self, gas_gain: f64) -> PhysicalReading {
        PhysicalReading {
            gas_ppm: gas_ppm_from_raw(self.gas_raw, gas_gain),
            flame: flame_from_raw(self.fire_raw),
            temp_c: f64::from(self.temp_c),
        }
    }
}

/// The sensor board of one node.
#[derive(Debug, Clone, Default)]
pub struct SensorSuite {
    pub dht: Dht22,
    pub flame: FlameSensor,
    pub gas: Mq135,
    pub noise_free: bool,
}

impl SensorSuite {
    pub fn noise_free() -> Self {
        Self { noise_free: true, ..Self::default() }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, field: &FieldSample, t: f64, rng: &mut R) -> AdcReading {
        let noise = !self.noise_free;
        let gas_raw = self.gas.sample(field, rng, noise);
        let (fire_raw, fire_digital) = self.flame.sample(field);
        // integer cast truncates toward zero, like the sketch's int assignment
        let temp_c = self.dht.sample(field.temp, t, rng, noise) as i16;
        AdcReading { gas_raw, fire_raw, temp_c, fire_digital }
    }
}
