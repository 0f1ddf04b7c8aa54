//! Range test and sensor calibration sweep.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::firmware::{RiskLevel, RiskThresholds};
use crate::geo::Position;
use crate::medium::{transmit, Delivery, LinkEnvironment, RadioFrame};
use crate::phy::{airtime, dr_lookup};
use crate::sensors::{field_at, FireEvent, SensorSuite};

/// Measurement points of the field range test.
pub const TABLE_DISTANCES_M: [f64; 4] = [100.0, 200.0, 350.0, 700.0];
/// MAC overhead plus the 6-byte sensor payload.
const PROBE_LEN: usize = 19;
const PROBE_DR: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeRow {
    pub test: String,
    pub distance_m: f64,
    pub median_rssi_dbm: Option<f64>,
    pub uplink_latency_ms: Option<f64>,
    pub received_pct: f64,
    pub trials: u32,
    pub received: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeReport {
    pub environment: String,
    pub rows: Vec<RangeRow>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Send `trials` frames from each distance to a gateway at the origin.
pub fn range_test(env: &LinkEnvironment, distances: &[f64], trials: u32, seed: u64) -> RangeReport {
    let entry = dr_lookup("AU915", PROBE_DR).expect("probe data rate exists");
    let air = airtime(PROBE_LEN, &entry.modulation());
    let gw = Position::default();
    let rows = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let (mut rssi, mut latency) = (Vec::new(), Vec::new());
            for k in 0..trials {
                let frame = RadioFrame {
                    payload: vec![0; PROBE_LEN],
                    freq_hz: 915_200_000,
                    dr_index: PROBE_DR,
                    tx_start: f64::from(k) * 10.0,
                    tx_airtime: air,
                    source: 1,
                };
                let tx_end = frame.tx_end();
                if let Ok(Delivery::Delivered(rx)) = transmit(frame, Position::new(d, 0.0), gw, env, &mut rng) {
                    rssi.push(rx.rssi_dbm);
                    latency.push((rx.rx_time - tx_end) * 1000.0);
                }
            }
            let received = rssi.len() as u32;
            RangeRow {
                test: format!("Test {}", i + 1),
                distance_m: d,
                median_rssi_dbm: median(&mut rssi),
                uplink_latency_ms: median(&mut latency),
                received_pct: if trials == 0 { 0.0 } else { 100.0 * f64::from(received) / f64::from(trials) },
                trials,
                received,
            }
        })
        .collect();
    RangeReport { environment: format!("{:?}", env.kind()).to_lowercase(), rows }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl RangeReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>12} {:>16} {:>18} {:>14}\n",
            "Test", "Distance (m)", "Median RSSI (dBm)", "Uplink time (ms)", "Received (%)"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>12} {:>16} {:>18} {:>14.1}",
                r.test,
                r.distance_m,
                opt(r.median_rssi_dbm, 1),
                opt(r.uplink_latency_ms, 1),
                r.received_pct
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub distance_m: f64,
    pub gas_ppm: f64,
    pub flame: f64,
    pub temp_c: f64,
    pub gas_level: RiskLevel,
    pub flame_level: RiskLevel,
    pub temp_level: RiskLevel,
    pub combined: RiskLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    /// Farthest swept distance at which gas still reads Alert or higher.
    pub gas_reach_m: f64,
}

/// Gas must still register at this distance from a full-intensity fire.
pub const GAS_REACH_TARGET_M: f64 = 7.0;

/// Noise-free sweep of node-to-fire distance from 0 to 15 m.
pub fn calibration_report() -> CalibrationReport {
    let fires = [FireEvent::new(1, Position::default(), 0.0, 1.0)];
    let th = RiskThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows: Vec<CalibrationRow> = (0..=30)
        .map(|k| {
            let d = f64::from(k) * 0.5;
            let mut suite = SensorSuite::noise_free();
            let reading = suite.sample(&field_at(&fires, Position::new(d, 0.0), 1.0), 1.0, &mut rng);
            let p = reading.physical(suite.gas.gain);
            let levels = th.levels(&p);
            CalibrationRow {
                distance_m: d,
                gas_ppm: p.gas_ppm,
                flame: p.flame,
                temp_c: p.temp_c,
                gas_level: levels.gas,
                flame_level: levels.flame,
                temp_level: levels.temp,
                combined: levels.combined(),
            }
        })
        .collect();
    let gas_reach_m = rows.iter().filter(|r| r.gas_level >= RiskLevel::Alert).map(|r| r.distance_m).fold(0.0, f64::max);
    CalibrationReport { rows, gas_reach_m }
}

impl CalibrationReport {
    pub fn check(&self) -> Result<(), String> {
        if self.gas_reach_m >= GAS_REACH_TARGET_M {
            Ok(())
        } else {
            Err(format!("gas reaches Alert only out to {} m, need {GAS_REACH_TARGET_M} m", self.gas_reach_m))
        }
    }

    pub fn row(&self, distance_m: f64) -> Option<&CalibrationRow> {
        self.rows.iter().find(|r| (r.distance_m - distance_m).abs() < 1e-9)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf-8")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>6} {:>9} {:>7} {:>7}  {:<7} {:<7} {:<7} {:<7}\n",
            "d (m)", "gas ppm", "flame", "temp C", "gas", "flame", "temp", "level"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6.1} {:>9.1} {:>7.1} {:>7.0}  {:<7} {:<7} {:<7} {:<7}",
                r.distance_m,
                r.gas_ppm,
                r.flame,
                r.temp_c,
                r.gas_level.name(),
                r.flame_level.name(),
                r.temp_level.name(),
                r.combined.name()
            );
        }
        let _ = writeln!(s, "gas reaches Alert out to {:.1} m", self.gas_reach_m);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_small_sample() {
        let r = range_test(&LinkEnvironment::urban(), &[700.0], 1, 1);
        assert_eq!(r.rows[0].received, 0);
        assert!(r.rows[0].median_rssi_dbm.is_none());
        let r = range_test(&LinkEnvironment::urban(), &TABLE_DISTANCES_M, 200, 9);
        assert_eq!(r.rows[0].received_pct, 100.0);
        assert!((r.rows[0].median_rssi_dbm.unwrap() + 112.0).abs() < 1.0);
        assert!(r
            .to_csv()
            .starts_with("test,distance_m,median_rssi_dbm,uplink_latency_ms,received_pct,trials,received\n"));
        assert!(r.to_table().contains("Test 4"));
    }

    #[test]
    fn calibration_targets() {
        let c = calibration_report();
        c.check().unwrap();
        let near = c.row(0.5).unwrap();
        assert_eq!(
            (near.gas_level, near.flame_level, near.temp_level),
            (RiskLevel::Risk, RiskLevel::Risk, RiskLevel::Risk)
        );
        let mid = c.row(7.0).unwrap();
        assert!(mid.gas_ppm >= 100.0);
        assert_eq!((mid.flame_level, mid.temp_level), (RiskLevel::NoRisk, RiskLevel::NoRisk));
        assert_eq!(c.row(15.0).unwrap().combined, RiskLevel::NoRisk);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
