//! LoRa modulation arithmetic: symbol timing, chip and bit rates, airtime,
//! and the AU915 data-rate table.
//!
//! Rates follow the chirp-spread-spectrum relations
//!
//! ```text
//! symbol period  Ts = 2^SF / BW
//! symbol rate    Rs = BW / 2^SF
//! chip rate      Rc = Rs * 2^SF        (== BW)
//! bit rate       Rb = SF * 4/(4+CR) * BW / 2^SF
//! ```
//!
//! With `CR = 0` the bit rate collapses to the raw `SF * BW / 2^SF` form.
//!
//! Airtime is an approximation: payload bits over the bit rate plus a fixed
//! 12.25-symbol preamble. It is not the full Semtech time-on-air formula
//! (no header, CRC or low-data-rate terms).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandwidths accepted by [`ModulationParams::new`].
pub const BANDWIDTHS_HZ: [u32; 4] = [62_500, 125_000, 250_000, 500_000];

/// Preamble plus sync-word length used by [`airtime`], in symbols.
pub const PREAMBLE_SYMBOLS: f64 = 12.25;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("bandwidth {0} Hz not supported")]
    Bandwidth(u32),
    #[error("coding rate index {0} outside 0..=4")]
    CodingRate(u8),
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("data rate DR{index} not defined for {region}")]
    UnknownDataRate { region: String, index: u8 },
}

/// Spreading factor, bandwidth and coding-rate index of a LoRa channel.
///
/// `cr` is the index form: code rate is `4 / (4 + cr)`, so `cr = 1` is 4/5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationParams {
    sf: u8,
    bw_hz: u32,
    cr: u8,
}

impl ModulationParams {
    pub fn new(sf: u8, bw_hz: u32, cr: u8) -> Result<Self, PhyError> {
        if !BANDWIDTHS_HZ.contains(&bw_hz) {
            return Err(PhyError::Bandwidth(bw_hz));
        }
        Self::with_any_bandwidth(sf, bw_hz, cr)
    }

    /// Like [`new`](Self::new) but accepts any non-zero bandwidth.
    ///
    /// Useful for normalised checks (e.g. `bw = 2^sf` gives a 1 s symbol).
    pub fn with_any_bandwidth(sf: u8, bw_hz: u32, cr: u8) -> Result<Self, PhyError> {
        if !(7..=12).contains(&sf) {
            return Err(PhyError::SpreadingFactor(sf));
        }
        if bw_hz == 0 {
            return Err(PhyError::Bandwidth(bw_hz));
        }
        if cr > 4 {
            return Err(PhyError::CodingRate(cr));
        }
        Ok(Self { sf, bw_hz, cr })
    }

    pub fn sf(&self) -> u8 {
        self.sf
    }

    pub fn bw_hz(&self) -> u32 {
        self.bw_hz
    }

    pub fn cr(&self) -> u8 {
        self.cr
    }

    /// Chips per symbol, `2^sf`.
    pub fn chips_per_symbol(&self) -> f64 {
        f64::from(1u32 << self.sf)
    }

    pub fn code_rate(&self) -> f64 {
        4.0 / (4.0 + f64::from(self.cr))
    }
}

/// Symbol duration in seconds.
pub fn symbol_period(p: &ModulationParams) -> f64 {
    p.chips_per_symbol() / f64::from(p.bw_hz)
}

/// Symbols per second.
pub fn symbol_rate(p: &ModulationParams) -> f64 {
    f64::from(p.bw_hz) / p.chips_per_symbol()
}

/// Chips per second. Always equal to the bandwidth.
pub fn chip_rate(p: &ModulationParams) -> f64 {
    symbol_rate(p) * p.chips_per_symbol()
}

/// Nominal bit rate in bits per second, including FEC overhead.
pub fn bit_rate(p: &ModulationParams) -> f64 {
    f64::from(p.sf) * p.code_rate() * symbol_rate(p)
}

/// Approximate time on air for `payload_len` bytes, in seconds.
pub fn airtime(payload_len: usize, p: &ModulationParams) -> f64 {
    (8.0 * payload_len as f64) / bit_rate(p) + PREAMBLE_SYMBOLS * symbol_period(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRateEntry {
    pub dr_index: u8,
    pub sf: u8,
    pub bw_hz: u32,
    pub direction: Direction,
}

impl DataRateEntry {
    /// Modulation for this data rate with the 4/5 coding rate LoRaWAN uses.
    pub fn modulation(&self) -> ModulationParams {
        ModulationParams::new(self.sf, self.bw_hz, 1).expect("table entries are valid")
    }

    /// Short display form, e.g. `SF9 BW125K`.
    pub fn label(&self) -> String {
        format!("SF{} BW{}K", self.sf, self.bw_hz / 1000)
    }
}

const fn entry(dr_index: u8, sf: u8, bw_hz: u32, direction: Direction) -> DataRateEntry {
    DataRateEntry { dr_index, sf, bw_hz, direction }
}

const AU915: [DataRateEntry; 8] = [
    entry(0, 12, 125_000, Direction::Uplink),
    entry(1, 11, 125_000, Direction::Uplink),
    entry(2, 10, 125_000, Direction::Uplink),
    entry(3, 9, 125_000, Direction::Uplink),
    entry(4, 8, 125_000, Direction::Uplink),
    entry(5, 7, 125_000, Direction::Uplink),
    entry(6, 8, 500_000, Direction::Uplink),
    entry(8, 12, 500_000, Direction::Downlink),
];

/// Regions with a shipped data-rate table.
pub const REGIONS: [&str; 1] = ["AU915"];

/// Data-rate table for a region, in index order.
pub fn dr_table(region: &str) -> Result<&'static [DataRateEntry], PhyError> {
    if region.eq_ignore_ascii_case("AU915") {
        Ok(&AU915)
    } else {
        Err(PhyError::UnknownRegion(region.to_string()))
    }
}

pub fn dr_lookup(region: &str, dr_index: u8) -> Result<DataRateEntry, PhyError> {
    dr_table(region)?
        .iter()
        .find(|e| e.dr_index == dr_index)
        .copied()
        .ok_or_else(|| PhyError::UnknownDataRate { region: region.to_ascii_uppercase(), index: dr_index })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(sf: u8, bw: u32, cr: u8) -> ModulationParams {
        ModulationParams::with_any_bandwidth(sf, bw, cr).unwrap()
    }

    #[test]
    fn symbol_period_examples() {
        assert_eq!(symbol_period(&p(12, 125_000, 1)), 0.032768);
        assert_eq!(symbol_period(&p(7, 125_000, 1)), 0.001024);
        assert_eq!(symbol_period(&p(7, 128, 0)), 1.0);
    }

    #[test]
    fn symbol_rate_examples() {
        assert_eq!(symbol_rate(&p(12, 125_000, 1)), 30.517578125);
        assert_eq!(symbol_rate(&p(7, 125_000, 1)), 976.5625);
    }

    #[test]
    fn bit_rate_examples() {
        assert!((bit_rate(&p(7, 125_000, 1)) - 5468.75).abs() < 1e-9);
        assert!((bit_rate(&p(12, 125_000, 1)) - 292.96875).abs() < 1e-9);
        assert!((bit_rate(&p(10, 125_000, 0)) - 1220.703125).abs() < 1e-9);
    }

    #[test]
    fn airtime_examples() {
        assert_eq!(airtime(0, &p(7, 128, 0)), 12.25);
        let t = airtime(6, &p(7, 125_000, 1));
        assert!((t - 0.0213).abs() < 1e-4, "{t}");
    }

    #[test]
    fn invalid_params_rejected() {
        assert_eq!(ModulationParams::new(6, 125_000, 1), Err(PhyError::SpreadingFactor(6)));
        assert_eq!(ModulationParams::new(13, 125_000, 1), Err(PhyError::SpreadingFactor(13)));
        assert_eq!(ModulationParams::new(7, 128, 0), Err(PhyError::Bandwidth(128)));
        assert_eq!(ModulationParams::new(7, 125_000, 5), Err(PhyError::CodingRate(5)));
        assert!(ModulationParams::with_any_bandwidth(7, 0, 0).is_err());
    }

    #[test]
    fn au915_lookup() {
        let dr3 = dr_lookup("AU915", 3).unwrap();
        assert_eq!((dr3.sf, dr3.bw_hz), (9, 125_000));
        let dr8 = dr_lookup("au915", 8).unwrap();
        assert_eq!((dr8.sf, dr8.bw_hz, dr8.direction), (12, 500_000, Direction::Downlink));
        assert!(dr_lookup("AU915", 99).is_err());
        assert!(dr_lookup("AU915", 7).is_err());
        assert!(matches!(dr_lookup("EU868", 0), Err(PhyError::UnknownRegion(_))));
    }
}
