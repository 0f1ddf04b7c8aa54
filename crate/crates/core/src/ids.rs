//! Fixed-width hexadecimal identifiers and keys.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected {expected} hex digits, got {input:?}")]
pub struct IdError {
    pub expected: usize,
    pub input: String,
}

/// Parse exactly `N` bytes of hex. Colons and spaces between digit pairs are
/// tolerated, surrounding double quotes are stripped.
pub fn parse_fixed_hex<const N: usize>(s: &str) -> Result<[u8; N], IdError> {
    let err = || IdError { expected: N * 2, input: s.to_string() };
    let trimmed = s.trim().trim_matches('"');
    let digits: String = trimmed.chars().filter(|c| *c != ':' && *c != ' ').collect();
    if digits.len() != N * 2 {
        return Err(err());
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(&digits, &mut out).map_err(|_| err())?;
    Ok(out)
}

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn is_zero(&self) -> bool {
                self.0.iter().all(|b| *b == 0)
            }

            /// Colon-separated form used in modem replies, e.g. `26:03:17:2D`.
            pub fn to_colon_string(&self) -> String {
                self.0.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(":")
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode_upper(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl FromStr for $name {
            type Err = IdError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_fixed_hex::<$len>(s).map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// 32-bit network device address.
    DevAddr,
    4
);
hex_id!(
    /// 64-bit extended unique identifier (DevEUI, AppEUI, gateway id).
    Eui64,
    8
);
hex_id!(
    /// 128-bit session or application key.
    Key128,
    16
);

impl DevAddr {
    pub fn from_u32(v: u32) -> Self {
        Self(v.to_be_bytes())
    }

    pub fn to_u32(self) -> u32 {
        u32::from_be_bytes(self.0)
    }
}

/// Serde adapter for byte vectors rendered as uppercase hex.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode_upper(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quoted_and_colon_forms() {
        let a: DevAddr = "\"2603172D\"".parse().unwrap();
        let b: DevAddr = "26:03:17:2D".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "2603172D");
        assert_eq!(a.to_colon_string(), "26:03:17:2D");
        assert_eq!(a.to_u32(), 0x2603_172D);
    }

    #[test]
    fn rejects_bad_width_and_digits() {
        assert!("XYZ".parse::<DevAddr>().is_err());
        assert!("2603172".parse::<DevAddr>().is_err());
        assert!("2603172DAA".parse::<DevAddr>().is_err());
        assert!("G603172D".parse::<DevAddr>().is_err());
        assert!("00E0136E0847D7F8".parse::<Eui64>().is_ok());
    }
}
