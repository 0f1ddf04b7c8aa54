//! LoRaWAN-shaped MAC framing carried inside radio frames.
//!
//! The byte layout follows LoRaWAN 1.0 (MHDR, little-endian DevAddr and FCnt,
//! FPort, 4-byte trailer) but nothing is encrypted and the trailer is not the
//! AES-CMAC MIC. It is a truncated SHA-256 over the session keys and the
//! frame, which gives the server an exact key match without carrying keys in
//! the clear. OTAA session keys are derived the same way.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{DevAddr, Eui64, Key128};

pub const TAG_LEN: usize = 4;
pub const FCTRL_ACK: u8 = 0x20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MacError {
    #[error("frame too short ({0} bytes)")]
    Truncated(usize),
    #[error("unknown message type {0:#04x}")]
    MessageType(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MType {
    JoinRequest = 0,
    JoinAccept = 1,
    UnconfirmedUp = 2,
    UnconfirmedDown = 3,
    ConfirmedUp = 4,
    ConfirmedDown = 5,
}

impl MType {
    fn from_mhdr(b: u8) -> Result<Self, MacError> {
        Ok(match b >> 5 {
            0 => MType::JoinRequest,
            1 => MType::JoinAccept,
            2 => MType::UnconfirmedUp,
            3 => MType::UnconfirmedDown,
            4 => MType::ConfirmedUp,
            5 => MType::ConfirmedDown,
            _ => return Err(MacError::MessageType(b)),
        })
    }

    fn mhdr(self) -> u8 {
        (self as u8) << 5
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFrame {
    pub mtype: MType,
    pub dev_addr: DevAddr,
    pub ack: bool,
    pub fcnt: u16,
    pub fport: u8,
    pub payload: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinRequest {
    pub app_eui: Eui64,
    pub dev_eui: Eui64,
    pub dev_nonce: u16,
    pub tag: [u8; TAG_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinAccept {
    pub app_nonce: [u8; 3],
    pub net_id: [u8; 3],
    pub dev_addr: DevAddr,
    pub rx_delay: u8,
    pub tag: [u8; TAG_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MacFrame {
    Data(DataFrame),
    JoinRequest(JoinRequest),
    JoinAccept(JoinAccept),
}

fn tag(keys: &[&Key128], body: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    for k in keys {
        h.update(k.as_bytes());
    }
    h.update(body);
    let digest = h.finalize();
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&digest[..TAG_LEN]);
    out
}

fn le<const N: usize>(bytes: &[u8; N]) -> [u8; N] {
    let mut out = *bytes;
    out.reverse();
    out
}

impl DataFrame {
    fn body(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(9 + self.payload.len());
        b.push(self.mtype.mhdr());
        b.extend_from_slice(&le(self.dev_addr.as_bytes()));
        b.push(if self.ack { FCTRL_ACK } else { 0 });
        b.extend_from_slice(&self.fcnt.to_le_bytes());
        b.push(self.fport);
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn seal(mut self, nwkskey: &Key128, appskey: &Key128) -> Self {
        self.tag = tag(&[nwkskey, appskey], &self.body());
        self
    }

    pub fn verify(&self, nwkskey: &Key128, appskey: &Key128) -> bool {
        tag(&[nwkskey, appskey], &self.body()) == self.tag
    }

    pub fn is_uplink(&self) -> bool {
        matches!(self.mtype, MType::UnconfirmedUp | MType::ConfirmedUp)
    }

    pub fn confirmed(&self) -> bool {
        matches!(self.mtype, MType::ConfirmedUp | MType::ConfirmedDown)
    }
}

impl JoinRequest {
    fn body(&self) -> Vec<u8> {
        let mut b = vec![MType::JoinRequest.mhdr()];
        b.extend_from_slice(&le(self.app_eui.as_bytes()));
        b.extend_from_slice(&le(self.dev_eui.as_bytes()));
        b.extend_from_slice(&self.dev_nonce.to_le_bytes());
        b
    }

    pub fn sealed(app_eui: Eui64, dev_eui: Eui64, dev_nonce: u16, appkey: &Key128) -> Self {
        let mut r = Self { app_eui, dev_eui, dev_nonce, tag: [0; TAG_LEN] };
        r.tag = tag(&[appkey], &r.body());
        r
    }

    pub fn verify(&self, appkey: &Key128) -> bool {
        tag(&[appkey], &self.body()) == self.tag
    }
}

impl JoinAccept {
    fn body(&self) -> Vec<u8> {
        let mut b = vec![MType::JoinAccept.mhdr()];
        b.extend_from_slice(&self.app_nonce);
        b.extend_from_slice(&self.net_id);
        b.extend_from_slice(&le(self.dev_addr.as_bytes()));
        b.push(0);
        b.push(self.rx_delay);
        b
    }

    pub fn sealed(app_nonce: [u8; 3], net_id: [u8; 3], dev_addr: DevAddr, rx_delay: u8, appkey: &Key128) -> Self {
        let mut a = Self { app_nonce, net_id, dev_addr, rx_delay, tag: [0; TAG_LEN] };
        a.tag = tag(&[appkey], &a.body());
        a
    }

    pub fn verify(&self, appkey: &Key128) -> bool {
        tag(&[appkey], &self.body()) == self.tag
    }
}

/// Derive `(nwkskey, appskey)` for an OTAA session.
pub fn derive_session_keys(appkey: &Key128, app_nonce: [u8; 3], net_id: [u8; 3], dev_nonce: u16) -> (Key128, Key128) {
    let derive = |prefix: u8| {
        let mut h = Sha256::new();
        h.update(appkey.as_bytes());
        h.update([prefix]);
        h.update(app_nonce);
        h.update(net_id);
        h.update(dev_nonce.to_le_bytes());
        let d = h.finalize();
        let mut k = [0u8; 16];
        k.copy_from_slice(&d[..16]);
        Key128(k)
    };
    (derive(0x01), derive(0x02))
}

impl MacFrame {
    pub fn encode(&self) -> Vec<u8> {
        let (mut b, t) = match self {
            MacFrame::Data(d) => (d.body(), d.tag),
            MacFrame::JoinRequest(r) => (r.body(), r.tag),
            MacFrame::JoinAccept(a) => (a.body(), a.tag),
        };
        b.extend_from_slice(&t);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MacError> {
        let short = || MacError::Truncated(bytes.len());
        let (&mhdr, _) = bytes.split_first().ok_or_else(short)?;
        let mtype = MType::from_mhdr(mhdr)?;
        if bytes.len() < 1 + TAG_LEN {
            return Err(short());
        }
        let (body, t) = bytes.split_at(bytes.len() - TAG_LEN);
        let mut tag_bytes = [0u8; TAG_LEN];
        tag_bytes.copy_from_slice(t);
        let rev = |s: &[u8]| -> Vec<u8> { s.iter().rev().copied().collect() };
        match mtype {
            MType::JoinRequest => {
                if body.len() != 19 {
                    return Err(short());
                }
                Ok(MacFrame::JoinRequest(JoinRequest {
                    app_eui: Eui64(rev(&body[1..9]).try_into().unwrap()),
                    dev_eui: Eui64(rev(&body[9..17]).try_into().unwrap()),
                    dev_nonce: u16::from_le_bytes([body[17], body[18]]),
                    tag: tag_bytes,
                }))
            }
            MType::JoinAccept => {
                if body.len() != 13 {
                    return Err(short());
                }
                Ok(MacFrame::JoinAccept(JoinAccept {
                    app_nonce: body[1..4].try_into().unwrap(),
                    net_id: body[4..7].try_into().unwrap(),
                    dev_addr: DevAddr(rev(&body[7..11]).try_into().unwrap()),
                    rx_delay: body[12],
                    tag: tag_bytes,
                }))
            }
            _ => {
                if body.len() < 9 {
                    return Err(short());
                }
                Ok(MacFrame::Data(DataFrame {
                    mtype,
                    dev_addr: DevAddr(rev(&body[1..5]).try_into().unwrap()),
                    ack: body[5] & FCTRL_ACK != 0,
                    fcnt: u16::from_le_bytes([body[6], body[7]]),
                    fport: body[8],
                    payload: body[9..].to_vec(),
                    tag: tag_bytes,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(b: u8) -> Key128 {
        Key128([b; 16])
    }

    #[test]
    fn data_frame_round_trip_and_tag() {
        let f = DataFrame {
            mtype: MType::UnconfirmedUp,
            dev_addr: "2603172D".parse().unwrap(),
            ack: false,
            fcnt: 7,
            fport: 8,
            payload: vec![0x03, 0xD9, 0x01, 0x90, 0x00, 0x1C],
            tag: [0; 4],
        }
        .seal(&key(1), &key(2));
        let bytes = MacFrame::Data(f.clone()).encode();
        assert_eq!(&bytes[1..5], &[0x2D, 0x17, 0x03, 0x26]);
        let MacFrame::Data(back) = MacFrame::decode(&bytes).unwrap() else { panic!() };
        assert_eq!(back, f);
        assert!(back.verify(&key(1), &key(2)));
        assert!(!back.verify(&key(1), &key(3)));
    }

    #[test]
    fn join_round_trip() {
        let r =
            JoinRequest::sealed("70B3D57ED0014F64".parse().unwrap(), "00E0136E0847D7F8".parse().unwrap(), 42, &key(9));
        let MacFrame::JoinRequest(back) = MacFrame::decode(&MacFrame::JoinRequest(r.clone()).encode()).unwrap() else {
            panic!()
        };
        assert_eq!(back, r);
        assert!(back.verify(&key(9)));
        assert!(!back.verify(&key(8)));

        let a = JoinAccept::sealed([1, 2, 3], [0, 0, 0x13], DevAddr::from_u32(0x2600_0001), 1, &key(9));
        let MacFrame::JoinAccept(back) = MacFrame::decode(&MacFrame::JoinAccept(a.clone()).encode()).unwrap() else {
            panic!()
        };
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = MacFrame::decode(&bytes);
        }
    }
}
