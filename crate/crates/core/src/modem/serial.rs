//! CR LF framed byte-stream front end for a [`Modem`].

use super::{Modem, UplinkRequest};

/// Longest command line accepted before the buffer is discarded.
pub const MAX_LINE: usize = 1024;

/// Accumulates bytes and runs each complete line through the modem.
///
/// Lines end at LF; a preceding CR is dropped. Blank lines are ignored, as
/// a terminal session sends them freely.
#[derive(Debug)]
pub struct SerialPort {
    modem: Modem,
    buf: Vec<u8>,
    overflowed: bool,
}

impl SerialPort {
    pub fn new(modem: Modem) -> Self {
        Self { modem, buf: Vec::new(), overflowed: false }
    }

    pub fn modem(&self) -> &Modem {
        &self.modem
    }

    pub fn modem_mut(&mut self) -> &mut Modem {
        &mut self.modem
    }

    pub fn into_modem(self) -> Modem {
        self.modem
    }

    /// Feed raw bytes; returns the reply bytes and any uplinks requested.
    pub fn write(&mut self, bytes: &[u8]) -> (Vec<u8>, Vec<UplinkRequest>) {
        let mut out = Vec::new();
        let mut uplinks = Vec::new();
        for &b in bytes {
            if b == b'\n' {
                let line = std::mem::take(&mut self.buf);
                if std::mem::take(&mut self.overflowed) {
                    out.extend_from_slice(b"+AT: ERROR(-2)\r\n");
                    continue;
                }
                let text = String::from_utf8_lossy(&line);
                let text = text.trim_end_matches('\r');
                if text.trim().is_empty() {
                    continue;
                }
                let (reply, action) = self.modem.execute(text);
                out.extend_from_slice(reply.to_wire().as_bytes());
                uplinks.extend(action);
            } else if self.buf.len() >= MAX_LINE {
                self.overflowed = true;
                self.buf.clear();
            } else if !self.overflowed {
                self.buf.push(b);
            }
        }
        (out, uplinks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::ModemState;

    #[test]
    fn crlf_round_trip() {
        let mut port = SerialPort::new(Modem::new(ModemState::default()));
        let (out, _) = port.write(b"AT\r\nAT+ADR=ON\r\n");
        assert_eq!(out, b"+AT: OK\r\n+ADR: ON\r\n");
        assert!(port.modem().state().adr);
    }

    #[test]
    fn partial_writes_accumulate() {
        let mut port = SerialPort::new(Modem::new(ModemState::default()));
        assert!(port.write(b"AT+CLA").0.is_empty());
        let (out, _) = port.write(b"SS=C\r\n");
        assert_eq!(out, b"+CLASS: C\r\n");
    }

    #[test]
    fn overlong_line_rejected() {
        let mut port = SerialPort::new(Modem::new(ModemState::default()));
        let mut junk = vec![b'A'; MAX_LINE + 10];
        junk.extend_from_slice(b"\r\nAT\r\n");
        let (out, _) = port.write(&junk);
        assert_eq!(out, b"+AT: ERROR(-2)\r\n+AT: OK\r\n");
    }

    #[test]
    fn uplinks_surface() {
        let mut port = SerialPort::new(Modem::new(ModemState::default()));
        let (_, ups) = port.write(b"AT+MSGHEX=0102\r\n");
        assert_eq!(ups.len(), 1);
    }
}
