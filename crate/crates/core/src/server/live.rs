//! Fan-out of stored records to live subscribers.

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{self, error::TrySendError};

use super::store::{PayloadFields, UplinkRecord};
use crate::firmware::RiskLevel;
use crate::ids::Eui64;

/// Events a subscriber may fall behind by before it is dropped.
pub const SUBSCRIBER_BUFFER: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetadata {
    pub fcnt: u32,
    pub port: u8,
    pub rssi_dbm: f64,
    pub freq_hz: u32,
    pub dr: u8,
    pub gw_id: Eui64,
    pub server_time_s: f64,
    pub risk: Option<RiskLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEvent {
    pub app_id: String,
    pub dev_id: String,
    pub payload_fields: Option<PayloadFields>,
    pub metadata: LiveMetadata,
}

impl LiveEvent {
    pub fn from_record(r: &UplinkRecord) -> Self {
        Self {
            app_id: r.app_id.clone(),
            dev_id: r.dev_id.clone(),
            payload_fields: r.decoded.as_ref().and_then(|d| d.fields()).copied(),
            metadata: LiveMetadata {
                fcnt: r.fcnt,
                port: r.port,
                rssi_dbm: r.rssi_dbm,
                freq_hz: r.freq_hz,
                dr: r.dr,
                gw_id: r.gw_id,
                server_time_s: r.server_time_s,
                risk: r.risk,
            },
        }
    }
}

pub type Subscription = mpsc::Receiver<LiveEvent>;

#[derive(Debug)]
struct Subscriber {
    id: u64,
    app_id: String,
    tx: mpsc::Sender<LiveEvent>,
}

#[derive(Debug, Default)]
pub struct LiveHub {
    subscribers: Vec<Subscriber>,
    next_id: u64,
    published: u64,
    overflowed: u64,
}

impl LiveHub {
    /// Authorization is the caller's job.
    pub fn subscribe(&mut self, app_id: &str) -> (u64, Subscription) {
        let (tx, rx) = mpsc::channel(SUBSCRIBER_BUFFER);
        let id = self.next_id;
        self.next_id += 1;
        self.subscribers.push(Subscriber { id, app_id: app_id.to_string(), tx });
        (id, rx)
    }

    pub fn unsubscribe(&mut self, id: u64) {
        self.subscribers.retain(|s| s.id != id);
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.len()
    }

    pub fn published(&self) -> u64 {
        self.published
    }

    /// Subscribers dropped for falling behind.
    pub fn overflowed(&self) -> u64 {
        self.overflowed
    }

    /// Never blocks; a full buffer disconnects that subscriber.
    pub fn publish(&mut self, event: &LiveEvent) {
        self.published += 1;
        let mut overflowed = 0;
        self.subscribers.retain(|s| {
            if s.app_id != event.app_id {
                return !s.tx.is_closed();
            }
            match s.tx.try_send(event.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    log::warn!("live subscriber {} fell behind, disconnecting", s.id);
                    overflowed += 1;
                    false
                }
                Err(TrySendError::Closed(_)) => false,
            }
        });
        self.overflowed += overflowed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server::store::Decoded;

    fn event(app: &str, fcnt: u32) -> LiveEvent {
        let rec = UplinkRecord {
            dev_id: "node-1".into(),
            app_id: app.into(),
            fcnt,
            port: 8,
            payload_hex: vec![0x03, 0xD9, 0x01, 0x90, 0x00, 0x1C],
            decoded: Some(Decoded::Fields(PayloadFields { payload_gas: 985, payload_fire: 400, payload_temp: 28 })),
            decode_error: false,
            risk: None,
            confirmed: false,
            rssi_dbm: -112.0,
            freq_hz: 915_200_000,
            dr: 3,
            gw_id: Eui64([1; 8]),
            gw_time_s: 0.0,
            server_time_s: 0.1,
        };
        LiveEvent::from_record(&rec)
    }

    #[test]
    fn field_names() {
        let v = serde_json::to_value(event("a", 0)).unwrap();
        let fields = v["payload_fields"].as_object().unwrap();
        let keys: Vec<&str> = fields.keys().map(String::as_str).collect();
        assert_eq!(keys, ["payload_fire", "payload_gas", "payload_temp"]);
        assert_eq!(v["dev_id"], "node-1");
    }

    #[test]
    fn fan_out_in_order() {
        let mut hub = LiveHub::default();
        let (_, mut a) = hub.subscribe("a");
        let (_, mut b) = hub.subscribe("a");
        let (_, mut other) = hub.subscribe("z");
        for n in 0..3 {
            hub.publish(&event("a", n));
        }
        for rx in [&mut a, &mut b] {
            let got: Vec<u32> = (0..3).map(|_| rx.try_recv().unwrap().metadata.fcnt).collect();
            assert_eq!(got, vec![0, 1, 2]);
        }
        assert!(other.try_recv().is_err());
    }

    #[test]
    fn publish_without_subscribers() {
        let mut hub = LiveHub::default();
        hub.publish(&event("a", 0));
        assert_eq!(hub.published(), 1);
    }

    #[test]
    fn slow_subscriber_disconnected() {
        let mut hub = LiveHub::default();
        let (_, mut slow) = hub.subscribe("a");
        for n in 0..=SUBSCRIBER_BUFFER as u32 {
            hub.publish(&event("a", n));
        }
        assert_eq!(hub.subscriber_count(), 0);
        assert_eq!(hub.overflowed(), 1);
        let mut n = 0;
        while slow.try_recv().is_ok() {
            n += 1;
        }
        assert_eq!(n, SUBSCRIBER_BUFFER);
    }
}
