//! Applications, devices and their activation material.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{DevAddr, Eui64, IdError, Key128};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("application {0:?} already registered")]
    DuplicateApp(String),
    #[error("device {0:?} already registered")]
    DuplicateDevice(String),
    #[error("dev_addr {dev_addr} already used by {other:?} in application {app_id:?}")]
    DuplicateDevAddr { dev_addr: DevAddr, app_id: String, other: String },
    #[error("unknown application {0:?}")]
    UnknownApp(String),
    #[error("malformed id: {0}")]
    MalformedId(#[from] IdError),
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Decoder {
    #[default]
    #[serde(rename = "u16be-triple")]
    U16beTriple,
    #[serde(rename = "raw-hex")]
    RawHex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub app_id: String,
    pub app_eui: Eui64,
    pub access_key: String,
    #[serde(default)]
    pub decoder: Decoder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "activation", rename_all = "lowercase")]
pub enum Activation {
    Abp { dev_addr: DevAddr, nwkskey: Key128, appskey: Key128 },
    Otaa { dev_eui: Eui64, appkey: Key128 },
}

/// Map position for display only.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub dev_id: String,
    pub app_id: String,
    #[serde(flatten)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LatLon>,
}

impl DeviceRegistration {
    pub fn abp(
        dev_id: &str,
        app_id: &str,
        dev_addr: &str,
        nwkskey: &str,
        appskey: &str,
    ) -> Result<Self, RegistryError> {
        Ok(Self {
            dev_id: dev_id.into(),
            app_id: app_id.into(),
            activation: Activation::Abp {
                dev_addr: dev_addr.parse()?,
                nwkskey: nwkskey.parse()?,
                appskey: appskey.parse()?,
            },
            location: None,
        })
    }

    pub fn otaa(dev_id: &str, app_id: &str, dev_eui: &str, appkey: &str) -> Result<Self, RegistryError> {
        Ok(Self {
            dev_id: dev_id.into(),
            app_id: app_id.into(),
            activation: Activation::Otaa { dev_eui: dev_eui.parse()?, appkey: appkey.parse()? },
            location: None,
        })
    }

    pub fn abp_dev_addr(&self) -> Option<DevAddr> {
        match self.activation {
            Activation::Abp { dev_addr, .. } => Some(dev_addr),
            Activation::Otaa { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    apps: BTreeMap<String, Application>,
    devices: BTreeMap<String, DeviceRegistration>,
}

impl Registry {
    pub fn register_application(&mut self, app: Application) -> Result<(), RegistryError> {
        if app.app_id.is_empty() {
            return Err(RegistryError::Empty("app_id"));
        }
        if app.access_key.is_empty() {
            return Err(RegistryError::Empty("access_key"));
        }
        if self.apps.contains_key(&app.app_id) {
            return Err(RegistryError::DuplicateApp(app.app_id));
        }
        self.apps.insert(app.app_id.clone(), app);
        Ok(())
    }

    pub fn register_device(&mut self, dev: DeviceRegistration) -> Result<(), RegistryError> {
        if dev.dev_id.is_empty() {
            return Err(RegistryError::Empty("dev_id"));
        }
        if !self.apps.contains_key(&dev.app_id) {
            return Err(RegistryError::UnknownApp(dev.app_id));
        }
        if self.devices.contains_key(&dev.dev_id) {
            return Err(RegistryError::DuplicateDevice(dev.dev_id));
        }
        if let Some(addr) = dev.abp_dev_addr() {
            let clash = self.devices.values().find(|d| d.app_id == dev.app_id && d.abp_dev_addr() == Some(addr));
            if let Some(other) = clash {
                return Err(RegistryError::DuplicateDevAddr {
                    dev_addr: addr,
                    app_id: dev.app_id,
                    other: other.dev_id.clone(),
                });
            }
        }
        self.devices.insert(dev.dev_id.clone(), dev);
        Ok(())
    }

    pub fn app(&self, app_id: &str) -> Option<&Application> {
        self.apps.get(app_id)
    }

    pub fn device(&self, dev_id: &str) -> Option<&DeviceRegistration> {
        self.devices.get(dev_id)
    }

    pub fn apps(&self) -> impl Iterator<Item = &Application> {
        self.apps.values()
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceRegistration> {
        self.devices.values()
    }

    pub fn devices_of<'a>(&'a self, app_id: &'a str) -> impl Iterator<Item = &'a DeviceRegistration> {
        self.devices.values().filter(move |d| d.app_id == app_id)
    }

    /// Whether `key` opens `app_id`.
    pub fn authorized(&self, app_id: &str, key: Option<&str>) -> bool {
        matches!((self.apps.get(app_id), key), (Some(app), Some(k)) if app.access_key == k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NWK: &str = "F6012FAD4F28BEA501A4E9841D8A0EBC";
    const APP: &str = "A484A36F909D5A74D7456BBB2C511058";

    fn registry() -> Registry {
        let mut r = Registry::default();
        r.register_application(Application {
            app_id: "firewatch".into(),
            app_eui: "70B3D57ED0014F64".parse().unwrap(),
            access_key: "secret".into(),
            decoder: Decoder::default(),
        })
        .unwrap();
        r
    }

    #[test]
    fn abp_registration_and_conflicts() {
        let mut r = registry();
        r.register_device(DeviceRegistration::abp("node-1", "firewatch", "2603172D", NWK, APP).unwrap()).unwrap();
        let again = DeviceRegistration::abp("node-2", "firewatch", "2603172D", NWK, APP).unwrap();
        assert!(matches!(r.register_device(again), Err(RegistryError::DuplicateDevAddr { .. })));
        let same_id = DeviceRegistration::abp("node-1", "firewatch", "2603172E", NWK, APP).unwrap();
        assert!(matches!(r.register_device(same_id), Err(RegistryError::DuplicateDevice(_))));
        assert!(matches!(
            DeviceRegistration::abp("x", "firewatch", "XYZ", NWK, APP),
            Err(RegistryError::MalformedId(_))
        ));
        let orphan = DeviceRegistration::abp("node-9", "nope", "26031700", NWK, APP).unwrap();
        assert!(matches!(r.register_device(orphan), Err(RegistryError::UnknownApp(_))));
    }

    #[test]
    fn duplicate_app_rejected() {
        let mut r = registry();
        let dup = r.app("firewatch").unwrap().clone();
        assert_eq!(r.register_application(dup), Err(RegistryError::DuplicateApp("firewatch".into())));
    }

    #[test]
    fn authorization() {
        let r = registry();
        assert!(r.authorized("firewatch", Some("secret")));
        assert!(!r.authorized("firewatch", Some("wrong")));
        assert!(!r.authorized("firewatch", None));
        assert!(!r.authorized("other", Some("secret")));
    }

    #[test]
    fn serde_shape() {
        let d = DeviceRegistration::abp("node-1", "firewatch", "2603172D", NWK, APP).unwrap();
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["activation"], "abp");
        assert_eq!(v["dev_addr"], "2603172D");
        let back: DeviceRegistration = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }
}
