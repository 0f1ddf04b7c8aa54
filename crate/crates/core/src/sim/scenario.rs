//! Scenario files: JSON, validated before a run starts.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::control::ControlCommand;
use crate::firmware::NodeConfig;
use crate::geo::Position;
use crate::ids::{DevAddr, Eui64, Key128};
use crate::medium::{EnvironmentKind, LinkEnvironment};
use crate::sensors::FireEvent;
use crate::server::{Activation, Application, Decoder, DeviceRegistration, LatLon, Registry, RegistryError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{file}:{line}:{column}: at `{path}`: {message}")]
    Parse { file: String, line: usize, column: usize, path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("registration: {0}")]
    Registry(#[from] RegistryError),
    #[error("reading {file}: {source}")]
    Io { file: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSpec {
    Preset(EnvironmentKind),
    Custom(LinkEnvironment),
}

impl EnvironmentSpec {
    pub fn resolve(&self) -> LinkEnvironment {
        match self {
            EnvironmentSpec::Preset(kind) => LinkEnvironment::preset(*kind),
            EnvironmentSpec::Custom(env) => env.clone(),
        }
    }
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec::Preset(EnvironmentKind::Urban)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    #[serde(default = "default_gw_id")]
    pub id: Eui64,
    pub position: Position,
    /// Listening frequencies in Hz; defaults to the node plan's eight.
    #[serde(default)]
    pub channels: Option<Vec<u32>>,
    #[serde(default)]
    pub tx_start_delay_s: Option<f64>,
}

fn default_gw_id() -> Eui64 {
    Eui64([0xB8, 0x27, 0xEB, 0xFF, 0xFE, 0x00, 0x00, 0x01])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Abp,
    Otaa,
}

/// A device entry. Fields are kept flat (rather than a tagged enum) so a
/// bad value is reported at its own line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub dev_id: String,
    pub activation: ActivationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_addr: Option<DevAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nwkskey: Option<Key128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appskey: Option<Key128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_eui: Option<Eui64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appkey: Option<Key128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LatLon>,
}

impl DeviceSpec {
    pub fn activation(&self) -> Result<Activation, ScenarioError> {
        let missing = |f: &str| ScenarioError::Invalid(format!("device {}: {f} is required", self.dev_id));
        match self.activation {
            ActivationKind::Abp => Ok(Activation::Abp {
                dev_addr: self.dev_addr.ok_or_else(|| missing("dev_addr"))?,
                nwkskey: self.nwkskey.ok_or_else(|| missing("nwkskey"))?,
                appskey: self.appskey.ok_or_else(|| missing("appskey"))?,
            }),
            ActivationKind::Otaa => Ok(Activation::Otaa {
                dev_eui: self.dev_eui.ok_or_else(|| missing("dev_eui"))?,
                appkey: self.appkey.ok_or_else(|| missing("appkey"))?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationSpec {
    pub app_id: String,
    pub app_eui: Eui64,
    pub access_key: String,
    #[serde(default)]
    pub decoder: Decoder,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub dev_id: String,
    pub position: Position,
    #[serde(default)]
    pub config: NodeConfig,
    #[serde(default)]
    pub noise_free: bool,
    #[serde(default)]
    pub flame_damaged: bool,
    /// Extra AT lines run after the standard boot script.
    #[serde(default)]
    pub boot: Vec<String>,
    /// Skip the standard boot script entirely.
    #[serde(default)]
    pub bare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedCommand {
    pub at_s: f64,
    pub command: ControlCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub events: bool,
    pub uplinks: bool,
    pub summary: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { events: true, uplinks: true, summary: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    pub gateway: GatewaySpec,
    pub applications: Vec<ApplicationSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub fires: Vec<FireEvent>,
    #[serde(default)]
    pub commands: Vec<TimedCommand>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl Scenario {
    pub fn from_json(text: &str, file: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                file: file.to_string(),
                line: inner.line(),
                column: inner.column(),
                path,
                message: strip_position(&inner.to_string()),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { file: file.clone(), source })?;
        Self::from_json(&text, &file)
    }

    pub fn registry(&self) -> Result<Registry, ScenarioError> {
        let mut reg = Registry::default();
        for app in &self.applications {
            reg.register_application(Application {
                app_id: app.app_id.clone(),
                app_eui: app.app_eui,
                access_key: app.access_key.clone(),
                decoder: app.decoder,
            })?;
            for d in &app.devices {
                reg.register_device(DeviceRegistration {
                    dev_id: d.dev_id.clone(),
                    app_id: app.app_id.clone(),
                    activation: d.activation()?,
                    location: d.location,
                })?;
            }
        }
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !self.gateway.position.is_finite() {
            return invalid("gateway.position must be finite".into());
        }
        if self.gateway.tx_start_delay_s.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
            return invalid("gateway.tx_start_delay_s must be >= 0".into());
        }
        let reg = self.registry()?;
        let mut placed = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if reg.device(&n.dev_id).is_none() {
                return invalid(format!("nodes[{i}]: device {:?} is not registered", n.dev_id));
            }
            if !placed.insert(n.dev_id.as_str()) {
                return invalid(format!("nodes[{i}]: device {:?} placed twice", n.dev_id));
            }
            if !n.position.is_finite() {
                return invalid(format!("nodes[{i}].position must be finite"));
            }
            if !positive(n.config.sample_period_s) || !positive(n.config.heartbeat_s) {
                return invalid(format!("nodes[{i}].config periods must be positive"));
            }
            if !positive(n.config.gas_gain) {
                return invalid(format!("nodes[{i}].config.gas_gain must be positive"));
            }
            n.config.thresholds.validate().map_err(|e| ScenarioError::Invalid(format!("nodes[{i}].config: {e}")))?;
        }
        let mut fire_ids = BTreeSet::new();
        for (i, f) in self.fires.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.intensity) {
                return invalid(format!("fires[{i}].intensity must be within [0, 1]"));
            }
            if !f.position.is_finite() || !f.start.is_finite() {
                return invalid(format!("fires[{i}] must have finite position and start_s"));
            }
            if !fire_ids.insert(f.id) {
                return invalid(format!("fires[{i}]: duplicate id {}", f.id));
            }
        }
        for (i, c) in self.commands.iter().enumerate() {
            if !(c.at_s >= 0.0 && c.at_s <= self.duration_s) {
                return invalid(format!("commands[{i}].at_s must be within [0, duration_s]"));
            }
        }
        Ok(())
    }
}

// serde_json appends " at line L column C"; the diagnostic prefix already
// carries both.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
  "seed": 1,
  "duration_s": 120,
  "gateway": { "position": { "x": 0, "y": 0 } },
  "applications": [{
    "app_id": "firewatch",
    "app_eui": "70B3D57ED0014F64",
    "access_key": "secret",
    "devices": [{
      "dev_id": "node-1",
      "activation": "abp",
      "dev_addr": "2603172D",
      "nwkskey": "F6012FAD4F28BEA501A4E9841D8A0EBC",
      "appskey": "A484A36F909D5A74D7456BBB2C511058"
    }]
  }],
  "nodes": [{ "dev_id": "node-1", "position": { "x": 100, "y": 0 } }]
}"#;

    #[test]
    fn minimal_parses() {
        let s = Scenario::from_json(MINIMAL, "min.json").unwrap();
        assert_eq!(s.environment, EnvironmentSpec::Preset(EnvironmentKind::Urban));
        assert_eq!(s.nodes[0].config.sample_period_s, 5.0);
        assert!(s.outputs.events);
    }

    #[test]
    fn field_precise_errors() {
        let bad = MINIMAL.replace("\"2603172D\"", "\"XYZ\"");
        let err = Scenario::from_json(&bad, "min.json").unwrap_err().to_string();
        assert!(err.starts_with("min.json:12:"), "{err}");
        assert!(err.contains("applications[0].devices[0].dev_addr"), "{err}");

        let typo = MINIMAL.replace("\"duration_s\"", "\"duration\"");
        let err = Scenario::from_json(&typo, "min.json").unwrap_err().to_string();
        assert!(err.contains("duration"), "{err}");
    }

    #[test]
    fn abp_needs_its_keys() {
        let bad =
            MINIMAL.replace("\"appskey\": \"A484A36F909D5A74D7456BBB2C511058\"", "\"dev_eui\": \"00E0136E0847D7F9\"");
        let err = Scenario::from_json(&bad, "min.json").unwrap_err().to_string();
        assert!(err.contains("appskey is required"), "{err}");
    }

    #[test]
    fn unregistered_node_rejected() {
        let bad = MINIMAL.replace("{ \"dev_id\": \"node-1\", \"position\"", "{ \"dev_id\": \"node-9\", \"position\"");
        let err = Scenario::from_json(&bad, "min.json").unwrap_err().to_string();
        assert!(err.contains("node-9") && err.contains("not registered"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = MINIMAL.replace("\"duration_s\": 120", "\"duration_s\": 0");
        assert!(matches!(Scenario::from_json(&bad, "x"), Err(ScenarioError::Invalid(_))));
        let fire = MINIMAL
            .replace("\"nodes\":", "\"fires\": [{\"position\": {\"x\": 0, \"y\": 0}, \"intensity\": 2}], \"nodes\":");
        assert!(matches!(Scenario::from_json(&fire, "x"), Err(ScenarioError::Invalid(_))));
    }
}
