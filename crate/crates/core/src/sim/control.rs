//! Steering commands accepted by a running simulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::FireId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlCommand {
    InjectFire {
        x: f64,
        y: f64,
        #[serde(default = "full")]
        intensity: f64,
    },
    Extinguish {
        fire_id: FireId,
    },
    /// Add a node for a registered device, or move it if already placed.
    PlaceNode {
        dev_id: String,
        x: f64,
        y: f64,
    },
    MoveNode {
        dev_id: String,
        x: f64,
        y: f64,
    },
    Backhaul {
        up: bool,
    },
    Pause,
    Resume,
    Step {
        dt_s: f64,
    },
}

fn full() -> f64 {
    1.0
}

impl ControlCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ControlCommand::InjectFire { .. } => "inject_fire",
            ControlCommand::Extinguish { .. } => "extinguish",
            ControlCommand::PlaceNode { .. } => "place_node",
            ControlCommand::MoveNode { .. } => "move_node",
            ControlCommand::Backhaul { .. } => "backhaul",
            ControlCommand::Pause => "pause",
            ControlCommand::Resume => "resume",
            ControlCommand::Step { .. } => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid command: {0}")]
    Invalid(String),
    #[error("no simulation attached")]
    Unavailable,
}

impl ControlError {
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::NotFound(_) => "not_found",
            ControlError::Invalid(_) => "invalid",
            ControlError::Unavailable => "unavailable",
        }
    }
}

/// Reply to a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAck {
    pub command: String,
    pub ok: bool,
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire_id: Option<FireId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

impl ControlAck {
    pub fn ok(cmd: &ControlCommand, at_s: f64) -> Self {
        Self { command: cmd.name().into(), ok: true, at_s, fire_id: None, error: None, code: None }
    }

    pub fn failed(cmd_name: &str, at_s: f64, err: &ControlError) -> Self {
        Self {
            command: cmd_name.into(),
            ok: false,
            at_s,
            fire_id: None,
            error: Some(err.to_string()),
            code: Some(err.code().into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let c: ControlCommand = serde_json::from_str(r#"{"type":"inject_fire","x":1,"y":2}"#).unwrap();
        assert_eq!(c, ControlCommand::InjectFire { x: 1.0, y: 2.0, intensity: 1.0 });
        let p: ControlCommand = serde_json::from_str(r#"{"type":"pause"}"#).unwrap();
        assert_eq!(p, ControlCommand::Pause);
        assert!(serde_json::from_str::<ControlCommand>(r#"{"type":"explode"}"#).is_err());
        let ack = ControlAck::failed("extinguish", 3.0, &ControlError::NotFound("fire 9".into()));
        let v = serde_json::to_value(ack).unwrap();
        assert_eq!(v["code"], "not_found");
        assert_eq!(v["ok"], false);
    }
}
