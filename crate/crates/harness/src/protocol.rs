//! Session wire protocol, version 1. JSON text frames tagged by `type`.

use iddqn::agent::StepSnapshot;
use iddqn::env::{N_ACTIONS, N_RAYS};
use iddqn::intervention::Gate;
use iddqn::track::TrackSpec;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub v: u32,
    pub step: u64,
    pub episode: u64,
    /// `[x, y, heading]`, meters and radians.
    pub pose: [f64; 3],
    pub rays: [f64; N_RAYS],
    pub reward: f64,
    pub cum_reward: f64,
    pub lambda_h: f64,
    pub epsilon: f64,
    pub gate: Gate,
    pub intervened: bool,
    pub action: usize,
    pub paused: bool,
}

impl Frame {
    pub fn from_snapshot(s: &StepSnapshot) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            step: s.step,
            episode: s.episode,
            pose: s.pose,
            rays: s.rays,
            reward: s.reward,
            cum_reward: s.cum_reward,
            lambda_h: s.lambda_h,
            epsilon: s.epsilon,
            gate: s.gate,
            intervened: s.intervened,
            action: s.action,
            paused: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub n_actions: usize,
    pub h_freq: u64,
    pub h_steps: u64,
    pub h_limit: u64,
    pub total_steps: u64,
    pub step_hz: f64,
    pub frame_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello { v: u32, track: TrackSpec, session: SessionInfo },
    Frame(Frame),
    Warning { v: u32, message: String },
    Done { v: u32, total_steps: u64, episodes: usize, intervened_steps: u64 },
}

impl ServerMessage {
    pub fn warning(message: impl Into<String>) -> Self {
        ServerMessage::Warning {
            v: PROTOCOL_VERSION,
            message: message.into(),
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Steer { index: usize },
    Engage { on: bool },
    Pause,
    Resume,
}

/// Parse a client text frame. Errors carry the text of a warning frame.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| "message without a string \"type\" ignored".to_string())?
        .to_string();
    if !matches!(kind.as_str(), "steer" | "engage" | "pause" | "resume") {
        return Err(format!("unknown message type {kind:?} ignored"));
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| format!("bad {kind} message: {e}"))?;
    if let ClientMessage::Steer { index } = msg {
        if index >= N_ACTIONS {
            return Err(format!("steer index {index} outside 0..={}", N_ACTIONS - 1));
        }
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages() {
        assert_eq!(parse_client(r#"{"type":"steer","index":15}"#), Ok(ClientMessage::Steer { index: 15 }));
        assert_eq!(parse_client(r#"{"type":"engage","on":true}"#), Ok(ClientMessage::Engage { on: true }));
        assert_eq!(parse_client(r#"{"type":"pause"}"#), Ok(ClientMessage::Pause));
        assert!(parse_client(r#"{"type":"steer","index":33}"#).unwrap_err().contains("33"));
        assert!(parse_client(r#"{"type":"dance"}"#).unwrap_err().contains("unknown"));
        assert!(parse_client("not json").is_err());
        assert!(parse_client(r#"{"type":"steer","index":-1}"#).is_err());
    }

    #[test]
    fn frame_wire_shape() {
        let f = Frame {
            v: 1,
            step: 3,
            episode: 0,
            pose: [1.0, 2.0, 0.5],
            rays: [20.0; N_RAYS],
            reward: 0.25,
            cum_reward: 1.5,
            lambda_h: 0.9,
            epsilon: 0.5,
            gate: Gate::Open,
            intervened: true,
            action: 15,
            paused: false,
        };
        let v: serde_json::Value = serde_json::from_str(&ServerMessage::Frame(f.clone()).to_text()).unwrap();
        assert_eq!(v["type"], "frame");
        assert_eq!(v["v"], 1);
        assert_eq!(v["gate"], "open");
        assert_eq!(v["pose"].as_array().unwrap().len(), 3);
        assert_eq!(v["rays"].as_array().unwrap().len(), 9);
        assert_eq!(v["intervened"], true);
        let back: ServerMessage = serde_json::from_value(v).unwrap();
        assert_eq!(back, ServerMessage::Frame(f));
    }
}
