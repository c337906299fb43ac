//! Message types, wire codec and role endpoint tables for the agent/simulator
//! protocol.
//!
//! Every system speaks JSON over HTTP `POST`. Agents expose `/configure` and
//! `/receive_utterance`; simulators additionally expose
//! `/set_information_need` and `/get_information_need`.

mod client;
mod codec;
pub mod conformance;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

pub use client::{ClientError, ProtocolClient, SystemEndpoint, DEFAULT_CALL_TIMEOUT};
pub use codec::{decode_message, encode_message, CodecError};

/// Free-form utterance metadata. Values are scalars or lists of scalars.
pub type Metadata = serde_json::Map<String, Value>;

/// Reserved metadata key ending a conversation.
pub const STOP_KEY: &str = "stop";
/// Metadata key of the synthetic marker asking a simulator to open.
pub const START_KEY: &str = "start";

pub const CONFIGURE: &str = "/configure";
pub const RECEIVE_UTTERANCE: &str = "/receive_utterance";
pub const SET_INFORMATION_NEED: &str = "/set_information_need";
pub const GET_INFORMATION_NEED: &str = "/get_information_need";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Agent,
    Simulator,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agent => "AGENT",
            Role::Simulator => "SIMULATOR",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AGENT" => Ok(Role::Agent),
            "SIMULATOR" => Ok(Role::Simulator),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// One message in a conversation.
///
/// `timestamp` is assigned by the orchestrator when the utterance is
/// received; it is never sent over the wire by the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub participant: Role,
    pub text: String,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

impl Utterance {
    pub fn new(participant: Role, text: impl Into<String>) -> Self {
        Self {
            participant,
            text: text.into(),
            metadata: Metadata::new(),
            timestamp: None,
        }
    }

    /// An utterance carrying `metadata.stop = true`.
    pub fn stop(participant: Role, text: impl Into<String>) -> Self {
        let mut u = Self::new(participant, text);
        u.metadata.insert(STOP_KEY.into(), Value::Bool(true));
        u
    }

    /// The synthetic empty AGENT utterance that asks a simulator to open.
    pub fn start_marker() -> Self {
        let mut u = Self::new(Role::Agent, "");
        u.metadata.insert(START_KEY.into(), Value::Bool(true));
        u
    }

    pub fn is_stop(&self) -> bool {
        matches!(self.metadata.get(STOP_KEY), Some(Value::Bool(true)))
    }

    pub fn is_start_marker(&self) -> bool {
        matches!(self.metadata.get(START_KEY), Some(Value::Bool(true)))
    }

    /// Copy without the orchestrator-assigned timestamp.
    pub fn without_timestamp(&self) -> Self {
        Self {
            timestamp: None,
            ..self.clone()
        }
    }
}

/// A simulated user's goal: constraints on the desired item plus the
/// attributes the user wants to learn about it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InformationNeed {
    #[serde(deserialize_with = "de_constraints")]
    pub constraints: BTreeMap<String, Vec<String>>,
    pub requested: Vec<String>,
    #[serde(
        default,
        skip_serializing_if = "BTreeMap::is_empty",
        deserialize_with = "de_fulfilled"
    )]
    pub fulfilled: BTreeMap<String, String>,
}

impl InformationNeed {
    pub fn new<K, V, I>(constraints: I, requested: &[&str]) -> Self
    where
        I: IntoIterator<Item = (K, Vec<V>)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            constraints: constraints
                .into_iter()
                .map(|(k, vs)| (k.into(), vs.into_iter().map(Into::into).collect()))
                .collect(),
            requested: requested.iter().map(|s| s.to_string()).collect(),
            fulfilled: BTreeMap::new(),
        }
    }

    /// Same constraints and requested attributes, ignoring `fulfilled`.
    pub fn same_goal(&self, other: &InformationNeed) -> bool {
        self.constraints == other.constraints && self.requested == other.requested
    }

    /// Copy with `fulfilled` cleared.
    pub fn goal(&self) -> InformationNeed {
        InformationNeed {
            constraints: self.constraints.clone(),
            requested: self.requested.clone(),
            fulfilled: BTreeMap::new(),
        }
    }

    /// Every attribute name the need mentions.
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.constraints
            .keys()
            .chain(self.requested.iter())
            .chain(self.fulfilled.keys())
            .map(String::as_str)
    }
}

/// Scalar wire values (strings or numbers) are normalized to strings.
fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn de_constraints<'de, D>(d: D) -> Result<BTreeMap<String, Vec<String>>, D::Error>
where
    D: Deserializer<'de>,
{
    let raw = BTreeMap::<String, Vec<Value>>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, vs)| {
            let vals = vs
                .iter()
                .map(|v| {
                    scalar_to_string(v).ok_or_else(|| {
                        serde::de::Error::custom("constraint values must be scalars")
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((k, vals))
        })
        .collect()
}

fn de_fulfilled<'de, D>(d: D) -> Result<BTreeMap<String, String>, D::Error>
where
    D: Deserializer<'de>,
{
    let raw = BTreeMap::<String, Value>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            scalar_to_string(&v)
                .map(|s| (k, s))
                .ok_or_else(|| serde::de::Error::custom("fulfilled values must be scalars"))
        })
        .collect()
}

/// Body of `POST /configure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigureRequest {
    pub id: String,
    pub parameters: serde_json::Map<String, Value>,
}

/// Body of `POST /receive_utterance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiveUtteranceRequest {
    pub conversation_id: String,
    pub utterance: Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResponse {
    pub utterance: Utterance,
}

/// Body of `POST /set_information_need` and of the
/// `/get_information_need` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationNeedMessage {
    pub information_need: InformationNeed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusMessage {
    pub status: String,
}

impl StatusMessage {
    pub fn ok() -> Self {
        Self {
            status: "ok".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub error: String,
}

/// Which schema a body is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    ConfigureRequest,
    ReceiveUtteranceRequest,
    UtteranceResponse,
    SetInformationNeedRequest,
    GetInformationNeedRequest,
    InformationNeedResponse,
    Status,
    Error,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::ConfigureRequest,
        MessageKind::ReceiveUtteranceRequest,
        MessageKind::UtteranceResponse,
        MessageKind::SetInformationNeedRequest,
        MessageKind::GetInformationNeedRequest,
        MessageKind::InformationNeedResponse,
        MessageKind::Status,
        MessageKind::Error,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ConfigureRequest(ConfigureRequest),
    ReceiveUtteranceRequest(ReceiveUtteranceRequest),
    UtteranceResponse(UtteranceResponse),
    SetInformationNeedRequest(InformationNeedMessage),
    GetInformationNeedRequest,
    InformationNeedResponse(InformationNeedMessage),
    Status(StatusMessage),
    Error(ErrorMessage),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ConfigureRequest(_) => MessageKind::ConfigureRequest,
            Message::ReceiveUtteranceRequest(_) => MessageKind::ReceiveUtteranceRequest,
            Message::UtteranceResponse(_) => MessageKind::UtteranceResponse,
            Message::SetInformationNeedRequest(_) => MessageKind::SetInformationNeedRequest,
            Message::GetInformationNeedRequest => MessageKind::GetInformationNeedRequest,
            Message::InformationNeedResponse(_) => MessageKind::InformationNeedResponse,
            Message::Status(_) => MessageKind::Status,
            Message::Error(_) => MessageKind::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub path: &'static str,
    pub required: bool,
}

/// Endpoints a system of a given role must serve. All use `POST`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointTable {
    pub role: Role,
    pub endpoints: Vec<Endpoint>,
}

impl EndpointTable {
    pub fn for_role(role: Role) -> Self {
        let mut endpoints = vec![
            Endpoint {
                path: CONFIGURE,
                required: true,
            },
            Endpoint {
                path: RECEIVE_UTTERANCE,
                required: true,
            },
        ];
        if role == Role::Simulator {
            endpoints.push(Endpoint {
                path: SET_INFORMATION_NEED,
                required: true,
            });
            endpoints.push(Endpoint {
                path: GET_INFORMATION_NEED,
                required: true,
            });
        }
        Self { role, endpoints }
    }

    pub fn contains(&self, path: &str) -> bool {
        self.endpoints.iter().any(|e| e.path == path)
    }
}
