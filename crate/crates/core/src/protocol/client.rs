use std::fmt;
use std::io::Read;
use std::time::Duration;

use serde_json::{Map, Value};
use thiserror::Error;

use super::codec::{decode_message, encode_message, CodecError};
use super::{
    ConfigureRequest, EndpointTable, InformationNeed, InformationNeedMessage, Message, MessageKind,
    ReceiveUtteranceRequest, Role, Utterance, CONFIGURE, GET_INFORMATION_NEED, RECEIVE_UTTERANCE,
    SET_INFORMATION_NEED,
};

pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(30);

const MAX_BODY_BYTES: u64 = 8 * 1024 * 1024;

/// Where a running system can be reached, and what role it plays.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemEndpoint {
    /// `host:port`
    pub address: String,
    pub role: Role,
}

impl SystemEndpoint {
    pub fn new(address: impl Into<String>, role: Role) -> Self {
        Self {
            address: address.into(),
            role,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.address, path)
    }
}

impl fmt::Display for SystemEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.role, self.address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("{address} unreachable: {detail}")]
    Unreachable { address: String, detail: String },
    #[error("{path} returned status {status}: {body}")]
    RemoteError {
        path: String,
        status: u16,
        body: String,
    },
    #[error("{path} on {address} timed out")]
    Timeout { address: String, path: String },
    #[error("protocol violation on {path}: {detail}")]
    ProtocolViolation { path: String, detail: String },
    #[error("{path} is not served by {role} systems")]
    RoleViolation { path: String, role: Role },
}

impl ClientError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, ClientError::Timeout { .. })
    }
}

/// Stateless protocol client. Cheap to clone and safe to share across
/// threads.
#[derive(Clone)]
pub struct ProtocolClient {
    agent: ureq::Agent,
    timeout: Duration,
}

impl Default for ProtocolClient {
    fn default() -> Self {
        Self::new(DEFAULT_CALL_TIMEOUT)
    }
}

impl fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProtocolClient")
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ProtocolClient {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(timeout)
            .timeout_connect(timeout.min(Duration::from_secs(5)))
            .max_idle_connections(0)
            .build();
        Self { agent, timeout }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn configure(
        &self,
        target: &SystemEndpoint,
        id: &str,
        parameters: Map<String, Value>,
    ) -> Result<(), ClientError> {
        let body = Message::ConfigureRequest(ConfigureRequest {
            id: id.to_string(),
            parameters,
        });
        let resp = self.call(target, CONFIGURE, &body)?;
        self.expect(CONFIGURE, MessageKind::Status, &resp)?;
        Ok(())
    }

    /// Send `utterance` and return the callee's reply. The reply's
    /// participant must be the callee's role.
    pub fn receive_utterance(
        &self,
        target: &SystemEndpoint,
        conversation_id: &str,
        utterance: &Utterance,
    ) -> Result<Utterance, ClientError> {
        let body = Message::ReceiveUtteranceRequest(ReceiveUtteranceRequest {
            conversation_id: conversation_id.to_string(),
            utterance: utterance.without_timestamp(),
        });
        let resp = self.call(target, RECEIVE_UTTERANCE, &body)?;
        let Message::UtteranceResponse(reply) =
            self.expect(RECEIVE_UTTERANCE, MessageKind::UtteranceResponse, &resp)?
        else {
            unreachable!("decode returns the requested kind")
        };
        if reply.utterance.participant != target.role {
            return Err(ClientError::ProtocolViolation {
                path: RECEIVE_UTTERANCE.into(),
                detail: format!(
                    "reply participant {} from a {} system",
                    reply.utterance.participant, target.role
                ),
            });
        }
        Ok(reply.utterance)
    }

    pub fn set_information_need(
        &self,
        target: &SystemEndpoint,
        need: &InformationNeed,
    ) -> Result<(), ClientError> {
        self.role_gate(target, SET_INFORMATION_NEED)?;
        let body = Message::SetInformationNeedRequest(InformationNeedMessage {
            information_need: need.clone(),
        });
        let resp = self.call(target, SET_INFORMATION_NEED, &body)?;
        self.expect(SET_INFORMATION_NEED, MessageKind::Status, &resp)?;
        Ok(())
    }

    pub fn get_information_need(
        &self,
        target: &SystemEndpoint,
    ) -> Result<InformationNeed, ClientError> {
        self.role_gate(target, GET_INFORMATION_NEED)?;
        let resp = self.call(
            target,
            GET_INFORMATION_NEED,
            &Message::GetInformationNeedRequest,
        )?;
        let Message::InformationNeedResponse(m) = self.expect(
            GET_INFORMATION_NEED,
            MessageKind::InformationNeedResponse,
            &resp,
        )?
        else {
            unreachable!("decode returns the requested kind")
        };
        Ok(m.information_need)
    }

    fn role_gate(&self, target: &SystemEndpoint, path: &str) -> Result<(), ClientError> {
        if EndpointTable::for_role(target.role).contains(path) {
            Ok(())
        } else {
            Err(ClientError::RoleViolation {
                path: path.into(),
                role: target.role,
            })
        }
    }

    fn expect(&self, path: &str, kind: MessageKind, body: &[u8]) -> Result<Message, ClientError> {
        decode_message(kind, body).map_err(|e| ClientError::ProtocolViolation {
            path: path.into(),
            detail: e.to_string(),
        })
    }

    fn call(
        &self,
        target: &SystemEndpoint,
        path: &str,
        message: &Message,
    ) -> Result<Vec<u8>, ClientError> {
        let body =
            encode_message(message).map_err(|e: CodecError| ClientError::ProtocolViolation {
                path: path.into(),
                detail: format!("outgoing body: {e}"),
            })?;
        let result = self
            .agent
            .post(&target.url(path))
            .set("Content-Type", "application/json")
            .send_bytes(&body);
        match result {
            Ok(resp) => read_body(resp).map_err(|e| self.io_error(target, path, e)),
            Err(ureq::Error::Status(status, resp)) => {
                let raw = read_body(resp).unwrap_or_default();
                let text = String::from_utf8_lossy(&raw).into_owned();
                let body = serde_json::from_str::<Value>(&text)
                    .ok()
                    .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or(text);
                Err(ClientError::RemoteError {
                    path: path.into(),
                    status,
                    body,
                })
            }
            Err(ureq::Error::Transport(t)) => Err(self.transport_error(target, path, t)),
        }
    }

    fn io_error(&self, target: &SystemEndpoint, path: &str, e: std::io::Error) -> ClientError {
        if is_timeout_kind(e.kind()) {
            ClientError::Timeout {
                address: target.address.clone(),
                path: path.into(),
            }
        } else {
            ClientError::Unreachable {
                address: target.address.clone(),
                detail: e.to_string(),
            }
        }
    }

    fn transport_error(
        &self,
        target: &SystemEndpoint,
        path: &str,
        t: ureq::Transport,
    ) -> ClientError {
        use ureq::ErrorKind;
        let io_kind = std::error::Error::source(&t)
            .and_then(|s| s.downcast_ref::<std::io::Error>())
            .map(|e| e.kind());
        match t.kind() {
            ErrorKind::ConnectionFailed | ErrorKind::Dns => ClientError::Unreachable {
                address: target.address.clone(),
                detail: t.to_string(),
            },
            ErrorKind::Io if io_kind.is_some_and(is_timeout_kind) => ClientError::Timeout {
                address: target.address.clone(),
                path: path.into(),
            },
            _ if t.to_string().contains("timed out") => ClientError::Timeout {
                address: target.address.clone(),
                path: path.into(),
            },
            _ => ClientError::Unreachable {
                address: target.address.clone(),
                detail: t.to_string(),
            },
        }
    }
}

fn is_timeout_kind(kind: std::io::ErrorKind) -> bool {
    matches!(
        kind,
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
    )
}

fn read_body(resp: ureq::Response) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_end(&mut buf)?;
    Ok(buf)
}
