use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    ConfigureRequest, ErrorMessage, InformationNeedMessage, Message, MessageKind,
    ReceiveUtteranceRequest, StatusMessage, UtteranceResponse, STOP_KEY,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed body: {0}")]
    Parse(String),
    #[error("schema violation at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl CodecError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        CodecError::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Offending field path for schema violations.
    pub fn path(&self) -> Option<&str> {
        match self {
            CodecError::SchemaViolation { path, .. } => Some(path),
            CodecError::Parse(_) => None,
        }
    }
}

type Check = Result<(), CodecError>;

/// Serialize a message to canonical UTF-8 JSON after validating it.
///
/// Object keys are emitted in sorted order, so equal messages always encode
/// to identical bytes.
pub fn encode_message(message: &Message) -> Result<Vec<u8>, CodecError> {
    let value = match message {
        Message::ConfigureRequest(m) => to_value(m)?,
        Message::ReceiveUtteranceRequest(m) => to_value(m)?,
        Message::UtteranceResponse(m) => to_value(m)?,
        Message::SetInformationNeedRequest(m) | Message::InformationNeedResponse(m) => to_value(m)?,
        Message::GetInformationNeedRequest => Value::Object(Map::new()),
        Message::Status(m) => to_value(m)?,
        Message::Error(m) => to_value(m)?,
    };
    validate(message.kind(), &value)?;
    serde_json::to_vec(&value).map_err(|e| CodecError::Parse(e.to_string()))
}

/// Parse and validate a body of the given kind. Never panics.
pub fn decode_message(kind: MessageKind, bytes: &[u8]) -> Result<Message, CodecError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| CodecError::Parse(e.to_string()))?;
    validate(kind, &value)?;
    Ok(match kind {
        MessageKind::ConfigureRequest => {
            Message::ConfigureRequest(from_value::<ConfigureRequest>(value)?)
        }
        MessageKind::ReceiveUtteranceRequest => {
            Message::ReceiveUtteranceRequest(from_value::<ReceiveUtteranceRequest>(value)?)
        }
        MessageKind::UtteranceResponse => {
            Message::UtteranceResponse(from_value::<UtteranceResponse>(value)?)
        }
        MessageKind::SetInformationNeedRequest => {
            Message::SetInformationNeedRequest(from_value::<InformationNeedMessage>(value)?)
        }
        MessageKind::GetInformationNeedRequest => Message::GetInformationNeedRequest,
        MessageKind::InformationNeedResponse => {
            Message::InformationNeedResponse(from_value::<InformationNeedMessage>(value)?)
        }
        MessageKind::Status => Message::Status(from_value::<StatusMessage>(value)?),
        MessageKind::Error => Message::Error(from_value::<ErrorMessage>(value)?),
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CodecError> {
    serde_json::to_value(v).map_err(|e| CodecError::schema("$", e.to_string()))
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T, CodecError> {
    serde_json::from_value(v).map_err(|e| CodecError::schema("$", e.to_string()))
}

fn validate(kind: MessageKind, v: &Value) -> Check {
    let obj = object(v, "$")?;
    match kind {
        MessageKind::ConfigureRequest => {
            let id = string(field(obj, "$", "id")?, "id")?;
            if id.is_empty() {
                return Err(CodecError::schema("id", "must not be empty"));
            }
            object(field(obj, "$", "parameters")?, "parameters")?;
            Ok(())
        }
        MessageKind::ReceiveUtteranceRequest => {
            string(field(obj, "$", "conversation_id")?, "conversation_id")?;
            utterance(field(obj, "$", "utterance")?, "utterance")
        }
        MessageKind::UtteranceResponse => utterance(field(obj, "$", "utterance")?, "utterance"),
        MessageKind::SetInformationNeedRequest | MessageKind::InformationNeedResponse => {
            information_need(field(obj, "$", "information_need")?, "information_need")
        }
        MessageKind::GetInformationNeedRequest => Ok(()),
        MessageKind::Status => {
            let status = string(field(obj, "$", "status")?, "status")?;
            if status != "ok" {
                return Err(CodecError::schema(
                    "status",
                    format!("expected \"ok\", got {status:?}"),
                ));
            }
            Ok(())
        }
        MessageKind::Error => string(field(obj, "$", "error")?, "error").map(|_| ()),
    }
}

fn join(parent: &str, key: &str) -> String {
    if parent == "$" {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn field<'a>(
    obj: &'a Map<String, Value>,
    parent: &str,
    key: &str,
) -> Result<&'a Value, CodecError> {
    obj.get(key)
        .ok_or_else(|| CodecError::schema(join(parent, key), "missing field"))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, CodecError> {
    v.as_object()
        .ok_or_else(|| CodecError::schema(path, format!("expected object, got {}", type_name(v))))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str, CodecError> {
    v.as_str()
        .ok_or_else(|| CodecError::schema(path, format!("expected string, got {}", type_name(v))))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(
        v,
        Value::Null | Value::Bool(_) | Value::Number(_) | Value::String(_)
    )
}

fn utterance(v: &Value, path: &str) -> Check {
    let obj = object(v, path)?;
    let participant_path = join(path, "participant");
    let participant = string(field(obj, path, "participant")?, &participant_path)?;
    if participant != "AGENT" && participant != "SIMULATOR" {
        return Err(CodecError::schema(
            participant_path,
            format!("expected \"AGENT\" or \"SIMULATOR\", got {participant:?}"),
        ));
    }
    let text_path = join(path, "text");
    let text = string(field(obj, path, "text")?, &text_path)?;

    let mut stop = false;
    if let Some(meta) = obj.get("metadata") {
        let meta_path = join(path, "metadata");
        let meta = object(meta, &meta_path)?;
        for (key, value) in meta {
            let value_path = join(&meta_path, key);
            if key == STOP_KEY {
                stop = value
                    .as_bool()
                    .ok_or_else(|| CodecError::schema(&value_path, "expected boolean"))?;
                continue;
            }
            let ok = match value {
                Value::Array(items) => items.iter().all(is_scalar),
                other => is_scalar(other),
            };
            if !ok {
                return Err(CodecError::schema(
                    value_path,
                    "metadata values must be scalars or lists of scalars",
                ));
            }
        }
    }
    if text.is_empty() && !stop && !is_start(obj) {
        return Err(CodecError::schema(
            text_path,
            "empty text requires metadata.stop = true",
        ));
    }
    if let Some(ts) = obj.get("timestamp") {
        let ts_path = join(path, "timestamp");
        let s = string(ts, &ts_path)?;
        chrono::DateTime::parse_from_rfc3339(s)
            .map_err(|e| CodecError::schema(ts_path, format!("not RFC 3339: {e}")))?;
    }
    Ok(())
}

/// The synthetic opening marker is the one other utterance allowed an empty
/// text.
fn is_start(obj: &Map<String, Value>) -> bool {
    obj.get("participant").and_then(Value::as_str) == Some("AGENT")
        && obj
            .get("metadata")
            .and_then(|m| m.get(super::START_KEY))
            .and_then(Value::as_bool)
            == Some(true)
}

fn information_need(v: &Value, path: &str) -> Check {
    let obj = object(v, path)?;
    let constraints_path = join(path, "constraints");
    let constraints = object(field(obj, path, "constraints")?, &constraints_path)?;
    for (attr, values) in constraints {
        let attr_path = join(&constraints_path, attr);
        let Value::Array(values) = values else {
            return Err(CodecError::schema(
                attr_path,
                "expected array of accepted values",
            ));
        };
        if values.is_empty() {
            return Err(CodecError::schema(
                attr_path,
                "accepted values must not be empty",
            ));
        }
        for (i, value) in values.iter().enumerate() {
            if !matches!(value, Value::String(_) | Value::Number(_)) {
                return Err(CodecError::schema(
                    format!("{attr_path}[{i}]"),
                    "expected string or number",
                ));
            }
        }
    }

    let requested_path = join(path, "requested");
    let Value::Array(requested) = field(obj, path, "requested")? else {
        return Err(CodecError::schema(requested_path, "expected array"));
    };
    let mut names = Vec::with_capacity(requested.len());
    for (i, r) in requested.iter().enumerate() {
        names.push(string(r, &format!("{requested_path}[{i}]"))?);
    }

    if let Some(fulfilled) = obj.get("fulfilled") {
        let fulfilled_path = join(path, "fulfilled");
        for (attr, value) in object(fulfilled, &fulfilled_path)? {
            let attr_path = join(&fulfilled_path, attr);
            if !names.contains(&attr.as_str()) {
                return Err(CodecError::schema(
                    attr_path,
                    "fulfilled attribute was not requested",
                ));
            }
            if !matches!(value, Value::String(_) | Value::Number(_)) {
                return Err(CodecError::schema(attr_path, "expected string or number"));
            }
        }
    }
    Ok(())
}
