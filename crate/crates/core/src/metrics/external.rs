use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{AspectScorer, ConversationClassifier, Label, ScorerFailure};
use crate::dialogue::Conversation;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(timeout)
        .timeout_connect(timeout.min(Duration::from_secs(5)))
        .build()
}

fn post(agent: &ureq::Agent, url: &str, body: Value) -> Result<Value, String> {
    let resp = agent.post(url).send_json(body).map_err(|e| e.to_string())?;
    resp.into_json::<Value>().map_err(|e| e.to_string())
}

/// Classifier backed by a remote service.
///
/// Sends `POST {endpoint}/classify` with `{"conversation", "information_need"}`
/// and expects `{"label": "SUCCESS" | "FAILURE"}`. Any failure counts as
/// `FAILURE` and increments [`ExternalClassifier::warnings`].
#[derive(Debug)]
pub struct ExternalClassifier {
    url: String,
    agent: ureq::Agent,
    warnings: AtomicUsize,
}

impl ExternalClassifier {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        Self {
            url: format!("{}/classify", endpoint.trim_end_matches('/')),
            agent: agent(timeout),
            warnings: AtomicUsize::new(0),
        }
    }

    pub fn warnings(&self) -> usize {
        self.warnings.load(Ordering::SeqCst)
    }
}

impl ConversationClassifier for ExternalClassifier {
    fn classify(&self, conversation: &Conversation) -> Label {
        let body = json!({
            "conversation": conversation,
            "information_need": conversation.need,
        });
        let label = post(&self.agent, &self.url, body).and_then(|v| {
            serde_json::from_value::<Label>(v.get("label").cloned().unwrap_or(Value::Null))
                .map_err(|e| format!("bad label: {e}"))
        });
        label.unwrap_or_else(|e| {
            self.warnings.fetch_add(1, Ordering::SeqCst);
            tracing::warn!(conversation = %conversation.id, error = %e, "external classifier failed");
            Label::Failure
        })
    }
}

/// Aspect scorer backed by a remote service.
///
/// Sends `POST {endpoint}/score` with `{"aspect", "conversation"}` and
/// expects `{"score": <number>}`.
#[derive(Debug)]
pub struct ExternalScorer {
    aspect: String,
    url: String,
    agent: ureq::Agent,
}

impl ExternalScorer {
    pub fn new(aspect: impl Into<String>, endpoint: &str, timeout: Duration) -> Self {
        Self {
            aspect: aspect.into(),
            url: format!("{}/score", endpoint.trim_end_matches('/')),
            agent: agent(timeout),
        }
    }
}

impl AspectScorer for ExternalScorer {
    fn metric_name(&self) -> &str {
        &self.aspect
    }

    fn score(&self, conversation: &Conversation) -> Result<f64, ScorerFailure> {
        let v = post(
            &self.agent,
            &self.url,
            json!({ "aspect": self.aspect, "conversation": conversation }),
        )
        .map_err(ScorerFailure)?;
        v.get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ScorerFailure(format!("missing score in {v}")))
    }
}
