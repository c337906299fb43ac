//! Per-conversation metrics and their aggregates.

mod aspects;
mod external;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aspects::{content_tokens, ConsistencyScorer, UnderstandingScorer};
pub use external::{ExternalClassifier, ExternalScorer};

use crate::dialogue::Conversation;
use crate::protocol::{InformationNeed, Role};
use crate::tasks::{match_items, Catalog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no conversations to score")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scorer failed: {0}")]
pub struct ScorerFailure(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub count: usize,
}

impl Aggregate {
    /// Aggregate of `scores`, summed in iteration order. An empty set
    /// aggregates to zeros.
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a f64>) -> Self {
        let values: Vec<f64> = scores.into_iter().copied().collect();
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std_dev: 0.0,
                count: 0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std_dev: var.sqrt(),
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric_name: String,
    pub per_conversation: BTreeMap<String, f64>,
    pub aggregate: Aggregate,
}

impl MetricResult {
    pub fn from_scores(
        metric_name: impl Into<String>,
        per_conversation: BTreeMap<String, f64>,
    ) -> Self {
        let aggregate = Aggregate::of(per_conversation.values());
        Self {
            metric_name: metric_name.into(),
            per_conversation,
            aggregate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Success,
    Failure,
}

/// Judges whether a conversation satisfied its information need.
pub trait ConversationClassifier: Send + Sync {
    fn classify(&self, conversation: &Conversation) -> Label;
}

/// Scores one dialogue-quality aspect of a conversation in `[0, 1]`.
pub trait AspectScorer: Send + Sync {
    fn metric_name(&self) -> &str;
    fn score(&self, conversation: &Conversation) -> Result<f64, ScorerFailure>;
}

/// Fraction of conversations labelled `SUCCESS`.
pub fn success_rate(
    conversations: &[Conversation],
    classifier: &dyn ConversationClassifier,
) -> Result<MetricResult, MetricsError> {
    if conversations.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let scores = conversations
        .iter()
        .map(|c| {
            let score = match classifier.classify(c) {
                Label::Success => 1.0,
                Label::Failure => 0.0,
            };
            (c.id.clone(), score)
        })
        .collect();
    Ok(MetricResult::from_scores(
        crate::tasks::SUCCESS_RATE,
        scores,
    ))
}

/// Score every conversation with `scorer`. Failed conversations are left out
/// of `per_conversation` and logged.
pub fn aspect_score(
    conversations: &[Conversation],
    scorer: &dyn AspectScorer,
) -> Result<MetricResult, MetricsError> {
    if conversations.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut scores = BTreeMap::new();
    for c in conversations {
        match scorer.score(c) {
            Ok(s) if (0.0..=1.0).contains(&s) => {
                scores.insert(c.id.clone(), s);
            }
            Ok(s) => tracing::warn!(
                metric = scorer.metric_name(),
                conversation = %c.id,
                score = s,
                "score outside [0, 1] discarded"
            ),
            Err(e) => tracing::warn!(
                metric = scorer.metric_name(),
                conversation = %c.id,
                error = %e,
                "scorer failed"
            ),
        }
    }
    Ok(MetricResult::from_scores(scorer.metric_name(), scores))
}

/// Deterministic transcript check against the task catalog.
///
/// `SUCCESS` iff some catalog item satisfying every constraint is named
/// (case-insensitive title substring) in an agent utterance, and each
/// requested attribute value of that item appears in agent text at or after
/// the point where it is first named. For list-valued attributes every
/// element must appear.
pub fn oracle_classify(
    conversation: &Conversation,
    need: &InformationNeed,
    catalog: &Catalog,
) -> Label {
    let Ok(candidates) = match_items(need, catalog) else {
        return Label::Failure;
    };
    let agent_texts: Vec<String> = conversation
        .utterances
        .iter()
        .filter(|u| u.participant == Role::Agent)
        .map(|u| u.text.to_lowercase())
        .collect();

    for id in candidates {
        let Some(item) = catalog.get(&id) else {
            continue;
        };
        let title = item.title.to_lowercase();
        let Some((idx, pos)) = agent_texts
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.find(&title).map(|p| (i, p)))
        else {
            continue;
        };
        let mut window: Vec<&str> = vec![&agent_texts[idx][pos..]];
        window.extend(agent_texts[idx + 1..].iter().map(String::as_str));

        let answered = need
            .requested
            .iter()
            .all(|attr| match item.attribute(attr) {
                Ok(value) => value.values().iter().all(|v| {
                    let v = v.to_lowercase();
                    window.iter().any(|t| t.contains(&v))
                }),
                Err(_) => false,
            });
        if answered {
            return Label::Success;
        }
    }
    Label::Failure
}

/// [`oracle_classify`] over a fixed catalog, using each conversation's own
/// need.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    catalog: Arc<Catalog>,
}

impl OracleClassifier {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self { catalog }
    }
}

impl ConversationClassifier for OracleClassifier {
    fn classify(&self, conversation: &Conversation) -> Label {
        oracle_classify(conversation, &conversation.need, &self.catalog)
    }
}
