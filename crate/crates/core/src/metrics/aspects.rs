//! Heuristic approximations of the FED "understanding" and "consistency"
//! dialogue aspects. Both are transcript-only and deterministic; swap in
//! [`super::ExternalScorer`] for model-based scoring.

use std::collections::{BTreeMap, BTreeSet};

use super::{AspectScorer, ScorerFailure};
use crate::dialogue::Conversation;
use crate::protocol::Role;
use crate::tasks::{FED_CONSISTENCY, FED_UNDERSTANDING};

const STOPWORDS: &[&str] = &[
    "a", "about", "also", "am", "an", "and", "any", "are", "be", "but", "can", "could", "do",
    "for", "from", "have", "how", "i", "in", "is", "it", "its", "like", "me", "my", "of", "on",
    "or", "please", "so", "some", "that", "the", "this", "to", "want", "was", "what", "which",
    "with", "would", "you", "your",
];

/// Lowercased alphanumeric tokens minus stopwords.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Fraction of simulator questions (utterances containing `?`) whose next
/// utterance is an agent reply sharing at least one content token. When the
/// simulator asks no questions, every simulator utterance counts. Fewer than
/// two utterances score 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnderstandingScorer;

impl AspectScorer for UnderstandingScorer {
    fn metric_name(&self) -> &str {
        FED_UNDERSTANDING
    }

    fn score(&self, conversation: &Conversation) -> Result<f64, ScorerFailure> {
        let us = &conversation.utterances;
        if us.len() < 2 {
            return Ok(0.0);
        }
        let user: Vec<usize> = (0..us.len())
            .filter(|&i| us[i].participant == Role::Simulator)
            .collect();
        let questions: Vec<usize> = user
            .iter()
            .copied()
            .filter(|&i| us[i].text.contains('?'))
            .collect();
        let units = if questions.is_empty() {
            user
        } else {
            questions
        };
        if units.is_empty() {
            return Ok(0.0);
        }
        let understood = units
            .iter()
            .filter(|&&i| {
                us.get(i + 1).is_some_and(|reply| {
                    reply.participant == Role::Agent
                        && !content_tokens(&us[i].text).is_disjoint(&content_tokens(&reply.text))
                })
            })
            .count();
        Ok(understood as f64 / units.len() as f64)
    }
}

/// Fraction of agent utterances that do not contradict an earlier agent
/// statement. A contradiction is a claim `<attribute> of "<title>" is|are
/// <value>` whose value differs from an earlier claim about the same title
/// and attribute. Fewer than two utterances, or no agent utterance, score 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConsistencyScorer;

/// `(title, attribute) -> value` claims in one utterance.
fn claims(text: &str) -> Vec<((String, String), String)> {
    let mut out = Vec::new();
    let lower = text.to_lowercase();
    if lower.len() != text.len() {
        return out;
    }
    let mut from = 0;
    while let Some(rel) = lower[from..].find(" of \"") {
        let of_at = from + rel;
        let title_start = of_at + 5;
        let Some(title_len) = lower[title_start..].find('"') else {
            break;
        };
        let title_end = title_start + title_len;
        let attribute = lower[..of_at]
            .split(|c: char| !c.is_alphanumeric())
            .next_back()
            .unwrap_or("")
            .to_string();
        let rest = &lower[title_end + 1..];
        let value = [" is ", " are "]
            .iter()
            .find_map(|sep| rest.strip_prefix(sep))
            .map(|v| v.split(['.', '\n']).next().unwrap_or("").trim().to_string());
        if let (false, Some(value)) = (attribute.is_empty(), value) {
            out.push((
                (lower[title_start..title_end].to_string(), attribute),
                value,
            ));
        }
        from = title_end + 1;
    }
    out
}

impl AspectScorer for ConsistencyScorer {
    fn metric_name(&self) -> &str {
        FED_CONSISTENCY
    }

    fn score(&self, conversation: &Conversation) -> Result<f64, ScorerFailure> {
        let us = &conversation.utterances;
        if us.len() < 2 {
            return Ok(0.0);
        }
        let mut known: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut total = 0usize;
        let mut inconsistent = 0usize;
        for u in us.iter().filter(|u| u.participant == Role::Agent) {
            total += 1;
            let mut contradicted = false;
            for (key, value) in claims(&u.text) {
                match known.get(&key) {
                    Some(prev) if *prev != value => contradicted = true,
                    Some(_) => {}
                    None => {
                        known.insert(key, value);
                    }
                }
            }
            if contradicted {
                inconsistent += 1;
            }
        }
        if total == 0 {
            return Ok(0.0);
        }
        Ok(1.0 - inconsistent as f64 / total as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Termination;
    use crate::metrics::tests::conv;
    use crate::protocol::InformationNeed;

    fn score(s: &dyn AspectScorer, lines: &[&str]) -> f64 {
        s.score(&conv(
            "c",
            InformationNeed::default(),
            lines,
            Termination::Stopped,
        ))
        .unwrap()
    }

    #[test]
    fn single_utterance_scores_zero() {
        assert_eq!(score(&UnderstandingScorer, &["hello?"]), 0.0);
        assert_eq!(score(&ConsistencyScorer, &["hello?"]), 0.0);
        assert_eq!(score(&UnderstandingScorer, &[]), 0.0);
    }

    // Hand-scored fixture transcripts.
    #[test]
    fn understanding_fixtures() {
        // both questions answered on topic
        let t = [
            "I want genre: Comedy.",
            "I recommend \"Zombieland\".",
            "What is the runtime of it?",
            "The runtime of \"Zombieland\" is 88.",
            "Who are the actors?",
            "The actors of \"Zombieland\" are Jesse Eisenberg, Emma Stone.",
        ];
        assert_eq!(score(&UnderstandingScorer, &t), 1.0);
        // one of two questions answered; the second gets an off-topic reply
        let t = [
            "What is the runtime of it?",
            "The runtime is 88.",
            "Who are the actors?",
            "Sorry, I did not get that.",
        ];
        assert_eq!(score(&UnderstandingScorer, &t), 0.5);
        // last question has no reply
        let t = [
            "Any comedy?",
            "Yes, a comedy: \"Zombieland\".",
            "What year?",
        ];
        assert_eq!(score(&UnderstandingScorer, &t), 0.5);
        // no questions: all simulator utterances count
        let t = ["genre: Comedy", "A comedy, sure.", "year: 2009", "Hmm."];
        assert_eq!(score(&UnderstandingScorer, &t), 0.5);
    }

    #[test]
    fn consistency_fixtures() {
        let t = [
            "q",
            "The runtime of \"Avatar\" is 162.",
            "q",
            "The runtime of \"Avatar\" is 162.",
        ];
        assert_eq!(score(&ConsistencyScorer, &t), 1.0);
        let t = [
            "q",
            "The runtime of \"Avatar\" is 162.",
            "q",
            "The runtime of \"Avatar\" is 100.",
            "q",
            "The year of \"Avatar\" is 2009.",
            "q",
            "Bye",
        ];
        assert_eq!(score(&ConsistencyScorer, &t), 0.75);
        assert_eq!(score(&ConsistencyScorer, &["q", "plain"]), 1.0);
    }

    #[test]
    fn claim_extraction() {
        let c = claims("The runtime of \"A\" is 10. The keywords of \"A\" are x, y.");
        assert_eq!(c.len(), 2);
        assert_eq!(c[0], (("a".into(), "runtime".into()), "10".into()));
        assert_eq!(c[1], (("a".into(), "keywords".into()), "x, y".into()));
        assert!(claims("One of \"them\" maybe").is_empty());
    }
}
