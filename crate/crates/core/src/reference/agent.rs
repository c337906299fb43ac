use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde_json::{Map, Value};

use super::{mentioned_attributes, mentions_word, parse_constraint_clauses, ProtocolHandler};
use crate::protocol::{InformationNeed, Role, Utterance};
use crate::tasks::{match_items, AttributeValue, Catalog, CatalogItem};

pub const NO_MATCH_REPLY: &str = "I could not find a matching movie.";
const ELICIT_REPLY: &str = "What kind of movie are you looking for?";

#[derive(Debug, Default, Clone)]
struct AgentConversation {
    constraints: BTreeMap<String, Vec<String>>,
    recommended: Option<String>,
}

/// Rule-based recommender over a catalog.
///
/// Per conversation it accumulates constraints from the user's utterances,
/// recommends the first catalog item matching all of them, and answers
/// attribute questions about the last recommendation. A later statement of
/// an attribute replaces the earlier one.
#[derive(Debug)]
pub struct ReferenceAgent {
    catalog: Arc<Catalog>,
    conversations: Mutex<HashMap<String, AgentConversation>>,
}

impl ReferenceAgent {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self {
            catalog,
            conversations: Mutex::new(HashMap::new()),
        }
    }

    /// Reply to one user utterance in `conversation_id`.
    pub fn respond(&self, conversation_id: &str, utterance: &Utterance) -> Utterance {
        let mut conversations = self.conversations.lock().expect("agent state");
        let state = conversations
            .entry(conversation_id.to_string())
            .or_default();
        Utterance::new(Role::Agent, self.step(state, &utterance.text))
    }

    fn step(&self, state: &mut AgentConversation, text: &str) -> String {
        let mut stated = parse_constraint_clauses(text);
        let is_question = text.contains('?');
        if stated.is_empty() && !is_question {
            stated = self.vocabulary_mentions(text);
        }
        let new_constraints = !stated.is_empty();
        for (attr, values) in stated {
            state.constraints.insert(attr.to_string(), values);
        }

        if is_question && !new_constraints {
            if let Some(item) = state
                .recommended
                .as_deref()
                .and_then(|id| self.catalog.get(id))
            {
                let asked = mentioned_attributes(text);
                if !asked.is_empty() {
                    return answer(item, &asked);
                }
            }
        }

        if state.constraints.is_empty() {
            return ELICIT_REPLY.to_string();
        }
        let need = InformationNeed {
            constraints: state.constraints.clone(),
            ..Default::default()
        };
        let first = match_items(&need, &self.catalog)
            .ok()
            .and_then(|ids| ids.into_iter().next());
        match first.and_then(|id| self.catalog.get(&id)) {
            Some(item) => {
                state.recommended = Some(item.id.clone());
                format!("I recommend \"{}\".", item.title)
            }
            None => {
                state.recommended = None;
                NO_MATCH_REPLY.to_string()
            }
        }
    }

    /// Genre and actor names mentioned without the `attribute:` form.
    fn vocabulary_mentions(&self, text: &str) -> Vec<(&'static str, Vec<String>)> {
        let mut genres: Vec<String> = Vec::new();
        let mut actors: Vec<String> = Vec::new();
        for item in self.catalog.items() {
            for g in &item.genres {
                if !genres.contains(g) && mentions_word(text, g) {
                    genres.push(g.clone());
                }
            }
            for a in &item.actors {
                if !actors.contains(a) && mentions_word(text, a) {
                    actors.push(a.clone());
                }
            }
        }
        let mut out = Vec::new();
        if !genres.is_empty() {
            out.push(("genre", genres));
        }
        if !actors.is_empty() {
            out.push(("actors", actors));
        }
        out
    }
}

fn answer(item: &CatalogItem, asked: &[&str]) -> String {
    asked
        .iter()
        .filter_map(|attr| {
            let value = item.attribute(attr).ok()?;
            let verb = match value {
                AttributeValue::List(v) if v.len() != 1 => "are",
                _ => "is",
            };
            let rendered = if value.is_populated() {
                value.to_string()
            } else {
                "unknown".to_string()
            };
            Some(format!(
                "The {attr} of \"{}\" {verb} {rendered}.",
                item.title
            ))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl ProtocolHandler for ReferenceAgent {
    fn configure(&self, id: &str, _parameters: &Map<String, Value>) -> Result<(), String> {
        self.conversations
            .lock()
            .expect("agent state")
            .insert(id.to_string(), AgentConversation::default());
        Ok(())
    }

    fn receive(&self, conversation_id: &str, utterance: &Utterance) -> Result<Utterance, String> {
        Ok(self.respond(conversation_id, utterance))
    }
}
