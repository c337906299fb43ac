use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Mutex;

use serde_json::{Map, Value};

use super::{mentioned_attributes, quoted_title, ProtocolHandler, ATTRIBUTE_WORDS};
use crate::protocol::{InformationNeed, Role, Utterance};

pub const THANKS_REPLY: &str = "Thank you, that is all I needed!";
pub const GIVE_UP_REPLY: &str = "I give up, goodbye.";

/// Order in which constraints are disclosed. Emulates differences between
/// simulator versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisclosureOrder {
    #[default]
    Forward,
    Reverse,
}

impl FromStr for DisclosureOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(DisclosureOrder::Forward),
            "reverse" => Ok(DisclosureOrder::Reverse),
            other => Err(format!("unknown disclosure order {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimulatorOptions {
    pub disclosure_order: DisclosureOrder,
    /// Send a stop-flagged utterance at this user turn if the goal is not
    /// reached earlier.
    pub max_turns: Option<usize>,
}

#[derive(Debug, Clone)]
struct SimConversation {
    need: InformationNeed,
    order: Vec<String>,
    disclosed: usize,
    /// An agent utterance named a title since the last disclosure.
    title_named: bool,
    asking: Option<String>,
    turns: usize,
    done: bool,
}

#[derive(Debug, Default)]
struct SimState {
    options: SimulatorOptions,
    need: Option<InformationNeed>,
    conversations: HashMap<String, SimConversation>,
    last_conversation: Option<String>,
}

/// Scripted user simulator.
///
/// Opens by disclosing one constraint, discloses one more per turn, restates
/// the whole goal while no title has been named, then asks each requested
/// attribute in order and stops once all of them were answered.
#[derive(Debug, Default)]
pub struct ReferenceSimulator {
    state: Mutex<SimState>,
}

impl ReferenceSimulator {
    pub fn new(options: SimulatorOptions) -> Self {
        Self {
            state: Mutex::new(SimState {
                options,
                ..Default::default()
            }),
        }
    }

    pub fn set_need(&self, need: InformationNeed) {
        let mut state = self.state.lock().expect("simulator state");
        state.need = Some(need.goal());
        state.conversations.clear();
        state.last_conversation = None;
    }

    /// The current need; `fulfilled` reflects the most recent conversation.
    pub fn need(&self) -> Option<InformationNeed> {
        let state = self.state.lock().expect("simulator state");
        let mut need = state.need.clone()?;
        if let Some(conv) = state
            .last_conversation
            .as_ref()
            .and_then(|id| state.conversations.get(id))
        {
            need.fulfilled = conv.need.fulfilled.clone();
        }
        Some(need)
    }

    pub fn respond(&self, conversation_id: &str, agent: &Utterance) -> Result<Utterance, String> {
        let mut guard = self.state.lock().expect("simulator state");
        let state = &mut *guard;
        let need = state
            .need
            .clone()
            .ok_or_else(|| "no information need has been set".to_string())?;
        let options = state.options;
        if agent.is_start_marker() || !state.conversations.contains_key(conversation_id) {
            let mut order: Vec<String> = need.constraints.keys().cloned().collect();
            if options.disclosure_order == DisclosureOrder::Reverse {
                order.reverse();
            }
            state.conversations.insert(
                conversation_id.to_string(),
                SimConversation {
                    need: need.clone(),
                    order,
                    disclosed: 0,
                    title_named: false,
                    asking: None,
                    turns: 0,
                    done: false,
                },
            );
        }
        state.last_conversation = Some(conversation_id.to_string());
        let conv = state
            .conversations
            .get_mut(conversation_id)
            .expect("conversation inserted above");
        Ok(step(conv, options, agent))
    }
}

fn step(conv: &mut SimConversation, options: SimulatorOptions, agent: &Utterance) -> Utterance {
    conv.turns += 1;
    if conv.done {
        return Utterance::stop(Role::Simulator, THANKS_REPLY);
    }
    if agent.is_start_marker() {
        return match next_disclosure(conv) {
            Some(clause) => Utterance::new(
                Role::Simulator,
                format!("Hi! I am looking for a movie with {clause}."),
            ),
            None => Utterance::new(Role::Simulator, "Hi! Can you recommend a movie?"),
        };
    }

    let text = agent.text.as_str();
    if let Some(attr) = conv.asking.clone() {
        if let Some(value) = parse_answer(text, &attr) {
            conv.need.fulfilled.insert(attr, value);
            conv.asking = None;
        }
    }
    if quoted_title(text).is_some() {
        conv.title_named = true;
    }

    if options.max_turns.is_some_and(|m| conv.turns >= m) {
        conv.done = true;
        return Utterance::stop(Role::Simulator, GIVE_UP_REPLY);
    }

    if let Some(clause) = next_disclosure(conv) {
        return Utterance::new(Role::Simulator, format!("I would also like {clause}."));
    }
    if !conv.title_named {
        return Utterance::new(
            Role::Simulator,
            format!(
                "I am looking for a movie with {}.",
                goal_clauses(&conv.need)
            ),
        );
    }
    let pending = conv
        .need
        .requested
        .iter()
        .find(|r| !conv.need.fulfilled.contains_key(*r))
        .cloned();
    match pending {
        Some(attr) => {
            let verb = if attr.ends_with('s') { "are" } else { "is" };
            let question = format!("What {verb} the {attr} of it?");
            conv.asking = Some(attr);
            Utterance::new(Role::Simulator, question)
        }
        None => {
            conv.done = true;
            Utterance::stop(Role::Simulator, THANKS_REPLY)
        }
    }
}

fn next_disclosure(conv: &mut SimConversation) -> Option<String> {
    let attr = conv.order.get(conv.disclosed)?.clone();
    conv.disclosed += 1;
    conv.title_named = false;
    Some(clause(&attr, &conv.need.constraints[&attr]))
}

fn clause(attr: &str, values: &[String]) -> String {
    format!("{attr}: {}", values.join(", "))
}

fn goal_clauses(need: &InformationNeed) -> String {
    need.constraints
        .iter()
        .map(|(a, v)| clause(a, v))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Value stated for `attr` in an answer like `The runtime of "X" is 108.`
fn parse_answer(text: &str, attr: &str) -> Option<String> {
    if !mentioned_attributes(text).contains(&attr) {
        return None;
    }
    let words = ATTRIBUTE_WORDS.iter().find(|(a, _)| *a == attr)?.1;
    let lower = text.to_lowercase();
    if lower.len() != text.len() {
        return None;
    }
    let start = words.iter().filter_map(|w| lower.find(w)).min()?;
    let rest = &text[start..];
    let rest_lower = &lower[start..];
    let (pos, skip) = [" is ", " are "]
        .iter()
        .filter_map(|sep| rest_lower.find(sep).map(|p| (p, sep.len())))
        .min()?;
    let value = rest[pos + skip..]
        .split(['.', '\n'])
        .next()
        .unwrap_or("")
        .trim();
    (!value.is_empty()).then(|| value.to_string())
}

impl ProtocolHandler for ReferenceSimulator {
    fn configure(&self, _id: &str, parameters: &Map<String, Value>) -> Result<(), String> {
        let mut state = self.state.lock().expect("simulator state");
        if let Some(v) = parameters.get("max_turns") {
            let n = v
                .as_u64()
                .filter(|n| *n >= 1)
                .ok_or_else(|| "max_turns must be a positive integer".to_string())?;
            state.options.max_turns = Some(n as usize);
        }
        if let Some(v) = parameters.get("disclosure_order") {
            state.options.disclosure_order = v
                .as_str()
                .ok_or_else(|| "disclosure_order must be a string".to_string())?
                .parse()?;
        }
        Ok(())
    }

    fn receive(&self, conversation_id: &str, utterance: &Utterance) -> Result<Utterance, String> {
        self.respond(conversation_id, utterance)
    }

    fn set_need(&self, need: InformationNeed) -> Option<Result<(), String>> {
        ReferenceSimulator::set_need(self, need);
        Some(Ok(()))
    }

    fn get_need(&self) -> Option<Result<InformationNeed, String>> {
        Some(
            self.need()
                .ok_or_else(|| "no information need has been set".to_string()),
        )
    }
}
