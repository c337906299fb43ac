//! Conversation orchestration between one agent and one simulator.
//!
//! The simulator speaks first: it is sent a synthetic start marker (never
//! stored) and its reply opens the transcript. Turns then alternate
//! simulator, agent, simulator, ... until the simulator sends
//! `metadata.stop = true`, `max_turns` simulator turns have been answered,
//! or a call fails.

use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::protocol::{
    ClientError, InformationNeed, ProtocolClient, Role, SystemEndpoint, Utterance,
};

pub const DEFAULT_MAX_TURNS: usize = 10;
pub const DEFAULT_CALL_TIMEOUT_SECS: f64 = 30.0;

/// `(name, version)` of a registered system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemRef {
    pub name: String,
    pub version: String,
}

impl SystemRef {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for SystemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Stopped,
    MaxTurns,
    Timeout,
    SystemError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Simulator turns per conversation.
    pub max_turns: usize,
    pub call_timeout_secs: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            call_timeout_secs: DEFAULT_CALL_TIMEOUT_SECS,
        }
    }
}

impl Limits {
    pub fn call_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.call_timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 {
            return Err("max_turns must be at least 1".into());
        }
        if !(self.call_timeout_secs.is_finite() && self.call_timeout_secs > 0.0) {
            return Err("call_timeout_secs must be positive".into());
        }
        Ok(())
    }
}

/// A collected transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub need: InformationNeed,
    pub utterances: Vec<Utterance>,
    pub termination: Termination,
    /// Failure detail for `TIMEOUT` and `SYSTEM_ERROR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub agent: SystemRef,
    pub simulator: SystemRef,
}

impl Conversation {
    /// Copy with every timestamp removed, for reproducibility comparisons.
    pub fn without_timestamps(&self) -> Conversation {
        Conversation {
            utterances: self
                .utterances
                .iter()
                .map(Utterance::without_timestamp)
                .collect(),
            ..self.clone()
        }
    }

    /// Check the transcript invariants: alternation starting with the
    /// simulator, at most `2 * max_turns` utterances, stop flag on the last
    /// utterance of a stopped conversation, non-decreasing timestamps.
    pub fn check_invariants(&self, max_turns: usize) -> Result<(), String> {
        for (i, u) in self.utterances.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::Simulator
            } else {
                Role::Agent
            };
            if u.participant != expected {
                return Err(format!(
                    "utterance {i} is from {}, expected {expected}",
                    u.participant
                ));
            }
        }
        if self.utterances.len() > 2 * max_turns {
            return Err(format!(
                "{} utterances exceed 2 x {max_turns} turns",
                self.utterances.len()
            ));
        }
        if self.termination == Termination::Stopped
            && !self.utterances.last().is_some_and(Utterance::is_stop)
        {
            return Err("STOPPED conversation does not end with a stop flag".into());
        }
        let mut last: Option<DateTime<Utc>> = None;
        for (i, u) in self.utterances.iter().enumerate() {
            if let (Some(prev), Some(ts)) = (last, u.timestamp) {
                if ts < prev {
                    return Err(format!("timestamp of utterance {i} goes backwards"));
                }
            }
            last = u.timestamp.or(last);
        }
        Ok(())
    }
}

/// One agent/simulator pairing, ready to hold conversations.
#[derive(Debug, Clone)]
pub struct Dialogue<'a> {
    pub client: &'a ProtocolClient,
    pub agent: &'a SystemEndpoint,
    pub simulator: &'a SystemEndpoint,
    pub agent_ref: SystemRef,
    pub simulator_ref: SystemRef,
    pub max_turns: usize,
}

struct Transcript {
    utterances: Vec<Utterance>,
    last: Option<DateTime<Utc>>,
}

impl Transcript {
    fn push(&mut self, mut u: Utterance) -> &Utterance {
        let now = Utc::now();
        let ts = match self.last {
            Some(prev) if prev > now => prev,
            _ => now,
        };
        self.last = Some(ts);
        u.timestamp = Some(ts);
        self.utterances.push(u);
        self.utterances.last().expect("just pushed")
    }
}

fn failure(e: &ClientError) -> Termination {
    if e.is_timeout() {
        Termination::Timeout
    } else {
        Termination::SystemError
    }
}

/// Ask the simulator for its opening utterance.
pub fn opening_prompt(
    client: &ProtocolClient,
    simulator: &SystemEndpoint,
    conversation_id: &str,
) -> Result<Utterance, ClientError> {
    client.receive_utterance(simulator, conversation_id, &Utterance::start_marker())
}

impl Dialogue<'_> {
    /// Configure both systems for `conversation_id`, hand the need to the
    /// simulator and run the conversation. Setup failures yield an empty
    /// `SYSTEM_ERROR` (or `TIMEOUT`) conversation.
    pub fn collect(
        &self,
        conversation_id: &str,
        need: &InformationNeed,
        agent_parameters: &Map<String, Value>,
        simulator_parameters: &Map<String, Value>,
    ) -> Conversation {
        let setup = self
            .client
            .configure(self.agent, conversation_id, agent_parameters.clone())
            .and_then(|_| {
                self.client.configure(
                    self.simulator,
                    conversation_id,
                    simulator_parameters.clone(),
                )
            })
            .and_then(|_| self.client.set_information_need(self.simulator, need));
        match setup {
            Ok(()) => self.run(conversation_id, need),
            Err(e) => self.finish(
                conversation_id,
                need,
                Vec::new(),
                failure(&e),
                Some(e.to_string()),
            ),
        }
    }

    /// Run one conversation. Never fails: call errors end the conversation
    /// with the partial transcript retained.
    pub fn run(&self, conversation_id: &str, need: &InformationNeed) -> Conversation {
        let mut transcript = Transcript {
            utterances: Vec::new(),
            last: None,
        };

        let mut user = match opening_prompt(self.client, self.simulator, conversation_id) {
            Ok(u) => transcript.push(u).clone(),
            Err(e) => {
                return self.finish(
                    conversation_id,
                    need,
                    transcript.utterances,
                    failure(&e),
                    Some(e.to_string()),
                )
            }
        };
        let mut turns = 1;
        loop {
            if user.is_stop() {
                return self.finish(
                    conversation_id,
                    need,
                    transcript.utterances,
                    Termination::Stopped,
                    None,
                );
            }
            let reply = match self
                .client
                .receive_utterance(self.agent, conversation_id, &user)
            {
                Ok(u) => transcript.push(u).clone(),
                Err(e) => {
                    return self.finish(
                        conversation_id,
                        need,
                        transcript.utterances,
                        failure(&e),
                        Some(e.to_string()),
                    )
                }
            };
            if reply.is_stop() {
                return self.finish(
                    conversation_id,
                    need,
                    transcript.utterances,
                    Termination::Stopped,
                    None,
                );
            }
            if turns >= self.max_turns {
                return self.finish(
                    conversation_id,
                    need,
                    transcript.utterances,
                    Termination::MaxTurns,
                    None,
                );
            }
            user = match self
                .client
                .receive_utterance(self.simulator, conversation_id, &reply)
            {
                Ok(u) => transcript.push(u).clone(),
                Err(e) => {
                    return self.finish(
                        conversation_id,
                        need,
                        transcript.utterances,
                        failure(&e),
                        Some(e.to_string()),
                    )
                }
            };
            turns += 1;
        }
    }

    fn finish(
        &self,
        id: &str,
        need: &InformationNeed,
        utterances: Vec<Utterance>,
        termination: Termination,
        error: Option<String>,
    ) -> Conversation {
        Conversation {
            id: id.to_string(),
            need: need.clone(),
            utterances,
            termination,
            error,
            agent: self.agent_ref.clone(),
            simulator: self.simulator_ref.clone(),
        }
    }
}
