//! Role-specific conformance suite: drives each endpoint of a running system
//! and reports named violations.

use std::fmt;

use serde::Serialize;
use serde_json::Map;

use super::{ClientError, InformationNeed, ProtocolClient, Role, SystemEndpoint, Utterance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub endpoint: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub role: Role,
    pub address: String,
    pub checks: Vec<CheckOutcome>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn violation(&self, name: &str) -> Option<&CheckOutcome> {
        self.violations().find(|c| c.name == name)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} at {}", self.role, self.address)?;
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "  [{mark}] {} ({})", c.name, c.endpoint)?;
            if !c.detail.is_empty() {
                write!(f, ": {}", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Need used when probing simulators.
pub fn probe_need() -> InformationNeed {
    InformationNeed::new(
        [("genre", vec!["Comedy"]), ("year", vec!["2009"])],
        &["runtime"],
    )
}

struct Suite<'a> {
    client: &'a ProtocolClient,
    checks: Vec<CheckOutcome>,
}

impl Suite<'_> {
    fn record<T>(
        &mut self,
        name: &'static str,
        endpoint: &'static str,
        result: Result<T, String>,
    ) -> Option<T> {
        let (passed, detail, value) = match result {
            Ok(v) => (true, String::new(), Some(v)),
            Err(e) => (false, e, None),
        };
        self.checks.push(CheckOutcome {
            name,
            endpoint,
            passed,
            detail,
        });
        value
    }
}

fn describe(e: ClientError) -> String {
    e.to_string()
}

/// Run every check for `target.role`. Endpoints outside the role's table are
/// never probed, so extra endpoints on an agent are ignored.
pub fn check_conformance(client: &ProtocolClient, target: &SystemEndpoint) -> ConformanceReport {
    let mut suite = Suite {
        client,
        checks: Vec::new(),
    };
    let conversation_id = "conformance-probe";

    let first = suite
        .client
        .configure(target, conversation_id, Map::new())
        .map_err(describe);
    suite.record("configure.ack", super::CONFIGURE, first);
    let again = suite
        .client
        .configure(target, conversation_id, Map::new())
        .map_err(describe);
    suite.record("configure.idempotent", super::CONFIGURE, again);

    match target.role {
        Role::Agent => {
            let opener = Utterance::new(
                Role::Simulator,
                "Hi! I am looking for a movie with genre: Comedy",
            );
            let reply = suite
                .client
                .receive_utterance(target, conversation_id, &opener)
                .map_err(describe);
            suite.record("receive_utterance.reply", super::RECEIVE_UTTERANCE, reply);
        }
        Role::Simulator => {
            let need = probe_need();
            let set = suite
                .client
                .set_information_need(target, &need)
                .map_err(describe);
            suite.record("set_information_need.ack", super::SET_INFORMATION_NEED, set);

            let got = suite
                .client
                .get_information_need(target)
                .map_err(describe)
                .and_then(|got| {
                    if got.same_goal(&need) {
                        Ok(())
                    } else {
                        Err(format!(
                            "returned {got:?}, expected constraints/requested of {need:?}"
                        ))
                    }
                });
            suite.record(
                "get_information_need.coherent",
                super::GET_INFORMATION_NEED,
                got,
            );

            let opener = suite
                .client
                .receive_utterance(target, conversation_id, &Utterance::start_marker())
                .map_err(describe);
            let opener = suite.record("receive_utterance.opener", super::RECEIVE_UTTERANCE, opener);
            if opener.is_some_and(|u| !u.is_stop()) {
                let reply =
                    Utterance::new(Role::Agent, "Could you tell me more about what you like?");
                let next = suite
                    .client
                    .receive_utterance(target, conversation_id, &reply)
                    .map_err(describe);
                suite.record("receive_utterance.reply", super::RECEIVE_UTTERANCE, next);
            }
        }
    }

    ConformanceReport {
        role: target.role,
        address: target.address.clone(),
        checks: suite.checks,
    }
}
