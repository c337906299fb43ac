//! Deterministic reference systems: a rule-based recommendation agent and a
//! scripted user simulator. Both speak the protocol over HTTP and are used
//! for end-to-end runs without external systems.
//!
//! The two share a small textual convention. Simulators state constraints as
//! `attribute: value, value` clauses separated by `;`, agents quote titles
//! (`I recommend "Avatar".`) and answer questions as
//! `The runtime of "Avatar" is 162.`

mod agent;
mod simulator;

use std::net::SocketAddr;
use std::sync::Arc;

pub use agent::ReferenceAgent;
pub use simulator::{DisclosureOrder, ReferenceSimulator, SimulatorOptions};

use crate::http::{HttpRequest, HttpResponse, HttpServer};
use crate::protocol::{
    decode_message, encode_message, InformationNeedMessage, Message, MessageKind, StatusMessage,
    UtteranceResponse, CONFIGURE, GET_INFORMATION_NEED, RECEIVE_UTTERANCE, SET_INFORMATION_NEED,
};

/// Attribute names and the words that refer to them, in canonical order.
const ATTRIBUTE_WORDS: [(&str, &[&str]); 5] = [
    ("genre", &["genre", "genres"]),
    ("year", &["year", "released", "release"]),
    ("actors", &["actors", "actor", "cast", "starring"]),
    ("keywords", &["keywords", "keyword"]),
    ("runtime", &["runtime", "duration", "length", "how long"]),
];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offsets of whole-word, case-insensitive occurrences of `needle`.
fn find_word(haystack: &str, needle: &str) -> Vec<usize> {
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    if hay.len() != haystack.len() || needle.is_empty() {
        // lowercasing changed byte lengths; fall back to no match
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = hay[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !is_word_char(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push(start);
        }
        from = start + needle.len().max(1);
        while !hay.is_char_boundary(from) {
            from += 1;
        }
    }
    out
}

fn mentions_word(haystack: &str, needle: &str) -> bool {
    !find_word(haystack, needle).is_empty()
}

/// Attributes referred to anywhere in `text`, in canonical order.
fn mentioned_attributes(text: &str) -> Vec<&'static str> {
    ATTRIBUTE_WORDS
        .iter()
        .filter(|(_, words)| words.iter().any(|w| mentions_word(text, w)))
        .map(|(attr, _)| *attr)
        .collect()
}

/// `attribute: v1, v2` clauses, split on `;` and newlines.
fn parse_constraint_clauses(text: &str) -> Vec<(&'static str, Vec<String>)> {
    let mut out: Vec<(&'static str, Vec<String>)> = Vec::new();
    for clause in text.split([';', '\n']) {
        let lower = clause.to_lowercase();
        if lower.len() != clause.len() {
            continue;
        }
        for (attr, words) in ATTRIBUTE_WORDS {
            for word in words {
                let Some(start) = find_word(clause, word)
                    .into_iter()
                    .find(|&s| lower[s + word.len()..].trim_start().starts_with(':'))
                else {
                    continue;
                };
                let after = &clause[start + word.len()..];
                let after = after.trim_start().trim_start_matches(':');
                let values: Vec<String> = after
                    .trim()
                    .trim_end_matches(['.', '!', '?'])
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(str::to_string)
                    .collect();
                if !values.is_empty() {
                    out.retain(|(a, _)| *a != attr);
                    out.push((attr, values));
                }
            }
        }
    }
    out
}

/// Text between the first pair of double quotes.
fn quoted_title(text: &str) -> Option<&str> {
    let start = text.find('"')? + 1;
    let len = text[start..].find('"')?;
    let title = text[start..start + len].trim();
    (!title.is_empty()).then_some(title)
}

/// A system that answers protocol calls.
trait ProtocolHandler: Send + Sync + 'static {
    fn configure(
        &self,
        id: &str,
        parameters: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<(), String>;
    fn receive(
        &self,
        conversation_id: &str,
        utterance: &crate::protocol::Utterance,
    ) -> Result<crate::protocol::Utterance, String>;
    fn set_need(&self, _need: crate::protocol::InformationNeed) -> Option<Result<(), String>> {
        None
    }
    fn get_need(&self) -> Option<Result<crate::protocol::InformationNeed, String>> {
        None
    }
}

fn dispatch<H: ProtocolHandler>(handler: &H, req: HttpRequest) -> HttpResponse {
    if req.method != "POST" {
        return HttpResponse::error(405, format!("{} not allowed", req.method));
    }
    let kind = match req.path.as_str() {
        CONFIGURE => MessageKind::ConfigureRequest,
        RECEIVE_UTTERANCE => MessageKind::ReceiveUtteranceRequest,
        SET_INFORMATION_NEED => MessageKind::SetInformationNeedRequest,
        GET_INFORMATION_NEED => MessageKind::GetInformationNeedRequest,
        other => return HttpResponse::error(404, format!("no endpoint {other}")),
    };
    let body = if req.body.is_empty() && kind == MessageKind::GetInformationNeedRequest {
        b"{}".to_vec()
    } else {
        req.body
    };
    let message = match decode_message(kind, &body) {
        Ok(m) => m,
        Err(e) => return HttpResponse::error(400, e.to_string()),
    };
    let reply = match message {
        Message::ConfigureRequest(c) => handler
            .configure(&c.id, &c.parameters)
            .map(|_| Message::Status(StatusMessage::ok())),
        Message::ReceiveUtteranceRequest(r) => handler
            .receive(&r.conversation_id, &r.utterance)
            .map(|utterance| Message::UtteranceResponse(UtteranceResponse { utterance })),
        Message::SetInformationNeedRequest(m) => match handler.set_need(m.information_need) {
            None => return HttpResponse::error(404, "not a simulator"),
            Some(r) => r.map(|_| Message::Status(StatusMessage::ok())),
        },
        Message::GetInformationNeedRequest => match handler.get_need() {
            None => return HttpResponse::error(404, "not a simulator"),
            Some(r) => r.map(|information_need| {
                Message::InformationNeedResponse(InformationNeedMessage { information_need })
            }),
        },
        _ => unreachable!("request kinds only"),
    };
    match reply {
        Ok(m) => match encode_message(&m) {
            Ok(bytes) => HttpResponse::raw_json(200, bytes),
            Err(e) => HttpResponse::error(500, e.to_string()),
        },
        Err(e) => HttpResponse::error(409, e),
    }
}

/// Serve `agent` on `addr`.
pub fn serve_agent(addr: SocketAddr, agent: ReferenceAgent) -> std::io::Result<HttpServer> {
    let agent = Arc::new(agent);
    HttpServer::bind(addr, 4, move |req| dispatch(agent.as_ref(), req))
}

/// Serve `simulator` on `addr`.
pub fn serve_simulator(
    addr: SocketAddr,
    simulator: ReferenceSimulator,
) -> std::io::Result<HttpServer> {
    let simulator = Arc::new(simulator);
    HttpServer::bind(addr, 4, move |req| dispatch(simulator.as_ref(), req))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_search() {
        assert_eq!(find_word("The runtime is long", "runtime"), vec![4]);
        assert!(find_word("subgenre: x", "genre").is_empty());
        assert!(mentions_word("How long is it?", "how long"));
        assert!(!mentions_word("Yearly", "year"));
    }

    #[test]
    fn clauses() {
        let got =
            parse_constraint_clauses("Hi! I am looking for a movie with genre: Comedy, Romance.");
        assert_eq!(
            got,
            vec![("genre", vec!["Comedy".to_string(), "Romance".to_string()])]
        );
        let got = parse_constraint_clauses("I want genre: Drama; year: 2009; actors: Brad Pitt.");
        assert_eq!(got.len(), 3);
        assert_eq!(got[1], ("year", vec!["2009".to_string()]));
        assert_eq!(got[2], ("actors", vec!["Brad Pitt".to_string()]));
        assert!(parse_constraint_clauses("What is the runtime of it?").is_empty());
    }

    #[test]
    fn titles_and_mentions() {
        assert_eq!(quoted_title("I recommend \"Avatar\"."), Some("Avatar"));
        assert_eq!(quoted_title("no title"), None);
        assert_eq!(quoted_title("\"\""), None);
        assert_eq!(
            mentioned_attributes("What is the duration and the cast?"),
            vec!["actors", "runtime"]
        );
    }
}
