//! Simulation-based evaluation of conversational information access agents.
//!
//! The crate launches agent/simulator pairs, orchestrates their
//! conversations over a small HTTP protocol, scores the transcripts, and
//! persists every artifact so experiments can be inspected and reproduced.

pub mod dialogue;
pub mod experiments;
pub mod http;
pub mod metrics;
pub mod protocol;
pub mod reference;
pub mod runner;
pub mod service;
pub mod storage;
pub mod tasks;
