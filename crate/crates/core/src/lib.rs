//! Conversational stance detection over threaded social-media discussions.
//!
//! The pipeline: [`conversation`] parses reply trees into stance instances,
//! [`kam`] acquires logical-relation and conversation-act labels for adjacent
//! pairs from a chat model, [`graph`] turns those into typed graphs, [`mkian`]
//! fuses local, contextual and relational layers into a stance classifier, and
//! [`harness`] trains and evaluates it.

pub mod conversation;
pub mod graph;
pub mod harness;
pub mod kam;
pub mod mkian;
pub mod synthetic;
