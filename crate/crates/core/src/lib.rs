//! Cross-session fragmented-attack detection.
//!
//! An attacker can split one malicious objective into sub-tasks that each
//! look benign on their own and run each sub-task in a separate agent
//! session. Per-prompt safety filters never see the composition. This crate
//! reconstructs the composition from the tool-use event stream:
//!
//! 1. [`graph`] ingests events online and emits typed edges (data flow,
//!    temporal adjacency, shared session, shared resource, argument
//!    similarity) using constant-time hash indices plus a SimHash/LSH
//!    robustness layer that survives identity rotation.
//! 2. [`chains`] runs a weighted union-find over the edges; connected
//!    components are the discovered chains.
//! 3. [`features`] encodes every event as a 121-dim vector (own-event block
//!    plus four typed 1-hop summary panels), standardized on the train split.
//! 4. [`nn`] trains typed message-passing detectors (GCN, GraphSAGE, GAT,
//!    GIN) and an MLP baseline with hand-derived gradients, then scores
//!    events; [`eval`] rolls event scores up to chain verdicts and
//!    per-campaign reports.
//!
//! [`synth`] generates a deterministic benign + malicious corpus in the
//! native interchange formats ([`formats`]) so the whole pipeline is
//! testable at desk scale, and [`pipeline`] wires the stages together behind
//! a single run configuration.

pub mod artifacts;
pub mod chains;
pub mod error;
pub mod eval;
pub mod event;
pub mod features;
pub mod formats;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod resources;
pub mod simhash;
pub mod synth;

pub use error::{Error, Result};
