//! Domain types for tool-use events, chains, and labels.
//!
//! A [`ToolUseEvent`] is one `tool_call` or `tool_result` record from an
//! agent session log. A [`ChainRecord`] groups the sessions that belong to
//! one outer sample: either one fragmented attack run or one benign cover
//! workflow. Labels propagate from the chain to every event in it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ToolCall,
    ToolResult,
}

/// One tool-use event. `event_id` is the ordinal position in the ingest
/// stream and doubles as the graph node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUseEvent {
    pub event_id: usize,
    pub user_id: String,
    pub session_id: String,
    /// Sequence number within the session stream.
    pub seq: u64,
    /// Agent-loop iteration that produced the event.
    pub iteration: u64,
    pub kind: EventKind,
    pub tool: String,
    /// Serialized argument payload for calls, result preview for results.
    /// Only byte counts and extracted references feed the features; the
    /// text itself never leaves the graph builder.
    pub arguments: String,
    /// Results carry their success flag; calls default to true.
    pub success: bool,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub call_index: Option<u64>,
    pub result_index: Option<u64>,
    /// Wall-clock timestamp, kept opaque: edge rules use `seq` only.
    pub ts: Option<String>,
}

impl ToolUseEvent {
    pub fn is_call(&self) -> bool {
        self.kind == EventKind::ToolCall
    }

    pub fn is_result(&self) -> bool {
        self.kind == EventKind::ToolResult
    }
}

/// One outer sample: a fragmented attack run or a benign cover workflow.
/// `sessions` holds the fragments in order, each an ordered event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_id: String,
    pub is_malicious: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_graph_file: Option<String>,
    pub sessions: Vec<Vec<ToolUseEvent>>,
    /// Indices of sessions that came from cover fragments of an attack
    /// graph. Empty for combined-format input (which does not mark covers).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cover_sessions: Vec<usize>,
}

impl ChainRecord {
    pub fn events(&self) -> impl Iterator<Item = &ToolUseEvent> {
        self.sessions.iter().flatten()
    }

    pub fn event_count(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }
}

/// Ground-truth label for one event. `y = 1` iff the owning chain is
/// malicious (cover fragments included unless the run opts out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub event_id: usize,
    pub y: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<String>,
}

/// An ordered set of chains forming one detection workload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub chains: Vec<ChainRecord>,
}

impl Corpus {
    pub fn new(chains: Vec<ChainRecord>) -> Self {
        Corpus { chains }
    }

    /// Reassign event ids in stream order: chains in list order, sessions in
    /// order, events in order. Makes `event_id` a bijection onto `0..N`.
    pub fn renumber(&mut self) {
        let mut next = 0usize;
        for chain in &mut self.chains {
            for session in &mut chain.sessions {
                for ev in session {
                    ev.event_id = next;
                    next += 1;
                }
            }
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &ToolUseEvent> {
        self.chains.iter().flat_map(|c| c.events())
    }

    pub fn event_count(&self) -> usize {
        self.chains.iter().map(|c| c.event_count()).sum()
    }

    /// Label every event from its owning chain. `label_covers` controls the
    /// cover-fragment policy: when false, events in cover sessions of a
    /// malicious chain are labeled 0 instead of 1.
    pub fn labels(&self, label_covers: bool) -> Vec<EventLabel> {
        let mut out = Vec::with_capacity(self.event_count());
        for chain in &self.chains {
            for (k, session) in chain.sessions.iter().enumerate() {
                let cover = chain.cover_sessions.contains(&k);
                let y = if chain.is_malicious && (label_covers || !cover) { 1 } else { 0 };
                for ev in session {
                    out.push(EventLabel {
                        event_id: ev.event_id,
                        y,
                        campaign: if y == 1 { chain.campaign.clone() } else { None },
                    });
                }
            }
        }
        out
    }

    /// Chain ids paired with their class, in corpus order.
    pub fn chain_classes(&self) -> Vec<(String, bool)> {
        self.chains.iter().map(|c| (c.chain_id.clone(), c.is_malicious)).collect()
    }
}
