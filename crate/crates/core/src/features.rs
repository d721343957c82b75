//! Per-event feature encoding.
//!
//! Every event becomes a fixed 121-dim row: a 29-dim own-event block
//! followed by four 23-dim neighbourhood panels, one per identity-preserving
//! edge type in declaration order (DataFlow, Temporal, SharedSession,
//! SharedResource). Panels summarize incoming edges only.
//!
//! Own block layout:
//!   0  is_tool_call        1  is_tool_result     2  success
//!   3  seq                 4  iteration          5  request_bytes
//!   6  response_bytes      7  call_index (-1 when absent)
//!   8  result_index (-1 when absent)
//!   9..29  20-way tool one-hot against the train-split vocabulary
//!
//! Panel layout (offset 29 + 23*p):
//!   +0      in-degree
//!   +1..21  neighbour tool histogram over the same 20-way vocabulary
//!   +21     distinct neighbour tool count (out-of-vocabulary included)
//!   +22     failed neighbour count
//!
//! The tool vocabulary is fixed from the training split (top 20 by
//! frequency, ties to the lexicographically smaller name) and reused
//! verbatim at inference; standardization statistics likewise come from
//! training rows only.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeType, InteractionGraph};

pub const OWN_DIMS: usize = 29;
pub const PANEL_DIMS: usize = 23;
pub const VOCAB_SIZE: usize = 20;
pub const FEATURE_DIM: usize = OWN_DIMS + PANEL_DIMS * 4;

/// Offset of panel `p` (0..4, identity edge types in declaration order).
pub fn panel_offset(p: usize) -> usize {
    OWN_DIMS + PANEL_DIMS * p
}

/// Human-readable name for an own-block dimension, for audit output.
pub fn own_dim_name(d: usize, vocab: &ToolVocabulary) -> String {
    match d {
        0 => "is_tool_call".to_owned(),
        1 => "is_tool_result".to_owned(),
        2 => "success".to_owned(),
        3 => "seq".to_owned(),
        4 => "iteration".to_owned(),
        5 => "request_bytes".to_owned(),
        6 => "response_bytes".to_owned(),
        7 => "call_index".to_owned(),
        8 => "result_index".to_owned(),
        d if d < OWN_DIMS => format!("tool={}", vocab.tools()[d - 9]),
        _ => panic!("own dim out of range: {d}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolVocabulary {
    tools: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ToolVocabulary {
    /// Top-20 tools by frequency over the supplied (training) events.
    /// Ties break toward the lexicographically smaller name; unused slots
    /// are padded with names no real tool can collide with.
    pub fn build<'a>(train_tools: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in train_tools {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(VOCAB_SIZE);
        let mut tools: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_owned()).collect();
        for k in tools.len()..VOCAB_SIZE {
            tools.push(format!("__pad_{k}"));
        }
        Self::from_tools(tools).expect("constructed vocabulary is well-formed")
    }

    /// Rehydrate a stored vocabulary (e.g. from a model file header).
    pub fn from_tools(tools: Vec<String>) -> Result<Self> {
        if tools.len() != VOCAB_SIZE {
            return Err(Error::Schema(format!(
                "vocabulary must have exactly {VOCAB_SIZE} entries, got {}",
                tools.len()
            )));
        }
        let index = tools
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != VOCAB_SIZE {
            return Err(Error::Schema("vocabulary contains duplicate tools".into()));
        }
        Ok(ToolVocabulary { tools, index })
    }

    pub fn tools(&self) -> &[String] {
        &self.tools
    }

    pub fn index_of(&self, tool: &str) -> Option<usize> {
        self.index.get(tool).copied()
    }
}

fn own_features_into(e: &crate::event::ToolUseEvent, vocab: &ToolVocabulary, row: &mut [f64]) {
    row[0] = if e.is_call() { 1.0 } else { 0.0 };
    row[1] = if e.is_result() { 1.0 } else { 0.0 };
    row[2] = if e.success { 1.0 } else { 0.0 };
    row[3] = e.seq as f64;
    row[4] = e.iteration as f64;
    row[5] = e.request_bytes as f64;
    row[6] = e.response_bytes as f64;
    row[7] = e.call_index.map_or(-1.0, |i| i as f64);
    row[8] = e.result_index.map_or(-1.0, |i| i as f64);
    if let Some(k) = vocab.index_of(&e.tool) {
        row[9 + k] = 1.0;
    }
}

/// Just the 29 own-event dims for a list of events, no graph required.
/// The separability audit runs on these.
pub fn own_matrix(events: &[&crate::event::ToolUseEvent], vocab: &ToolVocabulary) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros((events.len(), OWN_DIMS));
    for (v, e) in events.iter().enumerate() {
        own_features_into(e, vocab, x.row_mut(v).into_slice().expect("contiguous row"));
    }
    x
}

/// Encode every node of the graph into a raw (unstandardized) feature row.
pub fn encode(graph: &InteractionGraph, vocab: &ToolVocabulary) -> Array2<f64> {
    let n = graph.len();
    let mut x = Array2::<f64>::zeros((n, FEATURE_DIM));
    for (v, e) in graph.nodes().iter().enumerate() {
        own_features_into(e, vocab, &mut x.row_mut(v).into_slice().expect("contiguous row")[..OWN_DIMS]);
    }
    for (p, etype) in EdgeType::IDENTITY.iter().enumerate() {
        let off = panel_offset(p);
        let mut distinct: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); n];
        for edge in graph.edges(*etype) {
            let u = graph.node(edge.src);
            let mut row = x.row_mut(edge.dst);
            row[off] += 1.0;
            if let Some(k) = vocab.index_of(&u.tool) {
                row[off + 1 + k] += 1.0;
            }
            if !u.success {
                row[off + 22] += 1.0;
            }
            distinct[edge.dst].insert(u.tool.as_str());
        }
        for (v, set) in distinct.iter().enumerate() {
            x[(v, off + 21)] = set.len() as f64;
        }
    }
    x
}

/// Column-wise standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit mean and population standard deviation per column over the given
    /// rows. Columns with vanishing variance standardize by 1 so constant
    /// features pass through as zeros instead of exploding.
    pub fn fit(x: &Array2<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Usage("cannot fit standardizer on an empty training split".into()));
        }
        let d = x.ncols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += x[(r, j)];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for (j, v) in var.iter_mut().enumerate() {
                let c = x[(r, j)] - mean[j];
                *v += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    /// Standardize every row in place.
    pub fn apply(&self, x: &mut Array2<f64>) {
        assert_eq!(x.ncols(), self.mean.len(), "standardizer dimension mismatch");
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, ToolUseEvent};
    use crate::graph::RobustnessConfig;

    fn ev(
        id: usize,
        session: &str,
        seq: u64,
        kind: EventKind,
        tool: &str,
        args: &str,
        success: bool,
    ) -> ToolUseEvent {
        ToolUseEvent {
            event_id: id,
            user_id: "u0".into(),
            session_id: session.into(),
            seq,
            iteration: seq.div_ceil(2),
            kind,
            tool: tool.into(),
            arguments: args.into(),
            success,
            request_bytes: args.len() as u64,
            response_bytes: if kind == EventKind::ToolResult { 64 } else { 0 },
            call_index: if kind == EventKind::ToolCall { Some(seq / 2) } else { None },
            result_index: if kind == EventKind::ToolResult { Some(seq.saturating_sub(1) / 2) } else { None },
            ts: None,
        }
    }

    fn vocab_of(names: &[&str]) -> ToolVocabulary {
        let mut tools: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        for k in tools.len()..VOCAB_SIZE {
            tools.push(format!("__pad_{k}"));
        }
        ToolVocabulary::from_tools(tools).unwrap()
    }

    #[test]
    fn layout_constants_hold() {
        assert_eq!(FEATURE_DIM, 121);
        assert_eq!(panel_offset(0), 29);
        assert_eq!(panel_offset(1), 52);
        assert_eq!(panel_offset(2), 75);
        assert_eq!(panel_offset(3), 98);
        assert_eq!(panel_offset(3) + PANEL_DIMS, FEATURE_DIM);
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_name() {
        let stream =
            ["b", "b", "b", "a", "a", "c", "c", "d"].iter().copied();
        let v = ToolVocabulary::build(stream);
        assert_eq!(&v.tools()[..4], &["b", "a", "c", "d"]);
        assert_eq!(v.tools()[4], "__pad_4");
        assert_eq!(v.index_of("b"), Some(0));
        assert_eq!(v.index_of("zzz"), None);
    }

    #[test]
    fn vocabulary_tie_at_cutoff_prefers_smaller_name() {
        // 21 tools, all frequency 1: the lexicographically largest drops out.
        let names: Vec<String> = (0..21).map(|i| format!("tool_{i:02}")).collect();
        let v = ToolVocabulary::build(names.iter().map(|s| s.as_str()));
        assert_eq!(v.index_of("tool_19"), Some(19));
        assert_eq!(v.index_of("tool_20"), None);
    }

    #[test]
    fn isolated_event_has_zero_panels() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s0", 1, EventKind::ToolCall, "read_file", "read /a/b", true))
            .unwrap();
        let vocab = vocab_of(&["read_file"]);
        let x = encode(&g, &vocab);
        assert_eq!(x.nrows(), 1);
        assert_eq!(x[(0, 0)], 1.0); // is_tool_call
        assert_eq!(x[(0, 1)], 0.0);
        assert_eq!(x[(0, 3)], 1.0); // seq
        assert_eq!(x[(0, 8)], -1.0); // result_index absent
        assert_eq!(x[(0, 9)], 1.0); // tool one-hot slot 0
        for j in OWN_DIMS..FEATURE_DIM {
            assert_eq!(x[(0, j)], 0.0, "panel dim {j} must be zero");
        }
    }

    #[test]
    fn failed_predecessor_lands_in_temporal_and_session_panels() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        // A failed result (vocab slot 3), then the next event in-session.
        g.insert_event(ev(0, "s0", 1, EventKind::ToolResult, "tool_d", "err", false)).unwrap();
        g.insert_event(ev(1, "s0", 2, EventKind::ToolCall, "tool_a", "retry", true)).unwrap();
        let vocab = vocab_of(&["tool_a", "tool_b", "tool_c", "tool_d"]);
        let x = encode(&g, &vocab);
        for p in [1usize, 2] {
            // Temporal panel and SharedSession panel carry the same neighbour.
            let off = panel_offset(p);
            assert_eq!(x[(1, off)], 1.0, "in-degree");
            assert_eq!(x[(1, off + 1 + 3)], 1.0, "histogram slot for tool_d");
            assert_eq!(x[(1, off + 21)], 1.0, "distinct tools");
            assert_eq!(x[(1, off + 22)], 1.0, "failed neighbours");
        }
        // DataFlow and SharedResource panels stay empty.
        for p in [0usize, 3] {
            let off = panel_offset(p);
            for j in off..off + PANEL_DIMS {
                assert_eq!(x[(1, j)], 0.0);
            }
        }
        // The first event has no incoming edges at all.
        for j in OWN_DIMS..FEATURE_DIM {
            assert_eq!(x[(0, j)], 0.0);
        }
    }

    #[test]
    fn out_of_vocabulary_neighbour_counts_as_distinct_but_not_in_histogram() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s0", 1, EventKind::ToolCall, "exotic_tool", "x", true)).unwrap();
        g.insert_event(ev(1, "s0", 2, EventKind::ToolCall, "tool_a", "y", true)).unwrap();
        let vocab = vocab_of(&["tool_a"]);
        let x = encode(&g, &vocab);
        let off = panel_offset(1); // Temporal
        assert_eq!(x[(1, off)], 1.0);
        let hist_sum: f64 = (0..VOCAB_SIZE).map(|k| x[(1, off + 1 + k)]).sum();
        assert_eq!(hist_sum, 0.0, "OOV neighbour must not hit the histogram");
        assert_eq!(x[(1, off + 21)], 1.0, "OOV neighbour still counts as distinct");
    }

    #[test]
    fn interleaving_disjoint_sessions_does_not_change_rows() {
        let vocab = vocab_of(&["tool_a", "tool_b"]);
        let mk = |id, session: &str, seq, tool: &str| {
            ev(id, session, seq, EventKind::ToolCall, tool, &format!("work {session} {seq}"), true)
        };
        // Sequential: all of s0 then all of s1.
        let mut g1 = InteractionGraph::new(RobustnessConfig::default());
        g1.insert_event(mk(0, "s0", 1, "tool_a")).unwrap();
        g1.insert_event(mk(1, "s0", 2, "tool_b")).unwrap();
        g1.insert_event(mk(2, "s1", 1, "tool_b")).unwrap();
        g1.insert_event(mk(3, "s1", 2, "tool_a")).unwrap();
        // Interleaved arrival of the same sessions.
        let mut g2 = InteractionGraph::new(RobustnessConfig::default());
        g2.insert_event(mk(0, "s0", 1, "tool_a")).unwrap();
        g2.insert_event(mk(1, "s1", 1, "tool_b")).unwrap();
        g2.insert_event(mk(2, "s0", 2, "tool_b")).unwrap();
        g2.insert_event(mk(3, "s1", 2, "tool_a")).unwrap();
        let x1 = encode(&g1, &vocab);
        let x2 = encode(&g2, &vocab);
        // Align rows by (session, seq): g1 row 2 is g2 row 1, etc.
        let pairs = [(0usize, 0usize), (1, 2), (2, 1), (3, 3)];
        for (r1, r2) in pairs {
            assert_eq!(x1.row(r1), x2.row(r2), "rows for the same event differ");
        }
    }

    #[test]
    fn standardizer_normalizes_train_columns() {
        let mut x = Array2::zeros((4, 2));
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            x[(i, 0)] = v;
            x[(i, 1)] = 7.5; // constant column
        }
        let s = Standardizer::fit(&x, &[0, 1, 2, 3]).unwrap();
        assert_eq!(s.mean[0], 2.5);
        assert!((s.std[0] - (1.25f64).sqrt()).abs() < 1e-12, "population std");
        assert_eq!(s.std[1], 1.0, "constant column falls back to unit std");
        let mut y = x.clone();
        s.apply(&mut y);
        let col0: Vec<f64> = (0..4).map(|i| y[(i, 0)]).collect();
        let m: f64 = col0.iter().sum::<f64>() / 4.0;
        let var: f64 = col0.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(y[(0, 1)], 0.0, "constant column becomes zeros");
    }

    #[test]
    fn standardizer_rejects_empty_split() {
        let x = Array2::zeros((3, 2));
        assert!(matches!(Standardizer::fit(&x, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn standardizer_fits_on_train_rows_only() {
        let mut x = Array2::zeros((3, 1));
        x[(0, 0)] = 1.0;
        x[(1, 0)] = 3.0;
        x[(2, 0)] = 100.0; // test row must not influence the statistics
        let s = Standardizer::fit(&x, &[0, 1]).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
    }
}
