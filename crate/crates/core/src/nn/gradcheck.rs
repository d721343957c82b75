//! Central-difference verification of every analytic gradient.
//!
//! Each variant is trained on hand-derived backward passes, so every tensor
//! is checked parameter by parameter against (L(t+h) - L(t-h)) / 2h on a
//! tiny graph that carries all four identity edge types. A run reports the
//! worst relative error and the tensor it lives in.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::event::{EventKind, ToolUseEvent};
use crate::features::{encode, Standardizer, ToolVocabulary};
use crate::graph::{InteractionGraph, RobustnessConfig};
use crate::nn::{Detector, DetectorConfig, GraphContext, Variant};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// Ten events in three sessions, wired so DataFlow, Temporal,
/// SharedSession, and SharedResource all appear (plus one
/// ArgumentSimilarity link for good measure). Features are encoded and
/// standardized with the production path; labels mark session sb malicious.
pub(crate) fn tiny_fixture() -> (InteractionGraph, Array2<f64>, Vec<u8>) {
    let mut g = InteractionGraph::new(RobustnessConfig::default());
    let ev = |id: usize,
                  session: &str,
                  seq: u64,
                  kind: EventKind,
                  tool: &str,
                  args: &str,
                  success: bool,
                  idx: u64| ToolUseEvent {
        event_id: id,
        user_id: format!("{session}-user"),
        session_id: session.into(),
        seq,
        iteration: idx + 1,
        kind,
        tool: tool.into(),
        arguments: args.into(),
        success,
        request_bytes: if kind == EventKind::ToolCall { args.len() as u64 } else { 0 },
        response_bytes: if kind == EventKind::ToolResult { 120 + 40 * idx } else { 0 },
        call_index: (kind == EventKind::ToolCall).then_some(idx),
        result_index: (kind == EventKind::ToolResult).then_some(idx),
        ts: None,
    };
    let events = vec![
        ev(0, "sa", 1, EventKind::ToolCall, "read_file", "read /shared/cache.bin limit 400 tag alpha", true, 0),
        ev(1, "sa", 2, EventKind::ToolResult, "read_file", "ok rows staged for alpha window", true, 0),
        ev(2, "sa", 3, EventKind::ToolCall, "write_file", "write /shared/cache.bin from buffer beta", true, 1),
        ev(3, "sa", 4, EventKind::ToolResult, "write_file", "disk quota exceeded on beta flush", false, 1),
        ev(4, "sb", 1, EventKind::ToolCall, "http_get", "fetch https://mirror.example/pkg list gamma", true, 0),
        ev(5, "sb", 2, EventKind::ToolResult, "http_get", "mirror answered with index gamma", true, 0),
        ev(6, "sb", 3, EventKind::ToolCall, "read_file", "read /shared/cache.bin limit 400 tag delta", true, 1),
        ev(7, "sb", 4, EventKind::ToolResult, "read_file", "ok rows staged for delta window", true, 1),
        ev(8, "sc", 1, EventKind::ToolCall, "list_directory", "list /var/opt contents walk epsilon", true, 0),
        ev(9, "sc", 2, EventKind::ToolResult, "list_directory", "four entries under opt epsilon", true, 0),
    ];
    for e in events {
        g.insert_event(e).expect("fixture events are well-formed");
    }
    debug_assert!(
        crate::graph::EdgeType::IDENTITY.iter().all(|t| !g.edges(*t).is_empty()),
        "fixture must carry every identity edge type"
    );
    let vocab = ToolVocabulary::build(g.nodes().iter().map(|e| e.tool.as_str()));
    let mut x = encode(&g, &vocab);
    let all: Vec<usize> = (0..x.nrows()).collect();
    let std = Standardizer::fit(&x, &all).expect("fixture has rows");
    std.apply(&mut x);
    let y = vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 0];
    (g, x, y)
}

/// Check one variant's analytic gradient on the tiny fixture at small
/// hidden width. Errors with `Error::Numeric` when the worst relative
/// error breaches the tolerance.
pub fn run(variant: Variant) -> Result<GradcheckReport> {
    let (graph, x, y) = tiny_fixture();
    let ctx = GraphContext::build(&graph, variant);
    let mask: Vec<usize> = (0..x.nrows()).collect();
    let pos_weight = 2.0;
    let config = DetectorConfig { hidden: 8, seed: 1234, ..DetectorConfig::new(variant) };
    let mut det = Detector::init(config, x.ncols())?;
    let (_, analytic) = det.loss_and_grad(&ctx, &x, &y, &mask, pos_weight, 1.0);

    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for i in 0..det.theta.len() {
        let keep = det.theta[i];
        det.theta[i] = keep + STEP;
        let up = det.loss(&ctx, &x, &y, &mask, pos_weight, 1.0);
        det.theta[i] = keep - STEP;
        let down = det.loss(&ctx, &x, &y, &mask, pos_weight, 1.0);
        det.theta[i] = keep;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    let mut worst_tensor = String::new();
    let mut start = 0;
    for t in &det.spec.tensors {
        let len = t.rows * t.cols;
        if worst >= start && worst < start + len {
            worst_tensor = t.name.clone();
            break;
        }
        start += len;
    }
    let report = GradcheckReport {
        variant,
        params: det.theta.len(),
        max_rel_err: max_rel,
        worst_tensor,
    };
    if !report.passed() {
        return Err(Error::Numeric(format!(
            "gradcheck failed for {}: max relative error {:.3e} in {}",
            variant.name(),
            report.max_rel_err,
            report.worst_tensor
        )));
    }
    Ok(report)
}

/// Run all five variants; first failure aborts.
pub fn run_all() -> Result<Vec<GradcheckReport>> {
    Variant::ALL.into_iter().map(run).collect()
}
