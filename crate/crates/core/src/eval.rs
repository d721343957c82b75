//! Outer-sample evaluation: stratified chain split, event-level metrics,
//! per-campaign breakdown, and chain scoring.
//!
//! The split unit is the whole chain (an attack run or a benign workflow),
//! never the session or the event: all events of a chain land on the same
//! side, so a detector can never train on one fragment of a run and be
//! scored on another fragment of the same run.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Campaigns with fewer positive test events than this get flagged in the
/// per-campaign report: their rows are too thin to read as estimates.
pub const SPARSE_POSITIVES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn is_train(&self, chain_id: &str) -> bool {
        self.train.contains(chain_id)
    }
}

/// Stratified 70/30 split over chains. Within each class, chains are
/// shuffled by a seeded RNG and the first ceil(ratio * n) go to Train,
/// clamped so both splits keep at least one chain of each class. Fewer
/// than two chains in either class cannot satisfy that and is an error.
pub fn stratified_split(
    chains: &[(String, bool)],
    ratio: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Usage(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for class in [true, false] {
        let mut ids: Vec<&str> = chains
            .iter()
            .filter(|(_, m)| *m == class)
            .map(|(id, _)| id.as_str())
            .collect();
        if ids.len() < 2 {
            return Err(Error::Usage(format!(
                "need at least two {} chains to split, got {}",
                if class { "malicious" } else { "benign" },
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        let take = ((ratio * ids.len() as f64).ceil() as usize).clamp(1, ids.len() - 1);
        for (i, id) in ids.into_iter().enumerate() {
            if i < take {
                train.insert(id.to_owned());
            } else {
                test.insert(id.to_owned());
            }
        }
    }
    Ok(SplitAssignment { train, test, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl EventMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> EventMetrics {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let total = tp + fp + tn + fn_;
        let accuracy = if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 };
        EventMetrics { tp, fp, tn, fn_, precision, recall, f1, accuracy }
    }
}

/// Threshold predictions and count the confusion matrix.
pub fn event_metrics(preds: &[f64], labels: &[u8], threshold: f64) -> Result<EventMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "predictions and labels disagree in length: {} vs {}",
            preds.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EventMetrics::from_counts(tp, fp, tn, fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub campaign: String,
    pub positives: usize,
    pub sparse: bool,
    pub metrics: EventMetrics,
}

/// Per-campaign rows over test events: each campaign is scored on its own
/// positive events plus every benign test event, so rows share one negative
/// pool and differ only in which positives they own. Campaigns from the
/// corpus universe with zero positive test events still get a (flagged)
/// row. Rows are sorted by campaign name.
pub fn per_campaign_metrics(
    preds: &[f64],
    labels: &[u8],
    campaigns: &[Option<String>],
    universe: &BTreeSet<String>,
    threshold: f64,
) -> Vec<CampaignRow> {
    let mut rows = Vec::new();
    for name in universe {
        let mut own: Vec<usize> = Vec::new();
        for (i, c) in campaigns.iter().enumerate() {
            if labels[i] == 1 && c.as_deref() == Some(name.as_str()) {
                own.push(i);
            }
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for &i in &own {
            if preds[i] >= threshold {
                tp += 1;
            } else {
                fn_ += 1;
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y == 0 {
                if preds[i] >= threshold {
                    fp += 1;
                } else {
                    tn += 1;
                }
            }
        }
        rows.push(CampaignRow {
            campaign: name.clone(),
            positives: own.len(),
            sparse: own.len() < SPARSE_POSITIVES,
            metrics: EventMetrics::from_counts(tp, fp, tn, fn_),
        });
    }
    rows
}

/// Chain verdict score: the maximum member probability. One confident
/// event indicts the whole chain.
pub fn score_chain(member_preds: &[f64]) -> Result<f64> {
    if member_preds.is_empty() {
        return Err(Error::Usage("cannot score a chain with no member events".into()));
    }
    Ok(member_preds.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Aggregate chain-level metrics: a chain is predicted malicious when its
/// score clears the threshold; ground truth is any malicious member.
pub fn chain_metrics(
    scores: &[f64],
    truths: &[bool],
    threshold: f64,
) -> Result<EventMetrics> {
    let labels: Vec<u8> = truths.iter().map(|&t| t as u8).collect();
    event_metrics(scores, &labels, threshold)
}

/// Mean and spread of per-campaign F1 over non-sparse rows, mirroring the
/// aggregate row of the per-campaign table.
pub fn campaign_f1_summary(rows: &[CampaignRow]) -> Option<(f64, f64, f64)> {
    let dense: Vec<f64> =
        rows.iter().filter(|r| !r.sparse).map(|r| r.metrics.f1).collect();
    if dense.is_empty() {
        return None;
    }
    let mean = dense.iter().sum::<f64>() / dense.len() as f64;
    let lo = dense.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dense.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, lo, hi))
}

/// Count chains per campaign for reporting.
pub fn campaign_chain_counts(chains: &[(String, Option<String>)]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for (_, campaign) in chains {
        if let Some(c) = campaign {
            *counts.entry(c.clone()).or_insert(0) += 1;
        }
    }
    counts
}
