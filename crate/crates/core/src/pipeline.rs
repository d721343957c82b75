//! One run configuration, five runnable stages.
//!
//! [`RunConfig`] is the single TOML document every stage reads; unknown keys
//! are rejected so typos fail loudly instead of silently running defaults.
//! The stages are plain functions over the config so the CLI, the Python
//! bindings, and tests share one code path:
//!
//! * [`run_gen`] writes the synthetic corpus as two combined-format files.
//! * [`run_build`] streams the corpus through the graph builder and
//!   union-find in one pass and persists a graph snapshot plus chain dump.
//! * [`run_train_eval`] trains the detector panel, persists each model and
//!   its predictions, and writes the evaluation report (JSON and text).
//! * [`run_score`] loads a trained model and answers "which chain does this
//!   fragment belong to, and is that chain malicious?" for a new stream.
//! * [`run_audit`] gates the corpus on single-feature separability.
//!
//! Every artifact embeds a [`Provenance`] triple (config hash, corpus hash,
//! generator seed); runs with equal triples produce byte-identical files.
//! Stages re-read their inputs from disk each time, so any stage can be
//! re-run later from persisted artifacts alone.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifacts::{
    self, ChainDump, GraphSnapshot, ModelBundle, Provenance,
};
use crate::chains::{DiscoveryConfig, UnionFind};
use crate::error::{Error, Result};
use crate::eval::{
    self, CampaignRow, EventMetrics,
};
use crate::event::{ChainRecord, Corpus};
use crate::features::{self, Standardizer, ToolVocabulary};
use crate::formats;
use crate::graph::{InteractionGraph, RobustnessConfig};
use crate::nn::{self, DetectorConfig, GraphContext, Variant};
use crate::synth::{self, AuditReport, GeneratorConfig};

// --- configuration ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory receiving every derived artifact.
    pub out_dir: PathBuf,
    /// Combined-format corpus files; unset means `<out_dir>/malicious.json`
    /// and `<out_dir>/benign.json`.
    pub malicious: Option<PathBuf>,
    pub benign: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { out_dir: PathBuf::from("out"), malicious: None, benign: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    /// Panel to train, by variant name.
    pub variants: Vec<String>,
    pub hidden: usize,
    pub layers: usize,
    /// Unset uses the per-variant default (50 message-passing, 200 MLP).
    pub epochs: Option<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Unset solves N_neg / N_pos on the training mask.
    pub pos_weight: Option<f64>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            variants: Variant::ALL.iter().map(|v| v.name().to_owned()).collect(),
            hidden: 128,
            layers: 2,
            epochs: None,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            seed: 42,
            pos_weight: None,
        }
    }
}

impl DetectorSection {
    pub fn variants(&self) -> Result<Vec<Variant>> {
        if self.variants.is_empty() {
            return Err(Error::Usage("detector.variants must name at least one variant".into()));
        }
        self.variants.iter().map(|s| Variant::parse(s)).collect()
    }

    pub fn config_for(&self, variant: Variant) -> DetectorConfig {
        let mut c = DetectorConfig::new(variant);
        c.hidden = self.hidden;
        c.layers = self.layers;
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        c.learning_rate = self.learning_rate;
        c.weight_decay = self.weight_decay;
        c.seed = self.seed;
        c.pos_weight = self.pos_weight;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split_ratio: f64,
    pub split_seed: u64,
    pub event_threshold: f64,
    pub chain_threshold: f64,
    /// Label cover fragments of malicious chains positive.
    pub label_covers: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split_ratio: 0.7,
            split_seed: 42,
            event_threshold: 0.5,
            chain_threshold: 0.5,
            label_covers: true,
        }
    }
}

/// The whole run configuration. Flags may override individual fields after
/// loading; the hash embedded in artifacts covers the effective values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub generator: GeneratorConfig,
    pub discovery: DiscoveryConfig,
    pub robustness: RobustnessConfig,
    pub detector: DetectorSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = artifacts::read_text(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serialization")
    }

    /// Hash of the effective configuration (canonical JSON form).
    pub fn sha256(&self) -> String {
        artifacts::sha256_hex(
            serde_json::to_string(self).expect("run config serialization").as_bytes(),
        )
    }

    pub fn provenance(&self, corpus_sha256: String) -> Provenance {
        Provenance {
            config_sha256: self.sha256(),
            corpus_sha256,
            seed: self.generator.seed,
        }
    }

    pub fn malicious_path(&self) -> PathBuf {
        self.paths
            .malicious
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("malicious.json"))
    }

    pub fn benign_path(&self) -> PathBuf {
        self.paths.benign.clone().unwrap_or_else(|| self.paths.out_dir.join("benign.json"))
    }

    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

// --- gen ---

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub malicious_path: PathBuf,
    pub benign_path: PathBuf,
    pub malicious_chains: usize,
    pub benign_chains: usize,
    pub events: usize,
    pub corpus_sha256: String,
}

/// Generate the corpus and write it as two combined-format documents.
pub fn run_gen(cfg: &RunConfig) -> Result<GenSummary> {
    let corpus = synth::generate(&cfg.generator)?;
    let events = corpus.event_count();
    let (mal, ben): (Vec<ChainRecord>, Vec<ChainRecord>) =
        corpus.chains.into_iter().partition(|c| c.is_malicious);
    let mut mal_text = formats::emit_combined(&mal, true)?;
    mal_text.push('\n');
    let mut ben_text = formats::emit_combined(&ben, false)?;
    ben_text.push('\n');
    let malicious_path = cfg.malicious_path();
    let benign_path = cfg.benign_path();
    artifacts::write_bytes(&malicious_path, mal_text.as_bytes())?;
    artifacts::write_bytes(&benign_path, ben_text.as_bytes())?;
    Ok(GenSummary {
        malicious_path,
        benign_path,
        malicious_chains: mal.len(),
        benign_chains: ben.len(),
        events,
        corpus_sha256: artifacts::corpus_sha256(mal_text.as_bytes(), ben_text.as_bytes()),
    })
}

// --- corpus loading ---

pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub corpus_sha256: String,
}

/// Read and renumber the corpus named by the config, hashing the raw bytes
/// for provenance.
pub fn load_inputs(cfg: &RunConfig) -> Result<LoadedCorpus> {
    let malicious_path = cfg.malicious_path();
    let benign_path = cfg.benign_path();
    let mal = artifacts::read_text(&malicious_path)?;
    let ben = artifacts::read_text(&benign_path)?;
    let corpus_sha256 = artifacts::corpus_sha256(mal.as_bytes(), ben.as_bytes());
    let mut chains = formats::parse_combined(&mal, &malicious_path.display().to_string())?;
    chains.extend(formats::parse_combined(&ben, &benign_path.display().to_string())?);
    let mut corpus = Corpus::new(chains);
    corpus.renumber();
    Ok(LoadedCorpus { corpus, corpus_sha256 })
}

// --- build ---

/// Stream every event through the graph builder and union-find in one pass:
/// the online path an ingestion daemon would run. Edges feed discovery in
/// emission order, so replay equals the offline result.
pub fn build_graph(
    corpus: &Corpus,
    robustness: &RobustnessConfig,
    discovery: &DiscoveryConfig,
) -> Result<(InteractionGraph, UnionFind)> {
    let mut graph = InteractionGraph::new(robustness.clone());
    let mut uf = UnionFind::new(corpus.event_count());
    for ev in corpus.events() {
        for edge in graph.insert_event(ev.clone())? {
            uf.observe_edge(&edge, discovery);
        }
    }
    Ok((graph, uf))
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub events: usize,
    pub sessions: usize,
    pub edge_counts: std::collections::BTreeMap<String, usize>,
    pub discovered_chains: usize,
    pub graph_path: PathBuf,
    pub chains_path: PathBuf,
    pub provenance: Provenance,
}

/// Build the graph, discover chains, and persist both.
pub fn run_build(cfg: &RunConfig) -> Result<BuildSummary> {
    let loaded = load_inputs(cfg)?;
    let (graph, mut uf) = build_graph(&loaded.corpus, &cfg.robustness, &cfg.discovery)?;

    let snapshot = GraphSnapshot::capture(&graph);
    let graph_path = cfg.artifact_path("graph.json");
    artifacts::write_json(&graph_path, &snapshot)?;

    let campaigns: Vec<Option<String>> = loaded
        .corpus
        .labels(cfg.eval.label_covers)
        .into_iter()
        .map(|l| l.campaign)
        .collect();
    let discovered = uf.chains(&graph);
    let dump = ChainDump::build(&discovered, &campaigns, &cfg.discovery);
    let chains_path = cfg.artifact_path("chains.json");
    artifacts::write_json(&chains_path, &dump)?;

    Ok(BuildSummary {
        events: graph.len(),
        sessions: graph.session_names().len(),
        edge_counts: snapshot.edge_counts,
        discovered_chains: dump.chains.len(),
        graph_path,
        chains_path,
        provenance: cfg.provenance(loaded.corpus_sha256),
    })
}

// --- train-eval ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignF1Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub variant: String,
    pub pos_weight: f64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    /// Event-level metrics over the test split.
    pub aggregate: EventMetrics,
    /// Chain-level metrics over discovered chains lying fully in the test
    /// split (an extension: scores exist, the decision rule is ours).
    pub chain_level: EventMetrics,
    pub chains_scored: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign_f1: Option<CampaignF1Summary>,
    pub campaigns: Vec<CampaignRow>,
    pub model_file: String,
    pub predictions_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub ground_truth_chains: usize,
    pub malicious_chains: usize,
    pub benign_chains: usize,
    pub discovered_chains: usize,
    pub train_chains: usize,
    pub test_chains: usize,
    pub train_events: usize,
    pub test_events: usize,
    pub test_positives: usize,
    pub models: Vec<ModelReport>,
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

impl EvalReport {
    /// Aligned-table rendering: aggregate and chain-level blocks, then the
    /// per-campaign matrix with one `F1/accuracy` pair per model per
    /// campaign, three-decimal rounding, sparse rows flagged with `*`.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        out.push_str("fragmented-attack detection report\n");
        out.push_str(&format!(
            "config sha256 {} | corpus sha256 {} | generator seed {}\n",
            p.config_sha256, p.corpus_sha256, p.seed
        ));
        out.push_str(&format!(
            "corpus: {} chains ({} malicious / {} benign), {} events\n",
            self.ground_truth_chains,
            self.malicious_chains,
            self.benign_chains,
            self.train_events + self.test_events
        ));
        out.push_str(&format!(
            "split: seed {} ratio {:.2} -> train {} chains / {} events, test {} chains / {} events ({} positive)\n",
            self.config.eval.split_seed,
            self.config.eval.split_ratio,
            self.train_chains,
            self.train_events,
            self.test_chains,
            self.test_events,
            self.test_positives
        ));
        out.push_str(&format!(
            "discovery: {} chains (rho {}, quorum {})\n",
            self.discovered_chains, self.config.discovery.rho, self.config.discovery.weak_edge_quorum
        ));

        let name_w = self.models.iter().map(|m| m.variant.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!(
            "\nevent level (test split, threshold {:.2})\n",
            self.config.eval.event_threshold
        ));
        out.push_str(&format!(
            "{:<name_w$}  {:>9}  {:>6}  {:>5}  {:>8}\n",
            "model", "precision", "recall", "f1", "accuracy"
        ));
        for m in &self.models {
            out.push_str(&format!(
                "{:<name_w$}  {:>9}  {:>6}  {:>5}  {:>8}\n",
                m.variant,
                f3(m.aggregate.precision),
                f3(m.aggregate.recall),
                f3(m.aggregate.f1),
                f3(m.aggregate.accuracy)
            ));
        }

        out.push_str(&format!(
            "\nchain level (threshold {:.2}, discovered chains fully in test; extension)\n",
            self.config.eval.chain_threshold
        ));
        out.push_str(&format!(
            "{:<name_w$}  {:>6}  {:>9}  {:>6}  {:>5}  {:>8}\n",
            "model", "chains", "precision", "recall", "f1", "accuracy"
        ));
        for m in &self.models {
            out.push_str(&format!(
                "{:<name_w$}  {:>6}  {:>9}  {:>6}  {:>5}  {:>8}\n",
                m.variant,
                m.chains_scored,
                f3(m.chain_level.precision),
                f3(m.chain_level.recall),
                f3(m.chain_level.f1),
                f3(m.chain_level.accuracy)
            ));
        }

        if let Some(first) = self.models.first() {
            let camp_w = first
                .campaigns
                .iter()
                .map(|r| r.campaign.len() + 1)
                .max()
                .unwrap_or(8)
                .max("campaign".len());
            let col_w = 11usize.max(name_w);
            out.push_str(
                "\nper-campaign f1/accuracy (campaign positives + all benign test events; * = fewer than 20 positive test events)\n",
            );
            out.push_str(&format!("{:<camp_w$}  {:>4}", "campaign", "pos"));
            for m in &self.models {
                out.push_str(&format!("  {:>col_w$}", m.variant));
            }
            out.push('\n');
            for (i, row) in first.campaigns.iter().enumerate() {
                let flag = if row.sparse { "*" } else { "" };
                out.push_str(&format!(
                    "{:<camp_w$}  {:>4}",
                    format!("{}{}", row.campaign, flag),
                    row.positives
                ));
                for m in &self.models {
                    let r = &m.campaigns[i];
                    out.push_str(&format!(
                        "  {:>col_w$}",
                        format!("{}/{}", f3(r.metrics.f1), f3(r.metrics.accuracy))
                    ));
                }
                out.push('\n');
            }
            out.push_str(&format!("{:<camp_w$}  {:>4}", "mean non-sparse f1", ""));
            for m in &self.models {
                let cell = m
                    .campaign_f1
                    .as_ref()
                    .map(|s| f3(s.mean))
                    .unwrap_or_else(|| "-".to_owned());
                out.push_str(&format!("  {:>col_w$}", cell));
            }
            out.push('\n');
        }
        out
    }
}

/// Train the configured panel, persist models and predictions, and write
/// the evaluation report.
pub fn run_train_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let variants = cfg.detector.variants()?;
    let loaded = load_inputs(cfg)?;
    let corpus = &loaded.corpus;
    let (graph, mut uf) = build_graph(corpus, &cfg.robustness, &cfg.discovery)?;

    let labels = corpus.labels(cfg.eval.label_covers);
    let y: Vec<u8> = labels.iter().map(|l| l.y).collect();
    let campaigns: Vec<Option<String>> = labels.into_iter().map(|l| l.campaign).collect();

    let split =
        eval::stratified_split(&corpus.chain_classes(), cfg.eval.split_ratio, cfg.eval.split_seed)?;
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for chain in &corpus.chains {
        let rows = if split.is_train(&chain.chain_id) { &mut train_rows } else { &mut test_rows };
        for ev in chain.events() {
            rows.push(ev.event_id);
        }
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    let vocab = ToolVocabulary::build(
        corpus
            .chains
            .iter()
            .filter(|c| split.is_train(&c.chain_id))
            .flat_map(|c| c.events())
            .map(|e| e.tool.as_str()),
    );
    let mut x = features::encode(&graph, &vocab);
    let standardizer = Standardizer::fit(&x, &train_rows)?;
    standardizer.apply(&mut x);

    let discovered = uf.chains(&graph);
    let provenance = cfg.provenance(loaded.corpus_sha256);
    let universe: BTreeSet<String> =
        corpus.chains.iter().filter(|c| c.is_malicious).filter_map(|c| c.campaign.clone()).collect();
    let test_set: HashSet<usize> = test_rows.iter().copied().collect();
    let labels_test: Vec<u8> = test_rows.iter().map(|&i| y[i]).collect();
    let campaigns_test: Vec<Option<String>> =
        test_rows.iter().map(|&i| campaigns[i].clone()).collect();

    let mut models = Vec::with_capacity(variants.len());
    for &variant in &variants {
        let dcfg = cfg.detector.config_for(variant);
        let ctx = GraphContext::build(&graph, variant);
        let trained = nn::train(dcfg, &ctx, &x, &y, &train_rows)?;
        let preds = trained.detector.predict(&ctx, &x);

        let model_file = format!("models/{}.ctdet", variant.name());
        let predictions_file = format!("predictions/{}.csv", variant.name());
        artifacts::write_model(
            &cfg.artifact_path(&model_file),
            &ModelBundle {
                detector: trained.detector,
                vocab: vocab.clone(),
                standardizer: standardizer.clone(),
                pos_weight: trained.pos_weight,
                provenance: provenance.clone(),
            },
        )?;
        artifacts::write_predictions(&cfg.artifact_path(&predictions_file), &preds)?;

        let preds_test: Vec<f64> = test_rows.iter().map(|&i| preds[i]).collect();
        let aggregate = eval::event_metrics(&preds_test, &labels_test, cfg.eval.event_threshold)?;
        let campaign_rows = eval::per_campaign_metrics(
            &preds_test,
            &labels_test,
            &campaigns_test,
            &universe,
            cfg.eval.event_threshold,
        );
        let campaign_f1 = eval::campaign_f1_summary(&campaign_rows)
            .map(|(mean, min, max)| CampaignF1Summary { mean, min, max });

        let mut chain_scores = Vec::new();
        let mut chain_truths = Vec::new();
        for c in &discovered {
            if c.members.iter().all(|m| test_set.contains(m)) {
                let member_preds: Vec<f64> = c.members.iter().map(|&m| preds[m]).collect();
                chain_scores.push(eval::score_chain(&member_preds)?);
                chain_truths.push(c.members.iter().any(|&m| y[m] == 1));
            }
        }
        let chain_level =
            eval::chain_metrics(&chain_scores, &chain_truths, cfg.eval.chain_threshold)?;

        models.push(ModelReport {
            variant: variant.name().to_owned(),
            pos_weight: trained.pos_weight,
            epochs: dcfg.epochs,
            final_loss: trained.losses.last().copied(),
            aggregate,
            chain_level,
            chains_scored: chain_scores.len(),
            campaign_f1,
            campaigns: campaign_rows,
            model_file,
            predictions_file,
        });
    }

    let report = EvalReport {
        provenance,
        config: cfg.clone(),
        ground_truth_chains: corpus.chains.len(),
        malicious_chains: corpus.chains.iter().filter(|c| c.is_malicious).count(),
        benign_chains: corpus.chains.iter().filter(|c| !c.is_malicious).count(),
        discovered_chains: discovered.len(),
        train_chains: split.train.len(),
        test_chains: split.test.len(),
        train_events: train_rows.len(),
        test_events: test_rows.len(),
        test_positives: labels_test.iter().filter(|&&v| v == 1).count(),
        models,
    };
    artifacts::write_json_pretty(&cfg.artifact_path("report.json"), &report)?;
    artifacts::write_bytes(&cfg.artifact_path("report.txt"), report.render_text().as_bytes())?;
    Ok(report)
}

// --- score ---

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainVerdict {
    pub chain_id: usize,
    pub size: usize,
    pub sessions: Vec<String>,
    pub score: f64,
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreOutput {
    pub model_variant: String,
    pub events: usize,
    pub verdicts: Vec<ChainVerdict>,
    #[serde(skip)]
    pub predictions: Vec<f64>,
}

/// Parse one input as either a combined-format document or a session-log
/// JSONL stream, sniffed from the first non-empty line: log lines carry an
/// `event` discriminator, the combined document does not.
fn parse_stream(text: &str, origin: &str) -> Result<Vec<ChainRecord>> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let is_log = serde_json::from_str::<serde_json::Value>(first)
        .map(|v| v.get("event").is_some())
        .unwrap_or(false);
    if !is_log {
        return formats::parse_combined(text, origin);
    }
    let parsed = formats::parse_session_log(text, origin)?;
    // One record per session, sessions in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<crate::event::ToolUseEvent>> =
        std::collections::HashMap::new();
    for ev in parsed.events {
        if !grouped.contains_key(&ev.session_id) {
            order.push(ev.session_id.clone());
        }
        grouped.entry(ev.session_id.clone()).or_default().push(ev);
    }
    Ok(order
        .into_iter()
        .map(|sid| {
            let events = grouped.remove(&sid).expect("grouped by construction");
            ChainRecord {
                chain_id: sid,
                is_malicious: false,
                campaign: None,
                campaign_id: None,
                run_id: None,
                seed: None,
                style: None,
                attack_graph_file: None,
                sessions: vec![events],
                cover_sessions: Vec::new(),
            }
        })
        .collect())
}

/// Stream new events through build + discover + predict + chain scoring
/// using a persisted model. Writes per-chain verdicts and the prediction
/// table into the artifact directory.
pub fn run_score(cfg: &RunConfig, model_path: &Path, inputs: &[PathBuf]) -> Result<ScoreOutput> {
    let bundle = artifacts::read_model(model_path)?;
    let mut chains = Vec::new();
    for path in inputs {
        let text = artifacts::read_text(path)?;
        chains.extend(parse_stream(&text, &path.display().to_string())?);
    }
    let mut corpus = Corpus::new(chains);
    corpus.renumber();

    let (graph, mut uf) = build_graph(&corpus, &cfg.robustness, &cfg.discovery)?;
    let mut x = features::encode(&graph, &bundle.vocab);
    bundle.standardizer.apply(&mut x);
    let ctx = GraphContext::build(&graph, bundle.detector.config.variant);
    let predictions = bundle.detector.predict(&ctx, &x);

    let verdicts: Vec<ChainVerdict> = uf
        .chains(&graph)
        .into_iter()
        .map(|c| {
            let score = c
                .members
                .iter()
                .map(|&m| predictions[m])
                .fold(f64::NEG_INFINITY, f64::max);
            ChainVerdict {
                chain_id: c.chain_id,
                size: c.members.len(),
                sessions: c.sessions,
                score,
                malicious: score >= cfg.eval.chain_threshold,
            }
        })
        .collect();

    let out = ScoreOutput {
        model_variant: bundle.detector.config.variant.name().to_owned(),
        events: graph.len(),
        verdicts,
        predictions,
    };
    artifacts::write_json_pretty(&cfg.artifact_path("verdicts.json"), &out)?;
    artifacts::write_predictions(&cfg.artifact_path("scored_predictions.csv"), &out.predictions)?;
    Ok(out)
}

// --- audit ---

/// Run the separability audit over the corpus named by the config and
/// persist the per-dimension table.
pub fn run_audit(cfg: &RunConfig) -> Result<AuditReport> {
    let loaded = load_inputs(cfg)?;
    let report = synth::separability_audit(&loaded.corpus, cfg.eval.label_covers)?;
    artifacts::write_json_pretty(&cfg.artifact_path("audit.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.paths.out_dir = dir.to_path_buf();
        cfg.generator.malicious_chains = 4;
        cfg.generator.benign_chains = 6;
        cfg.detector.variants = vec!["gcn".into(), "mlp".into()];
        cfg.detector.hidden = 16;
        cfg.detector.epochs = Some(8);
        cfg
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let cfg = small_config(Path::new("somewhere/out"));
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[generator]\nseeed = 1\n").unwrap_err();
        assert!(err.to_string().contains("seeed"), "{err}");
        assert!(toml::from_str::<RunConfig>("[typo_section]\n").is_err());
    }

    #[test]
    fn config_hash_tracks_effective_values() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.sha256(), b.sha256());
        b.discovery.rho = 0.6;
        assert_ne!(a.sha256(), b.sha256());
    }

    #[test]
    fn gen_twice_writes_identical_bytes() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        let s1 = run_gen(&cfg).unwrap();
        let m1 = artifacts::read_bytes(&s1.malicious_path).unwrap();
        let b1 = artifacts::read_bytes(&s1.benign_path).unwrap();
        let s2 = run_gen(&cfg).unwrap();
        assert_eq!(m1, artifacts::read_bytes(&s2.malicious_path).unwrap());
        assert_eq!(b1, artifacts::read_bytes(&s2.benign_path).unwrap());
        assert_eq!(s1.corpus_sha256, s2.corpus_sha256);
    }

    #[test]
    fn gen_load_round_trip_matches_in_memory_corpus() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        let loaded = load_inputs(&cfg).unwrap();
        let direct = synth::generate(&cfg.generator).unwrap();
        assert_eq!(loaded.corpus.chains.len(), direct.chains.len());
        // Combined files do not carry user ids, which resynthesize from the
        // chain id; everything else must survive the round trip exactly.
        let loaded_ev: Vec<_> = loaded.corpus.events().collect();
        let direct_ev: Vec<_> = direct.events().collect();
        assert_eq!(loaded_ev.len(), direct_ev.len());
        for (a, b) in loaded_ev.iter().zip(&direct_ev) {
            assert_eq!(a.event_id, b.event_id);
            assert_eq!(a.session_id, b.session_id);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.tool, b.tool);
            assert_eq!(a.arguments, b.arguments);
            assert_eq!(a.seq, b.seq);
            assert_eq!((a.request_bytes, a.response_bytes), (b.request_bytes, b.response_bytes));
        }
    }

    #[test]
    fn benign_only_corpus_is_allowed() {
        let dir = tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.generator.malicious_chains = 0;
        let summary = run_gen(&cfg).unwrap();
        assert_eq!(summary.malicious_chains, 0);
        assert!(summary.benign_chains > 0);
        let loaded = load_inputs(&cfg).unwrap();
        assert!(loaded.corpus.chains.iter().all(|c| !c.is_malicious));
    }

    #[test]
    fn empty_corpus_builds_empty_graph() {
        let dir = tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.generator.malicious_chains = 0;
        cfg.generator.benign_chains = 0;
        run_gen(&cfg).unwrap();
        let summary = run_build(&cfg).unwrap();
        assert_eq!(summary.events, 0);
        assert_eq!(summary.discovered_chains, 0);
        assert!(summary.edge_counts.values().all(|&n| n == 0));
    }

    #[test]
    fn build_persists_snapshot_and_chain_dump() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        let summary = run_build(&cfg).unwrap();
        assert!(summary.edge_counts.values().all(|&n| n > 0), "{:?}", summary.edge_counts);

        let snap: GraphSnapshot = artifacts::read_json(&summary.graph_path).unwrap();
        assert_eq!(snap.events, summary.events);
        let dump: ChainDump = artifacts::read_json(&summary.chains_path).unwrap();
        assert_eq!(dump.chains.len(), summary.discovered_chains);
        // Majority campaigns only ever come from malicious ground truth.
        assert!(dump
            .chains
            .iter()
            .filter_map(|c| c.majority_campaign.as_deref())
            .all(|c| synth::CAMPAIGNS.contains(&c)));

        // Rebuilding from the same inputs is byte-identical.
        let g1 = artifacts::read_bytes(&summary.graph_path).unwrap();
        let c1 = artifacts::read_bytes(&summary.chains_path).unwrap();
        run_build(&cfg).unwrap();
        assert_eq!(g1, artifacts::read_bytes(&summary.graph_path).unwrap());
        assert_eq!(c1, artifacts::read_bytes(&summary.chains_path).unwrap());
    }

    #[test]
    fn train_eval_writes_models_predictions_and_reports() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        let report = run_train_eval(&cfg).unwrap();

        assert_eq!(report.models.len(), 2);
        assert_eq!(report.train_chains + report.test_chains, report.ground_truth_chains);
        let loaded = load_inputs(&cfg).unwrap();
        assert_eq!(report.train_events + report.test_events, loaded.corpus.event_count());
        // One campaign row per malicious campaign in the corpus universe,
        // aligned across models.
        let universe: BTreeSet<String> = loaded
            .corpus
            .chains
            .iter()
            .filter(|c| c.is_malicious)
            .filter_map(|c| c.campaign.clone())
            .collect();
        for m in &report.models {
            assert_eq!(m.campaigns.len(), universe.len());
            for (row, name) in m.campaigns.iter().zip(&universe) {
                assert_eq!(&row.campaign, name);
            }
        }

        for m in &report.models {
            let bundle = artifacts::read_model(&cfg.artifact_path(&m.model_file)).unwrap();
            assert_eq!(bundle.detector.config.variant.name(), m.variant);
            assert_eq!(bundle.provenance, report.provenance);
            let preds =
                artifacts::read_predictions(&cfg.artifact_path(&m.predictions_file)).unwrap();
            assert_eq!(preds.len(), report.train_events + report.test_events);
            assert!(preds.iter().all(|p| (0.0..=1.0).contains(p)));
        }

        let text = artifacts::read_text(&cfg.artifact_path("report.txt")).unwrap();
        assert!(text.contains("per-campaign f1/accuracy"), "{text}");
        let parsed: EvalReport =
            artifacts::read_json(&cfg.artifact_path("report.json")).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn train_eval_is_byte_deterministic() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        run_train_eval(&cfg).unwrap();
        let names = ["report.json", "report.txt", "models/gcn.ctdet", "predictions/gcn.csv"];
        let first: Vec<Vec<u8>> = names
            .iter()
            .map(|n| artifacts::read_bytes(&cfg.artifact_path(n)).unwrap())
            .collect();
        run_train_eval(&cfg).unwrap();
        for (n, before) in names.iter().zip(&first) {
            let after = artifacts::read_bytes(&cfg.artifact_path(n)).unwrap();
            assert_eq!(before, &after, "{n} changed between identical runs");
        }
    }

    #[test]
    fn scoring_training_corpus_reproduces_stored_predictions() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        let report = run_train_eval(&cfg).unwrap();

        let model = cfg.artifact_path(&report.models[0].model_file);
        let inputs = [cfg.malicious_path(), cfg.benign_path()];
        let out = run_score(&cfg, &model, &inputs).unwrap();
        let stored =
            artifacts::read_predictions(&cfg.artifact_path(&report.models[0].predictions_file))
                .unwrap();
        assert_eq!(out.predictions.len(), stored.len());
        for (a, b) in out.predictions.iter().zip(&stored) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(out.verdicts.len(), report.discovered_chains);
    }

    #[test]
    fn score_handles_empty_stream_and_session_logs() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_gen(&cfg).unwrap();
        let report = run_train_eval(&cfg).unwrap();
        let model = cfg.artifact_path(&report.models[0].model_file);

        // Empty stream: no events, no verdicts.
        let empty = dir.path().join("empty.json");
        artifacts::write_bytes(&empty, b"{\"is_malicious\":false,\"sessions\":[]}\n").unwrap();
        let out = run_score(&cfg, &model, &[empty]).unwrap();
        assert_eq!(out.events, 0);
        assert!(out.verdicts.is_empty());

        // Session-log input with an out-of-vocabulary tool still scores.
        let log = dir.path().join("one.jsonl");
        artifacts::write_bytes(
            &log,
            concat!(
                "{\"seq\":0,\"event\":\"session_start\",\"session_id\":\"live-1\",\"schema_version\":1}\n",
                "{\"seq\":1,\"event\":\"tool_call\",\"session_id\":\"live-1\",\"iteration\":1,\"tool\":\"brand_new_tool\",\"arguments\":\"probe /srv/x token abc123\",\"arguments_bytes\":26,\"tool_call_index\":0}\n",
                "{\"seq\":2,\"event\":\"tool_result\",\"session_id\":\"live-1\",\"iteration\":1,\"tool\":\"brand_new_tool\",\"success\":true,\"result_preview\":\"ok\",\"result_bytes\":40,\"tool_result_index\":0}\n",
                "{\"seq\":3,\"event\":\"session_end\",\"session_id\":\"live-1\",\"total_events\":4}\n",
            )
            .as_bytes(),
        )
        .unwrap();
        let out = run_score(&cfg, &model, &[log]).unwrap();
        assert_eq!(out.events, 2);
        assert_eq!(out.verdicts.len(), 1);
        assert_eq!(out.verdicts[0].sessions, vec!["live-1".to_owned()]);
        assert!(out.verdicts[0].score.is_finite());
    }

    #[test]
    fn audit_runs_from_persisted_corpus() {
        let dir = tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.generator.malicious_chains = 6;
        cfg.generator.benign_chains = 10;
        run_gen(&cfg).unwrap();
        let report = run_audit(&cfg).unwrap();
        assert!(report.passes(), "worst dim {} at {}", report.worst_dim, report.max_balanced_accuracy);
        assert!(cfg.artifact_path("audit.json").exists());
    }

    #[test]
    fn missing_corpus_is_a_data_error() {
        let dir = tempdir().unwrap();
        let cfg = small_config(dir.path());
        match run_build(&cfg) {
            Err(Error::Io(e)) => assert!(e.to_string().contains("malicious.json"), "{e}"),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_variant_is_a_usage_error() {
        let dir = tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.detector.variants = vec!["transformer".into()];
        assert!(matches!(run_train_eval(&cfg), Err(Error::Usage(_))));
        cfg.detector.variants = Vec::new();
        assert!(matches!(run_train_eval(&cfg), Err(Error::Usage(_))));
    }
}
