//! Deterministic persistence for pipeline artifacts: graph snapshots, chain
//! dumps, trained detectors, prediction tables, and provenance hashing.
//!
//! Every writer is byte-deterministic: structs serialize with fixed field
//! order, maps are BTree-backed, and floats render in shortest round-trip
//! form. The detector container is the one binary format: a magic line, a
//! one-line JSON header (config, vocabulary, standardizer, provenance), then
//! the parameters as little-endian f64 words, so loading returns bit-for-bit
//! the parameters that were saved.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chains::{majority_campaign, Chain, DiscoveryConfig};
use crate::error::{Error, Result};
use crate::features::{Standardizer, ToolVocabulary};
use crate::graph::{EdgeType, InteractionGraph, RobustnessConfig, TypedEdge};
use crate::nn::{Detector, DetectorConfig, ModelSpec};

pub const MODEL_MAGIC: &[u8] = b"CTDET1\n";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of the run inputs: both combined corpus files, length-prefixed so
/// the boundary between them is unambiguous.
pub fn corpus_sha256(malicious: &[u8], benign: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update((malicious.len() as u64).to_le_bytes());
    h.update(malicious);
    h.update((benign.len() as u64).to_le_bytes());
    h.update(benign);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Input fingerprint embedded in every derived artifact. Two artifacts with
/// the same triple came from the same run configuration and corpus bytes and
/// are therefore byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub corpus_sha256: String,
    pub seed: u64,
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Write bytes, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| with_path(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| with_path(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| with_path(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::parse(path.display().to_string(), "file is not valid UTF-8"))
}

/// Compact single-line JSON plus trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).expect("artifact serialization");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Pretty JSON for human-facing reports, trailing newline included.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialization");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

// --- graph snapshot ---

/// Everything the build stage learned, without duplicating event payloads:
/// the corpus files stay the canonical event store and edges reference
/// events by id. Edges are concatenated per type in declaration order, each
/// list in emission order, so the snapshot doubles as a determinism witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub robustness: RobustnessConfig,
    pub events: usize,
    pub sessions: Vec<String>,
    pub edge_counts: BTreeMap<String, usize>,
    pub edges: Vec<TypedEdge>,
    pub warnings: Vec<String>,
}

impl GraphSnapshot {
    pub fn capture(graph: &InteractionGraph) -> Self {
        let mut edges = Vec::new();
        let mut edge_counts = BTreeMap::new();
        for t in EdgeType::ALL {
            let es = graph.edges(t);
            edge_counts.insert(t.name().to_owned(), es.len());
            edges.extend_from_slice(es);
        }
        GraphSnapshot {
            robustness: graph.config().clone(),
            events: graph.len(),
            sessions: graph.session_names().to_vec(),
            edge_counts,
            edges,
            warnings: graph.warnings().to_vec(),
        }
    }
}

// --- chain dump ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDumpEntry {
    pub chain_id: usize,
    pub size: usize,
    pub sessions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_campaign: Option<String>,
    pub members: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDump {
    pub discovery: DiscoveryConfig,
    pub chains: Vec<ChainDumpEntry>,
}

impl ChainDump {
    /// Dress discovered chains with each one's majority ground-truth
    /// campaign (`campaigns` is indexed by event id; benign events carry
    /// None and never vote).
    pub fn build(
        chains: &[Chain],
        campaigns: &[Option<String>],
        discovery: &DiscoveryConfig,
    ) -> Self {
        let entries = chains
            .iter()
            .map(|c| ChainDumpEntry {
                chain_id: c.chain_id,
                size: c.members.len(),
                sessions: c.sessions.clone(),
                majority_campaign: majority_campaign(&c.members, campaigns),
                members: c.members.clone(),
                score: c.score,
            })
            .collect();
        ChainDump { discovery: *discovery, chains: entries }
    }
}

// --- predictions ---

/// Write `event_id,p` rows, event id equal to row position. Probabilities
/// print in shortest round-trip form so the file is byte-stable and parses
/// back to identical f64s.
pub fn write_predictions(path: &Path, preds: &[f64]) -> Result<()> {
    let mut out = String::from("event_id,p\n");
    for (i, p) in preds.iter().enumerate() {
        out.push_str(&format!("{i},{p}\n"));
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let ctx = |line: usize| format!("{}:{line}", path.display());
    let mut lines = text.lines();
    if lines.next() != Some("event_id,p") {
        return Err(Error::parse(ctx(1), "expected header line 'event_id,p'"));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let (id, p) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(ctx(k + 2), "expected two comma-separated fields"))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse(ctx(k + 2), format!("bad event id: {id:?}")))?;
        if id != out.len() {
            return Err(Error::parse(
                ctx(k + 2),
                format!("expected event id {}, got {id}", out.len()),
            ));
        }
        let p: f64 = p
            .parse()
            .map_err(|_| Error::parse(ctx(k + 2), format!("bad probability: {p:?}")))?;
        out.push(p);
    }
    Ok(out)
}

// --- model container ---

/// A trained detector plus everything needed to reproduce its probabilities
/// on new streams: tool vocabulary, train-split standardizer, the solved
/// positive-class weight, and input provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub detector: Detector,
    pub vocab: ToolVocabulary,
    pub standardizer: Standardizer,
    pub pos_weight: f64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: DetectorConfig,
    in_dim: usize,
    params: usize,
    vocab: Vec<String>,
    standardizer: Standardizer,
    pos_weight: f64,
    provenance: Provenance,
}

pub fn write_model(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let spec = &bundle.detector.spec;
    let header = ModelHeader {
        config: bundle.detector.config,
        in_dim: spec.in_dim,
        params: spec.total,
        vocab: bundle.vocab.tools().to_vec(),
        standardizer: bundle.standardizer.clone(),
        pos_weight: bundle.pos_weight,
        provenance: bundle.provenance.clone(),
    };
    let header = serde_json::to_string(&header).expect("model header");
    let mut bytes =
        Vec::with_capacity(MODEL_MAGIC.len() + header.len() + 1 + spec.total * 8);
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(header.as_bytes());
    bytes.push(b'\n');
    for p in &bundle.detector.theta {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn read_model(path: &Path) -> Result<ModelBundle> {
    let bytes = read_bytes(path)?;
    let ctx = || path.display().to_string();
    let rest = bytes
        .strip_prefix(MODEL_MAGIC)
        .ok_or_else(|| Error::parse(ctx(), "missing CTDET1 magic"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(ctx(), "unterminated model header"))?;
    let header: ModelHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::parse(ctx(), format!("model header: {e}")))?;
    let blob = &rest[nl + 1..];

    let spec = ModelSpec::build(
        header.config.variant,
        header.in_dim,
        header.config.hidden,
        header.config.layers,
    )?;
    if spec.total != header.params {
        return Err(Error::Schema(format!(
            "model declares {} parameters but its shape needs {}",
            header.params, spec.total
        )));
    }
    if blob.len() != spec.total * 8 {
        return Err(Error::Schema(format!(
            "model parameter block holds {} bytes, expected {}",
            blob.len(),
            spec.total * 8
        )));
    }
    let theta: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if header.standardizer.mean.len() != header.in_dim
        || header.standardizer.std.len() != header.in_dim
    {
        return Err(Error::Schema(format!(
            "standardizer covers {} dims, model expects {}",
            header.standardizer.mean.len(),
            header.in_dim
        )));
    }
    Ok(ModelBundle {
        detector: Detector { config: header.config, spec, theta },
        vocab: ToolVocabulary::from_tools(header.vocab)?,
        standardizer: header.standardizer,
        pos_weight: header.pos_weight,
        provenance: header.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, ToolUseEvent};
    use crate::nn::Variant;
    use ndarray::Array2;
    use tempfile::tempdir;

    fn ev(id: usize, session: &str, seq: u64, tool: &str, args: &str) -> ToolUseEvent {
        ToolUseEvent {
            event_id: id,
            user_id: format!("{session}-user"),
            session_id: session.into(),
            seq,
            iteration: 1,
            kind: EventKind::ToolCall,
            tool: tool.into(),
            arguments: args.into(),
            success: true,
            request_bytes: args.len() as u64,
            response_bytes: 0,
            call_index: Some(0),
            result_index: None,
            ts: None,
        }
    }

    fn small_graph() -> InteractionGraph {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "sa", 1, "read_file", "read /tmp/a.txt limit 10")).unwrap();
        g.insert_event(ev(1, "sa", 2, "write_file", "write /tmp/b.txt mode w")).unwrap();
        g.insert_event(ev(2, "sb", 1, "read_file", "read /tmp/b.txt limit 20")).unwrap();
        g
    }

    #[test]
    fn sha256_matches_published_vectors() {
        // FIPS 180-2 test vectors for the empty string and "abc".
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn corpus_hash_is_order_sensitive_and_unambiguous() {
        let a = corpus_sha256(b"one", b"two");
        let b = corpus_sha256(b"two", b"one");
        assert_ne!(a, b);
        // Length prefixes keep boundary shifts from colliding.
        assert_ne!(corpus_sha256(b"on", b"etwo"), a);
    }

    #[test]
    fn graph_snapshot_round_trips() {
        let g = small_graph();
        let snap = GraphSnapshot::capture(&g);
        assert_eq!(snap.events, 3);
        assert_eq!(snap.sessions, vec!["sa".to_owned(), "sb".to_owned()]);
        assert_eq!(snap.edge_counts["temporal"], 1);
        assert_eq!(snap.edge_counts["shared_session"], 1);
        assert_eq!(snap.edge_counts["shared_resource"], 1);

        let dir = tempdir().unwrap();
        let path = dir.path().join("nested/graph.json");
        write_json(&path, &snap).unwrap();
        let back: GraphSnapshot = read_json(&path).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn chain_dump_carries_majority_campaign() {
        let chains = vec![Chain {
            chain_id: 0,
            members: vec![0, 1, 2],
            sessions: vec!["sa".into(), "sb".into()],
            score: None,
        }];
        let campaigns = vec![Some("alpha".to_owned()), Some("alpha".to_owned()), None];
        let dump = ChainDump::build(&chains, &campaigns, &DiscoveryConfig::default());
        assert_eq!(dump.chains[0].majority_campaign.as_deref(), Some("alpha"));
        assert_eq!(dump.chains[0].size, 3);
    }

    #[test]
    fn predictions_round_trip_exactly() {
        let preds = vec![0.1 + 0.2, 1.0 / 3.0, 1e-17, 0.0, 1.0];
        let dir = tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        write_predictions(&path, &preds).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(preds.len(), back.len());
        for (a, b) in preds.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn predictions_reject_gaps_and_bad_headers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        write_bytes(&path, b"event_id,p\n0,0.5\n2,0.5\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { .. })));
        write_bytes(&path, b"id,prob\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { .. })));
    }

    fn tiny_bundle() -> ModelBundle {
        let config = DetectorConfig { hidden: 8, ..DetectorConfig::new(Variant::Gcn) };
        let detector = Detector::init(config, 29).unwrap();
        let vocab = ToolVocabulary::build(["read_file", "write_file"]);
        let x = Array2::from_shape_fn((4, 29), |(i, j)| (i * 29 + j) as f64 * 0.1);
        let standardizer = Standardizer::fit(&x, &[0, 1, 2, 3]).unwrap();
        ModelBundle {
            detector,
            vocab,
            standardizer,
            pos_weight: 7.25,
            provenance: Provenance {
                config_sha256: sha256_hex(b"cfg"),
                corpus_sha256: sha256_hex(b"corpus"),
                seed: 42,
            },
        }
    }

    #[test]
    fn model_round_trips_bit_exactly() {
        let mut bundle = tiny_bundle();
        // Force values JSON would mangle if parameters went through text.
        bundle.detector.theta[0] = f64::from_bits(0x3FF0_0000_0000_0001);
        bundle.detector.theta[1] = -0.0;
        let dir = tempdir().unwrap();
        let path = dir.path().join("gcn.ctdet");
        write_model(&path, &bundle).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.detector.theta.len(), bundle.detector.theta.len());
        for (a, b) in bundle.detector.theta.iter().zip(&back.detector.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.vocab.tools(), bundle.vocab.tools());
        assert_eq!(back.standardizer, bundle.standardizer);
        assert_eq!(back.pos_weight, bundle.pos_weight);
        assert_eq!(back.provenance, bundle.provenance);

        // Writing the loaded bundle again reproduces the file byte for byte.
        let path2 = dir.path().join("gcn2.ctdet");
        write_model(&path2, &back).unwrap();
        assert_eq!(read_bytes(&path).unwrap(), read_bytes(&path2).unwrap());
    }

    #[test]
    fn model_reader_rejects_corruption() {
        let bundle = tiny_bundle();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ctdet");
        write_model(&path, &bundle).unwrap();
        let good = read_bytes(&path).unwrap();

        let bad_magic = [b"XXXXXX\n".to_vec(), good[7..].to_vec()].concat();
        write_bytes(&path, &bad_magic).unwrap();
        assert!(matches!(read_model(&path), Err(Error::Parse { .. })));

        let truncated = &good[..good.len() - 4];
        write_bytes(&path, truncated).unwrap();
        assert!(matches!(read_model(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_bytes(Path::new("/nonexistent/deep/file.bin")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/deep/file.bin"), "{err}");
    }
}
