//! Online construction of the typed interaction graph.
//!
//! Events arrive in stream order; each insertion allocates node `v_t` and
//! emits every edge whose rule fires, using constant-time hash indices:
//!
//! * `DataFlow` — a result closes the pending call with the same
//!   (session, index); the pending-call entry is consumed.
//! * `Temporal` — consecutive sequence numbers within one session.
//! * `SharedSession` — link from the session's previous event, so each
//!   session forms a chain rather than a clique.
//! * `SharedResource` — a path/URL/host/IP extracted from the arguments was
//!   referenced before; link to the most recent prior referent with weight
//!   1/cardinality, so high-frequency resources never become hubs (no edge
//!   at all once cardinality exceeds the cutoff). The resource index is
//!   LRU-bounded.
//! * `ArgumentSimilarity` — the robustness layer: banded LSH over 64-bit
//!   SimHash signatures proposes candidates, pairs within Hamming `kappa`
//!   link with weight `1 - h/64`. This survives attackers who rotate
//!   session ids and randomize resource names but reuse prompt templates.
//!
//! All edges point from the earlier event to the new one (`src < dst`).
//! Replay of the same stream yields bit-identical edge lists.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventKind, ToolUseEvent};
use crate::resources::{extract_resources, Resource};
use crate::simhash::{bands, hamming, simhash64, BAND_COUNT};

/// Edge types in declaration order. The first four are identity-preserving
/// and drive both feature panels and message passing; the fifth is
/// content-based and feeds chain discovery only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    DataFlow,
    Temporal,
    SharedSession,
    SharedResource,
    ArgumentSimilarity,
}

impl EdgeType {
    pub const ALL: [EdgeType; 5] = [
        EdgeType::DataFlow,
        EdgeType::Temporal,
        EdgeType::SharedSession,
        EdgeType::SharedResource,
        EdgeType::ArgumentSimilarity,
    ];

    /// The identity-preserving types used by feature panels and detectors.
    pub const IDENTITY: [EdgeType; 4] = [
        EdgeType::DataFlow,
        EdgeType::Temporal,
        EdgeType::SharedSession,
        EdgeType::SharedResource,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::DataFlow => "data_flow",
            EdgeType::Temporal => "temporal",
            EdgeType::SharedSession => "shared_session",
            EdgeType::SharedResource => "shared_resource",
            EdgeType::ArgumentSimilarity => "argument_similarity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: usize,
    pub dst: usize,
    pub etype: EdgeType,
    pub weight: f64,
}

/// Knobs for the robustness layer and memory bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    /// Maximum Hamming distance for an ArgumentSimilarity link.
    pub kappa: u32,
    /// Sliding window (in events) after which similarity candidates and
    /// resource recency links expire. Unbounded in offline evaluation.
    pub window: Option<usize>,
    /// LRU capacity of the resource index.
    pub resource_capacity: usize,
    /// Maximum ArgumentSimilarity links per inserted event.
    pub max_similarity_links: usize,
    /// A resource referenced by more events than this emits no further
    /// edges (anti-hub rule).
    pub resource_cardinality_cutoff: u32,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            kappa: 8,
            window: None,
            resource_capacity: 65536,
            max_similarity_links: 4,
            resource_cardinality_cutoff: 32,
        }
    }
}

struct ResourceEntry {
    count: u32,
    last: usize,
    touch: u64,
}

/// Per-insertion instrumentation: index lookups performed and resources
/// extracted, for the amortized-O(1) work-bound assertion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProbeStats {
    pub lookups: u32,
    pub resources: u32,
}

pub struct InteractionGraph {
    config: RobustnessConfig,
    nodes: Vec<ToolUseEvent>,
    edges: [Vec<TypedEdge>; 5],
    sigs: Vec<u64>,
    session_ids: Vec<String>,
    session_index: HashMap<String, u32>,
    last_in_session: HashMap<u32, usize>,
    seq_index: HashMap<(u32, u64), usize>,
    pending_calls: HashMap<(u32, u64), usize>,
    resources: HashMap<Resource, ResourceEntry>,
    resource_lru: BTreeMap<u64, Resource>,
    touch_counter: u64,
    band_tables: [HashMap<u16, Vec<usize>>; BAND_COUNT],
    warnings: Vec<String>,
    last_probe: ProbeStats,
}

impl InteractionGraph {
    pub fn new(config: RobustnessConfig) -> Self {
        InteractionGraph {
            config,
            nodes: Vec::new(),
            edges: Default::default(),
            sigs: Vec::new(),
            session_ids: Vec::new(),
            session_index: HashMap::new(),
            last_in_session: HashMap::new(),
            seq_index: HashMap::new(),
            pending_calls: HashMap::new(),
            resources: HashMap::new(),
            resource_lru: BTreeMap::new(),
            touch_counter: 0,
            band_tables: Default::default(),
            warnings: Vec::new(),
            last_probe: ProbeStats::default(),
        }
    }

    pub fn config(&self) -> &RobustnessConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ToolUseEvent] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &ToolUseEvent {
        &self.nodes[id]
    }

    /// Edges of one type in emission order.
    pub fn edges(&self, etype: EdgeType) -> &[TypedEdge] {
        &self.edges[etype.index()]
    }

    pub fn edge_counts(&self) -> BTreeMap<&'static str, usize> {
        EdgeType::ALL.iter().map(|t| (t.name(), self.edges(*t).len())).collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn last_probe(&self) -> ProbeStats {
        self.last_probe
    }

    /// Interned session names, indexed by the intern id.
    pub fn session_names(&self) -> &[String] {
        &self.session_ids
    }

    /// Incoming adjacency for one edge type: `result[v]` lists `(u, w)` for
    /// every edge `u -> v`.
    pub fn in_adjacency(&self, etype: EdgeType) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in self.edges(etype) {
            adj[e.dst].push((e.src, e.weight));
        }
        adj
    }

    fn intern_session(&mut self, session_id: &str) -> u32 {
        self.last_probe.lookups += 1;
        if let Some(&s) = self.session_index.get(session_id) {
            return s;
        }
        let s = self.session_ids.len() as u32;
        self.session_ids.push(session_id.to_owned());
        self.session_index.insert(session_id.to_owned(), s);
        s
    }

    fn within_window(&self, now: usize, then: usize) -> bool {
        match self.config.window {
            Some(w) => now - then <= w,
            None => true,
        }
    }

    /// Insert the next event of the stream and return every edge emitted
    /// for it, in `EdgeType` declaration order.
    pub fn insert_event(&mut self, e: ToolUseEvent) -> Result<Vec<TypedEdge>> {
        let t = self.nodes.len();
        if e.event_id != t {
            return Err(Error::Usage(format!(
                "insert_event: event_id {} does not extend the stream (expected {t})",
                e.event_id
            )));
        }
        self.last_probe = ProbeStats::default();
        let s = self.intern_session(&e.session_id);
        let mut out = Vec::new();

        // DataFlow: a result consumes the pending call with its index.
        if e.kind == EventKind::ToolResult {
            if let Some(ri) = e.result_index {
                self.last_probe.lookups += 1;
                if let Some(call) = self.pending_calls.remove(&(s, ri)) {
                    out.push(TypedEdge { src: call, dst: t, etype: EdgeType::DataFlow, weight: 1.0 });
                }
            }
        }

        // Temporal: consecutive seq within the session.
        self.last_probe.lookups += 1;
        if self.seq_index.contains_key(&(s, e.seq)) {
            self.warnings.push(format!(
                "event {t}: duplicate seq {} in session {} (no temporal edge)",
                e.seq, e.session_id
            ));
        } else if e.seq > 0 {
            self.last_probe.lookups += 1;
            if let Some(&prev) = self.seq_index.get(&(s, e.seq - 1)) {
                out.push(TypedEdge { src: prev, dst: t, etype: EdgeType::Temporal, weight: 1.0 });
            }
        }

        // SharedSession: chain from the session's previous event.
        self.last_probe.lookups += 1;
        if let Some(&prev) = self.last_in_session.get(&s) {
            out.push(TypedEdge { src: prev, dst: t, etype: EdgeType::SharedSession, weight: 1.0 });
        }

        // SharedResource: link to the most recent prior referent of each
        // extracted resource; weight 1/cardinality, hubs cut off.
        let refs = extract_resources(&e.arguments);
        self.last_probe.resources = refs.len() as u32;
        let mut by_src: BTreeMap<usize, f64> = BTreeMap::new();
        for r in &refs {
            self.last_probe.lookups += 1;
            self.touch_counter += 1;
            let touch = self.touch_counter;
            match self.resources.get_mut(r) {
                Some(entry) => {
                    entry.count += 1;
                    let c = entry.count;
                    let prev = entry.last;
                    self.resource_lru.remove(&entry.touch);
                    entry.touch = touch;
                    entry.last = t;
                    self.resource_lru.insert(touch, r.clone());
                    if c <= self.config.resource_cardinality_cutoff && self.within_window(t, prev) {
                        let w = 1.0 / c as f64;
                        by_src
                            .entry(prev)
                            .and_modify(|cur| *cur = cur.max(w))
                            .or_insert(w);
                    }
                }
                None => {
                    self.resources.insert(r.clone(), ResourceEntry { count: 1, last: t, touch });
                    self.resource_lru.insert(touch, r.clone());
                }
            }
        }
        for (src, weight) in by_src {
            out.push(TypedEdge { src, dst: t, etype: EdgeType::SharedResource, weight });
        }
        while self.resources.len() > self.config.resource_capacity {
            let (&touch, _) = self.resource_lru.iter().next().expect("lru nonempty");
            let r = self.resource_lru.remove(&touch).expect("lru entry");
            self.resources.remove(&r);
        }

        // ArgumentSimilarity: banded LSH candidates within Hamming kappa,
        // nearest max_similarity_links linked (ties to lower event_id).
        let sig = simhash64(&e.arguments);
        let sig_bands = bands(sig);
        let mut candidates: Vec<usize> = Vec::new();
        for (b, &band) in sig_bands.iter().enumerate() {
            self.last_probe.lookups += 1;
            if let Some(bucket) = self.band_tables[b].get_mut(&band) {
                if let Some(w) = self.config.window {
                    bucket.retain(|&id| t - id <= w);
                }
                candidates.extend_from_slice(bucket);
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(u32, usize)> = candidates
            .into_iter()
            .filter_map(|id| {
                let h = hamming(sig, self.sigs[id]);
                (h <= self.config.kappa).then_some((h, id))
            })
            .collect();
        scored.sort_unstable();
        scored.truncate(self.config.max_similarity_links);
        for (h, id) in scored {
            out.push(TypedEdge {
                src: id,
                dst: t,
                etype: EdgeType::ArgumentSimilarity,
                weight: 1.0 - h as f64 / 64.0,
            });
        }

        // Index updates for future insertions.
        self.seq_index.insert((s, e.seq), t);
        self.last_in_session.insert(s, t);
        if e.kind == EventKind::ToolCall {
            if let Some(ci) = e.call_index {
                self.pending_calls.insert((s, ci), t);
            }
        }
        for (b, &band) in sig_bands.iter().enumerate() {
            self.band_tables[b].entry(band).or_default().push(t);
        }
        self.sigs.push(sig);
        self.nodes.push(e);

        for edge in &out {
            debug_assert!(edge.src < edge.dst);
            self.edges[edge.etype.index()].push(*edge);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: usize, session: &str, seq: u64, kind: EventKind, args: &str) -> ToolUseEvent {
        ToolUseEvent {
            event_id: id,
            user_id: "u".into(),
            session_id: session.into(),
            seq,
            iteration: 1,
            kind,
            tool: "read_file".into(),
            arguments: args.into(),
            success: true,
            request_bytes: args.len() as u64,
            response_bytes: 0,
            call_index: if kind == EventKind::ToolCall { Some(seq) } else { None },
            result_index: if kind == EventKind::ToolResult { Some(seq - 1) } else { None },
            ts: None,
        }
    }

    fn types(edges: &[TypedEdge]) -> Vec<EdgeType> {
        edges.iter().map(|e| e.etype).collect()
    }

    #[test]
    fn first_event_emits_nothing() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        let edges = g.insert_event(ev(0, "s", 1, EventKind::ToolCall, "alpha")).unwrap();
        assert!(edges.is_empty());
    }

    #[test]
    fn consecutive_same_session_events_link_temporally() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s", 1, EventKind::ToolCall, "alpha")).unwrap();
        let edges = g.insert_event(ev(1, "s", 2, EventKind::ToolCall, "zzzz qqqq vvvv")).unwrap();
        assert_eq!(types(&edges), vec![EdgeType::Temporal, EdgeType::SharedSession]);
        assert!(edges.iter().all(|e| e.src == 0 && e.dst == 1 && e.weight == 1.0));
    }

    #[test]
    fn result_closes_pending_call_in_same_session() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        let mut call = ev(0, "s", 1, EventKind::ToolCall, "alpha");
        call.call_index = Some(0);
        g.insert_event(call).unwrap();
        g.insert_event(ev(1, "s", 2, EventKind::ToolCall, "unrelated middle")).unwrap();
        let mut result = ev(2, "s", 3, EventKind::ToolResult, "totally different text");
        result.result_index = Some(0);
        let edges = g.insert_event(result).unwrap();
        assert_eq!(
            types(&edges),
            vec![EdgeType::DataFlow, EdgeType::Temporal, EdgeType::SharedSession]
        );
        assert_eq!(edges[0].src, 0);
        assert_eq!(edges[1].src, 1);
    }

    #[test]
    fn dataflow_requires_same_session() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        let mut call = ev(0, "a", 1, EventKind::ToolCall, "alpha");
        call.call_index = Some(0);
        g.insert_event(call).unwrap();
        let mut result = ev(1, "b", 1, EventKind::ToolResult, "different entirely");
        result.result_index = Some(0);
        let edges = g.insert_event(result).unwrap();
        assert!(types(&edges).iter().all(|t| *t != EdgeType::DataFlow));
    }

    #[test]
    fn seq_gap_emits_shared_session_only() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s", 2, EventKind::ToolCall, "alpha")).unwrap();
        let edges = g.insert_event(ev(1, "s", 5, EventKind::ToolCall, "completely other")).unwrap();
        assert_eq!(types(&edges), vec![EdgeType::SharedSession]);
    }

    #[test]
    fn duplicate_seq_warns_without_temporal_edge() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s", 3, EventKind::ToolCall, "alpha")).unwrap();
        let edges = g.insert_event(ev(1, "s", 3, EventKind::ToolCall, "unrelated payload")).unwrap();
        assert_eq!(types(&edges), vec![EdgeType::SharedSession]);
        assert_eq!(g.warnings().len(), 1);
        assert!(g.warnings()[0].contains("duplicate seq"));
    }

    #[test]
    fn shared_resource_links_most_recent_with_inverse_cardinality() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        // Sessions differ so only the resource rule can fire.
        for i in 0..4 {
            g.insert_event(ev(i, &format!("s{i}"), 1, EventKind::ToolCall, "no references here"))
                .unwrap();
        }
        g.insert_event(ev(4, "sa", 1, EventKind::ToolCall, "read /opt/app/cfg.yml")).unwrap();
        for i in 5..9 {
            g.insert_event(ev(i, &format!("t{i}"), 1, EventKind::ToolCall, "still nothing")).unwrap();
        }
        let edges = g
            .insert_event(ev(9, "sb", 1, EventKind::ToolCall, "parse /opt/app/cfg.yml again"))
            .unwrap();
        let sr: Vec<_> = edges.iter().filter(|e| e.etype == EdgeType::SharedResource).collect();
        assert_eq!(sr.len(), 1);
        assert_eq!((sr[0].src, sr[0].dst), (4, 9));
        assert_eq!(sr[0].weight, 0.5);

        let edges = g
            .insert_event(ev(10, "sc", 1, EventKind::ToolCall, "archive /opt/app/cfg.yml now"))
            .unwrap();
        let sr: Vec<_> = edges.iter().filter(|e| e.etype == EdgeType::SharedResource).collect();
        assert_eq!((sr[0].src, sr[0].dst), (9, 10));
        assert!((sr[0].weight - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cardinality_cutoff_stops_hub_edges() {
        let cfg = RobustnessConfig { resource_cardinality_cutoff: 32, ..Default::default() };
        let mut g = InteractionGraph::new(cfg);
        let mut sr_edges = 0;
        for i in 0..40 {
            let edges = g
                .insert_event(ev(i, &format!("s{i}"), 1, EventKind::ToolCall, "touch /tmp/shared.log"))
                .unwrap();
            sr_edges += edges.iter().filter(|e| e.etype == EdgeType::SharedResource).count();
        }
        // References 2..=32 emit one edge each; 33+ are cut off.
        assert_eq!(sr_edges, 31);
    }

    #[test]
    fn lru_eviction_forgets_resources() {
        let cfg = RobustnessConfig { resource_capacity: 2, ..Default::default() };
        let mut g = InteractionGraph::new(cfg);
        g.insert_event(ev(0, "s0", 1, EventKind::ToolCall, "read /a/one")).unwrap();
        g.insert_event(ev(1, "s1", 1, EventKind::ToolCall, "read /b/two")).unwrap();
        g.insert_event(ev(2, "s2", 1, EventKind::ToolCall, "read /c/three")).unwrap();
        // /a/one was least recently used and evicted; a new reference is a
        // first sighting again.
        let edges = g.insert_event(ev(3, "s3", 1, EventKind::ToolCall, "read /a/one")).unwrap();
        assert!(edges.iter().all(|e| e.etype != EdgeType::SharedResource));
        // /c/three survived.
        let edges = g.insert_event(ev(4, "s4", 1, EventKind::ToolCall, "read /c/three")).unwrap();
        assert!(edges.iter().any(|e| e.etype == EdgeType::SharedResource && e.src == 2));
    }

    #[test]
    fn identical_arguments_link_with_weight_one() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "a", 1, EventKind::ToolCall, "compress the archive set")).unwrap();
        let edges = g
            .insert_event(ev(1, "b", 1, EventKind::ToolCall, "compress the archive set"))
            .unwrap();
        let sim: Vec<_> = edges.iter().filter(|e| e.etype == EdgeType::ArgumentSimilarity).collect();
        assert_eq!(sim.len(), 1);
        assert_eq!(sim[0].weight, 1.0);
    }

    #[test]
    fn similarity_links_capped_at_nearest_four_lowest_ids() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        for i in 0..6 {
            g.insert_event(ev(i, &format!("s{i}"), 1, EventKind::ToolCall, "rotate the key material"))
                .unwrap();
        }
        let edges = g
            .insert_event(ev(6, "s6", 1, EventKind::ToolCall, "rotate the key material"))
            .unwrap();
        let sim: Vec<usize> = edges
            .iter()
            .filter(|e| e.etype == EdgeType::ArgumentSimilarity)
            .map(|e| e.src)
            .collect();
        assert_eq!(sim, vec![0, 1, 2, 3]);
    }

    #[test]
    fn window_expires_similarity_and_resource_links() {
        let cfg = RobustnessConfig { window: Some(2), ..Default::default() };
        let mut g = InteractionGraph::new(cfg);
        g.insert_event(ev(0, "s0", 1, EventKind::ToolCall, "sync /var/data/blob please")).unwrap();
        for i in 1..=3 {
            g.insert_event(ev(i, &format!("f{i}"), 1, EventKind::ToolCall, "idle chatter only"))
                .unwrap();
        }
        let edges = g
            .insert_event(ev(4, "s4", 1, EventKind::ToolCall, "sync /var/data/blob please"))
            .unwrap();
        assert!(edges.iter().all(|e| e.etype == EdgeType::SharedSession || e.src >= 2));
        assert!(edges.iter().all(|e| e.etype != EdgeType::ArgumentSimilarity));
        assert!(edges.iter().all(|e| e.etype != EdgeType::SharedResource));
    }

    #[test]
    fn out_of_order_event_id_rejected() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        g.insert_event(ev(0, "s", 1, EventKind::ToolCall, "x")).unwrap();
        let err = g.insert_event(ev(5, "s", 2, EventKind::ToolCall, "y")).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn replay_determinism() {
        let build = || {
            let mut g = InteractionGraph::new(RobustnessConfig::default());
            let args = [
                "read /srv/app/config.yml",
                "post to http://10.9.8.7/api",
                "read /srv/app/config.yml",
                "list directory /srv/app",
                "post to http://10.9.8.7/api again",
            ];
            for (i, a) in args.iter().enumerate() {
                g.insert_event(ev(i, &format!("s{}", i % 2), (i / 2 + 1) as u64, EventKind::ToolCall, a))
                    .unwrap();
            }
            EdgeType::ALL.map(|t| g.edges(t).to_vec())
        };
        let a = build();
        let b = build();
        for (xs, ys) in a.iter().zip(b.iter()) {
            assert_eq!(xs.len(), ys.len());
            for (x, y) in xs.iter().zip(ys) {
                assert_eq!((x.src, x.dst, x.etype), (y.src, y.dst, y.etype));
                assert_eq!(x.weight.to_bits(), y.weight.to_bits());
            }
        }
    }

    #[test]
    fn probe_count_stays_within_bound() {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        for i in 0..200 {
            let args = format!("read /data/file{} from corp{}.net", i % 17, i % 5);
            g.insert_event(ev(i, &format!("s{}", i % 7), (i / 7) as u64 + 1, EventKind::ToolCall, &args))
                .unwrap();
            let p = g.last_probe();
            assert!(
                p.lookups <= 5 + p.resources + BAND_COUNT as u32,
                "event {i}: {} lookups for {} resources",
                p.lookups,
                p.resources
            );
        }
    }
}
