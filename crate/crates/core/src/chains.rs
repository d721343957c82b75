//! Chain discovery: weighted union-find over the event stream.
//!
//! Strong links (DataFlow, Temporal, SharedSession) merge components
//! unconditionally. Weak links (SharedResource, ArgumentSimilarity)
//! accumulate per component pair and merge once enough agree: edge count
//! reaches the quorum or cumulative weight clears `rho`. Accumulators are
//! re-keyed eagerly when roots merge, and a merge that pushes a combined
//! accumulator over its threshold cascades, so the final partition equals a
//! from-scratch fixpoint closure of the rules regardless of bookkeeping.
//!
//! Connected components under this relation are the discovered chains:
//! the engine's answer to "which chain does this fragment belong to?".

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeType, InteractionGraph, TypedEdge};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    /// Cumulative weak-edge weight that forces a merge.
    pub rho: f64,
    /// Number of agreeing weak edges that forces a merge.
    pub weak_edge_quorum: u32,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig { rho: 0.5, weak_edge_quorum: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeDecision {
    Merged,
    Deferred,
    AlreadyJoined,
}

/// One discovered chain. `chain_id` is the ordinal after sorting chains by
/// minimum member event id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub chain_id: usize,
    pub members: Vec<usize>,
    pub sessions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    /// Weak support per unordered root pair: (cumulative weight, edge count).
    support: HashMap<(usize, usize), (f64, u32)>,
    /// Roots with live accumulators toward each root, kept current so
    /// support can be migrated eagerly when a root is absorbed.
    partners: HashMap<usize, BTreeSet<usize>>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
            support: HashMap::new(),
            partners: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Grow the universe to hold at least `n` elements.
    pub fn ensure(&mut self, n: usize) {
        while self.parent.len() < n {
            self.parent.push(self.parent.len());
            self.rank.push(0);
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    fn drop_pair(&mut self, a: usize, b: usize) {
        self.support.remove(&ordered(a, b));
        if let Some(s) = self.partners.get_mut(&a) {
            s.remove(&b);
        }
        if let Some(s) = self.partners.get_mut(&b) {
            s.remove(&a);
        }
    }

    /// Union the components of `a` and `b`, migrating weak support onto the
    /// surviving root and cascading any accumulator the migration pushes
    /// over a threshold.
    fn merge(&mut self, a: usize, b: usize, cfg: &DiscoveryConfig) {
        let mut work = vec![(a, b)];
        while let Some((x, y)) = work.pop() {
            let rx = self.find(x);
            let ry = self.find(y);
            if rx == ry {
                continue;
            }
            self.drop_pair(rx, ry);
            // Union by rank; ties keep the smaller id as root so replay is
            // bit-deterministic.
            let (root, gone) = if self.rank[rx] > self.rank[ry] {
                (rx, ry)
            } else if self.rank[ry] > self.rank[rx] {
                (ry, rx)
            } else {
                self.rank[rx.min(ry)] += 1;
                (rx.min(ry), rx.max(ry))
            };
            self.parent[gone] = root;

            for p in self.partners.remove(&gone).unwrap_or_default() {
                let Some((w, c)) = self.support.remove(&ordered(gone, p)) else { continue };
                if let Some(s) = self.partners.get_mut(&p) {
                    s.remove(&gone);
                }
                let rp = self.find(p);
                if rp == root {
                    continue;
                }
                let entry = self.support.entry(ordered(root, rp)).or_insert((0.0, 0));
                entry.0 += w;
                entry.1 += c;
                let hit = entry.1 >= cfg.weak_edge_quorum || entry.0 >= cfg.rho;
                self.partners.entry(root).or_default().insert(rp);
                self.partners.entry(rp).or_default().insert(root);
                if hit {
                    work.push((root, rp));
                }
            }
        }
    }

    /// Apply one typed edge. Strong types merge immediately; weak types
    /// accumulate and merge at quorum or weight threshold.
    pub fn observe_edge(&mut self, edge: &TypedEdge, cfg: &DiscoveryConfig) -> MergeDecision {
        self.ensure(edge.src.max(edge.dst) + 1);
        let ra = self.find(edge.src);
        let rb = self.find(edge.dst);
        if ra == rb {
            return MergeDecision::AlreadyJoined;
        }
        match edge.etype {
            EdgeType::DataFlow | EdgeType::Temporal | EdgeType::SharedSession => {
                self.merge(ra, rb, cfg);
                MergeDecision::Merged
            }
            EdgeType::SharedResource | EdgeType::ArgumentSimilarity => {
                let entry = self.support.entry(ordered(ra, rb)).or_insert((0.0, 0));
                entry.0 += edge.weight;
                entry.1 += 1;
                if entry.1 >= cfg.weak_edge_quorum || entry.0 >= cfg.rho {
                    self.drop_pair(ra, rb);
                    self.merge(ra, rb, cfg);
                    MergeDecision::Merged
                } else {
                    self.partners.entry(ra).or_default().insert(rb);
                    self.partners.entry(rb).or_default().insert(ra);
                    MergeDecision::Deferred
                }
            }
        }
    }

    /// Components as sorted member lists, ordered by minimum member.
    pub fn components(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for x in 0..self.parent.len() {
            let r = self.find(x);
            by_root.entry(r).or_default().push(x);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|m| m[0]);
        out
    }

    /// Components dressed up as chains, with session ids resolved from the
    /// graph and deduplicated in first-seen order.
    pub fn chains(&mut self, graph: &InteractionGraph) -> Vec<Chain> {
        self.ensure(graph.len());
        self.components()
            .into_iter()
            .enumerate()
            .map(|(chain_id, members)| {
                let mut sessions = Vec::new();
                for &m in &members {
                    let s = &graph.node(m).session_id;
                    if !sessions.contains(s) {
                        sessions.push(s.clone());
                    }
                }
                Chain { chain_id, members, sessions, score: None }
            })
            .collect()
    }
}

/// Discover chains for a fully built graph by replaying its edges in
/// emission order: per event, types in declaration order.
pub fn discover(graph: &InteractionGraph, cfg: &DiscoveryConfig) -> UnionFind {
    let mut uf = UnionFind::new(graph.len());
    let mut cursors: Vec<std::slice::Iter<TypedEdge>> =
        EdgeType::ALL.iter().map(|t| graph.edges(*t).iter()).collect();
    // Edge lists are per-type in dst order; merge them back into per-event
    // order by walking dst.
    let mut pending: Vec<Option<&TypedEdge>> = cursors.iter_mut().map(|c| c.next()).collect();
    for t in 0..graph.len() {
        for (ti, slot) in pending.iter_mut().enumerate() {
            while let Some(e) = *slot {
                if e.dst != t {
                    break;
                }
                uf.observe_edge(e, cfg);
                *slot = cursors[ti].next();
            }
        }
    }
    uf
}

/// Majority campaign among a chain's members, ties to the lexicographically
/// smaller name; None when no member carries a campaign.
pub fn majority_campaign(members: &[usize], campaigns: &[Option<String>]) -> Option<String> {
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for &m in members {
        if let Some(c) = campaigns.get(m).and_then(|c| c.as_deref()) {
            *counts.entry(c).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| c.to_owned())
}
