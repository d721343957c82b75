//! Sparse per-type message-passing operators.
//!
//! Each identity-preserving edge type becomes one `TypeOp`: the list of
//! (source, destination) contributions after symmetrizing the stored edges,
//! with a per-pair coefficient fixed by the detector variant. Contributions
//! are sorted by (destination, source) so accumulation order, and therefore
//! every floating-point bit of a run, is reproducible.

use ndarray::{Array2, ArrayView2};

use crate::graph::{EdgeType, InteractionGraph};
use crate::nn::Variant;

pub struct TypeOp {
    /// (u, v): node u contributes into node v's aggregate.
    pairs: Vec<(u32, u32)>,
    coef: Vec<f64>,
    /// Undirected degree per node within this type.
    deg: Vec<u32>,
}

impl TypeOp {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn degree(&self, v: usize) -> u32 {
        self.deg[v]
    }

    /// out = P x (aggregate neighbour rows into each destination row).
    pub fn apply(&self, x: ArrayView2<f64>, out: &mut Array2<f64>) {
        out.fill(0.0);
        for (k, &(u, v)) in self.pairs.iter().enumerate() {
            let src = x.row(u as usize);
            out.row_mut(v as usize).scaled_add(self.coef[k], &src);
        }
    }

    /// out = P^T g (route destination gradients back to sources).
    pub fn apply_transpose(&self, g: ArrayView2<f64>, out: &mut Array2<f64>) {
        out.fill(0.0);
        for (k, &(u, v)) in self.pairs.iter().enumerate() {
            let src = g.row(v as usize);
            out.row_mut(u as usize).scaled_add(self.coef[k], &src);
        }
    }
}

/// The four identity-type operators for one graph under one variant's
/// normalization. MLP gets an empty context (no message passing).
pub struct GraphContext {
    pub n: usize,
    pub variant: Variant,
    pub ops: Vec<TypeOp>,
}

impl GraphContext {
    pub fn build(graph: &InteractionGraph, variant: Variant) -> Self {
        let n = graph.len();
        if variant == Variant::Mlp {
            return GraphContext { n, variant, ops: Vec::new() };
        }
        let ops = EdgeType::IDENTITY
            .iter()
            .map(|etype| {
                let edges = graph.edges(*etype);
                let mut deg = vec![0u32; n];
                for e in edges {
                    deg[e.src] += 1;
                    deg[e.dst] += 1;
                }
                let mut pairs = Vec::with_capacity(edges.len() * 2);
                for e in edges {
                    pairs.push((e.src as u32, e.dst as u32));
                    pairs.push((e.dst as u32, e.src as u32));
                }
                pairs.sort_unstable_by_key(|&(u, v)| (v, u));
                let coef = pairs
                    .iter()
                    .map(|&(u, v)| match variant {
                        Variant::Gcn => {
                            let du = (deg[u as usize] + 1) as f64;
                            let dv = (deg[v as usize] + 1) as f64;
                            1.0 / (du * dv).sqrt()
                        }
                        Variant::Sage | Variant::Gat => 1.0 / deg[v as usize] as f64,
                        Variant::Gin => 1.0,
                        Variant::Mlp => unreachable!(),
                    })
                    .collect();
                TypeOp { pairs, coef, deg }
            })
            .collect();
        GraphContext { n, variant, ops }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, ToolUseEvent};
    use crate::graph::RobustnessConfig;
    use ndarray::array;

    fn two_event_graph() -> InteractionGraph {
        let mut g = InteractionGraph::new(RobustnessConfig::default());
        for (id, seq) in [(0usize, 1u64), (1, 2)] {
            g.insert_event(ToolUseEvent {
                event_id: id,
                user_id: "u".into(),
                session_id: "s".into(),
                seq,
                iteration: seq,
                kind: EventKind::ToolCall,
                tool: format!("t{id}"),
                arguments: format!("arg {id} {id} {id}"),
                success: true,
                request_bytes: 10,
                response_bytes: 0,
                call_index: Some(seq - 1),
                result_index: None,
                ts: None,
            })
            .unwrap();
        }
        g
    }

    #[test]
    fn symmetrization_doubles_each_edge() {
        let g = two_event_graph();
        // One Temporal edge 0->1 becomes contributions 0->1 and 1->0.
        let ctx = GraphContext::build(&g, Variant::Gin);
        let op = &ctx.ops[1];
        let x = array![[1.0, 2.0], [10.0, 20.0]];
        let mut out = Array2::zeros((2, 2));
        op.apply(x.view(), &mut out);
        assert_eq!(out, array![[10.0, 20.0], [1.0, 2.0]]);
    }

    #[test]
    fn gcn_coefficient_uses_augmented_degrees() {
        let g = two_event_graph();
        let ctx = GraphContext::build(&g, Variant::Gcn);
        let op = &ctx.ops[1];
        let x = array![[1.0], [0.0]];
        let mut out = Array2::zeros((2, 1));
        op.apply(x.view(), &mut out);
        // Both endpoints have undirected degree 1, so the coefficient is
        // 1/sqrt(2*2) = 1/2.
        assert!((out[(1, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sage_coefficient_is_neighbour_mean() {
        let g = two_event_graph();
        let ctx = GraphContext::build(&g, Variant::Sage);
        let op = &ctx.ops[1];
        assert_eq!(op.degree(0), 1);
        let x = array![[4.0], [6.0]];
        let mut out = Array2::zeros((2, 1));
        op.apply(x.view(), &mut out);
        assert_eq!(out, array![[6.0], [4.0]]);
    }

    #[test]
    fn transpose_routes_gradients_back() {
        let g = two_event_graph();
        let ctx = GraphContext::build(&g, Variant::Gin);
        let op = &ctx.ops[1];
        // <P x, g> must equal <x, P^T g> for any x, g.
        let x = array![[1.0, -2.0], [3.0, 0.5]];
        let gr = array![[0.25, 1.5], [-1.0, 2.0]];
        let mut px = Array2::zeros((2, 2));
        op.apply(x.view(), &mut px);
        let mut ptg = Array2::zeros((2, 2));
        op.apply_transpose(gr.view(), &mut ptg);
        let lhs: f64 = (&px * &gr).sum();
        let rhs: f64 = (&x * &ptg).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mlp_context_has_no_operators() {
        let g = two_event_graph();
        let ctx = GraphContext::build(&g, Variant::Mlp);
        assert!(ctx.ops.is_empty());
    }
}
