//! Typed message-passing detectors and the MLP baseline.
//!
//! All five variants share one representation: a flat `Vec<f64>` parameter
//! vector described by an ordered list of named tensors. Forward, backward,
//! and the AdamW update walk that layout in a fixed order, and every
//! aggregation follows a fixed reduction order (destinations ascending,
//! types in declaration order), so training is bit-reproducible for a given
//! seed on any platform with IEEE f64.
//!
//! Variant semantics, two message-passing layers deep, ReLU between layers
//! only, with per-type weight matrices W_t over the four identity edge
//! types (adjacency symmetrized):
//!   gcn:  z_v = W_self x_v + sum_t sum_u x_u W_t / sqrt(dh_t(v) dh_t(u)),
//!         dh = undirected degree + 1
//!   sage: z_v = concat[W_self x_v ; sum_t mean_{u in N_t(v)} x_u W_t]
//!   gat:  z_v = W_self x_v + sum_t alpha_{v,t} mean_{N_t(v)} x_u W_t,
//!         alpha = softmax over the types present at v of per-type scalars
//!   gin:  z_v = (1+eps) W_self x_v + sum_t sum_u x_u W_t, followed by a
//!         two-layer perceptron on z_v
//!   mlp:  feature-only baseline, in -> hidden -> hidden/2 -> 1
//!
//! The binary head is a single linear map on the final node embedding;
//! training minimizes BCE-with-logits with a positive-class weight.

pub mod gradcheck;
pub mod ops;

pub use ops::{GraphContext, TypeOp};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gcn,
    Sage,
    Gat,
    Gin,
    Mlp,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Gcn, Variant::Sage, Variant::Gat, Variant::Gin, Variant::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gcn => "gcn",
            Variant::Sage => "sage",
            Variant::Gat => "gat",
            Variant::Gin => "gin",
            Variant::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown detector variant: {s:?}")))
    }

    pub fn is_message_passing(self) -> bool {
        self != Variant::Mlp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// BCE positive-class weight; None means N_neg / N_pos on the train mask.
    pub pos_weight: Option<f64>,
}

impl DetectorConfig {
    pub fn new(variant: Variant) -> Self {
        DetectorConfig {
            variant,
            hidden: 128,
            layers: 2,
            epochs: if variant == Variant::Mlp { 200 } else { 50 },
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            pos_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Glorot-uniform initialized; false means zero-initialized.
    pub glorot: bool,
}

/// Ordered parameter layout for one variant. Offsets into the flat theta
/// vector are implied by the tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tensors: Vec<TensorSpec>,
    offsets: Vec<usize>,
    pub total: usize,
}

const TYPE_TAGS: [&str; 4] = ["df", "tm", "ss", "sr"];

impl ModelSpec {
    pub fn build(variant: Variant, in_dim: usize, hidden: usize, layers: usize) -> Result<Self> {
        if hidden < 2 || hidden % 2 != 0 {
            return Err(Error::Usage(format!("hidden width must be even and >= 2, got {hidden}")));
        }
        if layers == 0 {
            return Err(Error::Usage("at least one layer is required".into()));
        }
        fn mat(out: &mut Vec<TensorSpec>, name: String, rows: usize, cols: usize) {
            out.push(TensorSpec { name, rows, cols, glorot: true });
        }
        fn vec_(out: &mut Vec<TensorSpec>, name: String, cols: usize) {
            out.push(TensorSpec { name, rows: 1, cols, glorot: false });
        }
        let mut tensors = Vec::new();
        match variant {
            Variant::Mlp => {
                let dims = [in_dim, hidden, hidden / 2, 1];
                for l in 0..3 {
                    mat(&mut tensors, format!("w_{l}"), dims[l], dims[l + 1]);
                    vec_(&mut tensors, format!("b_{l}"), dims[l + 1]);
                }
            }
            _ => {
                // Per-type projection width: SAGE concatenates self and
                // neighbour halves, the others sum into the full width.
                let half = if variant == Variant::Sage { hidden / 2 } else { hidden };
                for l in 0..layers {
                    let d_in = if l == 0 { in_dim } else { hidden };
                    mat(&mut tensors, format!("w_self_{l}"), d_in, half);
                    for tag in TYPE_TAGS {
                        mat(&mut tensors, format!("w_{tag}_{l}"), d_in, half);
                    }
                    vec_(&mut tensors, format!("b_{l}"), hidden);
                    match variant {
                        Variant::Gat => vec_(&mut tensors, format!("g_{l}"), 4),
                        Variant::Gin => {
                            vec_(&mut tensors, format!("eps_{l}"), 1);
                            mat(&mut tensors, format!("v1_{l}"), hidden, hidden);
                            vec_(&mut tensors, format!("c1_{l}"), hidden);
                            mat(&mut tensors, format!("v2_{l}"), hidden, hidden);
                            vec_(&mut tensors, format!("c2_{l}"), hidden);
                        }
                        _ => {}
                    }
                }
                mat(&mut tensors, "head_w".into(), hidden, 1);
                vec_(&mut tensors, "head_b".into(), 1);
            }
        }
        let mut offsets = Vec::with_capacity(tensors.len());
        let mut total = 0;
        for t in &tensors {
            offsets.push(total);
            total += t.rows * t.cols;
        }
        Ok(ModelSpec { variant, in_dim, hidden, layers, tensors, offsets, total })
    }

    fn locate(&self, name: &str) -> (usize, &TensorSpec) {
        let i = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"));
        (self.offsets[i], &self.tensors[i])
    }

    fn view<'a>(&self, theta: &'a [f64], name: &str) -> ArrayView2<'a, f64> {
        let (off, t) = self.locate(name);
        ArrayView2::from_shape((t.rows, t.cols), &theta[off..off + t.rows * t.cols])
            .expect("tensor shape matches layout")
    }

    fn scalar(&self, theta: &[f64], name: &str) -> f64 {
        let (off, _) = self.locate(name);
        theta[off]
    }

    fn add_mat(&self, grad: &mut [f64], name: &str, value: &Array2<f64>) {
        let (off, t) = self.locate(name);
        debug_assert_eq!((t.rows, t.cols), value.dim());
        for (dst, src) in grad[off..].iter_mut().zip(value.iter()) {
            *dst += *src;
        }
    }

    fn add_vec(&self, grad: &mut [f64], name: &str, value: &Array1<f64>) {
        let (off, t) = self.locate(name);
        debug_assert_eq!(t.rows * t.cols, value.len());
        for (dst, src) in grad[off..].iter_mut().zip(value.iter()) {
            *dst += *src;
        }
    }

    fn add_scalar(&self, grad: &mut [f64], name: &str, value: f64) {
        let (off, _) = self.locate(name);
        grad[off] += value;
    }
}

struct GinTrace {
    z_pre: Array2<f64>,
    self_proj: Array2<f64>,
    a1: Array2<f64>,
}

struct LayerTrace {
    /// Layer output before the inter-layer activation.
    out: Array2<f64>,
    /// GAT attention per node and type (zero where the type is absent).
    alpha: Option<Array2<f64>>,
    gin: Option<GinTrace>,
}

struct Trace {
    layers: Vec<LayerTrace>,
    /// acts[l] = relu(layers[l].out), for every layer but the last.
    acts: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

impl Detector {
    /// Fresh parameters: Glorot-uniform weights drawn from a ChaCha stream
    /// seeded by `config.seed`, zero biases and gating scalars.
    pub fn init(config: DetectorConfig, in_dim: usize) -> Result<Detector> {
        let spec = ModelSpec::build(config.variant, in_dim, config.hidden, config.layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut theta = vec![0.0; spec.total];
        for (i, t) in spec.tensors.iter().enumerate() {
            if !t.glorot {
                continue;
            }
            let a = (6.0 / (t.rows + t.cols) as f64).sqrt();
            let off = spec.offsets[i];
            for v in theta[off..off + t.rows * t.cols].iter_mut() {
                *v = rng.random::<f64>() * 2.0 * a - a;
            }
        }
        Ok(Detector { config, spec, theta })
    }

    fn gat_alpha(&self, ctx: &GraphContext, layer: usize) -> Array2<f64> {
        let g = self.spec.view(&self.theta, &format!("g_{layer}"));
        let mut alpha = Array2::zeros((ctx.n, 4));
        for v in 0..ctx.n {
            let present: Vec<usize> =
                (0..ctx.ops.len()).filter(|&t| ctx.ops[t].degree(v) > 0).collect();
            if present.is_empty() {
                continue;
            }
            let mx = present.iter().map(|&t| g[(0, t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &t in &present {
                z += (g[(0, t)] - mx).exp();
            }
            for &t in &present {
                alpha[(v, t)] = (g[(0, t)] - mx).exp() / z;
            }
        }
        alpha
    }

    fn forward(&self, ctx: &GraphContext, x: &Array2<f64>) -> Trace {
        let spec = &self.spec;
        let n = x.nrows();
        if spec.variant == Variant::Mlp {
            let mut acts: Vec<Array2<f64>> = Vec::new();
            for l in 0..2 {
                let h_in = if l == 0 { x } else { &acts[l - 1] };
                let w = spec.view(&self.theta, &format!("w_{l}"));
                let b = spec.view(&self.theta, &format!("b_{l}"));
                let mut z = h_in.dot(&w);
                z += &b;
                z.mapv_inplace(|v| v.max(0.0));
                acts.push(z);
            }
            let w = spec.view(&self.theta, "w_2");
            let b = spec.scalar(&self.theta, "b_2");
            let logits = acts[1].dot(&w).index_axis_move(Axis(1), 0) + b;
            return Trace { layers: Vec::new(), acts, logits };
        }

        let mut layers: Vec<LayerTrace> = Vec::with_capacity(spec.layers);
        let mut acts: Vec<Array2<f64>> = Vec::new();
        for l in 0..spec.layers {
            let h_in = if l == 0 { x } else { &acts[l - 1] };
            let d_in = h_in.ncols();
            let w_self = spec.view(&self.theta, &format!("w_self_{l}"));
            let b = spec.view(&self.theta, &format!("b_{l}"));
            let z_self = h_in.dot(&w_self);
            let alpha = (spec.variant == Variant::Gat).then(|| self.gat_alpha(ctx, l));

            let mut zn: Array2<f64> = Array2::zeros(z_self.dim());
            let mut m = Array2::zeros((n, d_in));
            for (t, op) in ctx.ops.iter().enumerate() {
                let w_t = spec.view(&self.theta, &format!("w_{}_{l}", TYPE_TAGS[t]));
                op.apply(h_in.view(), &mut m);
                let proj = m.dot(&w_t);
                match &alpha {
                    Some(a) => {
                        for (v, row) in proj.rows().into_iter().enumerate() {
                            zn.row_mut(v).scaled_add(a[(v, t)], &row);
                        }
                    }
                    None => zn += &proj,
                }
            }

            let mut z: Array2<f64>;
            let mut gin = None;
            match spec.variant {
                Variant::Sage => {
                    let half = spec.hidden / 2;
                    z = Array2::zeros((n, spec.hidden));
                    z.slice_mut(s![.., ..half]).assign(&z_self);
                    z.slice_mut(s![.., half..]).assign(&zn);
                    z += &b;
                }
                Variant::Gin => {
                    let eps = spec.scalar(&self.theta, &format!("eps_{l}"));
                    z = &z_self * (1.0 + eps) + &zn;
                    z += &b;
                    let v1 = spec.view(&self.theta, &format!("v1_{l}"));
                    let c1 = spec.view(&self.theta, &format!("c1_{l}"));
                    let v2 = spec.view(&self.theta, &format!("v2_{l}"));
                    let c2 = spec.view(&self.theta, &format!("c2_{l}"));
                    let mut a1 = z.dot(&v1);
                    a1 += &c1;
                    a1.mapv_inplace(|v| v.max(0.0));
                    let mut out = a1.dot(&v2);
                    out += &c2;
                    gin = Some(GinTrace { z_pre: z, self_proj: z_self, a1 });
                    z = out;
                }
                _ => {
                    z = z_self + zn;
                    z += &b;
                }
            }
            if l + 1 < spec.layers {
                acts.push(z.mapv(|v| v.max(0.0)));
            }
            layers.push(LayerTrace { out: z, alpha, gin });
        }

        let head_w = spec.view(&self.theta, "head_w");
        let head_b = spec.scalar(&self.theta, "head_b");
        let logits =
            layers.last().unwrap().out.dot(&head_w).index_axis_move(Axis(1), 0) + head_b;
        Trace { layers, acts, logits }
    }

    pub fn logits(&self, ctx: &GraphContext, x: &Array2<f64>) -> Array1<f64> {
        self.forward(ctx, x).logits
    }

    /// Per-event malicious probability, clamped away from exact 0 and 1.
    pub fn predict(&self, ctx: &GraphContext, x: &Array2<f64>) -> Vec<f64> {
        self.logits(ctx, x)
            .iter()
            .map(|&z| sigmoid(z).clamp(1e-12, 1.0 - 1e-12))
            .collect()
    }

    /// Weighted BCE loss over the mask and its gradient at the logits.
    fn loss_and_dlogits(
        logits: &Array1<f64>,
        y: &[u8],
        mask: &[usize],
        pos_weight: f64,
        scale: f64,
    ) -> (f64, Array1<f64>) {
        let inv = scale / mask.len() as f64;
        let mut loss = 0.0;
        let mut dl = Array1::zeros(logits.len());
        for &v in mask {
            let z = logits[v];
            if y[v] == 1 {
                loss += pos_weight * softplus(-z);
                dl[v] = inv * pos_weight * (sigmoid(z) - 1.0);
            } else {
                loss += softplus(z);
                dl[v] = inv * sigmoid(z);
            }
        }
        (loss * inv, dl)
    }

    pub fn loss(
        &self,
        ctx: &GraphContext,
        x: &Array2<f64>,
        y: &[u8],
        mask: &[usize],
        pos_weight: f64,
        scale: f64,
    ) -> f64 {
        let trace = self.forward(ctx, x);
        Self::loss_and_dlogits(&trace.logits, y, mask, pos_weight, scale).0
    }

    /// Loss plus the full analytic gradient, derived by hand layer by layer.
    pub fn loss_and_grad(
        &self,
        ctx: &GraphContext,
        x: &Array2<f64>,
        y: &[u8],
        mask: &[usize],
        pos_weight: f64,
        scale: f64,
    ) -> (f64, Vec<f64>) {
        let spec = &self.spec;
        let trace = self.forward(ctx, x);
        let (loss, dlogits) = Self::loss_and_dlogits(&trace.logits, y, mask, pos_weight, scale);
        let mut grad = vec![0.0; spec.total];

        if spec.variant == Variant::Mlp {
            // Head sits on top of acts[1]; walk the two hidden layers back.
            let dcol = dlogits.view().insert_axis(Axis(1));
            let w2 = spec.view(&self.theta, "w_2");
            spec.add_mat(&mut grad, "w_2", &trace.acts[1].t().dot(&dcol));
            spec.add_scalar(&mut grad, "b_2", dlogits.sum());
            let mut dh = dcol.dot(&w2.t());
            for l in (0..2usize).rev() {
                let act = &trace.acts[l];
                ndarray::Zip::from(&mut dh).and(act).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                let h_in = if l == 0 { x } else { &trace.acts[l - 1] };
                let w = spec.view(&self.theta, &format!("w_{l}"));
                spec.add_mat(&mut grad, &format!("w_{l}"), &h_in.t().dot(&dh));
                spec.add_vec(&mut grad, &format!("b_{l}"), &dh.sum_axis(Axis(0)));
                if l > 0 {
                    dh = dh.dot(&w.t());
                }
            }
            return (loss, grad);
        }

        let n = x.nrows();
        let dcol = dlogits.view().insert_axis(Axis(1));
        let head_w = spec.view(&self.theta, "head_w");
        spec.add_mat(&mut grad, "head_w", &trace.layers.last().unwrap().out.t().dot(&dcol));
        spec.add_scalar(&mut grad, "head_b", dlogits.sum());
        let mut d_out = dcol.dot(&head_w.t());

        for l in (0..spec.layers).rev() {
            if l + 1 < spec.layers {
                // d_out arrived at relu(out_l); gate it by the activation.
                let act = &trace.acts[l];
                ndarray::Zip::from(&mut d_out).and(act).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let h_in = if l == 0 { x } else { &trace.acts[l - 1] };
            let layer = &trace.layers[l];

            // GIN: peel the inner perceptron to get the gradient at z_pre.
            let dz = if let Some(gt) = &layer.gin {
                let v1 = spec.view(&self.theta, &format!("v1_{l}"));
                let v2 = spec.view(&self.theta, &format!("v2_{l}"));
                spec.add_mat(&mut grad, &format!("v2_{l}"), &gt.a1.t().dot(&d_out));
                spec.add_vec(&mut grad, &format!("c2_{l}"), &d_out.sum_axis(Axis(0)));
                let mut dz1 = d_out.dot(&v2.t());
                ndarray::Zip::from(&mut dz1).and(&gt.a1).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                spec.add_mat(&mut grad, &format!("v1_{l}"), &gt.z_pre.t().dot(&dz1));
                spec.add_vec(&mut grad, &format!("c1_{l}"), &dz1.sum_axis(Axis(0)));
                dz1.dot(&v1.t())
            } else {
                d_out
            };

            spec.add_vec(&mut grad, &format!("b_{l}"), &dz.sum_axis(Axis(0)));

            let half = spec.hidden / 2;
            let (dz_self, dz_nbr) = if spec.variant == Variant::Sage {
                (dz.slice(s![.., ..half]), dz.slice(s![.., half..]))
            } else {
                (dz.view(), dz.view())
            };

            // Self path.
            let w_self = spec.view(&self.theta, &format!("w_self_{l}"));
            let c_self = if spec.variant == Variant::Gin {
                1.0 + spec.scalar(&self.theta, &format!("eps_{l}"))
            } else {
                1.0
            };
            spec.add_mat(
                &mut grad,
                &format!("w_self_{l}"),
                &(h_in.t().dot(&dz_self) * c_self),
            );
            if let Some(gt) = &layer.gin {
                spec.add_scalar(
                    &mut grad,
                    &format!("eps_{l}"),
                    (&gt.self_proj * &dz_self).sum(),
                );
            }
            let mut dh = dz_self.dot(&w_self.t());
            dh *= c_self;

            // Neighbour paths, one per identity type.
            let mut m = Array2::zeros((n, h_in.ncols()));
            let mut dg = [0.0f64; 4];
            let mut q: Option<Array2<f64>> = layer.alpha.as_ref().map(|_| Array2::zeros((n, 4)));
            for (t, op) in ctx.ops.iter().enumerate() {
                let w_t = spec.view(&self.theta, &format!("w_{}_{l}", TYPE_TAGS[t]));
                op.apply(h_in.view(), &mut m);
                let dzt = match &layer.alpha {
                    Some(a) => {
                        // q[v][t] = <(M_t W_t)_v, dz_v> feeds the softmax
                        // gradient; the message gradient scales by alpha.
                        let proj = m.dot(&w_t);
                        let qm = q.as_mut().unwrap();
                        for v in 0..n {
                            qm[(v, t)] = proj.row(v).dot(&dz_nbr.row(v));
                        }
                        let mut scaled = dz_nbr.to_owned();
                        for (v, mut row) in scaled.rows_mut().into_iter().enumerate() {
                            row *= a[(v, t)];
                        }
                        scaled
                    }
                    None => dz_nbr.to_owned(),
                };
                spec.add_mat(&mut grad, &format!("w_{}_{l}", TYPE_TAGS[t]), &m.t().dot(&dzt));
                let dm = dzt.dot(&w_t.t());
                let mut back = Array2::zeros((n, h_in.ncols()));
                op.apply_transpose(dm.view(), &mut back);
                dh += &back;
            }
            if let (Some(a), Some(qm)) = (&layer.alpha, &q) {
                for v in 0..n {
                    let mut mean_q = 0.0;
                    for t in 0..4 {
                        mean_q += a[(v, t)] * qm[(v, t)];
                    }
                    for t in 0..4 {
                        if a[(v, t)] > 0.0 {
                            dg[t] += a[(v, t)] * (qm[(v, t)] - mean_q);
                        }
                    }
                }
                spec.add_vec(&mut grad, &format!("g_{l}"), &Array1::from(dg.to_vec()));
            }
            d_out = dh;
        }
        (loss, grad)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub detector: Detector,
    pub losses: Vec<f64>,
    pub pos_weight: f64,
}

/// Full-batch training with decoupled weight decay (AdamW).
pub fn train(
    config: DetectorConfig,
    ctx: &GraphContext,
    x: &Array2<f64>,
    y: &[u8],
    mask: &[usize],
) -> Result<TrainReport> {
    if mask.is_empty() {
        return Err(Error::Usage("training mask is empty".into()));
    }
    let pos = mask.iter().filter(|&&v| y[v] == 1).count();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Usage(format!(
            "training mask must contain both classes (positives: {pos}, negatives: {neg})"
        )));
    }
    let pos_weight = config.pos_weight.unwrap_or(neg as f64 / pos as f64);

    let mut det = Detector::init(config, x.ncols())?;
    let mut m = vec![0.0; det.spec.total];
    let mut v = vec![0.0; det.spec.total];
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grad) = det.loss_and_grad(ctx, x, y, mask, pos_weight, 1.0);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at epoch {epoch} ({})",
                config.variant.name()
            )));
        }
        losses.push(loss);
        let t = (epoch + 1) as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for i in 0..det.theta.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + config.adam_eps);
            det.theta[i] -=
                config.learning_rate * (step + config.weight_decay * det.theta[i]);
        }
    }
    if det.theta.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!(
            "parameters became non-finite after the final update ({})",
            config.variant.name()
        )));
    }
    Ok(TrainReport { detector: det, losses, pos_weight })
}
