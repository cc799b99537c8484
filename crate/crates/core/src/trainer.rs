//! Small DAG-cell networks trained with SGD and momentum.
//!
//! Macro network: a linear stem projects the input to `hidden_width`
//! features, then `macro_depth` cells are stacked, then a linear head
//! produces class logits. Each cell reads the previous and
//! previous-previous outputs (both equal to the stem output for the first
//! cell). An intermediate node is the elementwise sum of its two edge
//! outputs; the cell output is a learned linear merge of the concatenated
//! intermediate nodes. Every cell owns its own parameters.
//!
//! Parameters live in one flat vector so optimiser updates, anchoring and
//! finite-difference checks work on plain slices.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::metrics::{softmax_in_place, LabelVector, PredictionMatrix};
use crate::space::{CellOp, CellSpaceSpec, Edge, Genome};

/// Salt separating the anchor-point stream from the initialisation stream.
const ANCHOR_SALT: u64 = 0xA5A5_0F0F_1234_5678;
const SHUFFLE_SALT: u64 = 0x5EED_5EED_0000_0001;

/// Anchored-ensemble regularisation toward a fresh initialisation sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub lambda: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { lambda: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Weight decay on weight matrices; ignored when anchoring is on.
    pub l2: f64,
    pub anchored: Option<AnchorConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, learning_rate: 0.05, momentum: 0.9, l2: 3e-4, anchored: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        if !(self.l2 >= 0.0) || self.anchored.as_ref().is_some_and(|a| !(a.lambda >= 0.0)) {
            return Err(Error::Config(format!("regularisation strengths must be >= 0 in {self:?}")));
        }
        Ok(())
    }

    /// Weight decay in effect (anchored training turns it off).
    pub fn effective_l2(&self) -> f64 {
        if self.anchored.is_some() {
            0.0
        } else {
            self.l2
        }
    }
}

/// One parameter tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Biases are zero-initialised and never anchored or decayed.
    pub is_bias: bool,
    pub fan_in: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Initialisation variance (`1 / fan_in` for weights, 0 for biases).
    pub fn init_variance(&self) -> f64 {
        if self.is_bias {
            0.0
        } else {
            1.0 / self.fan_in as f64
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct CellLayout {
    edges: Vec<[Option<Affine>; 2]>,
    merge: Affine,
}

/// A decoded cell genome bound to input and output sizes.
#[derive(Clone, Debug)]
pub struct Network {
    spec: CellSpaceSpec,
    nodes: Vec<[Edge; 2]>,
    input_dim: usize,
    num_classes: usize,
    tensors: Vec<TensorInfo>,
    stem: Affine,
    cells: Vec<CellLayout>,
    head: Affine,
    num_params: usize,
}

/// Regularisation terms added to the mean cross-entropy.
#[derive(Clone, Debug, Default)]
pub struct Regularizer {
    /// Penalty `l2 / 2 * ||W||^2` over weight matrices.
    pub l2: f64,
    pub anchor: Option<AnchorTerm>,
}

/// `lambda / n * sum_i gamma_i (theta_i - anchor_i)^2`, with
/// `gamma_i = 1 / (2 sigma_i^2)` and `gamma_i = 0` for biases.
#[derive(Clone, Debug)]
pub struct AnchorTerm {
    pub lambda: f64,
    pub dataset_size: usize,
    pub point: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl AnchorTerm {
    pub fn value(&self, params: &[f64]) -> f64 {
        let s: f64 = params.iter().zip(&self.point).zip(&self.gamma).map(|((t, a), g)| g * (t - a) * (t - a)).sum();
        self.lambda / self.dataset_size as f64 * s
    }
}

struct CellCache {
    /// Node values: two inputs followed by the intermediate nodes.
    nodes: Vec<Array2<f64>>,
    /// Post-activation edge outputs (kept for the activation derivative).
    edge_out: Vec<[Array2<f64>; 2]>,
    concat: Array2<f64>,
}

struct Cache {
    /// `outs[0]` is the stem output, `outs[c + 1]` the output of cell `c`.
    outs: Vec<Array2<f64>>,
    cells: Vec<CellCache>,
    logits: Array2<f64>,
}

fn affine(input: &ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = input.dot(&w.t()).as_standard_layout().into_owned();
    out += &b;
    out
}

impl Network {
    pub fn new(spec: &CellSpaceSpec, genome: &Genome, input_dim: usize, num_classes: usize) -> Result<Self> {
        spec.validate()?;
        let Genome::Cell(nodes) = genome else {
            return Err(Error::InvalidGenome { genome: genome.to_string(), reason: "expected a cell genome".into() });
        };
        if nodes.len() != spec.num_intermediate_nodes {
            return Err(Error::InvalidGenome {
                genome: genome.to_string(),
                reason: format!("{} nodes for a {}-node space", nodes.len(), spec.num_intermediate_nodes),
            });
        }
        for (k, pair) in nodes.iter().enumerate() {
            if pair.iter().any(|e| e.source >= k + 2 || e.op >= spec.op_set.len()) {
                return Err(Error::InvalidGenome { genome: genome.to_string(), reason: "edge out of range".into() });
            }
        }
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument("network needs inputs and at least 2 classes".into()));
        }
        let h = spec.hidden_width;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize, fan_in: usize| {
            let w = tensors.len();
            tensors.push(TensorInfo { name: format!("{name}.w"), offset, rows, cols, is_bias: false, fan_in });
            offset += rows * cols;
            tensors.push(TensorInfo { name: format!("{name}.b"), offset, rows: 1, cols: rows, is_bias: true, fan_in });
            offset += rows;
            Affine { w, b: w + 1 }
        };
        let stem = add("stem".into(), h, input_dim, input_dim);
        let mut cells = Vec::with_capacity(spec.macro_depth);
        for c in 0..spec.macro_depth {
            let edges = nodes
                .iter()
                .enumerate()
                .map(|(k, pair)| {
                    let mut slot = |e: usize| {
                        spec.op_set[pair[e].op]
                            .has_params()
                            .then(|| add(format!("cell{c}.node{}.edge{e}", k + 2), h, h, h))
                    };
                    [slot(0), slot(1)]
                })
                .collect();
            let n_int = nodes.len();
            let merge = add(format!("cell{c}.merge"), h, h * n_int, h * n_int);
            cells.push(CellLayout { edges, merge });
        }
        let head = add("head".into(), num_classes, h, h);
        Ok(Self {
            spec: spec.clone(),
            nodes: nodes.clone(),
            input_dim,
            num_classes,
            tensors,
            stem,
            cells,
            head,
            num_params: offset,
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn mat<'a>(&self, p: &'a [f64], t: usize) -> ArrayView2<'a, f64> {
        let ti = &self.tensors[t];
        ArrayView2::from_shape((ti.rows, ti.cols), &p[ti.range()]).expect("tensor shape")
    }

    fn vec<'a>(&self, p: &'a [f64], t: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.tensors[t].range()])
    }

    fn mat_mut<'a>(&self, g: &'a mut [f64], t: usize) -> ArrayViewMut2<'a, f64> {
        let ti = &self.tensors[t];
        ArrayViewMut2::from_shape((ti.rows, ti.cols), &mut g[ti.range()]).expect("tensor shape")
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn init_params(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params];
        for t in &self.tensors {
            if t.is_bias {
                continue;
            }
            let sd = t.init_variance().sqrt();
            for v in &mut p[t.range()] {
                let z: f64 = StandardNormal.sample(rng);
                *v = sd * z;
            }
        }
        p
    }

    /// Per-parameter anchoring precision `1 / (2 sigma^2)`; 0 for biases.
    pub fn anchor_gamma(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params];
        for t in self.tensors.iter().filter(|t| !t.is_bias) {
            g[t.range()].fill(1.0 / (2.0 * t.init_variance()));
        }
        g
    }

    fn check_input(&self, params: &[f64], x: &ArrayView2<'_, f64>) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::ShapeMismatch(format!("{} parameters, expected {}", params.len(), self.num_params)));
        }
        if x.ncols() != self.input_dim || x.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("input has {} features, expected {}", x.ncols(), self.input_dim)));
        }
        Ok(())
    }

    fn forward(&self, params: &[f64], x: &ArrayView2<'_, f64>) -> Cache {
        let stem = affine(x, self.mat(params, self.stem.w), self.vec(params, self.stem.b));
        let mut outs = vec![stem];
        let mut cells = Vec::with_capacity(self.cells.len());
        for (c, layout) in self.cells.iter().enumerate() {
            let s0 = outs[c].clone();
            let s1 = if c == 0 { outs[0].clone() } else { outs[c - 1].clone() };
            let mut nodes = vec![s0, s1];
            let mut edge_out = Vec::with_capacity(self.nodes.len());
            for (k, pair) in self.nodes.iter().enumerate() {
                let outs_k: [Array2<f64>; 2] = std::array::from_fn(|e| {
                    let input = nodes[pair[e].source].view();
                    let op = self.spec.op_set[pair[e].op];
                    match (op, layout.edges[k][e]) {
                        (CellOp::Identity, _) => input.to_owned(),
                        (CellOp::ScaleHalf, _) => &input * 0.5,
                        (CellOp::Linear, Some(a)) => affine(&input, self.mat(params, a.w), self.vec(params, a.b)),
                        (CellOp::LinearRelu, Some(a)) => {
                            affine(&input, self.mat(params, a.w), self.vec(params, a.b)).mapv_into(|v| v.max(0.0))
                        }
                        (CellOp::LinearTanh, Some(a)) => {
                            affine(&input, self.mat(params, a.w), self.vec(params, a.b)).mapv_into(f64::tanh)
                        }
                        _ => unreachable!("parametric op without parameters"),
                    }
                });
                nodes.push(&outs_k[0] + &outs_k[1]);
                edge_out.push(outs_k);
            }
            let views: Vec<ArrayView2<'_, f64>> = nodes[2..].iter().map(|n| n.view()).collect();
            let concat = ndarray::concatenate(Axis(1), &views).expect("equal batch sizes");
            let out = affine(&concat.view(), self.mat(params, layout.merge.w), self.vec(params, layout.merge.b));
            outs.push(out);
            cells.push(CellCache { nodes, edge_out, concat });
        }
        let last = outs.last().expect("stem output").view();
        let logits = affine(&last, self.mat(params, self.head.w), self.vec(params, self.head.b));
        Cache { outs, cells, logits }
    }

    /// Pre-softmax outputs for every row of `x`.
    pub fn logits(&self, params: &[f64], x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(params, &x)?;
        Ok(self.forward(params, &x).logits)
    }

    /// Class probabilities for every row of `x`.
    pub fn predict(&self, params: &[f64], x: ArrayView2<'_, f64>) -> Result<PredictionMatrix> {
        let logits = self.logits(params, x)?;
        let (n, c) = logits.dim();
        PredictionMatrix::from_logits(n, c, logits.as_slice().expect("standard layout"))
    }

    /// Mean cross-entropy over the batch plus regularisation, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        reg: &Regularizer,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(params, &x)?;
        if labels.len() != x.nrows() || labels.iter().any(|&y| y >= self.num_classes) {
            return Err(Error::ShapeMismatch("labels do not match the batch".into()));
        }
        let cache = self.forward(params, &x);
        let b = x.nrows() as f64;
        let mut grad = vec![0.0; self.num_params];

        // softmax cross-entropy
        let mut d = cache.logits.clone();
        let mut loss = 0.0;
        for (mut row, &y) in d.axis_iter_mut(Axis(0)).zip(labels) {
            let slice = row.as_slice_mut().expect("contiguous row");
            softmax_in_place(slice);
            loss -= slice[y].max(f64::MIN_POSITIVE).ln();
            slice[y] -= 1.0;
        }
        loss /= b;
        d /= b;

        let mut d_out = vec![Array2::<f64>::zeros(cache.outs[0].raw_dim()); cache.outs.len()];
        let last = cache.outs.len() - 1;
        d_out[last] = self.affine_backward(params, &mut grad, self.head, &cache.outs[last].view(), &d);

        for (c, layout) in self.cells.iter().enumerate().rev() {
            let cc = &cache.cells[c];
            let d_cell = std::mem::replace(&mut d_out[c + 1], Array2::zeros((0, 0)));
            let d_concat = self.affine_backward(params, &mut grad, layout.merge, &cc.concat.view(), &d_cell);
            let h = self.spec.hidden_width;
            let mut d_nodes: Vec<Array2<f64>> = vec![Array2::zeros(cc.nodes[0].raw_dim()); cc.nodes.len()];
            for k in 0..self.nodes.len() {
                d_nodes[k + 2] += &d_concat.slice(ndarray::s![.., k * h..(k + 1) * h]);
            }
            for (k, pair) in self.nodes.iter().enumerate().rev() {
                let d_node = d_nodes[k + 2].clone();
                for (e, edge) in pair.iter().enumerate() {
                    let src = edge.source;
                    let op = self.spec.op_set[edge.op];
                    let input = cc.nodes[src].view();
                    let d_in = match (op, layout.edges[k][e]) {
                        (CellOp::Identity, _) => d_node.clone(),
                        (CellOp::ScaleHalf, _) => &d_node * 0.5,
                        (CellOp::Linear, Some(a)) => self.affine_backward(params, &mut grad, a, &input, &d_node),
                        (CellOp::LinearRelu, Some(a)) => {
                            let mut d_pre = d_node.clone();
                            d_pre.zip_mut_with(&cc.edge_out[k][e], |g, &o| {
                                if o <= 0.0 {
                                    *g = 0.0;
                                }
                            });
                            self.affine_backward(params, &mut grad, a, &input, &d_pre)
                        }
                        (CellOp::LinearTanh, Some(a)) => {
                            let mut d_pre = d_node.clone();
                            d_pre.zip_mut_with(&cc.edge_out[k][e], |g, &o| *g *= 1.0 - o * o);
                            self.affine_backward(params, &mut grad, a, &input, &d_pre)
                        }
                        _ => unreachable!("parametric op without parameters"),
                    };
                    d_nodes[src] += &d_in;
                }
            }
            // node 0 is the previous output, node 1 the previous-previous
            d_out[c] += &d_nodes[0];
            let pp = if c == 0 { 0 } else { c - 1 };
            d_out[pp] += &d_nodes[1];
        }
        self.affine_backward(params, &mut grad, self.stem, &x, &d_out[0]);

        if reg.l2 > 0.0 {
            for t in self.tensors.iter().filter(|t| !t.is_bias) {
                for i in t.range() {
                    loss += 0.5 * reg.l2 * params[i] * params[i];
                    grad[i] += reg.l2 * params[i];
                }
            }
        }
        if let Some(anchor) = &reg.anchor {
            loss += anchor.value(params);
            let scale = 2.0 * anchor.lambda / anchor.dataset_size as f64;
            for i in 0..self.num_params {
                grad[i] += scale * anchor.gamma[i] * (params[i] - anchor.point[i]);
            }
        }
        Ok((loss, grad))
    }

    /// Accumulates weight and bias gradients of `out = in W^T + b` and
    /// returns the gradient with respect to `in`.
    fn affine_backward(
        &self,
        params: &[f64],
        grad: &mut [f64],
        a: Affine,
        input: &ArrayView2<'_, f64>,
        d_out: &Array2<f64>,
    ) -> Array2<f64> {
        {
            let mut gw = self.mat_mut(grad, a.w);
            general_mat_mul(1.0, &d_out.t(), input, 1.0, &mut gw);
        }
        let db: Array1<f64> = d_out.sum_axis(Axis(0));
        for (g, v) in grad[self.tensors[a.b].range()].iter_mut().zip(db.iter()) {
            *g += v;
        }
        d_out.dot(&self.mat(params, a.w))
    }
}

/// Parameters after training plus the per-epoch training loss.
#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub network: Network,
    pub params: Vec<f64>,
    pub initial_params: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl TrainedNetwork {
    pub fn predict(&self, data: &ToyDataset) -> Result<PredictionMatrix> {
        self.network.predict(&self.params, data.features.view())
    }
}

/// Builds the regulariser used by [`train`] for a given seed.
pub fn regularizer_for(network: &Network, config: &TrainConfig, dataset_size: usize, seed: u64) -> Regularizer {
    let anchor = config.anchored.as_ref().map(|a| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ANCHOR_SALT);
        AnchorTerm {
            lambda: a.lambda,
            dataset_size,
            point: network.init_params(&mut rng),
            gamma: network.anchor_gamma(),
        }
    });
    Regularizer { l2: config.effective_l2(), anchor }
}

/// Trains `genome` on a clean training split with minibatch SGD and
/// momentum. Deterministic in `seed`.
pub fn train(
    spec: &CellSpaceSpec,
    genome: &Genome,
    dataset: &ToyDataset,
    num_classes: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedNetwork> {
    config.validate()?;
    if dataset.severity != 0 {
        return Err(Error::Dataset("training data must be uncorrupted".into()));
    }
    let network = Network::new(spec, genome, dataset.dim(), num_classes)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_params = network.init_params(&mut init_rng);
    let mut params = initial_params.clone();
    let reg = regularizer_for(&network, config, dataset.len(), seed);
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(SHUFFLE_SALT));
    let labels = dataset.labels.as_slice();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = network.loss_and_grad(&params, x.view(), &y, &reg)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss, config: format!("{config:?}") });
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainedNetwork { network, params, initial_params, epoch_losses })
}

/// Full-dataset objective (mean cross-entropy plus regularisation).
pub fn objective(network: &Network, params: &[f64], data: &ToyDataset, reg: &Regularizer) -> Result<f64> {
    Ok(network.loss_and_grad(params, data.features.view(), data.labels.as_slice(), reg)?.0)
}

/// Labels are needed next to predictions in most callers.
pub fn labels_of(data: &ToyDataset) -> &LabelVector {
    &data.labels
}
