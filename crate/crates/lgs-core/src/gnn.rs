//! Graph-convolution backbones and the transition-weighted label-propagation
//! output head, built as tape programs so the same code serves training
//! (with gradients and dropout) and evaluation (constants, no dropout).

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adam::ParamSet;
use crate::matrix::Matrix;
use crate::sparse::Csr;
use crate::tape::{Tape, Var};

/// Which convolution family the backbone uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Backbone {
    Gcn,
    Cheb,
}

/// Backbone hyperparameters.
#[derive(Clone, Debug)]
pub struct GnnConfig {
    pub backbone: Backbone,
    /// Number of convolution layers (≥ 1).
    pub layers: usize,
    /// Width of every hidden layer.
    pub hidden: usize,
    /// Chebyshev polynomial order K; each layer carries K+1 coefficient
    /// matrices. Ignored by the plain convolution backbone.
    pub cheb_k: usize,
    /// Probability of zeroing an input entry during training.
    pub dropout: f64,
    /// Number of weighted-cosine similarity heads.
    pub sim_heads: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            backbone: Backbone::Gcn,
            layers: 2,
            hidden: 64,
            cheb_k: 2,
            dropout: 0.5,
            sim_heads: 4,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err(String::from("layers must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(String::from("hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.sim_heads == 0 {
            return Err(String::from("at least one similarity head is required"));
        }
        Ok(())
    }
}

/// All trainable tensors of one model: backbone weights, similarity heads
/// over raw features and over embeddings, and the class transition matrix.
pub struct LgsModel {
    pub params: ParamSet,
    pub cfg: GnnConfig,
    /// Per layer, the parameter indices of its coefficient matrices (one for
    /// the plain convolution, K+1 Chebyshev taps otherwise).
    pub layer_weights: Vec<Vec<usize>>,
    pub feature_heads: Vec<usize>,
    pub embedding_heads: Vec<usize>,
    pub transition: usize,
    pub num_classes: usize,
}

/// Glorot-uniform sample: U(−a, a) with a = sqrt(6/(fan_in+fan_out)).
fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = libm::sqrt(6.0 / (rows + cols) as f64);
    let data: Vec<f64> =
        (0..rows * cols).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * limit).collect();
    Matrix::from_vec(rows, cols, data)
}

impl LgsModel {
    /// Build all parameters. Backbone weights are Glorot-uniform, head
    /// weight vectors start at all ones (plain cosine similarity), and the
    /// transition matrix starts at zero — it is re-initialized from data
    /// after the warm-up phase.
    pub fn new(
        cfg: GnnConfig,
        in_features: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, String> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let taps = match cfg.backbone {
            Backbone::Gcn => 1,
            Backbone::Cheb => cfg.cheb_k + 1,
        };
        let mut layer_weights = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { in_features } else { cfg.hidden };
            let d_out = if l + 1 == cfg.layers { num_classes } else { cfg.hidden };
            let mut ws = Vec::with_capacity(taps);
            for k in 0..taps {
                let name = alloc::format!("layer{l}.theta{k}");
                ws.push(params.add(&name, glorot(rng, d_in, d_out), true));
            }
            layer_weights.push(ws);
        }
        let embed_dim = if cfg.layers == 1 { num_classes } else { cfg.hidden };
        let mut feature_heads = Vec::with_capacity(cfg.sim_heads);
        let mut embedding_heads = Vec::with_capacity(cfg.sim_heads);
        for h in 0..cfg.sim_heads {
            let name = alloc::format!("feature_head{h}");
            feature_heads.push(params.add(&name, Matrix::filled(1, in_features, 1.0), false));
        }
        for h in 0..cfg.sim_heads {
            let name = alloc::format!("embedding_head{h}");
            embedding_heads.push(params.add(&name, Matrix::filled(1, embed_dim, 1.0), false));
        }
        let transition =
            params.add("transition", Matrix::zeros(num_classes, num_classes), false);
        Ok(LgsModel {
            params,
            cfg,
            layer_weights,
            feature_heads,
            embedding_heads,
            transition,
            num_classes,
        })
    }

    /// Parameter indices of the backbone weights only (the set trained
    /// during warm-up and subject to weight decay).
    pub fn backbone_params(&self) -> Vec<usize> {
        self.layer_weights.iter().flatten().copied().collect()
    }

    /// Every parameter index.
    pub fn all_params(&self) -> Vec<usize> {
        (0..self.params.len()).collect()
    }
}

/// A propagation operator as seen by a forward pass: either a constant
/// sparse matrix (the normalized raw graph) or a dense tape variable (the
/// normalized refined graph, carrying gradients).
pub enum AdjacencyOp {
    Sparse(Rc<Csr>),
    Dense(Var),
}

/// Input features: sparse constant or a dense tape variable.
pub enum FeatureRef {
    Sparse(Rc<Csr>),
    Dense(Var),
}

/// Per-call forward settings.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
    /// Spectral bound used by the Chebyshev operator.
    pub lambda_max: f64,
}

fn apply_operator(tape: &mut Tape, op: &AdjacencyOp, h: Var) -> Var {
    match op {
        AdjacencyOp::Sparse(csr) => tape.spmm(Rc::clone(csr), h, None),
        AdjacencyOp::Dense(v) => tape.matmul(*v, h),
    }
}

/// T_k(op)·v via the three-term recurrence (k operator applications).
fn chebyshev_apply(tape: &mut Tape, op: &AdjacencyOp, v: Var, k: usize) -> Var {
    if k == 0 {
        return v;
    }
    let mut prev2 = v;
    let mut prev1 = apply_operator(tape, op, v);
    for _ in 2..=k {
        let m = apply_operator(tape, op, prev1);
        let cur = tape.affine_combo(&[(m, 2.0), (prev2, -1.0)], 0.0);
        prev2 = prev1;
        prev1 = cur;
    }
    prev1
}

/// Inverted-dropout mask: each entry is zeroed with probability `rate`,
/// survivors are scaled by 1/(1−rate).
fn draw_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Rc<Vec<f64>> {
    let keep = 1.0 - rate;
    let inv = 1.0 / keep;
    Rc::new((0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { inv }).collect())
}

/// One layer's input after dropout: dense inputs get a dropout node, sparse
/// inputs carry a per-nonzero mask applied inside each product.
enum LayerInput {
    Dense(Var),
    Sparse(Rc<Csr>, Option<Rc<Vec<f64>>>),
}

impl LayerInput {
    fn times_weight(&self, tape: &mut Tape, w: Var) -> Var {
        match self {
            LayerInput::Dense(v) => tape.matmul(*v, w),
            LayerInput::Sparse(csr, mask) => tape.spmm(Rc::clone(csr), w, mask.clone()),
        }
    }
}

/// Run the backbone over an already-normalized operator. Returns the
/// embeddings Z (the last hidden layer's activations; with a single layer,
/// the output scores themselves) and the pre-softmax class scores.
pub fn backbone_forward(
    tape: &mut Tape,
    model: &LgsModel,
    vars: &ModelVars,
    op: &AdjacencyOp,
    features: &FeatureRef,
    ctx: &mut ForwardCtx,
) -> (Var, Var) {
    let cfg = &model.cfg;
    let mut dense_h: Option<Var> = None;
    let mut z: Option<Var> = None;
    for (l, weights) in model.layer_weights.iter().enumerate() {
        // Dropout on the layer input, training only. One mask per layer,
        // shared across Chebyshev taps.
        let input = match dense_h {
            Some(h) => {
                let h = if ctx.train && cfg.dropout > 0.0 {
                    let len = tape.value(h).rows() * tape.value(h).cols();
                    let mask = draw_mask(ctx.rng, len, cfg.dropout);
                    tape.dropout(h, mask)
                } else {
                    h
                };
                LayerInput::Dense(h)
            }
            None => match features {
                FeatureRef::Dense(x) => {
                    let x = if ctx.train && cfg.dropout > 0.0 {
                        let len = tape.value(*x).rows() * tape.value(*x).cols();
                        let mask = draw_mask(ctx.rng, len, cfg.dropout);
                        tape.dropout(*x, mask)
                    } else {
                        *x
                    };
                    LayerInput::Dense(x)
                }
                FeatureRef::Sparse(csr) => {
                    let mask = if ctx.train && cfg.dropout > 0.0 {
                        Some(draw_mask(ctx.rng, csr.nnz(), cfg.dropout))
                    } else {
                        None
                    };
                    LayerInput::Sparse(Rc::clone(csr), mask)
                }
            },
        };
        let mut out = match cfg.backbone {
            Backbone::Gcn => {
                let w = vars.var(weights[0]);
                let hw = input.times_weight(tape, w);
                apply_operator(tape, op, hw)
            }
            Backbone::Cheb => {
                let mut terms: Vec<(Var, f64)> = Vec::with_capacity(weights.len());
                for (k, &widx) in weights.iter().enumerate() {
                    let w = vars.var(widx);
                    let pk = input.times_weight(tape, w);
                    let tk = chebyshev_apply(tape, op, pk, k);
                    terms.push((tk, 1.0));
                }
                if terms.len() == 1 {
                    terms[0].0
                } else {
                    tape.affine_combo(&terms, 0.0)
                }
            }
        };
        if l + 1 < cfg.layers {
            out = tape.relu(out);
            if l + 2 == cfg.layers {
                z = Some(out);
            }
        } else if cfg.layers == 1 {
            z = Some(out);
        }
        dense_h = Some(out);
    }
    let scores = dense_h.expect("at least one layer");
    (z.expect("embedding layer recorded"), scores)
}

/// Tape handles for every model parameter, registered once per tape.
pub struct ModelVars {
    pub by_index: Vec<Var>,
}

impl ModelVars {
    /// Register every parameter as a gradient-carrying leaf (training) or a
    /// constant (evaluation).
    pub fn register(tape: &mut Tape, model: &LgsModel, trainable: bool) -> Self {
        let mut by_index = Vec::with_capacity(model.params.len());
        for i in 0..model.params.len() {
            let value = model.params.value(i);
            let v = if trainable {
                tape.param_shared(value)
            } else {
                tape.constant_shared(value)
            };
            by_index.push(v);
        }
        ModelVars { by_index }
    }

    pub fn var(&self, idx: usize) -> Var {
        self.by_index[idx]
    }
}

/// A raw (unnormalized) adjacency handed to [`gnn_apply`].
pub enum AdjacencyRef {
    /// The dataset's 0/1 zero-diagonal adjacency.
    Sparse(Rc<Csr>),
    /// A dense adjacency on the tape (the refined graph before
    /// normalization; negative entries are clamped by the operator).
    Dense(Var),
}

/// Normalize a raw adjacency into the backbone's propagation operator —
/// applied exactly once per forward pass.
pub fn normalize_adjacency(
    tape: &mut Tape,
    backbone: Backbone,
    adj: &AdjacencyRef,
    lambda_max: f64,
) -> AdjacencyOp {
    match (adj, backbone) {
        (AdjacencyRef::Sparse(csr), Backbone::Gcn) => {
            AdjacencyOp::Sparse(Rc::new(crate::graph::gcn_normalize_csr(csr)))
        }
        (AdjacencyRef::Sparse(csr), Backbone::Cheb) => {
            AdjacencyOp::Sparse(Rc::new(crate::graph::scaled_laplacian_csr(csr, lambda_max)))
        }
        (AdjacencyRef::Dense(v), Backbone::Gcn) => AdjacencyOp::Dense(tape.gcn_norm(*v)),
        (AdjacencyRef::Dense(v), Backbone::Cheb) => {
            AdjacencyOp::Dense(tape.cheb_operator(*v, lambda_max))
        }
    }
}

/// Transition-weighted label propagation on top of the class scores:
/// Ŷ = softmax(B + Ã·softmax(B)·P). With P = 0 this is exactly softmax(B).
pub fn label_prop_output(tape: &mut Tape, scores: Var, op: &AdjacencyOp, p: Var) -> Var {
    let y0 = tape.row_softmax(scores);
    let prop = apply_operator(tape, op, y0);
    let pp = tape.matmul(prop, p);
    let biased = tape.add(scores, pp);
    tape.row_softmax(biased)
}

/// Output of one full forward pass.
pub struct GnnOutputs {
    /// Embeddings from the last hidden layer.
    pub z: Var,
    /// Pre-softmax class scores.
    pub scores: Var,
    /// Final prediction distribution after label propagation.
    pub y_hat: Var,
}

/// Full forward pass: normalize the raw adjacency once, run the backbone,
/// and propagate labels through the same operator weighted by P.
pub fn gnn_apply(
    tape: &mut Tape,
    model: &LgsModel,
    vars: &ModelVars,
    adj: &AdjacencyRef,
    features: &FeatureRef,
    p: Var,
    ctx: &mut ForwardCtx,
) -> GnnOutputs {
    let op = normalize_adjacency(tape, model.cfg.backbone, adj, ctx.lambda_max);
    let (z, scores) = backbone_forward(tape, model, vars, &op, features, ctx);
    let y_hat = label_prop_output(tape, scores, &op, p);
    GnnOutputs { z, scores, y_hat }
}
