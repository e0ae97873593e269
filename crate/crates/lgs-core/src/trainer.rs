//! Two-phase training: backbone warm-up on the raw graph, then a jointly
//! optimized phase where every epoch unrolls T structure-refinement steps
//! inside one differentiable program — classification losses from every
//! refined graph plus the transition-matrix regularizer, stepped by Adam,
//! with validation-based model selection.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::gnn::{
    backbone_forward, gnn_apply, label_prop_output, AdjacencyOp, AdjacencyRef, Backbone,
    FeatureRef, ForwardCtx, GnnConfig, LgsModel, ModelVars,
};
use crate::graph::{
    accuracy, estimate_lambda_max, gcn_normalize_csr, scaled_laplacian_csr, GraphDataset,
    SplitSpec,
};
use crate::matrix::Matrix;
use crate::structure::{blend_pseudo_labels, init_transition, similarity, transition_penalty};
use crate::tape::{Tape, Var};

/// Smoothing added to every transition-count cell before balancing.
pub const SINKHORN_DELTA: f64 = 1e-6;
/// Doubly-stochastic residual the balancer aims for.
pub const SINKHORN_TOL: f64 = 1e-6;
/// Maximum Sinkhorn-Knopp row+column passes.
pub const SINKHORN_MAX_ITERS: usize = 50;

/// How the transition-matrix regularizer measures row sums.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PhiMode {
    /// Σ_i |Σ_j P_ij| on the matrix itself.
    Literal,
    /// The same penalty applied to the deviation from the post-warm-up
    /// initialization, so a doubly stochastic start incurs zero cost.
    Deviation,
}

impl core::str::FromStr for PhiMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "literal" => Ok(PhiMode::Literal),
            "deviation" => Ok(PhiMode::Deviation),
            other => Err(format!("unknown phi mode {other:?} (expected literal or deviation)")),
        }
    }
}

/// Optimization and structure-learning hyperparameters for one run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Epochs training the backbone alone on the raw graph.
    pub warmup_epochs: usize,
    /// Epochs of joint structure/classifier training.
    pub joint_epochs: usize,
    /// Refinement steps unrolled inside each joint epoch.
    pub t: usize,
    /// Blend weight of the raw adjacency in every refined graph.
    pub alpha: f64,
    /// Blend weight of the feature-similarity graph.
    pub beta: f64,
    /// Within the refinement term, the share of the edge-probability signal
    /// versus plain similarity.
    pub r: f64,
    /// Sparsification threshold on refined edge weights.
    pub eps: f64,
    pub learning_rate: f64,
    /// L2 penalty folded into the gradient, backbone weights only.
    pub weight_decay: f64,
    pub seed: u64,
    /// Block gradients from flowing through pseudo-labels into the
    /// edge-probability term.
    pub detach_pseudo_labels: bool,
    pub phi_mode: PhiMode,
    /// Evaluate accuracies every this many epochs (the last epoch of each
    /// phase is always evaluated).
    pub eval_every: usize,
    /// Spectral bound for the Chebyshev operator; estimated from the raw
    /// graph when absent. The same bound is reused for refined graphs.
    pub lambda_max: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 400,
            joint_epochs: 1600,
            t: 3,
            alpha: 0.8,
            beta: 0.1,
            r: 0.5,
            eps: 0.0,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            seed: 0,
            detach_pseudo_labels: false,
            phi_mode: PhiMode::Literal,
            eval_every: 1,
            lambda_max: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t == 0 {
            return Err(String::from("t (refinement steps) must be at least 1"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(format!("alpha ({}) and beta ({}) must be non-negative", self.alpha, self.beta));
        }
        if self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(format!("alpha + beta = {} exceeds 1", self.alpha + self.beta));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(format!("r {} outside [0, 1]", self.r));
        }
        if self.eps < 0.0 {
            return Err(format!("eps {} must be non-negative", self.eps));
        }
        if self.learning_rate <= 0.0 {
            return Err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.weight_decay < 0.0 {
            return Err(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.eval_every == 0 {
            return Err(String::from("eval_every must be at least 1"));
        }
        if let Some(l) = self.lambda_max {
            if l <= 0.0 {
                return Err(format!("lambda_max {l} must be positive"));
            }
        }
        Ok(())
    }
}

/// Which phase a failure occurred in.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrainPhase {
    Warmup,
    Joint,
}

impl core::fmt::Display for TrainPhase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainPhase::Warmup => f.write_str("warm-up"),
            TrainPhase::Joint => f.write_str("joint"),
        }
    }
}

/// Numeric abort: some tensor stopped being finite.
#[derive(Clone, Debug)]
pub struct TrainError {
    pub phase: TrainPhase,
    /// Global epoch index (warm-up epochs count first).
    pub epoch: usize,
    /// Description of the offending tensor.
    pub tensor: String,
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "non-finite value in {} during {} epoch {}", self.tensor, self.phase, self.epoch)
    }
}

/// Metrics recorded at every evaluated epoch.
#[derive(Clone, Debug)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Transition-regularizer value at this epoch (0 during warm-up).
    pub phi_value: f64,
    /// Doubly-stochastic residual of the transition matrix at its
    /// initialization (constant per run, 0 during warm-up).
    pub sinkhorn_residual_at_init: f64,
}

/// Result of one full training run.
pub struct TrainOutcome {
    pub traces: Vec<EpochTrace>,
    /// Epoch whose parameters were selected (highest validation accuracy,
    /// earliest epoch on ties).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// Test accuracy at the selected epoch.
    pub test_accuracy: f64,
    /// Prediction probabilities (n × classes) at the selected epoch.
    pub predictions: Matrix,
    pub sinkhorn_residual: f64,
    pub sinkhorn_iterations: usize,
}

/// Immutable per-run tensors shared by every epoch.
pub struct RunTensors {
    /// Normalized sparse operator of the raw graph.
    pub raw_op: Rc<crate::sparse::Csr>,
    /// Dense 0/1 adjacency, present only when the joint phase needs the
    /// anchor term.
    pub dense_adjacency: Option<Rc<Matrix>>,
    pub features_sparse: Rc<crate::sparse::Csr>,
    pub features_dense: Rc<Matrix>,
    pub labels: Rc<Vec<usize>>,
    pub train_idx: Rc<Vec<usize>>,
    pub train_mask: Rc<Vec<bool>>,
    pub one_hot: Rc<Matrix>,
    /// Transition initialization, set after warm-up (deviation-mode
    /// reference).
    pub transition_init: Option<Rc<Matrix>>,
    pub lambda_max: f64,
}

impl RunTensors {
    pub fn new(
        dataset: &GraphDataset,
        split: &SplitSpec,
        backbone: Backbone,
        lambda_max: Option<f64>,
        need_dense_adjacency: bool,
    ) -> Self {
        let lambda_max = match backbone {
            Backbone::Gcn => lambda_max.unwrap_or(2.0),
            Backbone::Cheb => lambda_max
                .unwrap_or_else(|| estimate_lambda_max(&dataset.adjacency, 1e-9, 10_000)),
        };
        let raw_op = match backbone {
            Backbone::Gcn => Rc::new(gcn_normalize_csr(&dataset.adjacency)),
            Backbone::Cheb => Rc::new(scaled_laplacian_csr(&dataset.adjacency, lambda_max)),
        };
        let n = dataset.num_nodes();
        RunTensors {
            raw_op,
            dense_adjacency: need_dense_adjacency.then(|| Rc::new(dataset.adjacency_dense())),
            features_sparse: Rc::clone(&dataset.features_sparse),
            features_dense: Rc::clone(&dataset.features),
            labels: Rc::new(dataset.labels.clone()),
            train_idx: Rc::new(split.train.clone()),
            train_mask: Rc::new(split.train_mask(n)),
            one_hot: Rc::new(dataset.one_hot_labels()),
            transition_init: None,
            lambda_max,
        }
    }
}

/// Tape handles produced by one unrolled joint epoch.
pub struct JointForward {
    /// The full scalar loss.
    pub loss: Var,
    /// Classification loss of the raw-graph pass.
    pub ce_warm: Var,
    /// Classification loss of each refinement step, in order.
    pub ce_steps: Vec<Var>,
    /// Transition regularizer.
    pub phi: Var,
    /// Predictions Ŷ⁰ .. Ŷ^T.
    pub y_hats: Vec<Var>,
    /// Refined structure term per step (empty when its blend weight is 0).
    pub refined: Vec<Var>,
    /// Blended adjacency per step, before normalization.
    pub blends: Vec<Var>,
}

/// Build one unrolled joint epoch on `tape`: a raw-graph pass, T refinement
/// steps each classifying through the re-normalized blended graph, and the
/// loss  L = L_c(Ŷ⁰) + (1/T)·Σ_t L_c(Ŷᵗ) + Φ(P). No optimizer step is
/// taken — the caller differentiates and steps.
pub fn joint_epoch(
    tape: &mut Tape,
    model: &LgsModel,
    vars: &ModelVars,
    run: &RunTensors,
    cfg: &TrainConfig,
    ctx: &mut ForwardCtx,
) -> JointForward {
    let raw_op = AdjacencyOp::Sparse(Rc::clone(&run.raw_op));
    let feats = FeatureRef::Sparse(Rc::clone(&run.features_sparse));
    let p = vars.var(model.transition);

    // Pass 0: the raw graph.
    let (z0, scores0) = backbone_forward(tape, model, vars, &raw_op, &feats, ctx);
    let y0 = label_prop_output(tape, scores0, &raw_op, p);
    let ce_warm =
        tape.masked_cross_entropy(y0, Rc::clone(&run.labels), Rc::clone(&run.train_idx));

    let gamma = 1.0 - cfg.alpha - cfg.beta;
    let anchor = if cfg.alpha != 0.0 {
        let a = run
            .dense_adjacency
            .as_ref()
            .expect("joint epoch with alpha > 0 requires the dense adjacency");
        Some(tape.constant_shared(Rc::clone(a)))
    } else {
        None
    };
    let s_f = if cfg.beta != 0.0 {
        let x = tape.constant_shared(Rc::clone(&run.features_dense));
        let heads: Vec<Var> = model.feature_heads.iter().map(|&i| vars.var(i)).collect();
        Some(similarity(tape, x, &heads))
    } else {
        None
    };
    let emb_heads: Vec<Var> = model.embedding_heads.iter().map(|&i| vars.var(i)).collect();

    let mut prev_y = y0;
    let mut prev_z = z0;
    let mut ce_steps = Vec::with_capacity(cfg.t);
    let mut y_hats = vec![y0];
    let mut refined_steps = Vec::new();
    let mut blends = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        let mut terms: Vec<(Var, f64)> = Vec::with_capacity(3);
        if let Some(a) = anchor {
            terms.push((a, cfg.alpha));
        }
        if let Some(sf) = s_f {
            terms.push((sf, cfg.beta));
        }
        if gamma != 0.0 {
            let s = similarity(tape, prev_z, &emb_heads);
            let pseudo =
                if cfg.detach_pseudo_labels { tape.detach(prev_y) } else { prev_y };
            let y_tr = tape.masked_row_blend(
                pseudo,
                Rc::clone(&run.one_hot),
                Rc::clone(&run.train_mask),
            );
            let refined = tape.refine_low_rank(s, y_tr, p, cfg.r, cfg.eps);
            refined_steps.push(refined);
            terms.push((refined, gamma));
        }
        let blended = if terms.len() == 1 && terms[0].1 == 1.0 {
            terms[0].0
        } else {
            tape.affine_combo(&terms, 0.0)
        };
        blends.push(blended);
        let outs =
            gnn_apply(tape, model, vars, &AdjacencyRef::Dense(blended), &feats, p, ctx);
        let ce = tape.masked_cross_entropy(
            outs.y_hat,
            Rc::clone(&run.labels),
            Rc::clone(&run.train_idx),
        );
        ce_steps.push(ce);
        y_hats.push(outs.y_hat);
        prev_y = outs.y_hat;
        prev_z = outs.z;
    }

    let reference = match cfg.phi_mode {
        PhiMode::Literal => None,
        PhiMode::Deviation => Some(
            run.transition_init
                .as_ref()
                .expect("deviation-mode regularizer requires the transition initialization"),
        ),
    };
    let phi = transition_penalty(tape, p, reference);

    let mut loss_terms: Vec<(Var, f64)> = Vec::with_capacity(cfg.t + 2);
    loss_terms.push((ce_warm, 1.0));
    let step_weight = 1.0 / cfg.t as f64;
    for &ce in &ce_steps {
        loss_terms.push((ce, step_weight));
    }
    loss_terms.push((phi, 1.0));
    let loss = tape.affine_combo(&loss_terms, 0.0);

    JointForward { loss, ce_warm, ce_steps, phi, y_hats, refined: refined_steps, blends }
}

struct BestEval {
    epoch: usize,
    val_accuracy: f64,
    test_accuracy: f64,
    predictions: Matrix,
}

/// Drives the two training phases over one dataset split.
pub struct Trainer<'d> {
    pub model: LgsModel,
    pub run: RunTensors,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    dataset: &'d GraphDataset,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
    traces: Vec<EpochTrace>,
    best: Option<BestEval>,
    sinkhorn_residual: f64,
    sinkhorn_iterations: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(
        dataset: &'d GraphDataset,
        split: &SplitSpec,
        gnn_cfg: &GnnConfig,
        cfg: &TrainConfig,
    ) -> Result<Self, String> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model =
            LgsModel::new(gnn_cfg.clone(), dataset.num_features(), dataset.num_classes, &mut rng)?;
        let need_dense = cfg.joint_epochs > 0 && cfg.alpha != 0.0;
        let run =
            RunTensors::new(dataset, split, gnn_cfg.backbone, cfg.lambda_max, need_dense);
        Ok(Trainer {
            model,
            run,
            cfg: cfg.clone(),
            rng,
            dataset,
            val_idx: split.val.clone(),
            test_idx: split.test.clone(),
            traces: Vec::new(),
            best: None,
            sinkhorn_residual: 0.0,
            sinkhorn_iterations: 0,
        })
    }

    /// Deterministic warm-style forward (no dropout, no gradients):
    /// embeddings and plain-softmax predictions on the raw graph.
    fn eval_warm(&mut self) -> (Matrix, Matrix) {
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.model, false);
        let raw_op = AdjacencyOp::Sparse(Rc::clone(&self.run.raw_op));
        let feats = FeatureRef::Sparse(Rc::clone(&self.run.features_sparse));
        let mut ctx =
            ForwardCtx { train: false, rng: &mut self.rng, lambda_max: self.run.lambda_max };
        let (z, scores) = backbone_forward(&mut tape, &self.model, &vars, &raw_op, &feats, &mut ctx);
        let y = tape.row_softmax(scores);
        (tape.value(z).clone(), tape.value(y).clone())
    }

    /// Deterministic unrolled forward; returns the final step's predictions
    /// and the regularizer value.
    fn eval_joint(&mut self) -> (Matrix, f64) {
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &self.model, false);
        let mut ctx =
            ForwardCtx { train: false, rng: &mut self.rng, lambda_max: self.run.lambda_max };
        let fwd = joint_epoch(&mut tape, &self.model, &vars, &self.run, &self.cfg, &mut ctx);
        let preds = tape.value(*fwd.y_hats.last().expect("at least one prediction")).clone();
        let phi = tape.value(fwd.phi)[(0, 0)];
        (preds, phi)
    }

    fn record_eval(
        &mut self,
        epoch: usize,
        train_loss: f64,
        phi_value: f64,
        predictions: Matrix,
    ) {
        let val_accuracy = accuracy(&predictions, &self.dataset.labels, &self.val_idx);
        let test_accuracy = accuracy(&predictions, &self.dataset.labels, &self.test_idx);
        self.traces.push(EpochTrace {
            epoch,
            train_loss,
            val_accuracy,
            test_accuracy,
            phi_value,
            sinkhorn_residual_at_init: self.sinkhorn_residual,
        });
        let better = match &self.best {
            None => true,
            Some(b) => val_accuracy > b.val_accuracy,
        };
        if better {
            self.best = Some(BestEval { epoch, val_accuracy, test_accuracy, predictions });
        }
    }

    fn is_eval_epoch(&self, epoch_in_phase: usize, phase_epochs: usize) -> bool {
        (epoch_in_phase + 1).is_multiple_of(self.cfg.eval_every)
            || epoch_in_phase + 1 == phase_epochs
    }

    fn check_params_finite(&self, phase: TrainPhase, epoch: usize) -> Result<(), TrainError> {
        for i in 0..self.model.params.len() {
            let p = self.model.params.get(i);
            if p.value.iter().any(|v| !v.is_finite()) {
                return Err(TrainError {
                    phase,
                    epoch,
                    tensor: format!("parameter {}", p.name),
                });
            }
        }
        Ok(())
    }

    /// Train the backbone alone on the raw graph (the transition matrix is
    /// held out of the output layer entirely). Returns the final embeddings
    /// and predictions from a deterministic pass.
    pub fn warmup(&mut self) -> Result<(Matrix, Matrix), TrainError> {
        let mut adam = AdamState::new(
            self.cfg.learning_rate,
            self.cfg.weight_decay,
            self.model.params.len(),
        );
        let backbone_idx = self.model.backbone_params();
        for epoch in 0..self.cfg.warmup_epochs {
            let (loss_value, grads) = {
                let mut tape = Tape::new();
                let vars = ModelVars::register(&mut tape, &self.model, true);
                let raw_op = AdjacencyOp::Sparse(Rc::clone(&self.run.raw_op));
                let feats = FeatureRef::Sparse(Rc::clone(&self.run.features_sparse));
                let mut ctx = ForwardCtx {
                    train: true,
                    rng: &mut self.rng,
                    lambda_max: self.run.lambda_max,
                };
                let (_, scores) =
                    backbone_forward(&mut tape, &self.model, &vars, &raw_op, &feats, &mut ctx);
                let y = tape.row_softmax(scores);
                let loss = tape.masked_cross_entropy(
                    y,
                    Rc::clone(&self.run.labels),
                    Rc::clone(&self.run.train_idx),
                );
                let loss_value = tape.value(loss)[(0, 0)];
                if !loss_value.is_finite() {
                    let tensor = tape
                        .first_non_finite()
                        .map(|(i, name)| format!("{name} (node {i})"))
                        .unwrap_or_else(|| String::from("loss"));
                    return Err(TrainError { phase: TrainPhase::Warmup, epoch, tensor });
                }
                tape.backward(loss);
                let grads: Vec<(usize, Matrix)> = backbone_idx
                    .iter()
                    .filter_map(|&i| tape.take_grad(vars.var(i)).map(|g| (i, g)))
                    .collect();
                (loss_value, grads)
            };
            adam.apply(&mut self.model.params, grads);
            self.check_params_finite(TrainPhase::Warmup, epoch)?;
            if self.is_eval_epoch(epoch, self.cfg.warmup_epochs) {
                let (_, preds) = self.eval_warm();
                self.record_eval(epoch, loss_value, 0.0, preds);
            }
        }
        Ok(self.eval_warm())
    }

    /// Initialize the transition matrix from edge label co-occurrence under
    /// the given predictions (observed labels on training rows).
    pub fn init_transition_from(&mut self, predictions: &Matrix) {
        let y_tr = blend_pseudo_labels(&self.run.one_hot, &self.run.train_mask, predictions);
        let sk = init_transition(
            &self.dataset.adjacency,
            &y_tr,
            SINKHORN_DELTA,
            SINKHORN_TOL,
            SINKHORN_MAX_ITERS,
        );
        self.sinkhorn_residual = sk.residual;
        self.sinkhorn_iterations = sk.iterations;
        self.model.params.set_value(self.model.transition, sk.matrix.clone());
        self.run.transition_init = Some(Rc::new(sk.matrix));
    }

    /// Joint phase: every epoch differentiates one unrolled T-step program
    /// and takes one Adam step over all parameters.
    pub fn joint(&mut self) -> Result<(), TrainError> {
        if self.cfg.joint_epochs == 0 {
            return Ok(());
        }
        let mut adam = AdamState::new(
            self.cfg.learning_rate,
            self.cfg.weight_decay,
            self.model.params.len(),
        );
        for j in 0..self.cfg.joint_epochs {
            let epoch = self.cfg.warmup_epochs + j;
            let (loss_value, phi_value, grads) = {
                let mut tape = Tape::new();
                let vars = ModelVars::register(&mut tape, &self.model, true);
                let mut ctx = ForwardCtx {
                    train: true,
                    rng: &mut self.rng,
                    lambda_max: self.run.lambda_max,
                };
                let fwd =
                    joint_epoch(&mut tape, &self.model, &vars, &self.run, &self.cfg, &mut ctx);
                let loss_value = tape.value(fwd.loss)[(0, 0)];
                if !loss_value.is_finite() {
                    let tensor = tape
                        .first_non_finite()
                        .map(|(i, name)| format!("{name} (node {i})"))
                        .unwrap_or_else(|| String::from("loss"));
                    return Err(TrainError { phase: TrainPhase::Joint, epoch, tensor });
                }
                let phi_value = tape.value(fwd.phi)[(0, 0)];
                tape.backward(fwd.loss);
                let grads: Vec<(usize, Matrix)> = (0..self.model.params.len())
                    .filter_map(|i| tape.take_grad(vars.var(i)).map(|g| (i, g)))
                    .collect();
                (loss_value, phi_value, grads)
            };
            adam.apply(&mut self.model.params, grads);
            self.check_params_finite(TrainPhase::Joint, epoch)?;
            if self.is_eval_epoch(j, self.cfg.joint_epochs) {
                let (preds, _) = self.eval_joint();
                self.record_eval(epoch, loss_value, phi_value, preds);
            }
        }
        Ok(())
    }

    /// Close out the run. If no epoch was ever evaluated (zero-epoch
    /// configurations), the initial model is evaluated once.
    pub fn finish(mut self) -> TrainOutcome {
        if self.best.is_none() {
            let (_, preds) = self.eval_warm();
            self.record_eval(0, f64::NAN, 0.0, preds);
            // A zero-epoch run has no training loss; keep the trace honest.
            if let Some(t) = self.traces.last_mut() {
                t.train_loss = 0.0;
            }
        }
        let best = self.best.expect("at least one evaluation recorded");
        TrainOutcome {
            traces: self.traces,
            best_epoch: best.epoch,
            best_val_accuracy: best.val_accuracy,
            test_accuracy: best.test_accuracy,
            predictions: best.predictions,
            sinkhorn_residual: self.sinkhorn_residual,
            sinkhorn_iterations: self.sinkhorn_iterations,
        }
    }

    pub fn traces(&self) -> &[EpochTrace] {
        &self.traces
    }
}

/// Full protocol on one split: warm-up, transition initialization, joint
/// phase, model selection by validation accuracy.
pub fn train_full(
    dataset: &GraphDataset,
    split: &SplitSpec,
    gnn_cfg: &GnnConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(dataset, split, gnn_cfg, cfg)
        .unwrap_or_else(|e| panic!("invalid configuration: {e}"));
    let (_, warm_preds) = trainer.warmup()?;
    if cfg.joint_epochs > 0 {
        trainer.init_transition_from(&warm_preds);
        trainer.joint()?;
    }
    Ok(trainer.finish())
}
