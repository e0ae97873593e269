//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is a define-by-run recording: every operation appends a node
//! holding the forward value plus whatever the backward pass will need. The
//! graph is rebuilt from scratch every epoch, so nodes reference earlier nodes
//! by index and the tape order is already topological.
//!
//! Conventions:
//! * Values are shared via `Rc`, so registering a large constant (the raw
//!   adjacency, the feature matrix) on a fresh tape costs a pointer copy.
//! * `backward` seeds the scalar loss with 1 and sweeps the tape in reverse.
//!   Gradients of leaf tensors persist on the tape and accumulate across
//!   repeated `backward` calls; gradients of interior nodes live in a
//!   per-call workspace and are freed as soon as their node has been
//!   processed, which keeps the peak footprint on n×n graphs low.
//! * Several graph-sized operations are fused (weighted cosine similarity,
//!   the low-rank edge-probability refinement, degree renormalization) so a
//!   training step materializes as few n×n buffers as possible.
//!
//! Shape violations and contract violations (non-scalar loss, empty
//! cross-entropy mask, blending weights outside their range) panic with a
//! message naming the offending shapes or values; they are programming
//! errors, not runtime conditions.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::{gemm, Matrix, Trans};
use crate::sparse::Csr;

/// Probability floor used inside the cross-entropy loss before taking logs.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Σ_k coeffs_k · terms_k (+ shift), all terms same shape. The shift is
    /// applied at forward time only; it is constant under differentiation.
    AffineCombo { terms: Vec<(Var, f64)> },
    Relu { a: Var },
    RowSoftmax { a: Var },
    MaskedCrossEntropy { probs: Var, labels: Rc<Vec<usize>>, mask: Rc<Vec<usize>> },
    SumAll { a: Var },
    /// Σ_i |Σ_j X_ij| — the row-sum magnitude penalty.
    RowSumAbsSum { a: Var },
    Dropout { a: Var, mask: Rc<Vec<f64>> },
    Detach,
    /// Constant sparse matrix times dense tensor, with optional per-nonzero
    /// scaling (used to apply dropout to a sparse operand).
    SpMM { a: Rc<Csr>, b: Var, nnz_scale: Option<Rc<Vec<f64>>> },
    /// Pairwise cosine similarity of the rows of `z` reweighted by the
    /// (broadcast) vector `w`. Caches the unit rows and their norms.
    WeightedCosine { z: Var, w: Var, unit: Rc<Matrix>, norms: Rc<Vec<f64>> },
    /// out = s ⊙ (r·e + (1−r)) with entries below `eps` zeroed.
    Refine { s: Var, e: Var, r: f64, eps: f64 },
    /// Same masking, but the dense pair-probability matrix e_ij = (yP)_i·y_j
    /// is folded in without ever materializing it.
    RefineLowRank { s: Var, y: Var, p: Var, r: f64, eps: f64, q: Rc<Matrix> },
    /// Row-wise blend: rows flagged in `hard_rows` were taken from a
    /// constant matrix at forward time, the remaining rows pass `soft`
    /// through (with gradient).
    MaskedRowBlend { soft: Var, hard_rows: Rc<Vec<bool>> },
    /// Clamp negatives to zero, add the identity, and symmetrically normalize
    /// by the resulting degrees (the graph-convolution propagation operator).
    GcnNorm { a: Var, degrees: Rc<Vec<f64>> },
    /// Clamp negatives to zero and form the rescaled Laplacian
    /// (2/λ)·(I − D^{-1/2} B D^{-1/2}) − I, zero-degree rows mapping to −I rows.
    ChebOperator { a: Var, lambda_max: f64, degrees: Rc<Vec<f64>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AffineCombo { .. } => "affine_combo",
            Op::Relu { .. } => "relu",
            Op::RowSoftmax { .. } => "row_softmax",
            Op::MaskedCrossEntropy { .. } => "masked_cross_entropy",
            Op::SumAll { .. } => "sum_all",
            Op::RowSumAbsSum { .. } => "row_sum_abs_sum",
            Op::Dropout { .. } => "dropout",
            Op::Detach => "detach",
            Op::SpMM { .. } => "sparse_matmul",
            Op::WeightedCosine { .. } => "weighted_cosine",
            Op::Refine { .. } => "refine",
            Op::RefineLowRank { .. } => "refine_low_rank",
            Op::MaskedRowBlend { .. } => "masked_row_blend",
            Op::GcnNorm { .. } => "gcn_norm",
            Op::ChebOperator { .. } => "cheb_operator",
        }
    }
}

struct Node {
    value: Rc<Matrix>,
    /// Persistent gradient buffer; only leaves keep one across backward calls.
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run differentiation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        self.push_shared(Rc::new(value), requires_grad, op)
    }

    fn push_shared(&mut self, value: Rc<Matrix>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The forward value of `v`.
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn value_rc(&self, v: Var) -> Rc<Matrix> {
        Rc::clone(&self.nodes[v.0].value)
    }

    /// Accumulated gradient of a leaf after `backward`; `None` if the leaf
    /// never received one (or `v` is not a gradient-carrying leaf).
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Move a leaf's accumulated gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Matrix> {
        self.nodes[v.0].grad.take()
    }

    // ── inputs ──────────────────────────────────────────────────────────

    /// Register a constant (no gradient).
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, false, Op::Leaf)
    }

    /// Register a shared constant without copying its storage.
    pub fn constant_shared(&mut self, m: Rc<Matrix>) -> Var {
        self.push_shared(m, false, Op::Leaf)
    }

    /// Register a trainable leaf; `backward` will accumulate its gradient.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, true, Op::Leaf)
    }

    /// Register a shared trainable leaf without copying its storage.
    pub fn param_shared(&mut self, m: Rc<Matrix>) -> Var {
        self.push_shared(m, true, Op::Leaf)
    }

    // ── operations ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        assert_eq!(ac, br, "matmul dimension mismatch: {}x{} times {}x{}", ar, ac, br, bc);
        let mut out = Matrix::zeros(ar, bc);
        gemm(1.0, self.value(a), Trans::No, self.value(b), Trans::No, 0.0, &mut out);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, rg, Op::MatMul { a, b })
    }

    fn elementwise_shapes(&self, a: Var, b: Var, what: &str) {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        assert!(
            sa == sb || sb == (1, 1),
            "{} shape mismatch: {}x{} vs {}x{} (second operand must match or be 1x1)",
            what,
            sa.0,
            sa.1,
            sb.0,
            sb.1
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.elementwise_shapes(a, b, "add");
        let bm = self.value(b);
        let mut out = self.value(a).clone();
        if bm.is_scalar() {
            let s = bm.scalar();
            for v in out.data_mut() {
                *v += s;
            }
        } else {
            out.add_scaled(bm, 1.0);
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out, rg, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.elementwise_shapes(a, b, "sub");
        let bm = self.value(b);
        let mut out = self.value(a).clone();
        if bm.is_scalar() {
            let s = bm.scalar();
            for v in out.data_mut() {
                *v -= s;
            }
        } else {
            out.add_scaled(bm, -1.0);
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out, rg, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.elementwise_shapes(a, b, "mul");
        let bm = self.value(b);
        let mut out = self.value(a).clone();
        if bm.is_scalar() {
            let s = bm.scalar();
            for v in out.data_mut() {
                *v *= s;
            }
        } else {
            for (o, bv) in out.data_mut().iter_mut().zip(bm.iter()) {
                *o *= bv;
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(out, rg, Op::Mul { a, b })
    }

    /// Σ_k coeff_k · term_k + shift over same-shape terms.
    pub fn affine_combo(&mut self, terms: &[(Var, f64)], shift: f64) -> Var {
        assert!(!terms.is_empty(), "affine_combo needs at least one term");
        let shape = self.value(terms[0].0).shape();
        for &(t, _) in terms {
            assert_eq!(
                self.value(t).shape(),
                shape,
                "affine_combo term shape mismatch: {:?} vs {:?}",
                self.value(t).shape(),
                shape
            );
        }
        let mut out = Matrix::filled(shape.0, shape.1, shift);
        for &(t, c) in terms {
            out.add_scaled(self.value(t), c);
        }
        let rg = terms.iter().any(|&(t, _)| self.requires(t));
        self.push(out, rg, Op::AffineCombo { terms: terms.to_vec() })
    }

    /// Convenience: `scale·a + shift`.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.affine_combo(&[(a, scale)], shift)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::Relu { a })
    }

    /// Numerically stable softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (r, c) = m.shape();
        let mut out = Matrix::zeros(r, c);
        for i in 0..r {
            let row = m.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = out.row_mut(i);
            let mut sum = 0.0;
            for (o, &x) in orow.iter_mut().zip(row.iter()) {
                *o = libm::exp(x - mx);
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::RowSoftmax { a })
    }

    /// Mean over `mask` rows of −log(probs[i][labels[i]]), with probabilities
    /// clamped below at [`CROSS_ENTROPY_CLAMP`] before the log. Scalar output.
    pub fn masked_cross_entropy(
        &mut self,
        probs: Var,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<usize>>,
    ) -> Var {
        assert!(!mask.is_empty(), "masked_cross_entropy: empty mask");
        let m = self.value(probs);
        let (r, c) = m.shape();
        assert_eq!(labels.len(), r, "labels cover {} rows but probs has {}", labels.len(), r);
        let mut total = 0.0;
        for &i in mask.iter() {
            assert!(i < r, "mask row {} out of range for {} rows", i, r);
            let y = labels[i];
            assert!(y < c, "label {} out of range for {} classes", y, c);
            let p = m[(i, y)].max(CROSS_ENTROPY_CLAMP);
            total -= libm::log(p);
        }
        let out = Matrix::from_vec(1, 1, vec![total / mask.len() as f64]);
        let rg = self.requires(probs);
        self.push(out, rg, Op::MaskedCrossEntropy { probs, labels, mask })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let rg = self.requires(a);
        self.push(Matrix::from_vec(1, 1, vec![s]), rg, Op::SumAll { a })
    }

    /// Σ_i |Σ_j X_ij| as a scalar.
    pub fn row_sum_abs_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut total = 0.0;
        for i in 0..m.rows() {
            let rs: f64 = m.row(i).iter().sum();
            total += libm::fabs(rs);
        }
        let rg = self.requires(a);
        self.push(Matrix::from_vec(1, 1, vec![total]), rg, Op::RowSumAbsSum { a })
    }

    /// Apply a precomputed inverted-dropout mask (entries 0 or 1/keep_prob).
    pub fn dropout(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Var {
        let m = self.value(a);
        assert_eq!(mask.len(), m.rows() * m.cols(), "dropout mask length mismatch");
        let mut out = m.clone();
        for (o, &s) in out.data_mut().iter_mut().zip(mask.iter()) {
            *o *= s;
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::Dropout { a, mask })
    }

    /// Pass the value through while blocking gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value_rc(a);
        self.push_shared(v, false, Op::Detach)
    }

    /// Constant sparse matrix times dense tensor; `nnz_scale`, when present,
    /// multiplies each stored nonzero (dropout on the sparse operand).
    pub fn spmm(&mut self, a: Rc<Csr>, b: Var, nnz_scale: Option<Rc<Vec<f64>>>) -> Var {
        let bm = self.value(b);
        let mut out = Matrix::zeros(a.rows(), bm.cols());
        a.mul_dense(bm, nnz_scale.as_deref().map(|v| &v[..]), &mut out);
        let rg = self.requires(b);
        self.push(out, rg, Op::SpMM { a, b, nnz_scale })
    }

    /// Pairwise cosine similarity between rows of `z` after pointwise
    /// reweighting by `w` (a 1×m vector). Zero-norm rows yield zero
    /// similarity against everything, including themselves. The output is
    /// exactly symmetric: the upper triangle is computed once and mirrored,
    /// and the diagonal is pinned to 1 (or 0 for zero-norm rows).
    pub fn weighted_cosine(&mut self, z: Var, w: Var) -> Var {
        let zm = self.value(z);
        let wm = self.value(w);
        let (n, m) = zm.shape();
        assert_eq!(
            wm.shape(),
            (1, m),
            "weighted_cosine expects a 1x{} weight vector, got {}x{}",
            m,
            wm.rows(),
            wm.cols()
        );
        let mut unit = Matrix::zeros(n, m);
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let zrow = zm.row(i);
            let urow = unit.row_mut(i);
            let mut sq = 0.0;
            for ((u, &zv), &wv) in urow.iter_mut().zip(zrow.iter()).zip(wm.row(0).iter()) {
                *u = zv * wv;
                sq += *u * *u;
            }
            let norm = libm::sqrt(sq);
            norms[i] = norm;
            if norm > 0.0 {
                for u in urow.iter_mut() {
                    *u /= norm;
                }
            } else {
                urow.fill(0.0);
            }
        }
        let mut s = Matrix::zeros(n, n);
        gemm(1.0, &unit, Trans::No, &unit, Trans::Yes, 0.0, &mut s);
        // Exact symmetry and a pinned diagonal.
        for i in 0..n {
            s[(i, i)] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
            for j in (i + 1)..n {
                let v = s[(i, j)];
                s[(j, i)] = v;
            }
        }
        let rg = self.requires(z) || self.requires(w);
        let unit = Rc::new(unit);
        let norms = Rc::new(norms);
        self.push(s, rg, Op::WeightedCosine { z, w, unit, norms })
    }

    /// s ⊙ (r·e + (1−r)), then zero every entry strictly below `eps`.
    pub fn refine(&mut self, s: Var, e: Var, r: f64, eps: f64) -> Var {
        assert!((0.0..=1.0).contains(&r), "refine mixing weight r={r} outside [0,1]");
        assert!(eps >= 0.0, "refine threshold eps={eps} must be non-negative");
        let sm = self.value(s);
        let em = self.value(e);
        assert_eq!(
            sm.shape(),
            em.shape(),
            "refine shape mismatch: {:?} vs {:?}",
            sm.shape(),
            em.shape()
        );
        let mut out = sm.clone();
        for (o, &ev) in out.data_mut().iter_mut().zip(em.iter()) {
            let b = *o * (r * ev + (1.0 - r));
            *o = if b >= eps { b } else { 0.0 };
        }
        let rg = self.requires(s) || self.requires(e);
        self.push(out, rg, Op::Refine { s, e, r, eps })
    }

    /// As [`Tape::refine`], with e_ij = (y·p)_i · y_j folded in row by row so
    /// the n×n pair-probability matrix never exists as a separate tensor.
    pub fn refine_low_rank(&mut self, s: Var, y: Var, p: Var, r: f64, eps: f64) -> Var {
        assert!((0.0..=1.0).contains(&r), "refine mixing weight r={r} outside [0,1]");
        assert!(eps >= 0.0, "refine threshold eps={eps} must be non-negative");
        let sm = self.value(s);
        let ym = self.value(y);
        let pm = self.value(p);
        let (n, c) = ym.shape();
        assert_eq!(sm.shape(), (n, n), "similarity must be {n}x{n}, got {:?}", sm.shape());
        assert_eq!(pm.shape(), (c, c), "transition must be {c}x{c}, got {:?}", pm.shape());
        let mut q = Matrix::zeros(n, c);
        gemm(1.0, ym, Trans::No, pm, Trans::No, 0.0, &mut q);
        let mut out = sm.clone();
        for i in 0..n {
            let qrow = q.row(i);
            let orow = out.row_mut(i);
            for j in 0..n {
                let yrow = ym.row(j);
                let mut e = 0.0;
                for (qv, yv) in qrow.iter().zip(yrow.iter()) {
                    e += qv * yv;
                }
                let b = orow[j] * (r * e + (1.0 - r));
                orow[j] = if b >= eps { b } else { 0.0 };
            }
        }
        let rg = self.requires(s) || self.requires(y) || self.requires(p);
        let q = Rc::new(q);
        self.push(out, rg, Op::RefineLowRank { s, y, p, r, eps, q })
    }

    /// Rows flagged in `hard_rows` are taken from the constant `hard`;
    /// remaining rows pass `soft` through with gradient.
    pub fn masked_row_blend(
        &mut self,
        soft: Var,
        hard: Rc<Matrix>,
        hard_rows: Rc<Vec<bool>>,
    ) -> Var {
        let sm = self.value(soft);
        assert_eq!(
            sm.shape(),
            hard.shape(),
            "masked_row_blend shape mismatch: {:?} vs {:?}",
            sm.shape(),
            hard.shape()
        );
        assert_eq!(hard_rows.len(), sm.rows(), "row mask length mismatch");
        let mut out = sm.clone();
        for i in 0..sm.rows() {
            if hard_rows[i] {
                out.row_mut(i).copy_from_slice(hard.row(i));
            }
        }
        let rg = self.requires(soft);
        self.push(out, rg, Op::MaskedRowBlend { soft, hard_rows })
    }

    /// Differentiable graph-convolution renormalization: negatives are
    /// clamped to zero, the identity is added, and the result is scaled as
    /// D^{-1/2}(B+I)D^{-1/2} with D the row sums of B+I.
    pub fn gcn_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.rows();
        assert_eq!(m.shape(), (n, n), "gcn_norm expects a square matrix, got {:?}", m.shape());
        let mut degrees = vec![0.0; n];
        for i in 0..n {
            let mut d = 1.0; // the added self-loop
            for &v in m.row(i) {
                if v > 0.0 {
                    d += v;
                }
            }
            degrees[i] = d;
        }
        let inv: Vec<f64> = degrees.iter().map(|&d| 1.0 / libm::sqrt(d)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let mrow = m.row(i);
            let orow = out.row_mut(i);
            for j in 0..n {
                let mut v = if mrow[j] > 0.0 { mrow[j] } else { 0.0 };
                if i == j {
                    v += 1.0;
                }
                orow[j] = v * inv[i] * inv[j];
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::GcnNorm { a, degrees: Rc::new(degrees) })
    }

    /// Differentiable rescaled-Laplacian operator: negatives clamped to zero,
    /// then (2/λ_max)·L − I with L = I − D^{-1/2} B D^{-1/2}; rows with zero
    /// degree have a zero Laplacian row by convention (so the output row is
    /// −1 on the diagonal).
    pub fn cheb_operator(&mut self, a: Var, lambda_max: f64) -> Var {
        assert!(lambda_max > 0.0, "lambda_max must be positive, got {lambda_max}");
        let m = self.value(a);
        let n = m.rows();
        assert_eq!(m.shape(), (n, n), "cheb_operator expects a square matrix, got {:?}", m.shape());
        let mut degrees = vec![0.0; n];
        for i in 0..n {
            let mut d = 0.0;
            for &v in m.row(i) {
                if v > 0.0 {
                    d += v;
                }
            }
            degrees[i] = d;
        }
        let inv: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 })
            .collect();
        let scale = 2.0 / lambda_max;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let mrow = m.row(i);
            let orow = out.row_mut(i);
            for j in 0..n {
                let b = if mrow[j] > 0.0 { mrow[j] } else { 0.0 };
                let laplacian = if i == j {
                    if degrees[i] > 0.0 {
                        1.0 - b * inv[i] * inv[j]
                    } else {
                        0.0
                    }
                } else {
                    -b * inv[i] * inv[j]
                };
                orow[j] = scale * laplacian - if i == j { 1.0 } else { 0.0 };
            }
        }
        let rg = self.requires(a);
        self.push(out, rg, Op::ChebOperator { a, lambda_max, degrees: Rc::new(degrees) })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls; interior gradients are scratch and freed during the sweep.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            self.value(loss).is_scalar(),
            "backward requires a 1x1 loss, got {:?}",
            self.value(loss).shape()
        );
        let n = self.nodes.len();
        let mut scratch: Vec<Option<Matrix>> = Vec::with_capacity(n);
        scratch.resize_with(n, || None);
        scratch[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for idx in (0..n).rev() {
            if !self.nodes[idx].requires_grad {
                scratch[idx] = None;
                continue;
            }
            let Some(grad) = scratch[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                match self.nodes[idx].grad.as_mut() {
                    Some(g) => g.add_scaled(&grad, 1.0),
                    None => self.nodes[idx].grad = Some(grad),
                }
                continue;
            }
            self.backprop_node(idx, &grad, &mut scratch);
        }
    }

    /// Accumulate `delta` (scaled) into the scratch gradient of `target` if
    /// that node participates in differentiation.
    fn acc(&self, scratch: &mut [Option<Matrix>], target: Var, delta: &Matrix, scale: f64) {
        if !self.requires(target) {
            return;
        }
        match &mut scratch[target.0] {
            Some(g) => g.add_scaled(delta, scale),
            slot @ None => {
                if scale == 1.0 {
                    *slot = Some(delta.clone());
                } else {
                    let mut g = Matrix::zeros(delta.rows(), delta.cols());
                    g.add_scaled(delta, scale);
                    *slot = Some(g);
                }
            }
        }
    }

    fn acc_owned(&self, scratch: &mut [Option<Matrix>], target: Var, delta: Matrix) {
        if !self.requires(target) {
            return;
        }
        match &mut scratch[target.0] {
            Some(g) => g.add_scaled(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&mut self, idx: usize, grad: &Matrix, scratch: &mut [Option<Matrix>]) {
        // Split borrows: clone the cheap handles out of the op first.
        match &self.nodes[idx].op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            &Op::MatMul { a, b } => {
                if self.requires(a) {
                    let mut da = Matrix::zeros(self.value(a).rows(), self.value(a).cols());
                    gemm(1.0, grad, Trans::No, self.value(b), Trans::Yes, 0.0, &mut da);
                    self.acc_owned(scratch, a, da);
                }
                if self.requires(b) {
                    let mut db = Matrix::zeros(self.value(b).rows(), self.value(b).cols());
                    gemm(1.0, self.value(a), Trans::Yes, grad, Trans::No, 0.0, &mut db);
                    self.acc_owned(scratch, b, db);
                }
            }
            &Op::Add { a, b } => {
                self.acc(scratch, a, grad, 1.0);
                if self.requires(b) {
                    if self.value(b).is_scalar() && !grad.is_scalar() {
                        let s: f64 = grad.iter().sum();
                        self.acc_owned(scratch, b, Matrix::from_vec(1, 1, vec![s]));
                    } else {
                        self.acc(scratch, b, grad, 1.0);
                    }
                }
            }
            &Op::Sub { a, b } => {
                self.acc(scratch, a, grad, 1.0);
                if self.requires(b) {
                    if self.value(b).is_scalar() && !grad.is_scalar() {
                        let s: f64 = grad.iter().sum();
                        self.acc_owned(scratch, b, Matrix::from_vec(1, 1, vec![-s]));
                    } else {
                        self.acc(scratch, b, grad, -1.0);
                    }
                }
            }
            &Op::Mul { a, b } => {
                if self.requires(a) {
                    let bm = self.value(b);
                    let mut da = grad.clone();
                    if bm.is_scalar() {
                        let s = bm.scalar();
                        for v in da.data_mut() {
                            *v *= s;
                        }
                    } else {
                        for (g, bv) in da.data_mut().iter_mut().zip(bm.iter()) {
                            *g *= bv;
                        }
                    }
                    self.acc_owned(scratch, a, da);
                }
                if self.requires(b) {
                    let am = self.value(a);
                    if self.value(b).is_scalar() && !grad.is_scalar() {
                        let s: f64 = grad.iter().zip(am.iter()).map(|(g, a)| g * a).sum();
                        self.acc_owned(scratch, b, Matrix::from_vec(1, 1, vec![s]));
                    } else {
                        let mut db = grad.clone();
                        for (g, av) in db.data_mut().iter_mut().zip(am.iter()) {
                            *g *= av;
                        }
                        self.acc_owned(scratch, b, db);
                    }
                }
            }
            Op::AffineCombo { terms } => {
                let terms = terms.clone();
                for (t, cfi) in terms {
                    self.acc(scratch, t, grad, cfi);
                }
            }
            &Op::Relu { a } => {
                if self.requires(a) {
                    let out = &self.nodes[idx].value;
                    let mut da = grad.clone();
                    for (g, &o) in da.data_mut().iter_mut().zip(out.iter()) {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    self.acc_owned(scratch, a, da);
                }
            }
            &Op::RowSoftmax { a } => {
                if self.requires(a) {
                    let out = Rc::clone(&self.nodes[idx].value);
                    let (r, _) = out.shape();
                    let mut da = grad.clone();
                    for i in 0..r {
                        let yrow = out.row(i);
                        let gr = da.row_mut(i);
                        let dot: f64 = gr.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                        for (g, &y) in gr.iter_mut().zip(yrow.iter()) {
                            *g = y * (*g - dot);
                        }
                    }
                    self.acc_owned(scratch, a, da);
                }
            }
            Op::MaskedCrossEntropy { probs, labels, mask } => {
                let probs = *probs;
                let labels = Rc::clone(labels);
                let mask = Rc::clone(mask);
                if self.requires(probs) {
                    let g0 = grad.scalar();
                    let pm = self.value(probs);
                    let mut da = Matrix::zeros(pm.rows(), pm.cols());
                    let inv_m = 1.0 / mask.len() as f64;
                    for &i in mask.iter() {
                        let y = labels[i];
                        let p = pm[(i, y)];
                        if p > CROSS_ENTROPY_CLAMP {
                            da[(i, y)] = -g0 * inv_m / p;
                        }
                    }
                    self.acc_owned(scratch, probs, da);
                }
            }
            &Op::SumAll { a } => {
                if self.requires(a) {
                    let g0 = grad.scalar();
                    let (r, c) = self.value(a).shape();
                    self.acc_owned(scratch, a, Matrix::filled(r, c, g0));
                }
            }
            &Op::RowSumAbsSum { a } => {
                if self.requires(a) {
                    let g0 = grad.scalar();
                    let am = self.value(a);
                    let (r, c) = am.shape();
                    let mut da = Matrix::zeros(r, c);
                    for i in 0..r {
                        let rs: f64 = am.row(i).iter().sum();
                        let sign = if rs > 0.0 {
                            1.0
                        } else if rs < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        da.row_mut(i).fill(g0 * sign);
                    }
                    self.acc_owned(scratch, a, da);
                }
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                let mask = Rc::clone(mask);
                if self.requires(a) {
                    let mut da = grad.clone();
                    for (g, &s) in da.data_mut().iter_mut().zip(mask.iter()) {
                        *g *= s;
                    }
                    self.acc_owned(scratch, a, da);
                }
            }
            Op::Detach => {}
            Op::SpMM { a, b, nnz_scale } => {
                let a = Rc::clone(a);
                let b = *b;
                let nnz_scale = nnz_scale.clone();
                if self.requires(b) {
                    let bm = self.value(b);
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    a.tr_mul_dense_acc(grad, nnz_scale.as_deref().map(|v| &v[..]), &mut db);
                    self.acc_owned(scratch, b, db);
                }
            }
            Op::WeightedCosine { z, w, unit, norms } => {
                let z = *z;
                let w = *w;
                let unit = Rc::clone(unit);
                let norms = Rc::clone(norms);
                self.backprop_weighted_cosine(z, w, &unit, &norms, grad, scratch);
            }
            &Op::Refine { s, e, r, eps } => {
                let sm = self.value(s);
                let em = self.value(e);
                let (rows, cols) = sm.shape();
                let mut ds = if self.requires(s) { Some(Matrix::zeros(rows, cols)) } else { None };
                let mut de = if self.requires(e) { Some(Matrix::zeros(rows, cols)) } else { None };
                for i in 0..rows {
                    for j in 0..cols {
                        let sv = sm[(i, j)];
                        let ev = em[(i, j)];
                        let blend = sv * (r * ev + (1.0 - r));
                        if blend >= eps {
                            let g = grad[(i, j)];
                            if let Some(ds) = ds.as_mut() {
                                ds[(i, j)] = g * (r * ev + (1.0 - r));
                            }
                            if let Some(de) = de.as_mut() {
                                de[(i, j)] = g * sv * r;
                            }
                        }
                    }
                }
                if let Some(ds) = ds {
                    self.acc_owned(scratch, s, ds);
                }
                if let Some(de) = de {
                    self.acc_owned(scratch, e, de);
                }
            }
            Op::RefineLowRank { s, y, p, r, eps, q } => {
                let (s, y, p, r, eps) = (*s, *y, *p, *r, *eps);
                let q = Rc::clone(q);
                self.backprop_refine_low_rank(s, y, p, r, eps, &q, grad, scratch);
            }
            Op::MaskedRowBlend { soft, hard_rows } => {
                let soft = *soft;
                let hard_rows = Rc::clone(hard_rows);
                if self.requires(soft) {
                    let mut da = grad.clone();
                    for i in 0..da.rows() {
                        if hard_rows[i] {
                            da.row_mut(i).fill(0.0);
                        }
                    }
                    self.acc_owned(scratch, soft, da);
                }
            }
            Op::GcnNorm { a, degrees } => {
                let a = *a;
                let degrees = Rc::clone(degrees);
                if self.requires(a) {
                    let da = self.gcn_norm_backward(idx, a, &degrees, grad);
                    self.acc_owned(scratch, a, da);
                }
            }
            Op::ChebOperator { a, lambda_max, degrees } => {
                let a = *a;
                let lambda_max = *lambda_max;
                let degrees = Rc::clone(degrees);
                if self.requires(a) {
                    let da = self.cheb_backward(idx, a, lambda_max, &degrees, grad);
                    self.acc_owned(scratch, a, da);
                }
            }
        }
    }

    fn backprop_weighted_cosine(
        &mut self,
        z: Var,
        w: Var,
        unit: &Matrix,
        norms: &[f64],
        grad: &Matrix,
        scratch: &mut [Option<Matrix>],
    ) {
        let (n, m) = unit.shape();
        // Effective incoming gradient per computed (unordered) pair:
        // both triangles contribute; the pinned diagonal is constant.
        let mut sym = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sym[(i, j)] = grad[(i, j)] + grad[(j, i)];
                }
            }
        }
        // d(unit) = sym · unit, sym symmetric with zero diagonal.
        let mut dunit = Matrix::zeros(n, m);
        gemm(1.0, &sym, Trans::No, unit, Trans::No, 0.0, &mut dunit);
        // Through row normalization: du_i = (dû_i − (dû_i·û_i) û_i)/ν_i.
        let mut du = dunit;
        for i in 0..n {
            if norms[i] > 0.0 {
                let urow = unit.row(i);
                let drow = du.row_mut(i);
                let dot: f64 = drow.iter().zip(urow.iter()).map(|(d, u)| d * u).sum();
                let inv = 1.0 / norms[i];
                for (d, &u) in drow.iter_mut().zip(urow.iter()) {
                    *d = (*d - dot * u) * inv;
                }
            } else {
                du.row_mut(i).fill(0.0);
            }
        }
        // u = z ⊙ w (w broadcast across rows).
        let zm = self.value(z);
        let wm = self.value(w);
        if self.requires(z) {
            let mut dz = du.clone();
            for i in 0..n {
                for (d, &wv) in dz.row_mut(i).iter_mut().zip(wm.row(0).iter()) {
                    *d *= wv;
                }
            }
            self.acc_owned(scratch, z, dz);
        }
        if self.requires(w) {
            let mut dw = Matrix::zeros(1, m);
            for i in 0..n {
                let drow = du.row(i);
                let zrow = zm.row(i);
                for ((g, d), zv) in dw.row_mut(0).iter_mut().zip(drow.iter()).zip(zrow.iter()) {
                    *g += d * zv;
                }
            }
            self.acc_owned(scratch, w, dw);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_refine_low_rank(
        &mut self,
        s: Var,
        y: Var,
        p: Var,
        r: f64,
        eps: f64,
        q: &Matrix,
        grad: &Matrix,
        scratch: &mut [Option<Matrix>],
    ) {
        let sm = self.value(s);
        let ym = self.value(y);
        let (n, c) = ym.shape();
        let need_s = self.requires(s);
        let need_y = self.requires(y);
        let need_p = self.requires(p);
        let mut ds = if need_s { Some(Matrix::zeros(n, n)) } else { None };
        let mut dq = if need_y || need_p { Some(Matrix::zeros(n, c)) } else { None };
        let mut dy = if need_y { Some(Matrix::zeros(n, c)) } else { None };
        for i in 0..n {
            let qrow_vals: Vec<f64> = q.row(i).to_vec();
            for j in 0..n {
                let yrow = ym.row(j);
                let mut e = 0.0;
                for (qv, yv) in qrow_vals.iter().zip(yrow.iter()) {
                    e += qv * yv;
                }
                let sv = sm[(i, j)];
                let blend = sv * (r * e + (1.0 - r));
                if blend < eps {
                    continue;
                }
                let g = grad[(i, j)];
                if g == 0.0 {
                    continue;
                }
                if let Some(ds) = ds.as_mut() {
                    ds[(i, j)] += g * (r * e + (1.0 - r));
                }
                let de = g * sv * r;
                if de != 0.0 {
                    if let Some(dq) = dq.as_mut() {
                        for (slot, &yv) in dq.row_mut(i).iter_mut().zip(yrow.iter()) {
                            *slot += de * yv;
                        }
                    }
                    if let Some(dy) = dy.as_mut() {
                        for (slot, &qv) in dy.row_mut(j).iter_mut().zip(qrow_vals.iter()) {
                            *slot += de * qv;
                        }
                    }
                }
            }
        }
        if let Some(ds) = ds {
            self.acc_owned(scratch, s, ds);
        }
        if let Some(dq) = dq {
            if need_p {
                let mut dp = Matrix::zeros(c, c);
                gemm(1.0, ym, Trans::Yes, &dq, Trans::No, 0.0, &mut dp);
                self.acc_owned(scratch, p, dp);
            }
            if let Some(mut dy) = dy {
                // q = y·p contributes dy += dq·pᵀ on top of the direct term.
                let pm = self.value(p);
                gemm(1.0, &dq, Trans::No, pm, Trans::Yes, 1.0, &mut dy);
                self.acc_owned(scratch, y, dy);
            }
        } else if let Some(dy) = dy {
            self.acc_owned(scratch, y, dy);
        }
    }

    /// Backward of the degree-normalized product N_ij = B_ij (d_i d_j)^{-1/2}
    /// with B = clamp(a, 0) + I, returning the gradient w.r.t. `a`. Each
    /// entry B_pq feeds N directly and perturbs row/column p through the
    /// degree d_p, giving a per-row correction shared across the row.
    fn gcn_norm_backward(&self, idx: usize, a: Var, degrees: &[f64], grad: &Matrix) -> Matrix {
        let out = &self.nodes[idx].value;
        let am = self.value(a);
        let n = am.rows();
        let inv: Vec<f64> = degrees.iter().map(|&d| 1.0 / libm::sqrt(d)).collect();
        // Row/column correction terms from the degrees.
        let mut rho = vec![0.0; n];
        let mut kappa = vec![0.0; n];
        for i in 0..n {
            let grow = grad.row(i);
            let orow = out.row(i);
            let mut acc = 0.0;
            for (g, o) in grow.iter().zip(orow.iter()) {
                acc += g * o;
            }
            rho[i] = acc;
        }
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += grad[(i, j)] * out[(i, j)];
            }
            kappa[j] = acc;
        }
        let mut da = Matrix::zeros(n, n);
        for i in 0..n {
            let correction = -0.5 * (rho[i] + kappa[i]) / degrees[i];
            for j in 0..n {
                if am[(i, j)] > 0.0 {
                    da[(i, j)] = grad[(i, j)] * inv[i] * inv[j] + correction;
                }
            }
        }
        da
    }

    fn cheb_backward(
        &self,
        idx: usize,
        a: Var,
        lambda_max: f64,
        degrees: &[f64],
        grad: &Matrix,
    ) -> Matrix {
        let out = &self.nodes[idx].value;
        let am = self.value(a);
        let n = am.rows();
        let scale = 2.0 / lambda_max;
        let inv: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 })
            .collect();
        // The operator is an affine function of Ā = D^{-1/2} B D^{-1/2}:
        // out = scale·(I_deg − Ā) − I, so dĀ = −scale · dOut. Reconstruct
        // Ā from the stored output to reuse the degree-correction formula.
        let mut rho = vec![0.0; n];
        let mut kappa = vec![0.0; n];
        let abar = |i: usize, j: usize| -> f64 {
            let o = out[(i, j)];
            let diag = if i == j { 1.0 } else { 0.0 };
            let ideg = if i == j && degrees[i] > 0.0 { 1.0 } else { 0.0 };
            // o = scale·(ideg − ā) − diag  ⇒  ā = ideg − (o + diag)/scale
            ideg - (o + diag) / scale
        };
        for i in 0..n {
            let mut racc = 0.0;
            for j in 0..n {
                racc += (-scale) * grad[(i, j)] * abar(i, j);
            }
            rho[i] = racc;
        }
        for j in 0..n {
            let mut cacc = 0.0;
            for i in 0..n {
                cacc += (-scale) * grad[(i, j)] * abar(i, j);
            }
            kappa[j] = cacc;
        }
        let mut da = Matrix::zeros(n, n);
        for i in 0..n {
            if degrees[i] == 0.0 {
                continue;
            }
            let correction = -0.5 * (rho[i] + kappa[i]) / degrees[i];
            for j in 0..n {
                if am[(i, j)] > 0.0 {
                    da[(i, j)] = (-scale) * grad[(i, j)] * inv[i] * inv[j] + correction;
                }
            }
        }
        da
    }

    /// Name of the first node (in tape order) whose value contains a
    /// non-finite entry, for failure diagnostics.
    pub fn first_non_finite(&self) -> Option<(usize, String)> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.iter().any(|v| !v.is_finite()) {
                return Some((i, String::from(node.op.name())));
            }
        }
        None
    }
}

/// Central-difference gradient check against [`Tape::backward`].
///
/// `build` constructs a scalar loss from leaves registered in input order.
/// Every entry of every input is perturbed by ±`h` unless `skip` returns
/// true for it (used to avoid probing across subgradient kinks such as
/// clamp boundaries or zero-norm rows). Errors are measured as
/// |analytic − numeric| / max(1, |analytic|, |numeric|) and must stay at or
/// below `tol`. Intended for tests; panics with coordinates on failure.
pub fn finite_difference_check<F>(
    inputs: &[Matrix],
    build: F,
    h: f64,
    tol: f64,
    skip: &dyn Fn(usize, usize, usize) -> bool,
) where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &vars);
    assert!(tape.value(loss).is_scalar(), "finite_difference_check needs a scalar loss");
    tape.backward(loss);
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(inputs.iter())
        .map(|(&v, m)| tape.take_grad(v).unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
        .collect();
    drop(tape);

    let eval = |xs: &[Matrix]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        let l = build(&mut t, &vs);
        t.value(l).scalar()
    };

    let mut work: Vec<Matrix> = inputs.to_vec();
    for k in 0..inputs.len() {
        let (rows, cols) = inputs[k].shape();
        for r in 0..rows {
            for c in 0..cols {
                if skip(k, r, c) {
                    continue;
                }
                let orig = work[k][(r, c)];
                work[k][(r, c)] = orig + h;
                let fp = eval(&work);
                work[k][(r, c)] = orig - h;
                let fm = eval(&work);
                work[k][(r, c)] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic[k][(r, c)];
                let denom = libm::fabs(a).max(libm::fabs(numeric)).max(1.0);
                let err = libm::fabs(a - numeric) / denom;
                assert!(
                    err <= tol,
                    "gradient mismatch at input {k} entry ({r},{c}): analytic {a}, numeric {numeric}, err {err:.3e}"
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        let data: Vec<f64> = (0..r * c).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
        Matrix::from_vec(r, c, data)
    }

    fn no_skip(_: usize, _: usize, _: usize) -> bool {
        false
    }

    /// A fixed projection matrix so matrix-valued outputs reduce to a scalar
    /// with non-uniform (and asymmetric) weights.
    fn project(t: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = t.value(x).shape();
        let mut g = rng(seed ^ 0xabcdef);
        let w = rand_matrix(&mut g, r, c, -1.0, 1.0);
        let wv = t.constant(w);
        let prod = t.mul(x, wv);
        t.sum_all(prod)
    }

    // ── forward-value checks ────────────────────────────────────────────

    #[test]
    fn relu_clamps_negatives() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_vec(1, 4, vec![-2.0, -0.5, 0.0, 3.0]));
        let r = t.relu(a);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn row_softmax_rows_sum_to_one_and_order_preserved() {
        let mut g = rng(7);
        let m = rand_matrix(&mut g, 5, 4, -30.0, 30.0);
        let mut t = Tape::new();
        let a = t.constant(m.clone());
        let s = t.row_softmax(a);
        let out = t.value(s);
        for i in 0..5 {
            let sum: f64 = out.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
            for j in 0..4 {
                for k in 0..4 {
                    if m[(i, j)] < m[(i, k)] {
                        assert!(out[(i, j)] <= out[(i, k)], "softmax broke ordering");
                    }
                }
            }
            assert!(out.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn row_softmax_handles_large_magnitudes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_vec(1, 3, vec![1000.0, 999.0, -1000.0]));
        let s = t.row_softmax(a);
        let out = t.value(s);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[(0, 0)] > out[(0, 1)]);
    }

    #[test]
    fn masked_cross_entropy_hand_value() {
        // mean over the mask of −log p[i][label_i]
        let mut t = Tape::new();
        let p = t.constant(Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.1, 0.9]));
        let loss =
            t.masked_cross_entropy(p, Rc::new(vec![0, 1]), Rc::new(vec![0, 1]));
        let expect = -(libm::log(0.5) + libm::log(0.9)) / 2.0;
        assert!((t.value(loss).scalar() - expect).abs() < 1e-15);
    }

    #[test]
    fn masked_cross_entropy_subset_mask() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.1, 0.9]));
        let loss = t.masked_cross_entropy(p, Rc::new(vec![0, 1]), Rc::new(vec![1]));
        assert!((t.value(loss).scalar() - -libm::log(0.9)).abs() < 1e-15);
    }

    #[test]
    fn masked_cross_entropy_clamps_zero_probability() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::from_vec(1, 2, vec![0.0, 1.0]));
        let loss = t.masked_cross_entropy(p, Rc::new(vec![0]), Rc::new(vec![0]));
        let expect = -libm::log(CROSS_ENTROPY_CLAMP);
        assert!((t.value(loss).scalar() - expect).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "empty mask")]
    fn masked_cross_entropy_rejects_empty_mask() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::from_vec(1, 2, vec![0.5, 0.5]));
        t.masked_cross_entropy(p, Rc::new(vec![0]), Rc::new(vec![]));
    }

    #[test]
    #[should_panic(expected = "backward requires a 1x1 loss")]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 2));
        t.backward(a);
    }

    #[test]
    fn row_sum_abs_sum_hand_value() {
        let mut t = Tape::new();
        // rows sum to 3, −1, 0 → |3| + |−1| + |0| = 4
        let a = t.constant(Matrix::from_vec(3, 2, vec![1.0, 2.0, -3.0, 2.0, -1.5, 1.5]));
        let s = t.row_sum_abs_sum(a);
        assert!((t.value(s).scalar() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        // loss = Σ a ⊙ detach(a): the detached copy acts as a constant, so
        // d loss/da = value(a).
        let m = Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]);
        let mut t = Tape::new();
        let a = t.param(m.clone());
        let d = t.detach(a);
        let prod = t.mul(a, d);
        let loss = t.sum_all(prod);
        t.backward(loss);
        let g = t.grad(a).unwrap();
        for (gv, mv) in g.iter().zip(m.iter()) {
            assert!((gv - mv).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_backward_accumulates_leaf_gradients() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let loss = t.sum_all(a);
        t.backward(loss);
        t.backward(loss);
        let g = t.grad(a).unwrap();
        assert!(g.iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn shared_subexpression_gradients_sum() {
        // loss = Σ(a) + Σ(a) → d/da = 2 everywhere.
        let mut t = Tape::new();
        let a = t.param(Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let s1 = t.sum_all(a);
        let s2 = t.sum_all(a);
        let loss = t.add(s1, s2);
        t.backward(loss);
        assert!(t.grad(a).unwrap().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let p = t.param(Matrix::from_vec(1, 2, vec![3.0, 4.0]));
        let prod = t.mul(p, a);
        let loss = t.sum_all(prod);
        t.backward(loss);
        assert!(t.grad(a).is_none());
        assert!(t.grad(p).is_some());
    }

    #[test]
    fn first_non_finite_names_the_offending_op() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]));
        let b = t.relu(a);
        let _ = b;
        let (idx, name) = t.first_non_finite().unwrap();
        assert_eq!(idx, 0);
        assert_eq!(name, "leaf");
    }

    // ── finite-difference gradient checks (operation suite) ────────────

    #[test]
    fn grad_matmul_relu_chain() {
        let mut g = rng(11);
        let a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut g, 4, 3, -1.0, 1.0);
        finite_difference_check(
            &[a, b],
            |t, vs| {
                let prod = t.matmul(vs[0], vs[1]);
                let r = t.relu(prod);
                project(t, r, 1)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_elementwise_ops() {
        let mut g = rng(12);
        let a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut g, 3, 4, 0.5, 1.5);
        let c = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        finite_difference_check(
            &[a, b, c],
            |t, vs| {
                let s = t.add(vs[0], vs[1]);
                let d = t.sub(s, vs[2]);
                let m = t.mul(d, vs[1]);
                t.sum_all(m)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_scalar_broadcast() {
        let mut g = rng(13);
        let a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let s = rand_matrix(&mut g, 1, 1, 0.5, 1.5);
        finite_difference_check(
            &[a, s],
            |t, vs| {
                let shifted = t.add(vs[0], vs[1]);
                let scaled = t.mul(shifted, vs[1]);
                let back = t.sub(scaled, vs[1]);
                project(t, back, 2)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_affine_combo() {
        let mut g = rng(14);
        let a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let b = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let c = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        finite_difference_check(
            &[a, b, c],
            |t, vs| {
                let combo = t.affine_combo(&[(vs[0], 0.8), (vs[1], 0.1), (vs[2], 0.1)], 0.25);
                project(t, combo, 3)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_row_softmax() {
        let mut g = rng(15);
        let a = rand_matrix(&mut g, 3, 4, -2.0, 2.0);
        finite_difference_check(
            &[a],
            |t, vs| {
                let s = t.row_softmax(vs[0]);
                project(t, s, 4)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_masked_cross_entropy_through_softmax() {
        let mut g = rng(16);
        let a = rand_matrix(&mut g, 4, 3, -2.0, 2.0);
        let labels = Rc::new(vec![0usize, 2, 1, 1]);
        let mask = Rc::new(vec![0usize, 2, 3]);
        finite_difference_check(
            &[a],
            |t, vs| {
                let p = t.row_softmax(vs[0]);
                t.masked_cross_entropy(p, Rc::clone(&labels), Rc::clone(&mask))
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_sum_and_row_sum_abs() {
        let mut g = rng(17);
        // Keep row sums away from zero: the |·| kink is not differentiable.
        let mut a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        for i in 0..3 {
            let rs: f64 = a.row(i).iter().sum();
            if rs.abs() < 0.2 {
                a[(i, 0)] += if rs >= 0.0 { 0.5 } else { -0.5 };
            }
        }
        finite_difference_check(
            &[a],
            |t, vs| {
                let s1 = t.row_sum_abs_sum(vs[0]);
                let s2 = t.sum_all(vs[0]);
                let sq = t.mul(s2, s2);
                t.add(s1, sq)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_dropout_mask() {
        let mut g = rng(18);
        let a = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let mask: Rc<Vec<f64>> =
            Rc::new((0..12).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect());
        finite_difference_check(
            &[a],
            |t, vs| {
                let d = t.dropout(vs[0], Rc::clone(&mask));
                project(t, d, 5)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_spmm() {
        let mut g = rng(19);
        let sparse = Rc::new(Csr::from_triples(
            3,
            3,
            vec![(0, 1, 2.0), (1, 0, -1.0), (1, 2, 0.5), (2, 2, 3.0)],
        ));
        let b = rand_matrix(&mut g, 3, 4, -1.0, 1.0);
        let scale: Rc<Vec<f64>> = Rc::new(vec![2.0, 0.0, 1.0, 0.5]);
        finite_difference_check(
            core::slice::from_ref(&b),
            |t, vs| {
                let p = t.spmm(Rc::clone(&sparse), vs[0], None);
                project(t, p, 6)
            },
            H,
            TOL,
            &no_skip,
        );
        finite_difference_check(
            &[b],
            |t, vs| {
                let p = t.spmm(Rc::clone(&sparse), vs[0], Some(Rc::clone(&scale)));
                project(t, p, 7)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_weighted_cosine() {
        let mut g = rng(20);
        let z = rand_matrix(&mut g, 4, 3, 0.2, 1.0);
        let w = rand_matrix(&mut g, 1, 3, 0.5, 1.5);
        finite_difference_check(
            &[z, w],
            |t, vs| {
                let s = t.weighted_cosine(vs[0], vs[1]);
                project(t, s, 8)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn grad_weighted_cosine_mixed_signs() {
        let mut g = rng(21);
        let z = rand_matrix(&mut g, 5, 4, -1.0, 1.0);
        let w = rand_matrix(&mut g, 1, 4, -1.0, 1.0);
        finite_difference_check(
            &[z, w],
            |t, vs| {
                let s = t.weighted_cosine(vs[0], vs[1]);
                project(t, s, 9)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn weighted_cosine_zero_row_yields_zero_similarity() {
        let mut g = rng(22);
        let mut z = rand_matrix(&mut g, 4, 3, 0.2, 1.0);
        z.row_mut(2).fill(0.0);
        let w = rand_matrix(&mut g, 1, 3, 0.5, 1.5);
        let mut t = Tape::new();
        let zv = t.param(z.clone());
        let wv = t.param(w.clone());
        let s = t.weighted_cosine(zv, wv);
        let out = t.value(s).clone();
        for j in 0..4 {
            assert_eq!(out[(2, j)], 0.0, "zero-norm row must have zero similarity");
            assert_eq!(out[(j, 2)], 0.0);
        }
        assert_eq!(out[(0, 0)], 1.0);
        // Gradients for the remaining rows still match finite differences.
        finite_difference_check(
            &[z, w],
            |t, vs| {
                let s = t.weighted_cosine(vs[0], vs[1]);
                project(t, s, 10)
            },
            H,
            TOL,
            &|k, r, _| k == 0 && r == 2,
        );
    }

    #[test]
    fn weighted_cosine_is_exactly_symmetric() {
        let mut g = rng(23);
        let z = rand_matrix(&mut g, 6, 5, -1.0, 1.0);
        let w = rand_matrix(&mut g, 1, 5, 0.1, 1.0);
        let mut t = Tape::new();
        let zv = t.constant(z);
        let wv = t.constant(w);
        let s = t.weighted_cosine(zv, wv);
        let out = t.value(s);
        for i in 0..6 {
            assert_eq!(out[(i, i)], 1.0);
            for j in 0..6 {
                assert_eq!(out[(i, j)], out[(j, i)], "asymmetry at ({i},{j})");
                assert!(out[(i, j)] <= 1.0 + 1e-12 && out[(i, j)] >= -1.0 - 1e-12);
            }
        }
    }

    /// Distance of every blend value from the survival threshold; finite
    /// differences are only valid away from that kink.
    fn assert_blends_clear_of_threshold(s: &Matrix, e: &Matrix, r: f64, eps: f64) {
        for (sv, ev) in s.iter().zip(e.iter()) {
            let blend = sv * (r * ev + (1.0 - r));
            assert!(
                (blend - eps).abs() > 1e-3,
                "test setup places a blend value {blend} too close to eps {eps}"
            );
        }
    }

    #[test]
    fn grad_refine_dense() {
        let mut g = rng(24);
        let s = rand_matrix(&mut g, 4, 4, -0.5, 1.0);
        let e = rand_matrix(&mut g, 4, 4, 0.0, 1.0);
        let (r, eps) = (0.6, 0.21);
        assert_blends_clear_of_threshold(&s, &e, r, eps);
        finite_difference_check(
            &[s, e],
            |t, vs| {
                let out = t.refine(vs[0], vs[1], r, eps);
                project(t, out, 11)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    #[test]
    fn refine_threshold_zeroes_and_blocks_gradient() {
        let mut t = Tape::new();
        let s = t.param(Matrix::from_vec(1, 2, vec![0.9, 0.1]));
        let e = t.constant(Matrix::from_vec(1, 2, vec![1.0, 1.0]));
        let out = t.refine(s, e, 0.5, 0.5);
        // blends: 0.9 and 0.1 → second falls below eps.
        assert_eq!(t.value(out).data(), &[0.9, 0.0]);
        let loss = t.sum_all(out);
        t.backward(loss);
        let g = t.grad(s).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(g.data()[1], 0.0, "gradient must not leak through a zeroed entry");
    }

    #[test]
    fn refine_low_rank_matches_composed_dense_path() {
        let mut g = rng(25);
        let (n, c) = (5, 3);
        let s = rand_matrix(&mut g, n, n, -0.5, 1.0);
        // Row-stochastic y keeps the pair probabilities in a moderate range.
        let mut y = rand_matrix(&mut g, n, c, 0.05, 1.0);
        for i in 0..n {
            let rs: f64 = y.row(i).iter().sum();
            for v in y.row_mut(i) {
                *v /= rs;
            }
        }
        let p = rand_matrix(&mut g, c, c, 0.0, 1.0);
        let (r, eps) = (0.7, 0.13);

        let mut e = Matrix::zeros(n, n);
        let mut q = Matrix::zeros(n, c);
        gemm(1.0, &y, Trans::No, &p, Trans::No, 0.0, &mut q);
        gemm(1.0, &q, Trans::No, &y, Trans::Yes, 0.0, &mut e);
        assert_blends_clear_of_threshold(&s, &e, r, eps);

        // Forward equality with the composition refine(s, y·p·yᵀ).
        let mut t = Tape::new();
        let (sv, yv, pv) = (t.param(s.clone()), t.param(y.clone()), t.param(p.clone()));
        let fused = t.refine_low_rank(sv, yv, pv, r, eps);
        let ev = t.constant(e);
        let composed = t.refine(sv, ev, r, eps);
        for (f, d) in t.value(fused).iter().zip(t.value(composed).iter()) {
            assert!((f - d).abs() < 1e-12, "fused {f} vs composed {d}");
        }
        drop(t);

        finite_difference_check(
            &[s, y, p],
            |t, vs| {
                let out = t.refine_low_rank(vs[0], vs[1], vs[2], r, eps);
                project(t, out, 12)
            },
            H,
            1e-3,
            &no_skip,
        );
    }

    #[test]
    fn grad_masked_row_blend() {
        let mut g = rng(26);
        let soft = rand_matrix(&mut g, 4, 3, -1.0, 1.0);
        let hard = Rc::new(rand_matrix(&mut g, 4, 3, 0.0, 1.0));
        let rows = Rc::new(vec![true, false, true, false]);
        // Hard rows show the constant, soft rows pass through.
        let mut t = Tape::new();
        let sv = t.param(soft.clone());
        let out = t.masked_row_blend(sv, Rc::clone(&hard), Rc::clone(&rows));
        for i in 0..4 {
            let expect = if rows[i] { hard.row(i) } else { soft.row(i) };
            assert_eq!(t.value(out).row(i), expect);
        }
        drop(t);
        finite_difference_check(
            &[soft],
            |t, vs| {
                let out = t.masked_row_blend(vs[0], Rc::clone(&hard), Rc::clone(&rows));
                project(t, out, 13)
            },
            H,
            TOL,
            &no_skip,
        );
    }

    /// Entries within `margin` of zero are skipped when differentiating
    /// through a clamp-at-zero boundary.
    fn away_from_zero(m: &Matrix, margin: f64) -> impl Fn(usize, usize, usize) -> bool + '_ {
        move |_, r, c| m[(r, c)].abs() < margin
    }

    #[test]
    fn grad_gcn_norm() {
        let mut g = rng(27);
        let mut a = rand_matrix(&mut g, 5, 5, -0.8, 1.2);
        // Ensure entries sit clear of the clamp kink.
        for v in a.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let skip_src = a.clone();
        finite_difference_check(
            &[a],
            |t, vs| {
                let n = t.gcn_norm(vs[0]);
                project(t, n, 14)
            },
            H,
            TOL,
            &away_from_zero(&skip_src, 0.01),
        );
    }

    #[test]
    fn gcn_norm_matches_plain_normalization_on_nonnegative_input() {
        let mut g = rng(28);
        let mut a = rand_matrix(&mut g, 6, 6, 0.0, 1.0);
        // Symmetrize with a zero diagonal: the usual adjacency form.
        for i in 0..6 {
            a[(i, i)] = 0.0;
            for j in 0..i {
                let v = a[(i, j)];
                a[(j, i)] = v;
            }
        }
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let out = t.gcn_norm(av);
        let expect = crate::graph::gcn_normalize(&a);
        for (o, e) in t.value(out).iter().zip(expect.iter()) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn grad_cheb_operator() {
        let mut g = rng(29);
        let mut a = rand_matrix(&mut g, 5, 5, -0.8, 1.2);
        for v in a.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let skip_src = a.clone();
        finite_difference_check(
            &[a],
            |t, vs| {
                let n = t.cheb_operator(vs[0], 1.7);
                project(t, n, 15)
            },
            H,
            TOL,
            &away_from_zero(&skip_src, 0.01),
        );
    }

    #[test]
    fn cheb_operator_zero_degree_row_maps_to_negative_identity() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        // Node 2 is isolated (and its row stays ≤ 0).
        a[(2, 0)] = -0.5;
        let mut t = Tape::new();
        let av = t.param(a);
        let out = t.cheb_operator(av, 2.0);
        let v = t.value(out).clone();
        assert_eq!(v.row(2), &[0.0, 0.0, -1.0]);
        assert!((v[(0, 1)] - -1.0).abs() < 1e-14);
        assert!((v[(0, 0)] - 0.0).abs() < 1e-14);
        let loss = t.sum_all(out);
        t.backward(loss);
        let g = t.grad(av).unwrap();
        assert!(g.row(2).iter().all(|&x| x == 0.0), "clamped row must get no gradient");
    }

    #[test]
    fn cheb_operator_matches_scaled_laplacian_on_nonnegative_input() {
        let mut g = rng(30);
        let mut a = rand_matrix(&mut g, 6, 6, 0.0, 1.0);
        for i in 0..6 {
            a[(i, i)] = 0.0;
            for j in 0..i {
                let v = a[(i, j)];
                a[(j, i)] = v;
            }
        }
        let mut t = Tape::new();
        let av = t.constant(a.clone());
        let out = t.cheb_operator(av, 1.5);
        let expect = crate::graph::scaled_laplacian(&a, 1.5);
        for (o, e) in t.value(out).iter().zip(expect.iter()) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn grad_end_to_end_small_network() {
        // A miniature of the full differentiable pipeline: two dense layers
        // over a normalized operator, similarity, refinement, blend,
        // renormalize, propagate, cross-entropy + structure penalty.
        let mut g = rng(31);
        let n = 6;
        let x = rand_matrix(&mut g, n, 4, -1.0, 1.0);
        let w1 = rand_matrix(&mut g, 4, 3, -0.7, 0.7);
        let w2 = rand_matrix(&mut g, 3, 3, -0.7, 0.7);
        let wc = rand_matrix(&mut g, 1, 3, 0.5, 1.5);
        let p = rand_matrix(&mut g, 3, 3, 0.1, 0.4);
        let mut adj = Matrix::zeros(n, n);
        for (u, v) in [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)] {
            adj[(u, v)] = 1.0;
            adj[(v, u)] = 1.0;
        }
        let labels = Rc::new(vec![0usize, 1, 2, 0, 1, 2]);
        let mask = Rc::new(vec![0usize, 2, 4]);
        let adj_c = adj.clone();
        finite_difference_check(
            &[x, w1, w2, wc, p],
            |t, vs| {
                let a0 = t.constant(adj_c.clone());
                let op = t.gcn_norm(a0);
                let xw = t.matmul(vs[0], vs[1]);
                let h1p = t.matmul(op, xw);
                let h1 = t.relu(h1p);
                let s = t.weighted_cosine(h1, vs[3]);
                let yp = t.row_softmax(h1);
                let refined = t.refine_low_rank(s, yp, vs[4], 0.5, 0.0);
                let blend = t.affine_combo(&[(a0, 0.6), (s, 0.1), (refined, 0.3)], 0.0);
                let op2 = t.gcn_norm(blend);
                let hw = t.matmul(h1, vs[2]);
                let h2 = t.matmul(op2, hw);
                let probs = t.row_softmax(h2);
                let ce = t.masked_cross_entropy(probs, Rc::clone(&labels), Rc::clone(&mask));
                let phi = t.row_sum_abs_sum(vs[4]);
                let phi_s = t.scale_shift(phi, 0.01, 0.0);
                t.add(ce, phi_s)
            },
            H,
            1e-3,
            &no_skip,
        );
    }
}
