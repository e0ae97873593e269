//! The structure-learning side: Sinkhorn-Knopp balancing, data-driven
//! initialization of the class transition matrix, pseudo-label assembly, and
//! the multi-head similarity builder over tape variables.

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::matrix::{gemm, Matrix, Trans};
use crate::sparse::Csr;
use crate::tape::{Tape, Var};

/// Outcome of Sinkhorn-Knopp balancing.
pub struct SinkhornResult {
    pub matrix: Matrix,
    /// Largest deviation of any row or column sum from 1 on exit.
    pub residual: f64,
    /// Number of full row+column passes performed.
    pub iterations: usize,
}

/// Alternately normalize rows and columns until every row and column sums to
/// one within `tol`, or `max_iters` passes elapse. The input must be square
/// and non-negative with strictly positive row and column sums; violations
/// panic (callers smooth their counts before balancing).
pub fn sinkhorn_knopp(m: &Matrix, tol: f64, max_iters: usize) -> SinkhornResult {
    let n = m.rows();
    assert_eq!(m.shape(), (n, n), "sinkhorn_knopp expects a square matrix");
    assert!(m.iter().all(|&v| v >= 0.0), "sinkhorn_knopp requires non-negative entries");
    let mut out = m.clone();
    for i in 0..n {
        let rs: f64 = out.row(i).iter().sum();
        assert!(rs > 0.0, "sinkhorn_knopp: row {i} sums to zero");
    }
    for j in 0..n {
        let cs: f64 = (0..n).map(|i| out[(i, j)]).sum();
        assert!(cs > 0.0, "sinkhorn_knopp: column {j} sums to zero");
    }
    let residual_of = |m: &Matrix| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let rs: f64 = m.row(i).iter().sum();
            worst = worst.max(libm::fabs(rs - 1.0));
        }
        for j in 0..n {
            let cs: f64 = (0..n).map(|i| m[(i, j)]).sum();
            worst = worst.max(libm::fabs(cs - 1.0));
        }
        worst
    };
    let mut residual = residual_of(&out);
    let mut iterations = 0;
    while residual > tol && iterations < max_iters {
        for i in 0..n {
            let rs: f64 = out.row(i).iter().sum();
            for v in out.row_mut(i) {
                *v /= rs;
            }
        }
        for j in 0..n {
            let cs: f64 = (0..n).map(|i| out[(i, j)]).sum();
            for i in 0..n {
                out[(i, j)] /= cs;
            }
        }
        iterations += 1;
        residual = residual_of(&out);
    }
    SinkhornResult { matrix: out, residual, iterations }
}

/// Training labels blended with predictions: rows under `train_mask` take
/// the one-hot label, every other row takes the prediction row. Plain-matrix
/// version used outside the tape (the differentiable counterpart is
/// [`Tape::masked_row_blend`]).
pub fn blend_pseudo_labels(one_hot: &Matrix, train_mask: &[bool], predicted: &Matrix) -> Matrix {
    assert_eq!(one_hot.shape(), predicted.shape(), "label/prediction shape mismatch");
    assert_eq!(train_mask.len(), one_hot.rows(), "mask length mismatch");
    let mut out = predicted.clone();
    for i in 0..out.rows() {
        if train_mask[i] {
            out.row_mut(i).copy_from_slice(one_hot.row(i));
        }
    }
    out
}

/// Class transition matrix estimated from observed edges: count label
/// co-occurrence across edges as Y_trᵀ·A·Y_tr, smooth every cell by `delta`,
/// and balance to doubly stochastic form with Sinkhorn-Knopp.
pub fn init_transition(
    adjacency: &Csr,
    y_tr: &Matrix,
    delta: f64,
    tol: f64,
    max_iters: usize,
) -> SinkhornResult {
    let n = adjacency.rows();
    let c = y_tr.cols();
    assert_eq!(y_tr.rows(), n, "y_tr rows must match node count");
    assert!(delta > 0.0, "smoothing delta must be positive, got {delta}");
    let mut ay = Matrix::zeros(n, c);
    adjacency.mul_dense(y_tr, None, &mut ay);
    let mut counts = Matrix::zeros(c, c);
    gemm(1.0, y_tr, Trans::Yes, &ay, Trans::No, 0.0, &mut counts);
    for v in counts.data_mut() {
        *v += delta;
    }
    sinkhorn_knopp(&counts, tol, max_iters)
}

/// Mean of one weighted-cosine similarity matrix per head. With a single
/// head the head output is returned directly.
pub fn similarity(tape: &mut Tape, z: Var, heads: &[Var]) -> Var {
    assert!(!heads.is_empty(), "similarity needs at least one head");
    let per_head: Vec<Var> = heads.iter().map(|&w| tape.weighted_cosine(z, w)).collect();
    if per_head.len() == 1 {
        per_head[0]
    } else {
        let coeff = 1.0 / per_head.len() as f64;
        let terms: Vec<(Var, f64)> = per_head.into_iter().map(|v| (v, coeff)).collect();
        tape.affine_combo(&terms, 0.0)
    }
}

/// Row-sum magnitude penalty on the transition matrix, optionally measured
/// against its initialization (`reference`): Σ_i |Σ_j (P − P_ref)_ij|.
pub fn transition_penalty(tape: &mut Tape, p: Var, reference: Option<&Rc<Matrix>>) -> Var {
    match reference {
        None => tape.row_sum_abs_sum(p),
        Some(r) => {
            let rv = tape.constant_shared(Rc::clone(r));
            let diff = tape.sub(p, rv);
            tape.row_sum_abs_sum(diff)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sinkhorn_identity_is_a_fixed_point() {
        let r = sinkhorn_knopp(&Matrix::identity(4), 1e-9, 50);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.matrix.data(), Matrix::identity(4).data());
    }

    #[test]
    fn sinkhorn_all_ones_balances_to_uniform() {
        let r = sinkhorn_knopp(&Matrix::filled(2, 2, 1.0), 1e-9, 50);
        for v in r.matrix.iter() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_matches_long_reference_run() {
        // Independent reference: the same alternation run far past
        // convergence.
        let m = Matrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let mut reference = m.clone();
        for _ in 0..10_000 {
            for i in 0..2 {
                let rs: f64 = reference.row(i).iter().sum();
                for v in reference.row_mut(i) {
                    *v /= rs;
                }
            }
            for j in 0..2 {
                let cs: f64 = reference[(0, j)] + reference[(1, j)];
                reference[(0, j)] /= cs;
                reference[(1, j)] /= cs;
            }
        }
        let r = sinkhorn_knopp(&m, 1e-10, 50);
        for (a, b) in r.matrix.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sinkhorn_random_positive_matrices_converge_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for trial in 0..100 {
            let data: Vec<f64> = (0..25).map(|_| 0.05 + rng.gen::<f64>()).collect();
            let m = Matrix::from_vec(5, 5, data);
            let r = sinkhorn_knopp(&m, 1e-6, 50);
            assert!(
                r.residual <= 1e-6,
                "trial {trial}: residual {} after {} iterations",
                r.residual,
                r.iterations
            );
            assert!(r.iterations <= 50);
        }
    }

    #[test]
    #[should_panic(expected = "row 1 sums to zero")]
    fn sinkhorn_rejects_zero_rows() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        sinkhorn_knopp(&m, 1e-6, 50);
    }

    #[test]
    #[should_panic(expected = "non-negative")]
    fn sinkhorn_rejects_negative_entries() {
        let m = Matrix::from_vec(2, 2, vec![1.0, -0.1, 1.0, 1.0]);
        sinkhorn_knopp(&m, 1e-6, 50);
    }

    #[test]
    fn pseudo_labels_take_hard_rows_from_labels() {
        let one_hot = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let soft = Matrix::from_vec(3, 2, vec![0.6, 0.4, 0.3, 0.7, 0.2, 0.8]);
        let out = blend_pseudo_labels(&one_hot, &[true, false, true], &soft);
        assert_eq!(out.row(0), &[1.0, 0.0]);
        assert_eq!(out.row(1), &[0.3, 0.7]);
        assert_eq!(out.row(2), &[1.0, 0.0]);
    }

    fn one_hot(labels: &[usize], c: usize) -> Matrix {
        let mut m = Matrix::zeros(labels.len(), c);
        for (i, &l) in labels.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        m
    }

    #[test]
    fn transition_init_within_class_edges_give_near_identity() {
        // Two 3-cliques, one per class, no cross edges.
        let mut triples = Vec::new();
        for block in [0usize, 3] {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        triples.push((block + i, block + j, 1.0));
                    }
                }
            }
        }
        let adj = Csr::from_triples(6, 6, triples);
        let y = one_hot(&[0, 0, 0, 1, 1, 1], 2);
        let r = init_transition(&adj, &y, 1e-6, 1e-9, 200);
        assert!(r.matrix[(0, 0)] > 0.99);
        assert!(r.matrix[(1, 1)] > 0.99);
        assert!(r.matrix[(0, 1)] < 0.01);
    }

    #[test]
    fn transition_init_cross_class_edges_give_anti_diagonal() {
        // Complete bipartite between the two classes.
        let mut triples = Vec::new();
        for i in 0..2 {
            for j in 2..4 {
                triples.push((i, j, 1.0));
                triples.push((j, i, 1.0));
            }
        }
        let adj = Csr::from_triples(4, 4, triples);
        let y = one_hot(&[0, 0, 1, 1], 2);
        let r = init_transition(&adj, &y, 1e-6, 1e-9, 200);
        assert!(r.matrix[(0, 1)] > 0.99);
        assert!(r.matrix[(1, 0)] > 0.99);
        assert!(r.matrix[(0, 0)] < 0.01);
    }

    #[test]
    fn transition_init_is_doubly_stochastic_on_mixed_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 30;
        let c = 4;
        let labels: Vec<usize> = (0..n).map(|_| (rng.gen::<f64>() * c as f64) as usize).collect();
        let mut triples = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.2 {
                    triples.push((i, j, 1.0));
                    triples.push((j, i, 1.0));
                }
            }
        }
        let adj = Csr::from_triples(n, n, triples);
        // Soft rows for half the nodes, as after a real warm-up.
        let mut y = one_hot(&labels, c);
        for i in 0..n / 2 {
            let row = y.row_mut(i);
            let mut rest = 1.0;
            for (k, v) in row.iter_mut().enumerate() {
                if k + 1 < c {
                    *v = rest * 0.4;
                    rest -= *v;
                } else {
                    *v = rest;
                }
            }
        }
        let r = init_transition(&adj, &y, 1e-6, 1e-6, 50);
        assert!(r.residual <= 1e-6, "residual {} after {} iters", r.residual, r.iterations);
        for i in 0..c {
            let rs: f64 = r.matrix.row(i).iter().sum();
            assert!((rs - 1.0).abs() <= 2e-6);
        }
    }

    #[test]
    fn similarity_identical_rows_give_all_ones() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_vec(3, 2, vec![0.4, -0.3, 0.4, -0.3, 0.4, -0.3]));
        let w = t.param(Matrix::filled(1, 2, 1.0));
        let s = similarity(&mut t, z, &[w]);
        for v in t.value(s).iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_orthogonal_rows_give_identity() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_vec(3, 3, vec![
            1.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, //
            0.0, 0.0, 0.5,
        ]));
        let w = t.param(Matrix::filled(1, 3, 1.0));
        let s = similarity(&mut t, z, &[w]);
        let out = t.value(s);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((out[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_matches_brute_force_average_over_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, d) = (5, 3);
        let zdata: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let z = Matrix::from_vec(n, d, zdata);
        let w1: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() + 0.1).collect();
        let w2: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() + 0.1).collect();

        let cos = |wi: &[f64], a: &[f64], b: &[f64]| -> f64 {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for k in 0..d {
                let x = a[k] * wi[k];
                let y = b[k] * wi[k];
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (libm::sqrt(na) * libm::sqrt(nb))
            }
        };

        let mut t = Tape::new();
        let zv = t.constant(z.clone());
        let h1 = t.param(Matrix::from_vec(1, d, w1.clone()));
        let h2 = t.param(Matrix::from_vec(1, d, w2.clone()));
        let s = similarity(&mut t, zv, &[h1, h2]);
        let out = t.value(s);
        for i in 0..n {
            for j in 0..n {
                let expect =
                    0.5 * (cos(&w1, z.row(i), z.row(j)) + cos(&w2, z.row(i), z.row(j)));
                assert!(
                    (out[(i, j)] - expect).abs() < 1e-12,
                    "mismatch at ({i},{j}): {} vs {expect}",
                    out[(i, j)]
                );
            }
        }
    }

    #[test]
    fn transition_penalty_literal_and_deviation_forms() {
        let pm = Matrix::from_vec(2, 2, vec![0.7, 0.3, 0.2, 0.8]);
        // Literal: rows sum to 1 each → penalty 2.
        let mut t = Tape::new();
        let p = t.param(pm.clone());
        let lit = transition_penalty(&mut t, p, None);
        assert!((t.value(lit).scalar() - 2.0).abs() < 1e-12);
        // Deviation from itself: exactly 0.
        let reference = Rc::new(pm);
        let dev = transition_penalty(&mut t, p, Some(&reference));
        assert_eq!(t.value(dev).scalar(), 0.0);
    }
}
