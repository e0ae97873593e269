//! Graph containers and the non-differentiable operator builders: the
//! renormalized propagation operator, the rescaled Laplacian, a power-method
//! spectral-radius estimate, and homophily statistics.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::sparse::Csr;

/// A node-classification dataset: an undirected graph, dense node features,
/// and one label per node.
///
/// `edges` is the canonical undirected edge list — one entry per unordered
/// pair, self-loops allowed — and is the basis for edge statistics.
/// `adjacency` is the 0/1 matrix actually convolved over: symmetric, zero
/// diagonal (self-loops are supplied by the operators, not the data).
pub struct GraphDataset {
    pub name: String,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub adjacency: Rc<Csr>,
    pub features: Rc<Matrix>,
    pub features_sparse: Rc<Csr>,
}

impl GraphDataset {
    /// Build and validate a dataset. Edges are deduplicated and mirrored;
    /// self-loops are kept in `edges` but excluded from `adjacency`.
    pub fn new(
        name: &str,
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, String> {
        let n = features.rows();
        if labels.len() != n {
            return Err(alloc::format!(
                "dataset '{name}': {} labels for {} feature rows",
                labels.len(),
                n
            ));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(alloc::format!(
                    "dataset '{name}': node {i} has label {l} but only {num_classes} classes"
                ));
            }
        }
        let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(alloc::format!(
                    "dataset '{name}': edge ({u}, {v}) references a node outside 0..{n}"
                ));
            }
            canonical.push((u.min(v), u.max(v)));
        }
        canonical.sort_unstable();
        canonical.dedup();
        let mut triples: Vec<(usize, usize, f64)> = Vec::new();
        for &(u, v) in &canonical {
            if u != v {
                triples.push((u, v, 1.0));
                triples.push((v, u, 1.0));
            }
        }
        let adjacency = Csr::from_triples(n, n, triples);
        let features_sparse = Csr::from_dense(&features);
        Ok(GraphDataset {
            name: String::from(name),
            edges: canonical,
            labels,
            num_classes,
            adjacency: Rc::new(adjacency),
            features: Rc::new(features),
            features_sparse: Rc::new(features_sparse),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of undirected edges (self-loops counted once).
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// One-hot label matrix, n × num_classes.
    pub fn one_hot_labels(&self) -> Matrix {
        let n = self.num_nodes();
        let mut m = Matrix::zeros(n, self.num_classes);
        for (i, &l) in self.labels.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        m
    }

    /// Dense copy of the adjacency matrix.
    pub fn adjacency_dense(&self) -> Matrix {
        self.adjacency.to_dense()
    }
}

/// One train/validation/test partition of a dataset's nodes. Roles are
/// disjoint; nodes may be left out of all three (some published splits do
/// not cover every node).
#[derive(Clone, Debug)]
pub struct SplitSpec {
    pub split_id: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn new(
        split_id: usize,
        mut train: Vec<usize>,
        mut val: Vec<usize>,
        mut test: Vec<usize>,
        n: usize,
    ) -> Result<Self, String> {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        let mut seen = vec![false; n];
        for (role, ids) in [("train", &train), ("val", &val), ("test", &test)] {
            for &i in ids.iter() {
                if i >= n {
                    return Err(alloc::format!(
                        "split {split_id}: {role} node {i} outside 0..{n}"
                    ));
                }
                if seen[i] {
                    return Err(alloc::format!(
                        "split {split_id}: node {i} assigned to more than one role"
                    ));
                }
                seen[i] = true;
            }
        }
        if train.is_empty() {
            return Err(alloc::format!("split {split_id}: empty training set"));
        }
        Ok(SplitSpec { split_id, train, val, test })
    }

    /// Boolean mask over nodes for the training role.
    pub fn train_mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.train {
            m[i] = true;
        }
        m
    }
}

/// Fraction of rows in `idx` whose argmax matches the label (ties break to
/// the lowest column index). Empty `idx` yields 0.
pub fn accuracy(probs: &Matrix, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for &i in idx {
        let row = probs.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / idx.len() as f64
}

// ── operators ───────────────────────────────────────────────────────────

/// Renormalized propagation operator D̂^{-1/2}(A+I)D̂^{-1/2} with D̂ the
/// degree matrix of A+I. Self-loops guarantee every degree is at least one,
/// so a previously isolated node's row is exactly its self-loop entry.
pub fn gcn_normalize(adjacency: &Matrix) -> Matrix {
    let n = adjacency.rows();
    assert_eq!(adjacency.shape(), (n, n), "adjacency must be square");
    let mut inv = vec![0.0; n];
    for i in 0..n {
        let d: f64 = 1.0 + adjacency.row(i).iter().sum::<f64>();
        inv[i] = 1.0 / libm::sqrt(d);
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = adjacency[(i, j)] + if i == j { 1.0 } else { 0.0 };
            if v != 0.0 {
                out[(i, j)] = v * inv[i] * inv[j];
            }
        }
    }
    out
}

/// Sparse counterpart of [`gcn_normalize`] for a 0/1 zero-diagonal adjacency.
pub fn gcn_normalize_csr(adjacency: &Csr) -> Csr {
    let n = adjacency.rows();
    let mut inv = vec![0.0; n];
    for i in 0..n {
        let d: f64 = 1.0 + adjacency.row_entries(i).map(|(_, v)| v).sum::<f64>();
        inv[i] = 1.0 / libm::sqrt(d);
    }
    let mut triples = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        triples.push((i, i, inv[i] * inv[i]));
        for (j, v) in adjacency.row_entries(i) {
            triples.push((i, j, v * inv[i] * inv[j]));
        }
    }
    Csr::from_triples(n, n, triples)
}

/// Rescaled Laplacian (2/λ_max)·L − I with L = I − D^{-1/2} A D^{-1/2}.
/// Rows of zero degree take L's row as zero, so they map to −1 on the
/// diagonal.
pub fn scaled_laplacian(adjacency: &Matrix, lambda_max: f64) -> Matrix {
    let n = adjacency.rows();
    assert_eq!(adjacency.shape(), (n, n), "adjacency must be square");
    assert!(lambda_max > 0.0, "lambda_max must be positive, got {lambda_max}");
    let mut deg = vec![0.0; n];
    for i in 0..n {
        deg[i] = adjacency.row(i).iter().sum::<f64>();
    }
    let inv: Vec<f64> =
        deg.iter().map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 }).collect();
    let scale = 2.0 / lambda_max;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let laplacian = if i == j {
                if deg[i] > 0.0 {
                    1.0 - adjacency[(i, j)] * inv[i] * inv[j]
                } else {
                    0.0
                }
            } else {
                -adjacency[(i, j)] * inv[i] * inv[j]
            };
            out[(i, j)] = scale * laplacian - if i == j { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Sparse counterpart of [`scaled_laplacian`].
pub fn scaled_laplacian_csr(adjacency: &Csr, lambda_max: f64) -> Csr {
    let n = adjacency.rows();
    assert!(lambda_max > 0.0, "lambda_max must be positive, got {lambda_max}");
    let mut deg = vec![0.0; n];
    for i in 0..n {
        deg[i] = adjacency.row_entries(i).map(|(_, v)| v).sum::<f64>();
    }
    let inv: Vec<f64> =
        deg.iter().map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 }).collect();
    let scale = 2.0 / lambda_max;
    let mut triples = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        let diag = if deg[i] > 0.0 { scale - 1.0 } else { -1.0 };
        if diag != 0.0 {
            triples.push((i, i, diag));
        }
        for (j, v) in adjacency.row_entries(i) {
            if i != j {
                triples.push((i, j, -scale * v * inv[i] * inv[j]));
            } else {
                // A stored diagonal entry folds into the Laplacian diagonal.
                triples.push((i, i, -scale * v * inv[i] * inv[j]));
            }
        }
    }
    Csr::from_triples(n, n, triples)
}

/// Largest eigenvalue of the normalized Laplacian L = I − D^{-1/2} A
/// D^{-1/2}, estimated by power iteration on a deterministic start vector.
/// Stops when the Rayleigh quotient moves by less than `tol` or after
/// `max_iters` rounds. An edgeless graph (L = 0) returns 0.
pub fn estimate_lambda_max(adjacency: &Csr, tol: f64, max_iters: usize) -> f64 {
    let n = adjacency.rows();
    if n == 0 {
        return 0.0;
    }
    let mut deg = vec![0.0; n];
    for i in 0..n {
        deg[i] = adjacency.row_entries(i).map(|(_, v)| v).sum::<f64>();
    }
    let inv: Vec<f64> =
        deg.iter().map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 }).collect();
    // L·v without materializing L.
    let apply = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = if deg[i] > 0.0 { v[i] } else { 0.0 };
            for (j, a) in adjacency.row_entries(i) {
                acc -= a * inv[i] * inv[j] * v[j];
            }
            out[i] = acc;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        apply(&v, &mut w);
        let rayleigh: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        let wnorm = libm::sqrt(w.iter().map(|x| x * x).sum::<f64>());
        if wnorm == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(w.iter()) {
            *vi = wi / wnorm;
        }
        if libm::fabs(rayleigh - lambda) <= tol {
            return rayleigh;
        }
        lambda = rayleigh;
    }
    lambda
}

// ── homophily ───────────────────────────────────────────────────────────

/// Homophily statistics for a labeled graph.
///
/// `per_node[i]` is the fraction of node i's neighbors (self excluded)
/// sharing its label, `None` when the node has no neighbors. `node_mean`
/// averages the defined per-node values. `edge_fraction` is the share of
/// undirected edges — self-loops included, and always same-class — whose
/// endpoints agree; this is the graph-level number benchmark tables quote.
pub struct HomophilyProfile {
    pub per_node: Vec<Option<f64>>,
    pub node_mean: f64,
    pub edge_fraction: f64,
}

/// Compute homophily from the canonical undirected edge list.
pub fn homophily(n: usize, edges: &[(usize, usize)], labels: &[usize]) -> HomophilyProfile {
    assert_eq!(labels.len(), n, "labels must cover all {n} nodes");
    let mut neighbor_total = vec![0usize; n];
    let mut neighbor_same = vec![0usize; n];
    let mut same_edges = 0usize;
    for &(u, v) in edges {
        let same = labels[u] == labels[v];
        if same {
            same_edges += 1;
        }
        if u != v {
            neighbor_total[u] += 1;
            neighbor_total[v] += 1;
            if same {
                neighbor_same[u] += 1;
                neighbor_same[v] += 1;
            }
        }
    }
    let mut per_node = Vec::with_capacity(n);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for i in 0..n {
        if neighbor_total[i] == 0 {
            per_node.push(None);
        } else {
            let h = neighbor_same[i] as f64 / neighbor_total[i] as f64;
            per_node.push(Some(h));
            sum += h;
            defined += 1;
        }
    }
    let node_mean = if defined > 0 { sum / defined as f64 } else { 0.0 };
    let edge_fraction = if edges.is_empty() { 0.0 } else { same_edges as f64 / edges.len() as f64 };
    HomophilyProfile { per_node, node_mean, edge_fraction }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn path3_dataset() -> GraphDataset {
        // 0 — 1 — 2 with labels [0, 0, 1].
        GraphDataset::new(
            "path3",
            vec![(0, 1), (1, 2)],
            Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            vec![0, 0, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn dataset_builds_symmetric_zero_diagonal_adjacency() {
        // Duplicates, reversed duplicates, and a self-loop.
        let ds = GraphDataset::new(
            "t",
            vec![(0, 1), (1, 0), (0, 1), (2, 2), (1, 2)],
            Matrix::zeros(3, 1),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        assert_eq!(ds.edges, vec![(0, 1), (1, 2), (2, 2)]);
        assert_eq!(ds.num_edges(), 3);
        let a = ds.adjacency_dense();
        for i in 0..3 {
            assert_eq!(a[(i, i)], 0.0, "diagonal must be zero");
            for j in 0..3 {
                assert_eq!(a[(i, j)], a[(j, i)], "adjacency must be symmetric");
            }
        }
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 2)], 1.0);
        assert_eq!(a[(0, 2)], 0.0);
    }

    #[test]
    fn dataset_rejects_bad_labels_and_edges() {
        let e = GraphDataset::new("t", vec![], Matrix::zeros(2, 1), vec![0, 5], 3).err().unwrap();
        assert!(e.contains("label"), "{e}");
        let e = GraphDataset::new("t", vec![(0, 9)], Matrix::zeros(2, 1), vec![0, 1], 2)
            .err().unwrap();
        assert!(e.contains("edge"), "{e}");
        let e =
            GraphDataset::new("t", vec![], Matrix::zeros(2, 1), vec![0], 2).err().unwrap();
        assert!(e.contains("labels"), "{e}");
    }

    #[test]
    fn one_hot_labels_match() {
        let ds = path3_dataset();
        let y = ds.one_hot_labels();
        assert_eq!(y.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn split_rejects_overlap_and_range() {
        let e = SplitSpec::new(0, vec![0, 1], vec![1], vec![2], 4).err().unwrap();
        assert!(e.contains("more than one role"), "{e}");
        let e = SplitSpec::new(0, vec![0], vec![7], vec![], 4).err().unwrap();
        assert!(e.contains("outside"), "{e}");
        let e = SplitSpec::new(0, vec![], vec![0], vec![1], 4).err().unwrap();
        assert!(e.contains("empty training set"), "{e}");
        // Leaving nodes unassigned is allowed.
        let s = SplitSpec::new(1, vec![0], vec![1], vec![2], 5).unwrap();
        assert_eq!(s.train_mask(5), vec![true, false, false, false, false]);
    }

    #[test]
    fn accuracy_breaks_ties_toward_lowest_index() {
        let probs = Matrix::from_vec(2, 3, vec![0.4, 0.4, 0.2, 0.1, 0.2, 0.7]);
        // Row 0 ties between classes 0 and 1 → predicted 0.
        assert_eq!(accuracy(&probs, &[0, 2], &[0, 1]), 1.0);
        assert_eq!(accuracy(&probs, &[1, 2], &[0, 1]), 0.5);
        assert_eq!(accuracy(&probs, &[1, 2], &[]), 0.0);
    }

    // ── operator examples ───────────────────────────────────────────────

    #[test]
    fn gcn_normalize_single_node() {
        let out = gcn_normalize(&Matrix::zeros(1, 1));
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn gcn_normalize_single_edge_gives_half_everywhere() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let out = gcn_normalize(&a);
        for v in out.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_normalize_regular_graph_rows_sum_to_one() {
        // 4-cycle: every node has degree 2.
        let mut a = Matrix::zeros(4, 4);
        for (u, v) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        let out = gcn_normalize(&a);
        for i in 0..4 {
            let s: f64 = out.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
        }
    }

    #[test]
    fn gcn_normalize_isolated_node_keeps_only_self_loop() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        let out = gcn_normalize(&a);
        assert_eq!(out.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gcn_normalize_csr_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 12;
        let mut a = Matrix::zeros(n, n);
        let mut triples = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.3 {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                    triples.push((i, j, 1.0));
                    triples.push((j, i, 1.0));
                }
            }
        }
        let csr = Csr::from_triples(n, n, triples);
        let dense_out = gcn_normalize(&a);
        let sparse_out = gcn_normalize_csr(&csr).to_dense();
        for (d, s) in dense_out.iter().zip(sparse_out.iter()) {
            assert!((d - s).abs() < 1e-15);
        }
    }

    #[test]
    fn scaled_laplacian_edgeless_is_negative_identity() {
        let out = scaled_laplacian(&Matrix::zeros(3, 3), 2.0);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { -1.0 } else { 0.0 };
                assert_eq!(out[(i, j)], expect);
            }
        }
    }

    #[test]
    fn scaled_laplacian_single_edge_hand_value() {
        let a = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let out = scaled_laplacian(&a, 2.0);
        assert!((out[(0, 0)] - 0.0).abs() < 1e-15);
        assert!((out[(0, 1)] - -1.0).abs() < 1e-15);
        assert!((out[(1, 0)] - -1.0).abs() < 1e-15);
        assert!((out[(1, 1)] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_laplacian_csr_matches_dense_with_isolated_node() {
        let mut a = Matrix::zeros(4, 4);
        for (u, v) in [(0, 1), (1, 2)] {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        // Node 3 is isolated.
        let csr = Csr::from_dense(&a);
        let dense_out = scaled_laplacian(&a, 1.4);
        let sparse_out = scaled_laplacian_csr(&csr, 1.4).to_dense();
        for (d, s) in dense_out.iter().zip(sparse_out.iter()) {
            assert!((d - s).abs() < 1e-15);
        }
        assert_eq!(dense_out.row(3), &[0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn lambda_max_exact_on_known_graphs() {
        // Single edge (bipartite): λ_max = 2.
        let pair = Csr::from_triples(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        assert!((estimate_lambda_max(&pair, 1e-9, 1000) - 2.0).abs() < 1e-6);
        // Triangle: normalized Laplacian spectrum {0, 3/2, 3/2}.
        let tri = Csr::from_triples(
            3,
            3,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (0, 2, 1.0), (2, 0, 1.0)],
        );
        assert!((estimate_lambda_max(&tri, 1e-9, 1000) - 1.5).abs() < 1e-6);
        // Edgeless: L = 0.
        let empty = Csr::from_triples(3, 3, vec![]);
        assert_eq!(estimate_lambda_max(&empty, 1e-9, 1000), 0.0);
    }

    #[test]
    fn scaled_laplacian_spectrum_bounded_by_one_at_true_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10;
        let mut a = Matrix::zeros(n, n);
        let mut triples = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.35 {
                    a[(i, j)] = 1.0;
                    a[(j, i)] = 1.0;
                    triples.push((i, j, 1.0));
                    triples.push((j, i, 1.0));
                }
            }
        }
        let csr = Csr::from_triples(n, n, triples);
        let lmax = estimate_lambda_max(&csr, 1e-12, 5000);
        let lt = scaled_laplacian(&a, lmax);
        // Spectral radius of the rescaled operator via power iteration.
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut radius = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += lt[(i, j)] * v[j];
                }
            }
            let norm = libm::sqrt(w.iter().map(|x| x * x).sum::<f64>());
            if norm == 0.0 {
                break;
            }
            radius = norm / libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            let vnorm = norm;
            v = w.iter().map(|x| x / vnorm).collect();
        }
        assert!(radius <= 1.0 + 1e-6, "spectral radius {radius} exceeds 1");
    }

    // ── homophily examples ──────────────────────────────────────────────

    #[test]
    fn homophily_three_node_path() {
        let h = homophily(3, &[(0, 1), (1, 2)], &[0, 0, 1]);
        assert_eq!(h.per_node[0], Some(1.0));
        assert_eq!(h.per_node[1], Some(0.5));
        assert_eq!(h.per_node[2], Some(0.0));
        assert!((h.edge_fraction - 0.5).abs() < 1e-15);
        assert!((h.node_mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn homophily_uniform_labels_is_one() {
        let h = homophily(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], &[1, 1, 1, 1]);
        assert_eq!(h.edge_fraction, 1.0);
        assert_eq!(h.node_mean, 1.0);
        assert!(h.per_node.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn homophily_isolated_node_is_undefined_and_excluded() {
        let h = homophily(3, &[(0, 1)], &[0, 0, 1]);
        assert_eq!(h.per_node[2], None);
        assert_eq!(h.node_mean, 1.0);
        assert_eq!(h.edge_fraction, 1.0);
    }

    #[test]
    fn homophily_self_loop_counts_as_same_class_edge() {
        // One cross-class edge plus one self-loop: fraction = 1/2. The loop
        // does not enter any per-node neighborhood.
        let h = homophily(2, &[(0, 1), (0, 0)], &[0, 1]);
        assert!((h.edge_fraction - 0.5).abs() < 1e-15);
        assert_eq!(h.per_node[0], Some(0.0));
        assert_eq!(h.per_node[1], Some(0.0));
        assert_eq!(h.node_mean, 0.0);
    }

    #[test]
    fn node_mean_equals_mean_of_defined_per_node_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 20;
        let labels: Vec<usize> = (0..n).map(|_| (rng.gen::<f64>() * 3.0) as usize).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.15 {
                    edges.push((i, j));
                }
            }
        }
        let h = homophily(n, &edges, &labels);
        let defined: Vec<f64> = h.per_node.iter().flatten().copied().collect();
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        assert!((h.node_mean - mean).abs() < 1e-12);
    }
}
