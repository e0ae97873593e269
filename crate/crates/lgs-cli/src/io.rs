//! Text-format loaders for datasets and splits.
//!
//! A dataset directory holds four kinds of files:
//!
//! * `edges.txt` — one undirected edge per line as `u v` (each edge listed
//!   once; self-loops allowed, also listed once),
//! * `features.txt` — `node-id` followed by `d` feature values,
//! * `labels.txt` — `node-id` followed by a class index,
//! * `split_<i>.txt` — `node-id` then one of `train`, `val`, `test`; nodes
//!   missing from the file belong to no role.
//!
//! Lines starting with `#` and blank lines are ignored in every file. All
//! parse errors carry the file path and 1-based line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lgs_core::graph::{GraphDataset, SplitSpec};
use lgs_core::matrix::Matrix;

/// A parsed dataset plus bookkeeping the loader reports about its source
/// files.
pub struct LoadedDataset {
    pub dataset: GraphDataset,
    /// Number of edge lines in `edges.txt` (excluding comments/blanks).
    pub raw_edge_lines: usize,
}

/// Iterate over the meaningful lines of a text file: skips blank lines and
/// `#` comments, yields `(line_number, content)` with 1-based numbering.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn parse_node_id(path: &Path, line_no: usize, tok: &str, n: usize) -> Result<usize> {
    let id: usize = tok.parse().with_context(|| {
        format!("{}:{line_no}: invalid node id {tok:?}", path.display())
    })?;
    if id >= n {
        bail!(
            "{}:{line_no}: node id {id} out of range (dataset has {n} nodes)",
            path.display()
        );
    }
    Ok(id)
}

/// Parse `features.txt`. The node count and feature width are inferred from
/// the file itself: every node must appear exactly once, ids must form
/// `0..n`, and all rows must have the same number of feature values.
fn load_features(path: &Path) -> Result<Matrix> {
    let text = read_text(path)?;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_no, line) in data_lines(&text) {
        let mut toks = line.split_whitespace();
        let id_tok = toks.next().expect("non-empty line has a first token");
        let id: usize = id_tok.parse().with_context(|| {
            format!("{}:{line_no}: invalid node id {id_tok:?}", path.display())
        })?;
        let mut vals = Vec::with_capacity(width.unwrap_or(0));
        for tok in toks {
            let v: f64 = tok.parse().with_context(|| {
                format!("{}:{line_no}: non-numeric feature value {tok:?}", path.display())
            })?;
            vals.push(v);
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => bail!(
                "{}:{line_no}: expected {w} feature values, found {}",
                path.display(),
                vals.len()
            ),
            Some(_) => {}
        }
        rows.push((line_no, id, vals));
    }
    if rows.is_empty() {
        bail!("{}: no feature rows", path.display());
    }
    let n = rows.len();
    let d = width.unwrap_or(0);
    let mut seen = vec![false; n];
    let mut features = Matrix::zeros(n, d);
    for (line_no, id, vals) in rows {
        if id >= n {
            bail!(
                "{}:{line_no}: node id {id} out of range (file has {n} rows, so ids must be 0..{n})",
                path.display()
            );
        }
        if seen[id] {
            bail!("{}:{line_no}: duplicate node id {id}", path.display());
        }
        seen[id] = true;
        features.row_mut(id).copy_from_slice(&vals);
    }
    Ok(features)
}

/// Parse `labels.txt`: every node id in `0..n` exactly once, class indices
/// are dense (`num_classes` = max + 1).
fn load_labels(path: &Path, n: usize) -> Result<(Vec<usize>, usize)> {
    let text = read_text(path)?;
    let mut labels = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut count = 0usize;
    for (line_no, line) in data_lines(&text) {
        let mut toks = line.split_whitespace();
        let id = parse_node_id(path, line_no, toks.next().unwrap(), n)?;
        let Some(lab_tok) = toks.next() else {
            bail!("{}:{line_no}: missing class index", path.display());
        };
        if let Some(extra) = toks.next() {
            bail!("{}:{line_no}: unexpected trailing token {extra:?}", path.display());
        }
        let lab: usize = lab_tok.parse().with_context(|| {
            format!("{}:{line_no}: invalid class index {lab_tok:?}", path.display())
        })?;
        if seen[id] {
            bail!("{}:{line_no}: duplicate label for node {id}", path.display());
        }
        seen[id] = true;
        labels[id] = lab;
        count += 1;
    }
    if count != n {
        bail!("{}: {count} labels for {n} nodes", path.display());
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok((labels, num_classes))
}

/// Parse `edges.txt`: returns the edge list and the count of data lines.
fn load_edges(path: &Path, n: usize) -> Result<(Vec<(usize, usize)>, usize)> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    let mut lines = 0usize;
    for (line_no, line) in data_lines(&text) {
        let mut toks = line.split_whitespace();
        let u = parse_node_id(path, line_no, toks.next().unwrap(), n)?;
        let Some(v_tok) = toks.next() else {
            bail!("{}:{line_no}: expected two node ids", path.display());
        };
        let v = parse_node_id(path, line_no, v_tok, n)?;
        if let Some(extra) = toks.next() {
            bail!("{}:{line_no}: unexpected trailing token {extra:?}", path.display());
        }
        edges.push((u, v));
        lines += 1;
    }
    Ok((edges, lines))
}

/// Row-normalize features in place: each row with a nonzero sum is divided
/// by its sum; all-zero rows are left untouched.
fn normalize_rows(features: &mut Matrix) {
    let (n, _) = features.shape();
    for i in 0..n {
        let row = features.row_mut(i);
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
}

/// Load `<dir>/<name>/{edges,features,labels}.txt` into a [`GraphDataset`].
///
/// `normalize_features` divides each feature row by its sum (rows summing to
/// zero are kept as-is). Loading is read-only and idempotent.
pub fn load_dataset(dir: &Path, name: &str, normalize_features: bool) -> Result<LoadedDataset> {
    let base = dir.join(name);
    if !base.is_dir() {
        bail!("dataset directory {} does not exist", base.display());
    }
    let mut features = load_features(&base.join("features.txt"))?;
    let n = features.shape().0;
    let (labels, num_classes) = load_labels(&base.join("labels.txt"), n)?;
    let (edges, raw_edge_lines) = load_edges(&base.join("edges.txt"), n)?;
    if normalize_features {
        normalize_rows(&mut features);
    }
    let dataset = GraphDataset::new(name, edges, features, labels, num_classes)
        .map_err(|e| anyhow::anyhow!("{name}: {e}"))?;
    Ok(LoadedDataset { dataset, raw_edge_lines })
}

/// Path of a split file inside a dataset directory.
pub fn split_path(dir: &Path, name: &str, split_id: usize) -> PathBuf {
    dir.join(name).join(format!("split_{split_id}.txt"))
}

/// Load `split_<id>.txt`. Only listed nodes belong to a role; `split_id`
/// must be in `0..=9`.
pub fn load_split(dir: &Path, name: &str, split_id: usize, n: usize) -> Result<SplitSpec> {
    if split_id > 9 {
        bail!("split id {split_id} out of range (datasets ship splits 0..=9)");
    }
    let path = split_path(dir, name, split_id);
    let text = read_text(&path)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (line_no, line) in data_lines(&text) {
        let mut toks = line.split_whitespace();
        let id = parse_node_id(&path, line_no, toks.next().unwrap(), n)?;
        let Some(role) = toks.next() else {
            bail!("{}:{line_no}: missing role after node id", path.display());
        };
        if let Some(extra) = toks.next() {
            bail!("{}:{line_no}: unexpected trailing token {extra:?}", path.display());
        }
        match role {
            "train" => train.push(id),
            "val" => val.push(id),
            "test" => test.push(id),
            other => bail!(
                "{}:{line_no}: unknown role {other:?} (expected train, val, or test)",
                path.display()
            ),
        }
    }
    SplitSpec::new(split_id, train, val, test, n)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Format a matrix row as space-separated shortest-round-trip decimals.
/// Shared by writers that emit feature-like rows.
pub fn format_row(vals: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}
