//! Run artifacts: per-run traces, the accuracy summary, and the
//! homophily-binned accuracy breakdown, each emitted as CSV plus an aligned
//! text table on standard output.
//!
//! All numeric CSV fields use the shortest decimal that round-trips the
//! underlying `f64`, so files are byte-stable across identically seeded
//! runs and statistics recomputed from them match the printed table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lgs_core::matrix::Matrix;
use lgs_core::trainer::TrainOutcome;

/// Everything one completed (dataset, split) run produced.
pub struct RunReport {
    pub dataset: String,
    pub split_id: usize,
    pub backbone: String,
    /// Effective settings as sorted `(key, value)` pairs; together with the
    /// seed they reproduce the run bit-for-bit.
    pub snapshot: Vec<(String, String)>,
    /// Epochs belonging to the warm-up phase (for the phase column).
    pub warmup_epochs: usize,
    pub outcome: TrainOutcome,
    /// Wall-clock duration. Reported on standard error only — never written
    /// to CSV, which must be byte-identical across re-runs.
    pub wall_time_secs: f64,
}

/// Mean and population standard deviation. The same function backs the
/// printed table and any recomputation from the per-run files, so the two
/// always agree bit-for-bit.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

// ── per-run trace files ─────────────────────────────────────────────────

/// Render one run as a CSV with `#`-prefixed provenance comments.
pub fn run_csv(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dataset = {}", report.dataset);
    let _ = writeln!(out, "# split = {}", report.split_id);
    for (k, v) in &report.snapshot {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let o = &report.outcome;
    let _ = writeln!(out, "# best_epoch = {}", o.best_epoch);
    let _ = writeln!(out, "# best_val_accuracy = {}", o.best_val_accuracy);
    let _ = writeln!(out, "# test_accuracy = {}", o.test_accuracy);
    let _ = writeln!(out, "# sinkhorn_residual = {}", o.sinkhorn_residual);
    let _ = writeln!(out, "# sinkhorn_iterations = {}", o.sinkhorn_iterations);
    out.push_str("epoch,phase,train_loss,val_accuracy,test_accuracy,phi\n");
    for t in &o.traces {
        let phase = if t.epoch < report.warmup_epochs { "warmup" } else { "joint" };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.epoch, phase, t.train_loss, t.val_accuracy, t.test_accuracy, t.phi_value
        );
    }
    out
}

/// Parse the `# test_accuracy = …` comment back out of a per-run CSV.
pub fn test_accuracy_from_csv(text: &str) -> Option<f64> {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# test_accuracy = ") {
            return rest.trim().parse().ok();
        }
    }
    None
}

// ── summary ─────────────────────────────────────────────────────────────

/// One summary row: a (dataset, backbone) group aggregated over splits.
pub struct SummaryRow {
    pub dataset: String,
    pub backbone: String,
    pub mean: f64,
    pub std: f64,
    pub n_splits: usize,
}

/// Group reports by (dataset, backbone) and aggregate test accuracy over
/// splits, sorted by group key with splits in ascending order.
pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in reports {
        groups
            .entry((r.dataset.clone(), r.backbone.clone()))
            .or_default()
            .push((r.split_id, r.outcome.test_accuracy));
    }
    groups
        .into_iter()
        .map(|((dataset, backbone), mut accs)| {
            accs.sort_unstable_by_key(|&(split, _)| split);
            let xs: Vec<f64> = accs.iter().map(|&(_, a)| a).collect();
            let (mean, std) = mean_std(&xs);
            SummaryRow { dataset, backbone, mean, std, n_splits: xs.len() }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("dataset,backbone,mean,std,n_splits\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.dataset, r.backbone, r.mean, r.std, r.n_splits);
    }
    out
}

/// Aligned text table with accuracies in percent.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut name_w = "dataset".len();
    let mut bb_w = "backbone".len();
    for r in rows {
        name_w = name_w.max(r.dataset.len());
        bb_w = bb_w.max(r.backbone.len());
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:<bb_w$}  {:>14}  {:>6}", "dataset", "backbone", "accuracy", "splits");
    for r in rows {
        let acc = format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std);
        let _ = writeln!(out, "{:<name_w$}  {:<bb_w$}  {:>14}  {:>6}", r.dataset, r.backbone, acc, r.n_splits);
    }
    out
}

// ── homophily-binned accuracy ───────────────────────────────────────────

pub const NUM_BINS: usize = 10;

/// Test-node tallies over ten equal homophily sub-ranges of [0, 1].
#[derive(Clone, Default)]
pub struct HomophilyBins {
    pub nodes: [usize; NUM_BINS],
    pub correct: [usize; NUM_BINS],
}

/// Bin index for a per-node homophily ratio; h = 1 lands in the last bin.
pub fn bin_of(h: f64) -> usize {
    ((h * NUM_BINS as f64) as usize).min(NUM_BINS - 1)
}

pub fn bin_label(b: usize) -> String {
    format!("0.{b}-{}", if b == 9 { "1.0".to_string() } else { format!("0.{}", b + 1) })
}

impl HomophilyBins {
    /// Tally the test nodes of one run. Nodes without a defined homophily
    /// ratio (no neighbors once self-loops are dropped) are skipped.
    pub fn add_run(
        &mut self,
        per_node: &[Option<f64>],
        predictions: &Matrix,
        labels: &[usize],
        test_idx: &[usize],
    ) {
        for &i in test_idx {
            let Some(h) = per_node[i] else { continue };
            let b = bin_of(h);
            self.nodes[b] += 1;
            if argmax(predictions.row(i)) == labels[i] {
                self.correct[b] += 1;
            }
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().sum()
    }

    pub fn node_fraction(&self, b: usize) -> f64 {
        let total = self.total_nodes();
        if total == 0 {
            0.0
        } else {
            self.nodes[b] as f64 / total as f64
        }
    }

    pub fn accuracy(&self, b: usize) -> Option<f64> {
        (self.nodes[b] > 0).then(|| self.correct[b] as f64 / self.nodes[b] as f64)
    }

    /// CSV with one row per bin; the accuracy field is empty for bins
    /// containing no test nodes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,node_fraction,accuracy\n");
        for b in 0..NUM_BINS {
            let acc = match self.accuracy(b) {
                Some(a) => format!("{a}"),
                None => String::new(),
            };
            let _ = writeln!(out, "{},{},{}", bin_label(b), self.node_fraction(b), acc);
        }
        out
    }

    /// Parse the CSV form back into per-bin (fraction, accuracy) pairs.
    pub fn parse_csv(text: &str) -> Result<Vec<(f64, Option<f64>)>> {
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            anyhow::ensure!(parts.len() == 3, "bad homophily row {line:?}");
            let frac: f64 = parts[1].parse().context("node_fraction")?;
            let acc = if parts[2].is_empty() { None } else { Some(parts[2].parse()?) };
            rows.push((frac, acc));
        }
        anyhow::ensure!(rows.len() == NUM_BINS, "expected {NUM_BINS} bins, found {}", rows.len());
        Ok(rows)
    }
}

// ── file emission ───────────────────────────────────────────────────────

/// Write every artifact for one invocation: `summary.csv`, one trace per
/// run under `runs/`, and one `homophily_<dataset>.csv` per dataset with
/// test nodes pooled across that dataset's runs.
pub fn emit_outputs(
    reports: &[RunReport],
    homophily: &BTreeMap<String, HomophilyBins>,
    out_dir: &Path,
) -> Result<()> {
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)
        .with_context(|| format!("cannot create {}", runs_dir.display()))?;

    let mut ordered: Vec<&RunReport> = reports.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.dataset, &a.backbone, a.split_id).cmp(&(&b.dataset, &b.backbone, b.split_id))
    });
    for r in ordered {
        let path = runs_dir.join(format!("{}_{}.csv", r.dataset, r.split_id));
        fs::write(&path, run_csv(r)).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let summary = summarize(reports);
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary_csv(&summary))
        .with_context(|| format!("cannot write {}", path.display()))?;

    for (dataset, bins) in homophily {
        let path = out_dir.join(format!("homophily_{dataset}.csv"));
        fs::write(&path, bins.to_csv())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
