//! `lgs` — command-line laboratory for label-informed graph structure
//! learning: trains GCN/ChebNet backbones with an optional jointly learned
//! graph, reports accuracy tables and homophily-binned breakdowns, and
//! converts public benchmark distributions into the local text layout.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lgs_cli::config::{self, RunSettings};
use lgs_cli::report::{self, HomophilyBins, RunReport};
use lgs_cli::{convert, io};
use lgs_core::graph::homophily;
use lgs_core::trainer::train_full;

/// Datasets bundled under the data root, in canonical reporting order.
const KNOWN_DATASETS: [&str; 7] =
    ["cora", "citeseer", "cornell", "texas", "wisconsin", "chameleon", "squirrel"];

#[derive(Parser)]
#[command(
    name = "lgs",
    version,
    about = "Node classification with label-informed graph structure learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one or more datasets and splits; write CSV artifacts.
    Run(RunArgs),
    /// Print a dataset's graph-level homophily ratio.
    Homophily(HomophilyArgs),
    /// Convert a public Geom-GCN-format dataset into the text layout.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset name, comma-separated list, or "all".
    #[arg(long)]
    dataset: String,
    /// Backbone (gcn or cheb); overrides the config file.
    #[arg(long)]
    backbone: Option<String>,
    /// Split ids: comma list with ranges ("0,2,4-6") or "all".
    #[arg(long, default_value = "all")]
    splits: String,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving summary.csv, runs/, and homophily CSVs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base RNG seed; split i trains with seed + i. Overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root (default: $LGS_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct HomophilyArgs {
    /// Dataset name, comma-separated list, or "all".
    #[arg(long)]
    dataset: String,
    /// Dataset root (default: $LGS_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Dataset name (also names the output directory).
    #[arg(long)]
    name: String,
    /// Directory holding out1_graph_edges.txt and out1_node_feature_label.txt.
    #[arg(long)]
    src: PathBuf,
    /// Directory holding <name>_split_0.6_0.2_<i>.npz mask archives.
    #[arg(long)]
    splits_npz: Option<PathBuf>,
    /// Output data root; files land in <out>/<name>/.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("LGS_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn parse_datasets(arg: &str) -> Result<Vec<String>> {
    if arg == "all" {
        return Ok(KNOWN_DATASETS.iter().map(|s| s.to_string()).collect());
    }
    let names: Vec<String> =
        arg.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if names.is_empty() {
        bail!("no dataset named in {arg:?}");
    }
    Ok(names)
}

fn parse_splits(arg: &str) -> Result<Vec<usize>> {
    if arg == "all" {
        return Ok((0..10).collect());
    }
    let mut ids = Vec::new();
    for part in arg.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: usize = lo.trim().parse().with_context(|| format!("bad split range {part:?}"))?;
            let hi: usize = hi.trim().parse().with_context(|| format!("bad split range {part:?}"))?;
            if lo > hi {
                bail!("bad split range {part:?}");
            }
            ids.extend(lo..=hi);
        } else {
            ids.push(part.parse().with_context(|| format!("bad split id {part:?}"))?);
        }
    }
    if ids.is_empty() {
        bail!("no split ids in {arg:?}");
    }
    ids.sort_unstable();
    ids.dedup();
    if let Some(&bad) = ids.iter().find(|&&i| i > 9) {
        bail!("split id {bad} out of range (datasets ship splits 0..=9)");
    }
    Ok(ids)
}

/// One (dataset, split) run that did not complete.
struct Failure {
    dataset: String,
    split: Option<usize>,
    message: String,
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let mut settings = RunSettings::default();
    if let Some(path) = &args.config {
        settings.apply_file(path)?;
    }
    if let Some(b) = &args.backbone {
        settings.gnn.backbone = config::parse_backbone(b)?;
    }
    if let Some(s) = args.seed {
        settings.train.seed = s;
    }
    settings.validate()?;
    let base_seed = settings.train.seed;
    let backbone = config::backbone_name(settings.gnn.backbone).to_string();

    let datasets = parse_datasets(&args.dataset)?;
    let splits = parse_splits(&args.splits)?;
    let root = data_dir(args.data_dir);

    let mut reports: Vec<RunReport> = Vec::new();
    let mut bins: BTreeMap<String, HomophilyBins> = BTreeMap::new();
    let mut failures: Vec<Failure> = Vec::new();

    for name in &datasets {
        let loaded = match io::load_dataset(&root, name, settings.normalize_features) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("skipping {name}: {e:#}");
                failures.push(Failure { dataset: name.clone(), split: None, message: format!("{e:#}") });
                continue;
            }
        };
        let dataset = &loaded.dataset;
        let profile = homophily(dataset.num_nodes(), &dataset.edges, &dataset.labels);
        eprintln!(
            "{name}: {} nodes, {} undirected edges, {} classes, homophily {:.4}",
            dataset.num_nodes(),
            loaded.raw_edge_lines,
            dataset.num_classes,
            profile.edge_fraction
        );

        for &split_id in &splits {
            let split = match io::load_split(&root, name, split_id, dataset.num_nodes()) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("skipping {name} split {split_id}: {e:#}");
                    failures.push(Failure {
                        dataset: name.clone(),
                        split: Some(split_id),
                        message: format!("{e:#}"),
                    });
                    continue;
                }
            };
            let mut run_settings = settings.clone();
            run_settings.train.seed = base_seed + split_id as u64;

            let started = Instant::now();
            let outcome =
                match train_full(dataset, &split, &run_settings.gnn, &run_settings.train) {
                    Ok(o) => o,
                    Err(e) => {
                        eprintln!("failed {name} split {split_id}: {e}");
                        failures.push(Failure {
                            dataset: name.clone(),
                            split: Some(split_id),
                            message: e.to_string(),
                        });
                        continue;
                    }
                };
            let wall = started.elapsed().as_secs_f64();
            eprintln!(
                "{name} split {split_id} ({backbone}): test {:.2}% val {:.2}% best epoch {} [{:.1}s]",
                100.0 * outcome.test_accuracy,
                100.0 * outcome.best_val_accuracy,
                outcome.best_epoch,
                wall
            );

            bins.entry(name.clone()).or_default().add_run(
                &profile.per_node,
                &outcome.predictions,
                &dataset.labels,
                &split.test,
            );
            reports.push(RunReport {
                dataset: name.clone(),
                split_id,
                backbone: backbone.clone(),
                snapshot: run_settings.snapshot(),
                warmup_epochs: run_settings.train.warmup_epochs,
                outcome,
                wall_time_secs: wall,
            });
        }
    }

    report::emit_outputs(&reports, &bins, &args.out)?;
    print!("{}", report::summary_table(&report::summarize(&reports)));

    if failures.is_empty() {
        Ok(true)
    } else {
        eprintln!("failed runs:");
        for f in &failures {
            match f.split {
                Some(s) => eprintln!("  {} split {}: {}", f.dataset, s, f.message),
                None => eprintln!("  {}: {}", f.dataset, f.message),
            }
        }
        Ok(false)
    }
}

fn cmd_homophily(args: HomophilyArgs) -> Result<bool> {
    let root = data_dir(args.data_dir);
    let mut ok = true;
    for name in parse_datasets(&args.dataset)? {
        match io::load_dataset(&root, &name, false) {
            Ok(loaded) => {
                let d = &loaded.dataset;
                let profile = homophily(d.num_nodes(), &d.edges, &d.labels);
                println!(
                    "{name}: homophily {:.4} ({} nodes, {} undirected edges, {} classes)",
                    profile.edge_fraction,
                    d.num_nodes(),
                    d.edges.len(),
                    d.num_classes
                );
            }
            Err(e) => {
                eprintln!("{name}: {e:#}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn cmd_convert(args: ConvertArgs) -> Result<bool> {
    let stats = convert::convert(
        &args.name,
        &args.src,
        args.splits_npz.as_deref(),
        &args.out,
    )?;
    println!(
        "{}: {} nodes, {} undirected edges ({} self-loops), {} features, {} classes, homophily {:.4}, {} splits",
        stats.name,
        stats.nodes,
        stats.undirected_edges,
        stats.self_loops,
        stats.features,
        stats.classes,
        stats.homophily,
        stats.splits_written
    );
    Ok(true)
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Homophily(args) => cmd_homophily(args),
        Command::Convert(args) => cmd_convert(args),
    };
    match outcome {
        Ok(true) => {}
        Ok(false) => std::process::exit(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
