//! Flat `key = value` run configuration.
//!
//! One file configures both the backbone and the training schedule. Keys
//! mirror the field names of the underlying config structs; unknown keys are
//! errors so typos cannot silently fall back to defaults. Lines starting
//! with `#` and blank lines are ignored.

use std::path::Path;

use anyhow::{bail, Context, Result};
use lgs_core::gnn::{Backbone, GnnConfig};
use lgs_core::trainer::{PhiMode, TrainConfig};

/// Everything one run needs besides the dataset itself.
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    /// Divide each feature row by its sum at load time.
    pub normalize_features: bool,
}

pub fn parse_backbone(s: &str) -> Result<Backbone> {
    match s {
        "gcn" => Ok(Backbone::Gcn),
        "cheb" => Ok(Backbone::Cheb),
        other => bail!("unknown backbone {other:?} (expected gcn or cheb)"),
    }
}

pub fn backbone_name(b: Backbone) -> &'static str {
    match b {
        Backbone::Gcn => "gcn",
        Backbone::Cheb => "cheb",
    }
}

pub fn phi_mode_name(m: PhiMode) -> &'static str {
    match m {
        PhiMode::Literal => "literal",
        PhiMode::Deviation => "deviation",
    }
}

fn parse_into<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow::anyhow!("{key}: invalid value {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => bail!("{key}: invalid value {other:?} (expected true or false)"),
    }
}

impl RunSettings {
    /// Apply one `key = value` pair. `t` and `T` are synonyms for the unroll
    /// depth; `lambda_max = auto` selects power-iteration estimation.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "backbone" => self.gnn.backbone = parse_backbone(value)?,
            "layers" => self.gnn.layers = parse_into(key, value)?,
            "hidden" => self.gnn.hidden = parse_into(key, value)?,
            "cheb_k" => self.gnn.cheb_k = parse_into(key, value)?,
            "dropout" => self.gnn.dropout = parse_into(key, value)?,
            "sim_heads" => self.gnn.sim_heads = parse_into(key, value)?,
            "warmup_epochs" => self.train.warmup_epochs = parse_into(key, value)?,
            "joint_epochs" => self.train.joint_epochs = parse_into(key, value)?,
            "t" | "T" => self.train.t = parse_into(key, value)?,
            "alpha" => self.train.alpha = parse_into(key, value)?,
            "beta" => self.train.beta = parse_into(key, value)?,
            "r" => self.train.r = parse_into(key, value)?,
            "eps" => self.train.eps = parse_into(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_into(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_into(key, value)?,
            "seed" => self.train.seed = parse_into(key, value)?,
            "detach_pseudo_labels" => self.train.detach_pseudo_labels = parse_bool(key, value)?,
            "phi_mode" => {
                self.train.phi_mode =
                    value.parse::<PhiMode>().map_err(|e| anyhow::anyhow!("{key}: {e}"))?
            }
            "eval_every" => self.train.eval_every = parse_into(key, value)?,
            "lambda_max" => {
                self.train.lambda_max =
                    if value == "auto" { None } else { Some(parse_into(key, value)?) }
            }
            "normalize_features" => self.normalize_features = parse_bool(key, value)?,
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    /// Parse a whole config file on top of the current settings.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected key = value, found {line:?}", path.display(), i + 1);
            };
            self.apply(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gnn.validate().map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
        self.train.validate().map_err(|e| anyhow::anyhow!("invalid configuration: {e}"))?;
        Ok(())
    }

    /// Every effective setting as `(key, value)` pairs sorted by key — the
    /// run provenance embedded in output files.
    pub fn snapshot(&self) -> Vec<(String, String)> {
        let lambda = match self.train.lambda_max {
            None => "auto".to_string(),
            Some(v) => format!("{v}"),
        };
        let mut kv: Vec<(String, String)> = vec![
            ("alpha".into(), format!("{}", self.train.alpha)),
            ("backbone".into(), backbone_name(self.gnn.backbone).into()),
            ("beta".into(), format!("{}", self.train.beta)),
            ("cheb_k".into(), format!("{}", self.gnn.cheb_k)),
            ("detach_pseudo_labels".into(), format!("{}", self.train.detach_pseudo_labels)),
            ("dropout".into(), format!("{}", self.gnn.dropout)),
            ("eps".into(), format!("{}", self.train.eps)),
            ("eval_every".into(), format!("{}", self.train.eval_every)),
            ("hidden".into(), format!("{}", self.gnn.hidden)),
            ("joint_epochs".into(), format!("{}", self.train.joint_epochs)),
            ("lambda_max".into(), lambda),
            ("layers".into(), format!("{}", self.gnn.layers)),
            ("learning_rate".into(), format!("{}", self.train.learning_rate)),
            ("normalize_features".into(), format!("{}", self.normalize_features)),
            ("phi_mode".into(), phi_mode_name(self.train.phi_mode).into()),
            ("r".into(), format!("{}", self.train.r)),
            ("seed".into(), format!("{}", self.train.seed)),
            ("sim_heads".into(), format!("{}", self.gnn.sim_heads)),
            ("t".into(), format!("{}", self.train.t)),
            ("warmup_epochs".into(), format!("{}", self.train.warmup_epochs)),
            ("weight_decay".into(), format!("{}", self.train.weight_decay)),
        ];
        kv.sort_by(|a, b| a.0.cmp(&b.0));
        kv
    }
}
