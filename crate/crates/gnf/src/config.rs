//! Run configuration: a flat `section.key = value` text format with '#'
//! comments, presets, and a canonical echo used to record every run.
//!
//! Parsing starts from a preset's defaults and folds in overrides line by
//! line; unknown keys and malformed values are rejected with the key name
//! and line number. `echo()` lists every key in a fixed order and parses
//! back to the same config, so the `run.cfg` dropped into an output
//! directory is enough to reproduce the run.

use std::path::{Path, PathBuf};

use crate::autoencoder::{AeConfig, AeTrainConfig};
use crate::density::{DensityArch, DensityTrainConfig};
use crate::error::{GnfError, Result};
use crate::eval::MmdSigmas;
use crate::generate::GenFlowTrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Everything shrunk roughly 8x so the whole pipeline stays in CI budget.
    Ci,
    /// Small models sized for a single desktop core.
    Desk,
    /// Reference-scale widths; expect long runs.
    Full,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Preset> {
        match name {
            "ci" => Ok(Preset::Ci),
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(GnfError::Config(format!(
                "unknown preset `{other}` (expected ci, desk, or full)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Ci => "ci",
            Preset::Desk => "desk",
            Preset::Full => "full",
        }
    }
}

pub const DATASET_NAMES: [&str; 2] = ["community-small", "ego-small"];
pub const DENSITY_DATASETS: [&str; 3] = ["mog", "mog-ring", "half-moons"];
pub const DENSITY_MODELS: [&str; 2] = ["gnf", "realnvp"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub data_name: String,
    pub data_count: usize,
    /// Shared coupling-flow architecture (point density and embedding flow).
    pub flow: DensityArch,
    pub ae: AeConfig,
    pub ae_train: AeTrainConfig,
    pub ae_recon_redraws: usize,
    pub density_dataset: String,
    pub density_model: String,
    pub density_train_examples: usize,
    pub density_test_examples: usize,
    pub density_train: DensityTrainConfig,
    pub genflow: GenFlowTrainConfig,
    pub eval_count: usize,
    /// Compare against a size-matched subsample instead of the full set.
    pub eval_matched: bool,
    pub sigmas: MmdSigmas,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

fn shrink(x: usize) -> usize {
    x.div_ceil(8).max(1)
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        let desk = RunConfig {
            out: PathBuf::from("runs"),
            seed: 0,
            threads: 1,
            data_name: "community-small".into(),
            data_count: 100,
            flow: DensityArch::desk(),
            ae: AeConfig::desk(16),
            ae_train: AeTrainConfig::default(),
            ae_recon_redraws: 10,
            density_dataset: "mog".into(),
            density_model: "gnf".into(),
            density_train_examples: 10_000,
            density_test_examples: 2_000,
            density_train: DensityTrainConfig::default(),
            genflow: GenFlowTrainConfig::default(),
            eval_count: 1024,
            eval_matched: false,
            sigmas: MmdSigmas::default(),
        };
        match preset {
            Preset::Desk => desk,
            Preset::Ci => {
                let mut c = desk;
                c.data_count = shrink(c.data_count);
                c.flow = DensityArch {
                    steps: shrink(c.flow.steps),
                    heads: shrink(c.flow.heads),
                    head_dim: shrink(c.flow.head_dim).max(4),
                    msg_hidden: c.flow.msg_hidden.iter().map(|&w| shrink(w)).collect(),
                    msg_dim: shrink(c.flow.msg_dim),
                };
                let k = (c.ae.embed_dim / 8).max(2) & !1;
                c.ae = AeConfig {
                    embed_dim: k,
                    noise_dim: k,
                    mp_steps: shrink(c.ae.mp_steps),
                    heads: shrink(c.ae.heads),
                    head_dim: shrink(c.ae.head_dim).max(4),
                    msg_hidden: c.ae.msg_hidden.iter().map(|&w| shrink(w)).collect(),
                    msg_dim: shrink(c.ae.msg_dim),
                    ..c.ae
                };
                c.ae_train.steps = shrink(c.ae_train.steps);
                c.ae_train.eval_examples = 8;
                c.ae_recon_redraws = shrink(c.ae_recon_redraws);
                c.density_train_examples = 64;
                c.density_test_examples = 32;
                c.density_train.steps = shrink(c.density_train.steps);
                c.density_train.eval_examples = 32;
                c.genflow.density.steps = shrink(c.genflow.density.steps);
                c.genflow.density.eval_examples = 32;
                c.eval_count = 128;
                c
            }
            Preset::Full => {
                let mut c = desk;
                c.flow = DensityArch::full();
                c.ae = AeConfig::full(16);
                c.ae_train.steps = 100_000;
                c.density_train_examples = 10_000;
                c.density_test_examples = 2_000;
                c.density_train.steps = 20_000;
                c.genflow.density.steps = 20_000;
                c
            }
        }
    }

    /// Keep the per-stage trainer seeds tied to the run seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.ae_train.seed = seed;
        self.density_train.seed = seed;
        self.genflow.density.seed = seed;
    }

    pub fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<()> {
        match key {
            "run.out" => self.out = PathBuf::from(raw),
            "run.seed" => {
                let seed = p_u64(key, raw, line)?;
                self.set_seed(seed);
            }
            "run.threads" => self.threads = p_usize(key, raw, line)?,
            "data.name" => self.data_name = raw.to_string(),
            "data.count" => self.data_count = p_usize(key, raw, line)?,
            "flow.steps" => self.flow.steps = p_usize(key, raw, line)?,
            "flow.heads" => self.flow.heads = p_usize(key, raw, line)?,
            "flow.head_dim" => self.flow.head_dim = p_usize(key, raw, line)?,
            "flow.msg_hidden" => self.flow.msg_hidden = p_list(key, raw, line)?,
            "flow.msg_dim" => self.flow.msg_dim = p_usize(key, raw, line)?,
            "ae.embed_dim" => self.ae.embed_dim = p_usize(key, raw, line)?,
            "ae.noise_dim" => self.ae.noise_dim = p_usize(key, raw, line)?,
            "ae.noise_var" => self.ae.noise_var = p_f64(key, raw, line)?,
            "ae.temperature" => self.ae.temperature = p_f64(key, raw, line)?,
            "ae.mp_steps" => self.ae.mp_steps = p_usize(key, raw, line)?,
            "ae.heads" => self.ae.heads = p_usize(key, raw, line)?,
            "ae.head_dim" => self.ae.head_dim = p_usize(key, raw, line)?,
            "ae.msg_hidden" => self.ae.msg_hidden = p_list(key, raw, line)?,
            "ae.msg_dim" => self.ae.msg_dim = p_usize(key, raw, line)?,
            "ae.steps" => self.ae_train.steps = p_usize(key, raw, line)?,
            "ae.lr" => self.ae_train.lr = p_f64(key, raw, line)?,
            "ae.decay_every" => self.ae_train.lr_decay_every = p_u64(key, raw, line)?,
            "ae.decay_rate" => self.ae_train.lr_decay_rate = p_f64(key, raw, line)?,
            "ae.batch" => self.ae_train.batch_size = p_usize(key, raw, line)?,
            "ae.clip" => self.ae_train.grad_clip = p_f64(key, raw, line)?,
            "ae.log_every" => self.ae_train.log_every = p_usize(key, raw, line)?,
            "ae.eval_examples" => self.ae_train.eval_examples = p_usize(key, raw, line)?,
            "ae.recon_redraws" => self.ae_recon_redraws = p_usize(key, raw, line)?,
            "density.dataset" => self.density_dataset = raw.to_string(),
            "density.model" => self.density_model = raw.to_string(),
            "density.train_examples" => self.density_train_examples = p_usize(key, raw, line)?,
            "density.test_examples" => self.density_test_examples = p_usize(key, raw, line)?,
            "density.steps" => self.density_train.steps = p_usize(key, raw, line)?,
            "density.lr" => self.density_train.lr = p_f64(key, raw, line)?,
            "density.decay_every" => self.density_train.lr_decay_every = p_usize(key, raw, line)?,
            "density.decay_rate" => self.density_train.lr_decay_rate = p_f64(key, raw, line)?,
            "density.batch" => self.density_train.batch_size = p_usize(key, raw, line)?,
            "density.clip" => self.density_train.grad_clip = p_f64(key, raw, line)?,
            "density.log_every" => self.density_train.log_every = p_usize(key, raw, line)?,
            "density.eval_examples" => self.density_train.eval_examples = p_usize(key, raw, line)?,
            "genflow.steps" => self.genflow.density.steps = p_usize(key, raw, line)?,
            "genflow.lr" => self.genflow.density.lr = p_f64(key, raw, line)?,
            "genflow.decay_every" => {
                self.genflow.density.lr_decay_every = p_usize(key, raw, line)?
            }
            "genflow.decay_rate" => self.genflow.density.lr_decay_rate = p_f64(key, raw, line)?,
            "genflow.batch" => self.genflow.density.batch_size = p_usize(key, raw, line)?,
            "genflow.clip" => self.genflow.density.grad_clip = p_f64(key, raw, line)?,
            "genflow.log_every" => self.genflow.density.log_every = p_usize(key, raw, line)?,
            "genflow.eval_examples" => {
                self.genflow.density.eval_examples = p_usize(key, raw, line)?
            }
            "genflow.renoise" => self.genflow.renoise_embeddings = p_bool(key, raw, line)?,
            "eval.count" => self.eval_count = p_usize(key, raw, line)?,
            "eval.matched" => self.eval_matched = p_bool(key, raw, line)?,
            "eval.sigma_degree" => self.sigmas.degree = p_f64(key, raw, line)?,
            "eval.sigma_cluster" => self.sigmas.cluster = p_f64(key, raw, line)?,
            "eval.sigma_orbit" => self.sigmas.orbit = p_f64(key, raw, line)?,
            other => {
                return Err(GnfError::Config(format!("line {line}: unknown key `{other}`")));
            }
        }
        Ok(())
    }

    /// Every key in canonical order; parses back to the same config.
    pub fn echo(&self) -> String {
        let list = |xs: &[usize]| {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let pairs: Vec<(&str, String)> = vec![
            ("run.out", self.out.display().to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.threads", self.threads.to_string()),
            ("data.name", self.data_name.clone()),
            ("data.count", self.data_count.to_string()),
            ("flow.steps", self.flow.steps.to_string()),
            ("flow.heads", self.flow.heads.to_string()),
            ("flow.head_dim", self.flow.head_dim.to_string()),
            ("flow.msg_hidden", list(&self.flow.msg_hidden)),
            ("flow.msg_dim", self.flow.msg_dim.to_string()),
            ("ae.embed_dim", self.ae.embed_dim.to_string()),
            ("ae.noise_dim", self.ae.noise_dim.to_string()),
            ("ae.noise_var", self.ae.noise_var.to_string()),
            ("ae.temperature", self.ae.temperature.to_string()),
            ("ae.mp_steps", self.ae.mp_steps.to_string()),
            ("ae.heads", self.ae.heads.to_string()),
            ("ae.head_dim", self.ae.head_dim.to_string()),
            ("ae.msg_hidden", list(&self.ae.msg_hidden)),
            ("ae.msg_dim", self.ae.msg_dim.to_string()),
            ("ae.steps", self.ae_train.steps.to_string()),
            ("ae.lr", self.ae_train.lr.to_string()),
            ("ae.decay_every", self.ae_train.lr_decay_every.to_string()),
            ("ae.decay_rate", self.ae_train.lr_decay_rate.to_string()),
            ("ae.batch", self.ae_train.batch_size.to_string()),
            ("ae.clip", self.ae_train.grad_clip.to_string()),
            ("ae.log_every", self.ae_train.log_every.to_string()),
            ("ae.eval_examples", self.ae_train.eval_examples.to_string()),
            ("ae.recon_redraws", self.ae_recon_redraws.to_string()),
            ("density.dataset", self.density_dataset.clone()),
            ("density.model", self.density_model.clone()),
            ("density.train_examples", self.density_train_examples.to_string()),
            ("density.test_examples", self.density_test_examples.to_string()),
            ("density.steps", self.density_train.steps.to_string()),
            ("density.lr", self.density_train.lr.to_string()),
            ("density.decay_every", self.density_train.lr_decay_every.to_string()),
            ("density.decay_rate", self.density_train.lr_decay_rate.to_string()),
            ("density.batch", self.density_train.batch_size.to_string()),
            ("density.clip", self.density_train.grad_clip.to_string()),
            ("density.log_every", self.density_train.log_every.to_string()),
            ("density.eval_examples", self.density_train.eval_examples.to_string()),
            ("genflow.steps", self.genflow.density.steps.to_string()),
            ("genflow.lr", self.genflow.density.lr.to_string()),
            ("genflow.decay_every", self.genflow.density.lr_decay_every.to_string()),
            ("genflow.decay_rate", self.genflow.density.lr_decay_rate.to_string()),
            ("genflow.batch", self.genflow.density.batch_size.to_string()),
            ("genflow.clip", self.genflow.density.grad_clip.to_string()),
            ("genflow.log_every", self.genflow.density.log_every.to_string()),
            ("genflow.eval_examples", self.genflow.density.eval_examples.to_string()),
            ("genflow.renoise", self.genflow.renoise_embeddings.to_string()),
            ("eval.count", self.eval_count.to_string()),
            ("eval.matched", self.eval_matched.to_string()),
            ("eval.sigma_degree", self.sigmas.degree.to_string()),
            ("eval.sigma_cluster", self.sigmas.cluster.to_string()),
            ("eval.sigma_orbit", self.sigmas.orbit.to_string()),
        ];
        let mut out = String::new();
        for (key, value) in pairs {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let req = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(GnfError::Config(msg.to_string()))
            }
        };
        req(self.threads >= 1, "run.threads must be at least 1")?;
        req(
            DATASET_NAMES.contains(&self.data_name.as_str()),
            &format!("data.name `{}` (expected one of {:?})", self.data_name, DATASET_NAMES),
        )?;
        req(self.data_count >= 2, "data.count must be at least 2 to split train/test")?;
        req(self.flow.steps >= 1, "flow.steps must be at least 1")?;
        req(self.flow.heads >= 1, "flow.heads must be at least 1")?;
        req(self.flow.head_dim >= 1, "flow.head_dim must be at least 1")?;
        req(self.flow.msg_dim >= 1, "flow.msg_dim must be at least 1")?;
        req(
            !self.flow.msg_hidden.is_empty() && self.flow.msg_hidden.iter().all(|&w| w >= 1),
            "flow.msg_hidden entries must be positive",
        )?;
        self.ae.validate()?;
        req(
            self.ae.embed_dim >= 2 && self.ae.embed_dim % 2 == 0,
            "ae.embed_dim must be even so the embedding flow can split features",
        )?;
        self.ae_train.validate()?;
        req(self.ae_recon_redraws >= 1, "ae.recon_redraws must be at least 1")?;
        req(
            DENSITY_DATASETS.contains(&self.density_dataset.as_str()),
            &format!(
                "density.dataset `{}` (expected one of {:?})",
                self.density_dataset, DENSITY_DATASETS
            ),
        )?;
        req(
            DENSITY_MODELS.contains(&self.density_model.as_str()),
            &format!(
                "density.model `{}` (expected one of {:?})",
                self.density_model, DENSITY_MODELS
            ),
        )?;
        req(self.density_train_examples >= 1, "density.train_examples must be at least 1")?;
        req(self.density_test_examples >= 1, "density.test_examples must be at least 1")?;
        self.density_train.validate()?;
        self.genflow.density.validate()?;
        req(self.eval_count >= 1, "eval.count must be at least 1")?;
        let s = &self.sigmas;
        req(
            s.degree > 0.0 && s.cluster > 0.0 && s.orbit > 0.0,
            "eval.sigma_* must be positive",
        )?;
        Ok(())
    }
}

fn p_usize(key: &str, raw: &str, line: usize) -> Result<usize> {
    raw.parse::<usize>().map_err(|_| {
        GnfError::Config(format!("line {line}: {key} expects a nonnegative integer, got `{raw}`"))
    })
}

fn p_u64(key: &str, raw: &str, line: usize) -> Result<u64> {
    raw.parse::<u64>().map_err(|_| {
        GnfError::Config(format!("line {line}: {key} expects a nonnegative integer, got `{raw}`"))
    })
}

fn p_f64(key: &str, raw: &str, line: usize) -> Result<f64> {
    let v = raw.parse::<f64>().map_err(|_| {
        GnfError::Config(format!("line {line}: {key} expects a number, got `{raw}`"))
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(GnfError::Config(format!("line {line}: {key} must be finite, got `{raw}`")))
    }
}

fn p_bool(key: &str, raw: &str, line: usize) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(GnfError::Config(format!(
            "line {line}: {key} expects true or false, got `{raw}`"
        ))),
    }
}

fn p_list(key: &str, raw: &str, line: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(GnfError::Config(format!(
            "line {line}: {key} expects a comma-separated list of integers, got `{raw}`"
        )));
    }
    parts.into_iter().map(|p| p_usize(key, p, line)).collect()
}

/// Fold `section.key = value` lines into `base`. Later lines win; '#'
/// starts a comment anywhere on a line.
pub fn parse_config_text(text: &str, mut base: RunConfig) -> Result<RunConfig> {
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(GnfError::Config(format!(
                "line {line_no}: expected `section.key = value`, got `{line}`"
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if !key.contains('.') {
            return Err(GnfError::Config(format!(
                "line {line_no}: key `{key}` is missing its section prefix"
            )));
        }
        base.set(key, value, line_no)?;
    }
    base.validate()?;
    Ok(base)
}

pub fn parse_config(path: &Path, base: RunConfig) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GnfError::Io(format!("read config {}: {e}", path.display())))?;
    parse_config_text(&text, base)
}
