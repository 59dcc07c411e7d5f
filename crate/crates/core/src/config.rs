//! Run configuration: flat `key=value` text with `#` comments.
//!
//! Values are resolved with the precedence flag > config file > default.
//! Unknown keys are errors.

use std::path::PathBuf;
use std::str::FromStr;

use crate::data::DataConfig;
use crate::flow::{FlowSampleConfig, TrainConfig};
use crate::nn::ModelConfig;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: TrainConfig,
    pub adapter: TrainConfig,
    pub sampling: FlowSampleConfig,
    pub seed: u64,
    /// Training samples written by `gen-data`.
    pub n_samples: usize,
    /// Held-out samples used for validation loss and evaluation.
    pub n_heldout: usize,
    /// Held-out samples scored by the validation loss during adapter training.
    pub val_items: usize,
    pub decode_threshold: f64,
    /// Bone sampling interval for the rerigging score, in voxel widths.
    pub rerig_spacing_voxels: f64,
    pub dataset: PathBuf,
    pub heldout: PathBuf,
    pub backbone_ckpt: PathBuf,
    pub adapter_ckpt: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            pretrain: TrainConfig {
                epochs: 30,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            adapter: TrainConfig {
                epochs: 30,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            sampling: FlowSampleConfig::default(),
            seed: 0,
            n_samples: 256,
            n_heldout: 32,
            val_items: 8,
            decode_threshold: crate::backbone::DEFAULT_THRESHOLD,
            rerig_spacing_voxels: 1.0,
            dataset: "train.tms".into(),
            heldout: "heldout.tms".into(),
            backbone_ckpt: "backbone.ckpt".into(),
            adapter_ckpt: "adapter.ckpt".into(),
            out_dir: "out".into(),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, Error> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

/// Every run-level key with its meaning, in documentation order. Model keys
/// are listed by [`ModelConfig::to_text`].
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("seed", "global seed; stage seeds are derived from it"),
    ("n_samples", "training dataset size"),
    ("n_heldout", "held-out dataset size"),
    ("val_items", "held-out samples scored for validation loss"),
    ("voxel_res", "occupancy grid side V"),
    ("capsule_radius", "capsule radius in voxels"),
    ("min_joints", "smallest sampled skeleton"),
    ("max_joints", "largest sampled skeleton"),
    ("batch_size", "minibatch size for both training stages"),
    ("text_dropout_p", "label dropout probability"),
    ("pretrain_epochs", "backbone pretraining epochs"),
    ("pretrain_lr", "backbone Adam learning rate"),
    ("adapter_epochs", "adapter training epochs"),
    ("adapter_lr", "adapter Adam learning rate"),
    ("steps", "Euler steps S"),
    ("cfg_weight", "guidance weight w"),
    ("resample_u", "repaint resampling rounds per step"),
    ("decode_threshold", "latent decode threshold"),
    ("rerig_spacing_voxels", "bone sampling interval for the rerigging score"),
    ("dataset", "training dataset path"),
    ("heldout", "held-out dataset path"),
    ("backbone_ckpt", "pretrained backbone checkpoint path"),
    ("adapter_ckpt", "adapter checkpoint path"),
    ("out_dir", "directory for samples and reports"),
];

impl RunConfig {
    /// Applies one setting; model keys are forwarded to [`ModelConfig::set`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_samples" => self.n_samples = parse(key, v)?,
            "n_heldout" => self.n_heldout = parse(key, v)?,
            "val_items" => self.val_items = parse(key, v)?,
            "voxel_res" => self.data.res = parse(key, v)?,
            "capsule_radius" => self.data.radius = parse(key, v)?,
            "min_joints" => self.data.min_joints = parse(key, v)?,
            "max_joints" => self.data.max_joints = parse(key, v)?,
            "batch_size" => {
                self.pretrain.batch_size = parse(key, v)?;
                self.adapter.batch_size = self.pretrain.batch_size;
            }
            "text_dropout_p" => {
                self.pretrain.text_dropout_p = parse(key, v)?;
                self.adapter.text_dropout_p = self.pretrain.text_dropout_p;
            }
            "pretrain_epochs" => self.pretrain.epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain.lr = parse(key, v)?,
            "adapter_epochs" => self.adapter.epochs = parse(key, v)?,
            "adapter_lr" => self.adapter.lr = parse(key, v)?,
            "steps" => self.sampling.steps = parse(key, v)?,
            "cfg_weight" => self.sampling.cfg_weight = parse(key, v)?,
            "resample_u" => self.sampling.resample_u = parse(key, v)?,
            "decode_threshold" => self.decode_threshold = parse(key, v)?,
            "rerig_spacing_voxels" => self.rerig_spacing_voxels = parse(key, v)?,
            "dataset" => self.dataset = v.into(),
            "heldout" => self.heldout = v.into(),
            "backbone_ckpt" => self.backbone_ckpt = v.into(),
            "adapter_ckpt" => self.adapter_ckpt = v.into(),
            "out_dir" => self.out_dir = v.into(),
            _ => {
                if !self.model.set(key, v)? {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies the lines of a config file on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the file text, then the flag overrides in order.
    pub fn resolve(file: Option<&str>, flags: &[(String, String)]) -> Result<Self, Error> {
        let mut cfg = Self::default();
        if let Some(text) = file {
            cfg.apply_text(text)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.data.validate()?;
        self.pretrain.validate()?;
        self.adapter.validate()?;
        if self.data.res != 2 * self.model.latent_res {
            return Err(Error::Config(format!(
                "voxel_res {} must be twice latent_res {}",
                self.data.res, self.model.latent_res
            )));
        }
        if self.model.n_labels < 4 {
            return Err(Error::Config("n_labels must cover the four families".into()));
        }
        if self.n_samples == 0 || self.n_heldout == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if !(self.rerig_spacing_voxels > 0.0) {
            return Err(Error::Config("rerig_spacing_voxels must be positive".into()));
        }
        self.sampling.validate(self.model.latent_res)
    }

    /// Bone sampling interval in normalized units.
    pub fn rerig_spacing(&self) -> f64 {
        self.rerig_spacing_voxels / self.data.res as f64
    }

    /// Full resolved configuration as config-file text.
    pub fn to_text(&self) -> String {
        let mut out = self.model.to_text();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("seed", self.seed.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("n_heldout", self.n_heldout.to_string());
        kv("val_items", self.val_items.to_string());
        kv("voxel_res", self.data.res.to_string());
        kv("capsule_radius", self.data.radius.to_string());
        kv("min_joints", self.data.min_joints.to_string());
        kv("max_joints", self.data.max_joints.to_string());
        kv("batch_size", self.pretrain.batch_size.to_string());
        kv("text_dropout_p", self.pretrain.text_dropout_p.to_string());
        kv("pretrain_epochs", self.pretrain.epochs.to_string());
        kv("pretrain_lr", self.pretrain.lr.to_string());
        kv("adapter_epochs", self.adapter.epochs.to_string());
        kv("adapter_lr", self.adapter.lr.to_string());
        kv("steps", self.sampling.steps.to_string());
        kv("cfg_weight", self.sampling.cfg_weight.to_string());
        kv("resample_u", self.sampling.resample_u.to_string());
        kv("decode_threshold", self.decode_threshold.to_string());
        kv("rerig_spacing_voxels", self.rerig_spacing_voxels.to_string());
        kv("dataset", self.dataset.display().to_string());
        kv("heldout", self.heldout.display().to_string());
        kv("backbone_ckpt", self.backbone_ckpt.display().to_string());
        kv("adapter_ckpt", self.adapter_ckpt.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        out
    }

    /// Seed of a named stage, so stages stay independent of each other.
    pub fn stage_seed(&self, salt: u64) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
    }
}
