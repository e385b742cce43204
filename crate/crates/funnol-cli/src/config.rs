//! Flat JSON run configuration with CLI-flag overrides.
//!
//! Precedence is flag > config file > built-in default. Unknown keys in
//! the file are rejected so typos fail loudly.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::Deserialize;

use funnol_core::model::ActivationSet;
use funnol_core::train::{ClipMode, OptimizerKind, TrainConfig};
use funnol_core::{Activation, CellKind, CorruptionConfig, Method, ProtocolConfig};

/// Every settable field of the flat config document.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub data: Option<Vec<PathBuf>>,
    pub grid: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub clip: Option<f64>,
    pub clip_mode: Option<String>,
    pub lambda: Option<f64>,
    pub optimizer: Option<String>,
    pub cell: Option<String>,
    pub latent_dim: Option<usize>,
    pub miss_prob: Option<f64>,
    pub noise_sd: Option<f64>,
    pub corruption: Option<bool>,
    pub k: Option<usize>,
    pub splits: Option<usize>,
    pub train_fraction: Option<f64>,
    pub keep_fractions: Option<Vec<f64>>,
    pub l2: Option<f64>,
    pub method: Option<String>,
    pub threads: Option<usize>,
    pub act_hidden: Option<String>,
    pub act_feature: Option<String>,
    pub act_output: Option<String>,
    pub act_class: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Flags shared by the training-flavored commands.
#[derive(Debug, clap::Args)]
pub struct TrainOpts {
    /// Feature dimension L.
    #[arg(long = "latent-dim")]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Gradient clip threshold on the global norm.
    #[arg(long)]
    pub clip: Option<f64>,
    /// threshold | unit
    #[arg(long = "clip-mode")]
    pub clip_mode: Option<String>,
    /// Weight on the reconstruction loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    pub optimizer: Option<String>,
    /// rnn | lstm
    #[arg(long)]
    pub cell: Option<String>,
    /// Probability of discarding an observed cell during training.
    #[arg(long = "miss-prob")]
    pub miss_prob: Option<f64>,
    /// Standard deviation of the additive training noise.
    #[arg(long = "noise-sd")]
    pub noise_sd: Option<f64>,
    /// Turn the corruption layer on or off.
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new())]
    pub corruption: Option<bool>,
}

impl TrainOpts {
    /// Corruption parameters from flags/config, independent of whether the
    /// layer is switched on (protocol methods decide that themselves).
    pub fn corruption_template(&self, file: &FileConfig, seed: u64) -> Result<CorruptionConfig> {
        let base = CorruptionConfig::default();
        CorruptionConfig::new(
            self.miss_prob.or(file.miss_prob).unwrap_or(base.miss_prob),
            self.noise_sd.or(file.noise_sd).unwrap_or(base.noise_sd),
            seed,
        )
        .map_err(Into::into)
    }

    /// Resolves flags against the config file and defaults.
    pub fn resolve(&self, file: &FileConfig, seed: u64) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let clip_mode = match self.clip_mode.as_deref().or(file.clip_mode.as_deref()) {
            Some(s) => ClipMode::from_str(s)?,
            None => defaults.clip_mode,
        };
        let optimizer = match self.optimizer.as_deref().or(file.optimizer.as_deref()) {
            Some(s) => OptimizerKind::from_str(s)?,
            None => defaults.optimizer,
        };
        let cell = match self.cell.as_deref().or(file.cell.as_deref()) {
            Some(s) => CellKind::from_str(s)?,
            None => defaults.cell,
        };
        let corruption_on = self.corruption.or(file.corruption).unwrap_or(false);
        let corruption = if corruption_on {
            Some(self.corruption_template(file, seed)?)
        } else {
            None
        };
        let act = |field: &Option<String>, fallback: Activation| -> Result<Activation> {
            match field.as_deref() {
                Some(s) => Ok(Activation::from_str(s)?),
                None => Ok(fallback),
            }
        };
        let base_acts = ActivationSet::default();
        let activations = ActivationSet {
            hidden: act(&file.act_hidden, base_acts.hidden)?,
            feature: act(&file.act_feature, base_acts.feature)?,
            output: act(&file.act_output, base_acts.output)?,
            class: act(&file.act_class, base_acts.class)?,
        };
        let cfg = TrainConfig {
            latent: self
                .latent_dim
                .or(file.latent_dim)
                .unwrap_or(defaults.latent),
            learning_rate: self.lr.or(file.lr).unwrap_or(defaults.learning_rate),
            epochs: self.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            batch_size: self
                .batch_size
                .or(file.batch_size)
                .unwrap_or(defaults.batch_size),
            clip_threshold: self.clip.or(file.clip).unwrap_or(defaults.clip_threshold),
            clip_mode,
            lambda_recon: self.lambda.or(file.lambda).unwrap_or(defaults.lambda_recon),
            corruption,
            optimizer,
            cell,
            activations,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flags shared by the protocol-flavored commands.
#[derive(Debug, clap::Args)]
pub struct ProtocolOpts {
    /// funnol_c | funnol_nc | fpca
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long = "train-fraction")]
    pub train_fraction: Option<f64>,
    /// Retained FPCA components (defaults to the latent dimension).
    #[arg(long)]
    pub k: Option<usize>,
    /// Ridge weight for the logistic regression readout.
    #[arg(long)]
    pub l2: Option<f64>,
}

impl ProtocolOpts {
    pub fn resolve(
        &self,
        file: &FileConfig,
        train: TrainConfig,
        seed: u64,
    ) -> Result<(Method, usize, ProtocolConfig)> {
        let defaults = ProtocolConfig::default();
        let method = Method::from_str(
            self.method
                .as_deref()
                .or(file.method.as_deref())
                .unwrap_or("funnol_c"),
        )?;
        let splits = self.splits.or(file.splits).unwrap_or(50);
        let num_components = self.k.or(file.k).unwrap_or(train.latent);
        let cfg = ProtocolConfig {
            train_fraction: self
                .train_fraction
                .or(file.train_fraction)
                .unwrap_or(defaults.train_fraction),
            seed,
            train,
            num_components,
            logreg_l2: self.l2.or(file.l2).unwrap_or(defaults.logreg_l2),
        };
        Ok((method, splits, cfg))
    }
}
