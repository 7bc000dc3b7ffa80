//! Flat `key = value` run configuration.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{NetConfig, SegInput};
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExperimentMode {
    /// Adapt on both domains, train segmentation on source content only.
    #[default]
    AdaptThenSegSourceOnly,
    /// Adapt, then train segmentation on labeled source and target content.
    AdaptThenSegJoint,
    /// Like source-only, with a target domain that mixes several appearances.
    MultimodalTarget,
    /// Source-trained segmentation applied to target images directly.
    BaselineUnadapted,
}

impl ExperimentMode {
    pub const ALL: [ExperimentMode; 4] = [
        ExperimentMode::AdaptThenSegSourceOnly,
        ExperimentMode::AdaptThenSegJoint,
        ExperimentMode::MultimodalTarget,
        ExperimentMode::BaselineUnadapted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentMode::AdaptThenSegSourceOnly => "adapt_then_seg_source_only",
            ExperimentMode::AdaptThenSegJoint => "adapt_then_seg_joint",
            ExperimentMode::MultimodalTarget => "multimodal_target",
            ExperimentMode::BaselineUnadapted => "baseline_unadapted",
        }
    }
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode `{s}` (expected one of {})",
                    ExperimentMode::ALL.map(|m| m.as_str()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub seg_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub content_disc_period: usize,
    pub adapt_iterations: usize,
    pub seg_iterations: usize,
    pub batch_size: usize,
    /// Master seed; model init, batch streams and penalty interpolation
    /// seeds are derived from it.
    pub seed: u64,
    /// Include the latent reconstruction terms of the X-direction translation.
    pub mirror_latent: bool,
    /// Also update the content encoder while training the segmentation head.
    pub joint_finetune: bool,
    pub augment: bool,
    /// Feed the batch of iteration 0 at every iteration.
    pub repeat_batch: bool,
    pub mode: ExperimentMode,
    pub folds: usize,
    /// Phantoms generated per domain by `run_experiment`.
    pub cases: usize,
    pub volume_dims: [usize; 3],
    /// Appearance variants mixed into the target domain in multimodal mode.
    pub y_variants: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            seg_learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            content_disc_period: 3,
            adapt_iterations: 2000,
            seg_iterations: 1000,
            batch_size: 2,
            seed: 0,
            mirror_latent: true,
            joint_finetune: false,
            augment: true,
            repeat_batch: false,
            mode: ExperimentMode::default(),
            folds: 5,
            cases: 10,
            volume_dims: [10, 48, 48],
            y_variants: 3,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

/// Parses `a,b,c` into three positive integers.
pub fn parse_triple(key: &str, v: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("`{key}`: expected D,H,W, got `{v}`")));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_num(key, p)?;
        if *o == 0 {
            return Err(Error::Config(format!("`{key}`: extents must be positive, got `{v}`")));
        }
    }
    Ok(out)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 40] = [
        "seed",
        "precision",
        "patch",
        "width",
        "content_channels",
        "style_dim",
        "style_hidden",
        "res_blocks",
        "growth",
        "dense_layers",
        "seg_transition",
        "output_scale",
        "seg_input",
        "lambda_wgan",
        "lambda_recon",
        "lambda_cyc",
        "lambda_latent",
        "lambda_content",
        "alpha",
        "learning_rate",
        "seg_learning_rate",
        "beta1",
        "beta2",
        "adam_eps",
        "content_disc_period",
        "adapt_iterations",
        "seg_iterations",
        "batch_size",
        "mirror_latent",
        "joint_finetune",
        "augment",
        "repeat_batch",
        "mode",
        "folds",
        "cases",
        "volume_dims",
        "y_variants",
        "init_std",
        "leaky_slope",
        "norm_eps",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "precision" => {
                self.net.dtype = match v {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(Error::Config(format!("`precision`: expected f32 or f64, got `{v}`"))),
                }
            }
            "patch" => self.net.patch = parse_triple(key, v)?,
            "width" => self.net.width = parse_num(key, v)?,
            "content_channels" => self.net.content_channels = parse_num(key, v)?,
            "style_dim" => self.net.style_dim = parse_num(key, v)?,
            "style_hidden" => self.net.style_hidden = parse_num(key, v)?,
            "res_blocks" => self.net.res_blocks = parse_num(key, v)?,
            "growth" => self.net.growth = parse_num(key, v)?,
            "dense_layers" => self.net.dense_layers = parse_num(key, v)?,
            "seg_transition" => self.net.seg_transition = parse_num(key, v)?,
            "output_scale" => self.net.output_scale = parse_num(key, v)?,
            "seg_input" => self.net.seg_input = v.parse::<SegInput>().map_err(|e| Error::Config(e.to_string()))?,
            "init_std" => self.net.init_std = parse_num(key, v)?,
            "leaky_slope" => self.net.leaky_slope = parse_num(key, v)?,
            "norm_eps" => self.net.norm_eps = parse_num(key, v)?,
            "lambda_wgan" => self.weights.lambda_wgan = parse_num(key, v)?,
            "lambda_recon" => self.weights.lambda_recon = parse_num(key, v)?,
            "lambda_cyc" => self.weights.lambda_cyc = parse_num(key, v)?,
            "lambda_latent" => self.weights.lambda_latent = parse_num(key, v)?,
            "lambda_content" => self.weights.lambda_content = parse_num(key, v)?,
            "alpha" => self.weights.alpha = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "seg_learning_rate" => self.seg_learning_rate = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "content_disc_period" => self.content_disc_period = parse_num(key, v)?,
            "adapt_iterations" => self.adapt_iterations = parse_num(key, v)?,
            "seg_iterations" => self.seg_iterations = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "mirror_latent" => self.mirror_latent = parse_bool(key, v)?,
            "joint_finetune" => self.joint_finetune = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "repeat_batch" => self.repeat_batch = parse_bool(key, v)?,
            "mode" => self.mode = v.parse()?,
            "folds" => self.folds = parse_num(key, v)?,
            "cases" => self.cases = parse_num(key, v)?,
            "volume_dims" => self.volume_dims = parse_triple(key, v)?,
            "y_variants" => self.y_variants = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key `{k}` repeated", no + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || !(self.seg_learning_rate >= 0.0 && self.seg_learning_rate.is_finite())
        {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        if self.content_disc_period == 0 {
            return Err(Error::Config("content_disc_period must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.folds < 2 || self.cases < self.folds {
            return Err(Error::Config(format!(
                "need folds >= 2 and cases >= folds, got folds {} and cases {}",
                self.folds, self.cases
            )));
        }
        if self.y_variants == 0 {
            return Err(Error::Config("y_variants must be >= 1".into()));
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = |a: [usize; 3]| format!("{},{},{}", a[0], a[1], a[2]);
        match key {
            "seed" => self.seed.to_string(),
            "precision" => match self.net.dtype {
                DType::F32 => "f32".into(),
                DType::F64 => "f64".into(),
            },
            "patch" => t(self.net.patch),
            "width" => self.net.width.to_string(),
            "content_channels" => self.net.content_channels.to_string(),
            "style_dim" => self.net.style_dim.to_string(),
            "style_hidden" => self.net.style_hidden.to_string(),
            "res_blocks" => self.net.res_blocks.to_string(),
            "growth" => self.net.growth.to_string(),
            "dense_layers" => self.net.dense_layers.to_string(),
            "seg_transition" => self.net.seg_transition.to_string(),
            "output_scale" => self.net.output_scale.to_string(),
            "seg_input" => self.net.seg_input.to_string(),
            "init_std" => self.net.init_std.to_string(),
            "leaky_slope" => self.net.leaky_slope.to_string(),
            "norm_eps" => self.net.norm_eps.to_string(),
            "lambda_wgan" => self.weights.lambda_wgan.to_string(),
            "lambda_recon" => self.weights.lambda_recon.to_string(),
            "lambda_cyc" => self.weights.lambda_cyc.to_string(),
            "lambda_latent" => self.weights.lambda_latent.to_string(),
            "lambda_content" => self.weights.lambda_content.to_string(),
            "alpha" => self.weights.alpha.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "seg_learning_rate" => self.seg_learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "content_disc_period" => self.content_disc_period.to_string(),
            "adapt_iterations" => self.adapt_iterations.to_string(),
            "seg_iterations" => self.seg_iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "mirror_latent" => self.mirror_latent.to_string(),
            "joint_finetune" => self.joint_finetune.to_string(),
            "augment" => self.augment.to_string(),
            "repeat_batch" => self.repeat_batch.to_string(),
            "mode" => self.mode.to_string(),
            "folds" => self.folds.to_string(),
            "cases" => self.cases.to_string(),
            "volume_dims" => t(self.volume_dims),
            "y_variants" => self.y_variants.to_string(),
            _ => unreachable!("key list and getter out of sync: {key}"),
        }
    }

    /// Every key with its current value, one `key = value` line each, in a
    /// form [`TrainConfig::parse`] reproduces exactly.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for k in TrainConfig::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
