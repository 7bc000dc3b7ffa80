//! Optimization: Adam, the alternating adaptation schedule, segmentation
//! training, checkpoints and the cross-validated experiments.

mod adam;
mod config;
mod eval;
mod experiment;

use std::path::Path;
use std::sync::Arc;

pub use adam::{Adam, AdamConfig};
pub use config::{parse_triple, ExperimentMode, TrainConfig};
pub use eval::{content_code_distance, evaluate_case, export_content, segment_volume, CaseScore};
pub use experiment::{experiment_data, run_experiment, run_fold, ExperimentReport, FoldResult};

use crate::data::{threads_from_env, Batch, PatchSampler, Prefetcher};
use crate::error::{Error, Result};
use crate::losses::{
    content_disc_objective, generator_terms, inverse_frequency_weights, soft_dice_weighted_ce, total_loss,
    translate, wgan_critic_loss, LossReport,
};
use crate::networks::checkpoint::{self, NamedTensors};
use crate::networks::{Domain, Group, ModelBundle, Translator};
use crate::tensor::{grad, no_grad, Tensor};

/// SplitMix64-style mixing of a seed with a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_X: u64 = 1;
const STREAM_Y: u64 = 2;
const STREAM_PENALTY: u64 = 3;
const STREAM_SEG: u64 = 4;

/// Which parameter groups an iteration updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Updated {
    ContentDisc,
    CriticsAndGenerators,
}

impl Updated {
    pub fn as_str(self) -> &'static str {
        match self {
            Updated::ContentDisc => "content_disc",
            Updated::CriticsAndGenerators => "critics+generators",
        }
    }
}

/// One row of the adaptation log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub step: u64,
    pub report: LossReport,
    pub updated: Updated,
    /// Mean critic distance estimate over both domains; zero on
    /// content-discriminator iterations.
    pub critic_gap: f64,
}

impl IterationLog {
    pub fn csv_row(&self) -> String {
        self.report.csv_row(self.step as usize, self.updated.as_str())
    }
}

/// Model plus every optimizer and the position in both training phases.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub critics: Adam,
    pub generators: Adam,
    pub content_disc: Adam,
    pub seg: Adam,
    pub iteration: u64,
    pub seg_iteration: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<TrainState> {
        cfg.validate()?;
        let bundle = ModelBundle::new(cfg.net.clone(), cfg.seed)?;
        Ok(TrainState::with_bundle(cfg, bundle))
    }

    pub fn with_bundle(cfg: &TrainConfig, bundle: ModelBundle) -> TrainState {
        let adam = |lr| AdamConfig {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        };
        TrainState {
            bundle,
            critics: Adam::new(adam(cfg.learning_rate)),
            generators: Adam::new(adam(cfg.learning_rate)),
            content_disc: Adam::new(adam(cfg.learning_rate)),
            seg: Adam::new(adam(cfg.seg_learning_rate)),
            iteration: 0,
            seg_iteration: 0,
        }
    }

    fn optimizers(&self) -> [(&'static str, &Adam); 4] {
        [
            ("critics", &self.critics),
            ("generators", &self.generators),
            ("content_disc", &self.content_disc),
            ("seg", &self.seg),
        ]
    }

    pub fn to_entries(&self) -> NamedTensors {
        let mut e = checkpoint::bundle_entries(&self.bundle);
        for (name, opt) in self.optimizers() {
            opt.to_entries(&format!("adam/{name}"), &mut e);
        }
        e.insert("meta/iteration".into(), Tensor::new(vec![self.iteration as f64], &[1]).expect("scalar"));
        e.insert(
            "meta/seg_iteration".into(),
            Tensor::new(vec![self.seg_iteration as f64], &[1]).expect("scalar"),
        );
        e
    }

    /// Restores a state saved by [`TrainState::to_entries`] into a model
    /// built from `cfg`. Optimizer hyperparameters come from `cfg`.
    pub fn from_entries(cfg: &TrainConfig, entries: &NamedTensors) -> Result<TrainState> {
        let mut state = TrainState::new(cfg)?;
        checkpoint::restore_bundle(&mut state.bundle, entries)?;
        let opt = |name: &str, a: &Adam| Adam::from_entries(a.config, &format!("adam/{name}"), entries);
        state.critics = opt("critics", &state.critics)?;
        state.generators = opt("generators", &state.generators)?;
        state.content_disc = opt("content_disc", &state.content_disc)?;
        state.seg = opt("seg", &state.seg)?;
        let meta = |k: &str| -> Result<u64> {
            Ok(entries
                .get(k)
                .ok_or_else(|| Error::CheckpointMissing(vec![k.to_string()]))?
                .data()[0] as u64)
        };
        state.iteration = meta("meta/iteration")?;
        state.seg_iteration = meta("meta/seg_iteration")?;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.to_entries())
    }

    pub fn load(cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<TrainState> {
        TrainState::from_entries(cfg, &checkpoint::load(path)?)
    }
}

/// Loads only the model parameters from a checkpoint written by
/// [`TrainState::save`].
pub fn load_bundle(cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<ModelBundle> {
    let mut bundle = ModelBundle::new(cfg.net.clone(), cfg.seed)?;
    checkpoint::restore_bundle(&mut bundle, &checkpoint::load(path)?)?;
    Ok(bundle)
}

/// Batches for iterations `start..start + count`, a pure function of the
/// seed and iteration index. With `repeat_batch` every item is the batch of
/// iteration 0.
pub fn batch_stream(
    cfg: &TrainConfig,
    sampler: Arc<PatchSampler>,
    seed: u64,
    start: u64,
    count: u64,
) -> Box<dyn Iterator<Item = Result<Batch>>> {
    if cfg.repeat_batch {
        return match sampler.batch(seed, 0, cfg.batch_size) {
            Ok(b) => Box::new(std::iter::repeat_n(b, count as usize).map(Ok)),
            Err(e) => Box::new(std::iter::once(Err(e))),
        };
    }
    Box::new(Prefetcher::new(sampler, seed, start, start + count, cfg.batch_size, threads_from_env()))
}

fn apply_update(bundle: &mut ModelBundle, params: &[(String, Tensor)], new: Vec<Tensor>) -> Result<()> {
    for ((name, _), t) in params.iter().zip(new) {
        bundle.set_parameter(name, t)?;
    }
    Ok(())
}

fn gradients(loss: &Tensor, params: &[(String, Tensor)]) -> Result<Vec<Tensor>> {
    let refs: Vec<&Tensor> = params.iter().map(|(_, t)| t).collect();
    Ok(grad(loss, &refs, false)?)
}

fn check_finite(bundle: &ModelBundle) -> Result<()> {
    if bundle.all_finite() {
        return Ok(());
    }
    let bad = bundle
        .named_parameters()
        .into_iter()
        .find(|(_, t)| !t.is_finite())
        .map(|(n, _)| n)
        .unwrap_or_default();
    Err(Error::NonFinite(bad))
}

/// Runs the adaptation phase from `state.iteration` for up to `iterations`
/// steps. Iteration `i` updates only the content discriminator when
/// `i % content_disc_period == 0`; otherwise it takes one critic step and
/// then one encoder/decoder step on the weighted total. Stops early, keeping
/// the rows logged so far, when either stream runs dry.
pub fn train_adaptation(
    cfg: &TrainConfig,
    state: &mut TrainState,
    stream_x: &mut dyn Iterator<Item = Result<Batch>>,
    stream_y: &mut dyn Iterator<Item = Result<Batch>>,
    iterations: u64,
    sink: &mut dyn FnMut(&IterationLog) -> Result<()>,
) -> Result<()> {
    let dtype = cfg.net.dtype;
    for _ in 0..iterations {
        let (Some(bx), Some(by)) = (stream_x.next(), stream_y.next()) else {
            break;
        };
        let (x, y) = (bx?.image(dtype), by?.image(dtype));
        let i = state.iteration;
        let log = if i % cfg.content_disc_period as u64 == 0 {
            content_disc_iteration(cfg, state, &x, &y)?
        } else {
            critic_generator_iteration(cfg, state, &x, &y)?
        };
        check_finite(&state.bundle)?;
        state.iteration += 1;
        sink(&log)?;
    }
    Ok(())
}

fn report_without_update(cfg: &TrainConfig, bundle: &ModelBundle, x: &Tensor, y: &Tensor) -> Result<LossReport> {
    no_grad(|| {
        let terms = generator_terms(bundle, x, y, cfg.mirror_latent)?;
        let total = total_loss(&cfg.weights, &terms)?;
        LossReport::from_terms(&terms, &total)
    })
}

fn content_disc_iteration(cfg: &TrainConfig, state: &mut TrainState, x: &Tensor, y: &Tensor) -> Result<IterationLog> {
    let step = state.iteration;
    let report = report_without_update(cfg, &state.bundle, x, y)?;
    let b = &state.bundle;
    let (zx, zy) = no_grad(|| -> Result<_> {
        Ok((b.encode_content(Domain::X, x)?, b.encode_content(Domain::Y, y)?))
    })?;
    let loss = content_disc_objective(b, &zx, &zy)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("content_disc".into()));
    }
    let params = b.parameters_of(&[Group::ContentDisc]);
    let g = gradients(&loss, &params)?;
    let new = state.content_disc.step(&params, &g)?;
    apply_update(&mut state.bundle, &params, new)?;
    Ok(IterationLog {
        step,
        report,
        updated: Updated::ContentDisc,
        critic_gap: 0.0,
    })
}

fn critic_generator_iteration(
    cfg: &TrainConfig,
    state: &mut TrainState,
    x: &Tensor,
    y: &Tensor,
) -> Result<IterationLog> {
    let step = state.iteration;
    // critic step against the current translations
    let tr = no_grad(|| translate(&state.bundle, x, y))?;
    let pseed = derive_seed(derive_seed(cfg.seed, STREAM_PENALTY), step);
    let b = &state.bundle;
    let wx = wgan_critic_loss(b, Domain::X, x, &tr.y_to_x, cfg.weights.alpha, pseed)?;
    let wy = wgan_critic_loss(b, Domain::Y, y, &tr.x_to_y, cfg.weights.alpha, pseed ^ 1)?;
    let critic_loss = wx.critic_loss.add(&wy.critic_loss)?;
    if !critic_loss.is_finite() {
        return Err(Error::NonFinite("critic_loss".into()));
    }
    let critic_gap = 0.5 * (wx.gap.item()? + wy.gap.item()?);
    let params = b.parameters_of(&Group::CRITICS);
    let g = gradients(&critic_loss, &params)?;
    let new = state.critics.step(&params, &g)?;
    apply_update(&mut state.bundle, &params, new)?;

    // encoder/decoder step on the weighted total
    let b = &state.bundle;
    let terms = generator_terms(b, x, y, cfg.mirror_latent)?;
    let total = total_loss(&cfg.weights, &terms)?;
    let report = LossReport::from_terms(&terms, &total)?;
    let params = b.parameters_of(&Group::GENERATORS);
    let g = gradients(&total, &params)?;
    let new = state.generators.step(&params, &g)?;
    apply_update(&mut state.bundle, &params, new)?;
    Ok(IterationLog {
        step,
        report,
        updated: Updated::CriticsAndGenerators,
        critic_gap,
    })
}

/// A labeled patch stream for segmentation training and the domain whose
/// content encoder reads it.
pub struct SegSource<'a> {
    pub domain: Domain,
    pub stream: &'a mut dyn Iterator<Item = Result<Batch>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLog {
    pub step: u64,
    pub loss: f64,
}

/// Trains the segmentation head on content codes, cycling through `sources`
/// one batch at a time. Content encoders stay frozen unless
/// `train_encoder` is set, in which case the encoder of each batch's domain
/// is updated together with the head.
pub fn train_segmentation(
    state: &mut TrainState,
    sources: &mut [SegSource<'_>],
    iterations: u64,
    train_encoder: bool,
    sink: &mut dyn FnMut(&SegLog) -> Result<()>,
) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::invalid("segmentation training needs at least one source"));
    }
    let dtype = state.bundle.dtype();
    for _ in 0..iterations {
        let k = (state.seg_iteration % sources.len() as u64) as usize;
        let domain = sources[k].domain;
        let Some(batch) = sources[k].stream.next() else {
            break;
        };
        let batch = batch?;
        let target = batch
            .target(dtype)
            .ok_or_else(|| Error::invalid("segmentation batch has no labels"))?;
        let x = batch.image(dtype);
        let b = &state.bundle;
        let mut groups = vec![Group::SegHead];
        let content = if train_encoder {
            groups.push(Group::content_encoder(domain));
            b.encode_content(domain, &x)?
        } else {
            no_grad(|| b.encode_content(domain, &x))?
        };
        let logits = b.segment(&content)?;
        let loss = soft_dice_weighted_ce(&logits, &target, inverse_frequency_weights(&target))?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("segmentation loss".into()));
        }
        let params = b.parameters_of(&groups);
        let g = gradients(&loss, &params)?;
        let new = state.seg.step(&params, &g)?;
        apply_update(&mut state.bundle, &params, new)?;
        check_finite(&state.bundle)?;
        let log = SegLog {
            step: state.seg_iteration,
            loss: value,
        };
        state.seg_iteration += 1;
        sink(&log)?;
    }
    Ok(())
}

/// Seeds of the three training streams for a master seed.
pub fn stream_seeds(seed: u64) -> (u64, u64, u64) {
    (
        derive_seed(seed, STREAM_X),
        derive_seed(seed, STREAM_Y),
        derive_seed(seed, STREAM_SEG),
    )
}
