//! Objective terms of the disentangled adaptation model, the segmentation
//! loss and the overlap metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::networks::{ContentDiscriminator, Critic, Domain, Translator};
use crate::tensor::{grad, EnableGradGuard, Tensor};

const PROB_CLAMP: f64 = 1e-7;
const DICE_EPS: f64 = 1.0;
const CLASS_FREQ_FLOOR: f64 = 0.05;

/// Mean absolute error between an image and its reconstruction.
pub fn self_reconstruction_loss(x: &Tensor, x_recon: &Tensor) -> Result<Tensor> {
    Ok(x_recon.l1_distance(x)?)
}

/// Mean absolute error between a content code and its re-encoding.
pub fn latent_content_loss(original: &Tensor, recovered: &Tensor) -> Result<Tensor> {
    Ok(recovered.l1_distance(original)?)
}

/// Mean absolute error between a style code and its re-encoding.
pub fn latent_style_loss(original: &Tensor, recovered: &Tensor) -> Result<Tensor> {
    Ok(recovered.l1_distance(original)?)
}

/// The two cross-domain translations of a batch pair.
///
/// `x_to_y` carries the content of `x` with the style of `y`; `y_to_x` the
/// content of `y` with the style of `x`.
#[derive(Debug, Clone)]
pub struct Translations {
    pub x_to_y: Tensor,
    pub y_to_x: Tensor,
}

/// Swaps styles between `x` and `y`.
pub fn translate<T: Translator + ?Sized>(t: &T, x: &Tensor, y: &Tensor) -> Result<Translations> {
    let cx = t.encode(Domain::X, x)?;
    let cy = t.encode(Domain::Y, y)?;
    Ok(Translations {
        x_to_y: t.decode(Domain::Y, &cx.content, &cy.style)?,
        y_to_x: t.decode(Domain::X, &cy.content, &cx.style)?,
    })
}

/// Two-hop reconstruction error: translate, swap the codes back, translate
/// again, and compare with the originals.
pub fn cross_cycle_loss<T: Translator + ?Sized>(t: &T, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::invalid(format!(
            "cross_cycle_loss: x {:?} and y {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    let tr = translate(t, x, y)?;
    cycle_from_translations(t, x, y, &tr)
}

fn cycle_from_translations<T: Translator + ?Sized>(
    t: &T,
    x: &Tensor,
    y: &Tensor,
    tr: &Translations,
) -> Result<Tensor> {
    let x_back = t.decode(
        Domain::X,
        &t.encode_content(Domain::Y, &tr.x_to_y)?,
        &t.encode_style(Domain::X, &tr.y_to_x)?,
    )?;
    let y_back = t.decode(
        Domain::Y,
        &t.encode_content(Domain::X, &tr.y_to_x)?,
        &t.encode_style(Domain::Y, &tr.x_to_y)?,
    )?;
    Ok(x_back.l1_distance(x)?.add(&y_back.l1_distance(y)?)?)
}

/// Per-sample interpolation coefficients in `[0, 1)` for a batch of `n`.
pub fn interpolation_weights(n: usize, rank: usize, seed: u64) -> Tensor {
    let mut shape = vec![1; rank.max(1)];
    shape[0] = n;
    Tensor::random_uniform(&shape, 0.0, 1.0, seed)
}

/// Mean over the batch of `(‖∇D(ỹ)‖₂ − 1)²` at random interpolates
/// `ỹ = t·real + (1 − t)·fake`, one `t` per sample.
///
/// The result stays differentiable with respect to the critic parameters.
/// Real and fake inputs are detached, so no gradient reaches the generators.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    domain: Domain,
    real: &Tensor,
    fake: &Tensor,
    seed: u64,
) -> Result<Tensor> {
    if real.shape() != fake.shape() || real.rank() == 0 {
        return Err(Error::invalid(format!(
            "gradient_penalty: real {:?} and fake {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    // the inner gradient is needed even when the caller records no graph
    let _enable = EnableGradGuard::new();
    let n = real.shape()[0];
    let t = interpolation_weights(n, real.rank(), seed).to_dtype(real.dtype());
    let interp = fake
        .detach()
        .lerp(&real.detach(), &t)?
        .detach()
        .requires_grad_(true);
    let scores = critic.critic(domain, &interp)?;
    let g = grad(&scores.sum(), &[&interp], true)?.remove(0);
    let norms = g.square().sum_per_sample()?.sqrt()?;
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Critic-side terms of the Wasserstein objective for one domain.
#[derive(Debug, Clone)]
pub struct WganTerms {
    /// `mean D(real) − mean D(fake) + α·penalty`.
    pub critic_objective: Tensor,
    /// `mean D(fake) − mean D(real) + α·penalty`, the quantity the critic
    /// minimizes.
    pub critic_loss: Tensor,
    /// `−mean D(fake)`.
    pub generator_term: Tensor,
    /// `mean D(real) − mean D(fake)`, the critic's distance estimate.
    pub gap: Tensor,
    pub penalty: Tensor,
}

pub fn wgan_critic_loss<C: Critic + ?Sized>(
    critic: &C,
    domain: Domain,
    real: &Tensor,
    fake: &Tensor,
    alpha: f64,
    seed: u64,
) -> Result<WganTerms> {
    let d_real = critic.critic(domain, real)?.mean();
    let d_fake = critic.critic(domain, fake)?.mean();
    let penalty = gradient_penalty(critic, domain, real, fake, seed)?;
    let gap = d_real.sub(&d_fake)?;
    let weighted = penalty.scale(alpha);
    Ok(WganTerms {
        critic_objective: gap.add(&weighted)?,
        critic_loss: gap.neg().add(&weighted)?,
        generator_term: d_fake.neg(),
        gap,
        penalty,
    })
}

/// `−mean D(fake)`, the generator's adversarial term.
pub fn generator_adversarial_term<C: Critic + ?Sized>(
    critic: &C,
    domain: Domain,
    fake: &Tensor,
) -> Result<Tensor> {
    Ok(critic.critic(domain, fake)?.mean().neg())
}

fn clamped_log(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).log()?)
}

fn clamped_log1m(p: &Tensor) -> Result<Tensor> {
    Ok(p.neg().add_scalar(1.0).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).log()?)
}

/// Binary cross-entropy teaching the discriminator that `zc_x` comes from X
/// (label 1) and `zc_y` from Y (label 0). Codes are detached.
pub fn content_disc_objective<D: ContentDiscriminator + ?Sized>(
    disc: &D,
    zc_x: &Tensor,
    zc_y: &Tensor,
) -> Result<Tensor> {
    let px = disc.content_discriminate(&zc_x.detach())?;
    let py = disc.content_discriminate(&zc_y.detach())?;
    let bce_x = clamped_log(&px)?.mean().neg();
    let bce_y = clamped_log1m(&py)?.mean().neg();
    Ok(bce_x.add(&bce_y)?.scale(0.5))
}

/// Cross-entropy of the discriminator's outputs against the uniform target
/// ½ on both domains. Minimal (`ln 2`) when every output is ½.
pub fn content_encoder_objective<D: ContentDiscriminator + ?Sized>(
    disc: &D,
    zc_x: &Tensor,
    zc_y: &Tensor,
) -> Result<Tensor> {
    let half_bce = |p: &Tensor| -> Result<Tensor> {
        Ok(clamped_log(p)?.add(&clamped_log1m(p)?)?.scale(-0.5).mean())
    };
    let ex = half_bce(&disc.content_discriminate(zc_x)?)?;
    let ey = half_bce(&disc.content_discriminate(zc_y)?)?;
    Ok(ex.add(&ey)?.scale(0.5))
}

/// `(disc_objective, encoder_objective)`.
pub fn content_adversarial_loss<D: ContentDiscriminator + ?Sized>(
    disc: &D,
    zc_x: &Tensor,
    zc_y: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if zc_x.shape() != zc_y.shape() {
        return Err(Error::invalid(format!(
            "content_adversarial_loss: codes {:?} and {:?} differ",
            zc_x.shape(),
            zc_y.shape()
        )));
    }
    Ok((
        content_disc_objective(disc, zc_x, zc_y)?,
        content_encoder_objective(disc, zc_x, zc_y)?,
    ))
}

/// Relative importance of every objective term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_wgan: f64,
    pub lambda_recon: f64,
    pub lambda_cyc: f64,
    pub lambda_latent: f64,
    pub lambda_content: f64,
    /// Gradient-penalty coefficient of the critic objective.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_wgan: 1.0,
            lambda_recon: 10.0,
            lambda_cyc: 0.1,
            lambda_latent: 10.0,
            lambda_content: 1.0,
            alpha: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_wgan", self.lambda_wgan),
            ("lambda_recon", self.lambda_recon),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_latent", self.lambda_latent),
            ("lambda_content", self.lambda_content),
            ("alpha", self.alpha),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> LossWeights {
        LossWeights {
            lambda_wgan: self.lambda_wgan * k,
            lambda_recon: self.lambda_recon * k,
            lambda_cyc: self.lambda_cyc * k,
            lambda_latent: self.lambda_latent * k,
            lambda_content: self.lambda_content * k,
            alpha: self.alpha * k,
        }
    }
}

/// The scalar terms the generators are trained on.
///
/// `latent_content` and `latent_style` already include both translation
/// directions when the mirrored terms are enabled.
#[derive(Debug, Clone)]
pub struct GeneratorTerms {
    pub recon_x: Tensor,
    pub recon_y: Tensor,
    pub latent_content: Tensor,
    pub latent_style: Tensor,
    pub cyc: Tensor,
    pub wgan_x: Tensor,
    pub wgan_y: Tensor,
    pub content_adv: Tensor,
}

impl GeneratorTerms {
    fn named(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("recon_x", &self.recon_x),
            ("recon_y", &self.recon_y),
            ("latent_c", &self.latent_content),
            ("latent_s", &self.latent_style),
            ("cyc", &self.cyc),
            ("wgan_x", &self.wgan_x),
            ("wgan_y", &self.wgan_y),
            ("content_adv", &self.content_adv),
        ]
    }
}

/// Weighted sum of the generator terms.
///
/// Fails with [`Error::NonFinite`] naming the first non-finite term.
pub fn total_loss(w: &LossWeights, t: &GeneratorTerms) -> Result<Tensor> {
    for (name, v) in t.named() {
        if v.numel() != 1 {
            return Err(Error::invalid(format!("term {name} is not a scalar: {:?}", v.shape())));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let parts = [
        t.wgan_x.add(&t.wgan_y)?.scale(w.lambda_wgan),
        t.recon_x.add(&t.recon_y)?.scale(w.lambda_recon),
        t.cyc.scale(w.lambda_cyc),
        t.latent_content.add(&t.latent_style)?.scale(w.lambda_latent),
        t.content_adv.scale(w.lambda_content),
    ];
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total = total.add(p)?;
    }
    Ok(total)
}

/// Every generator term of one batch pair, sharing the forward passes.
///
/// With `mirror_latent`, latent reconstruction is measured in both
/// translation directions; otherwise only through the domain-Y decoder.
pub fn generator_terms<M>(model: &M, x: &Tensor, y: &Tensor, mirror_latent: bool) -> Result<GeneratorTerms>
where
    M: Translator + Critic + ContentDiscriminator + ?Sized,
{
    if x.shape() != y.shape() {
        return Err(Error::invalid(format!(
            "generator_terms: x {:?} and y {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    let cx = model.encode(Domain::X, x)?;
    let cy = model.encode(Domain::Y, y)?;
    let recon_x = self_reconstruction_loss(x, &model.decode(Domain::X, &cx.content, &cx.style)?)?;
    let recon_y = self_reconstruction_loss(y, &model.decode(Domain::Y, &cy.content, &cy.style)?)?;

    let x_to_y = model.decode(Domain::Y, &cx.content, &cy.style)?;
    let y_to_x = model.decode(Domain::X, &cy.content, &cx.style)?;

    // second-hop codes double as the latent reconstruction targets
    let c_of_xy = model.encode_content(Domain::Y, &x_to_y)?;
    let s_of_xy = model.encode_style(Domain::Y, &x_to_y)?;
    let c_of_yx = model.encode_content(Domain::X, &y_to_x)?;
    let s_of_yx = model.encode_style(Domain::X, &y_to_x)?;

    let mut latent_content = latent_content_loss(&cx.content, &c_of_xy)?;
    let mut latent_style = latent_style_loss(&cy.style, &s_of_xy)?;
    if mirror_latent {
        latent_content = latent_content.add(&latent_content_loss(&cy.content, &c_of_yx)?)?;
        latent_style = latent_style.add(&latent_style_loss(&cx.style, &s_of_yx)?)?;
    }

    let x_back = model.decode(Domain::X, &c_of_xy, &s_of_yx)?;
    let y_back = model.decode(Domain::Y, &c_of_yx, &s_of_xy)?;
    let cyc = x_back.l1_distance(x)?.add(&y_back.l1_distance(y)?)?;

    Ok(GeneratorTerms {
        recon_x,
        recon_y,
        latent_content,
        latent_style,
        cyc,
        wgan_x: generator_adversarial_term(model, Domain::X, &y_to_x)?,
        wgan_y: generator_adversarial_term(model, Domain::Y, &x_to_y)?,
        content_adv: content_encoder_objective(model, &cx.content, &cy.content)?,
    })
}

/// Plain-number view of one iteration's terms for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub recon_x: f64,
    pub recon_y: f64,
    pub latent_c: f64,
    pub latent_s: f64,
    pub cyc: f64,
    pub wgan_x: f64,
    pub wgan_y: f64,
    pub content_adv: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,recon_x,recon_y,latent_c,latent_s,cyc,wgan_x,wgan_y,content_adv,total,updated";

    pub fn from_terms(t: &GeneratorTerms, total: &Tensor) -> Result<LossReport> {
        Ok(LossReport {
            recon_x: t.recon_x.item()?,
            recon_y: t.recon_y.item()?,
            latent_c: t.latent_content.item()?,
            latent_s: t.latent_style.item()?,
            cyc: t.cyc.item()?,
            wgan_x: t.wgan_x.item()?,
            wgan_y: t.wgan_y.item()?,
            content_adv: t.content_adv.item()?,
            total: total.item()?,
        })
    }

    /// The weighted sum recomputed from the logged terms.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda_wgan * (self.wgan_x + self.wgan_y)
            + w.lambda_recon * (self.recon_x + self.recon_y)
            + w.lambda_cyc * self.cyc
            + w.lambda_latent * (self.latent_c + self.latent_s)
            + w.lambda_content * self.content_adv
    }

    /// One CSV row; values use shortest round-trip formatting, so equal rows
    /// mean bit-identical values.
    pub fn csv_row(&self, step: usize, updated: &str) -> String {
        let mut s = format!("{step}");
        for v in [
            self.recon_x,
            self.recon_y,
            self.latent_c,
            self.latent_s,
            self.cyc,
            self.wgan_x,
            self.wgan_y,
            self.content_adv,
            self.total,
        ] {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{updated}");
        s
    }
}

/// Inverse class frequencies `1 / max(freq, 0.05)` of a binary target.
pub fn inverse_frequency_weights(target: &Tensor) -> [f64; 2] {
    let n = target.numel() as f64;
    let fg = target.data().iter().filter(|&&v| v > 0.5).count() as f64 / n;
    [
        1.0 / (1.0 - fg).max(CLASS_FREQ_FLOOR),
        1.0 / fg.max(CLASS_FREQ_FLOOR),
    ]
}

/// Soft Dice on the foreground channel plus class-weighted cross-entropy,
/// summed with equal weight.
///
/// `logits` is `[N, 2, ...]`; `target` holds 0/1 labels shaped `[N, 1, ...]`.
pub fn soft_dice_weighted_ce(logits: &Tensor, target: &Tensor, class_weights: [f64; 2]) -> Result<Tensor> {
    let s = logits.shape();
    let mut t_shape = s.to_vec();
    if s.len() < 2 || s[1] != 2 {
        return Err(Error::invalid(format!("segmentation logits must be [N, 2, ...], got {s:?}")));
    }
    t_shape[1] = 1;
    if target.shape() != t_shape.as_slice() {
        return Err(Error::invalid(format!(
            "segmentation target {:?} does not match {t_shape:?}",
            target.shape()
        )));
    }
    if class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(format!("class weights must be >= 0, got {class_weights:?}")));
    }
    let g = target.detach().to_dtype(logits.dtype());
    let p_fg = logits.softmax_channels()?.narrow(1, 1, 1)?;
    let inter = p_fg.mul(&g)?.sum();
    let denom = p_fg.sum().add(&g.sum())?.add_scalar(DICE_EPS);
    let dice = inter.scale(2.0).add_scalar(DICE_EPS).div(&denom)?.neg().add_scalar(1.0);

    let onehot = Tensor::concat(&[&g.neg().add_scalar(1.0), &g], 1)?;
    let mut w_shape = vec![1; s.len()];
    w_shape[1] = 2;
    let w = Tensor::with_dtype(class_weights.to_vec(), &w_shape, logits.dtype())?;
    let voxels = (logits.numel() / 2) as f64;
    let ce = logits
        .log_softmax_channels()?
        .mul(&onehot)?
        .mul(&w)?
        .sum()
        .scale(-1.0 / voxels);
    Ok(dice.add(&ce)?)
}

/// Foreground wherever the foreground logit exceeds the background logit.
pub fn predict_mask(logits: &Tensor) -> Result<Vec<u8>> {
    let s = logits.shape();
    if s.len() < 2 || s[1] != 2 {
        return Err(Error::invalid(format!("segmentation logits must be [N, 2, ...], got {s:?}")));
    }
    let inner: usize = s[2..].iter().product();
    let d = logits.data();
    let mut out = Vec::with_capacity(s[0] * inner);
    for n in 0..s[0] {
        let base = n * 2 * inner;
        for i in 0..inner {
            out.push(u8::from(d[base + inner + i] > d[base + i]));
        }
    }
    Ok(out)
}

fn overlap_counts(pred: &[u8], truth: &[u8]) -> Result<(usize, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut a, mut b, mut both) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::invalid(format!("non-binary mask value {}", p.max(t))));
        }
        a += p as usize;
        b += t as usize;
        both += (p & t) as usize;
    }
    Ok((a, b, both))
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dice_metric(pred: &[u8], truth: &[u8]) -> Result<f64> {
    let (a, b, both) = overlap_counts(pred, truth)?;
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// `|A∩B| / |A∪B|`, 1 when both masks are empty.
pub fn jaccard_metric(pred: &[u8], truth: &[u8]) -> Result<f64> {
    let (a, b, both) = overlap_counts(pred, truth)?;
    let union = a + b - both;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::LinearCritic;

    #[test]
    fn l1_examples() {
        let z = Tensor::zeros(&[2, 3]);
        let o = Tensor::ones(&[2, 3]);
        assert_eq!(self_reconstruction_loss(&z, &z).unwrap().item().unwrap(), 0.0);
        assert_eq!(self_reconstruction_loss(&z, &o).unwrap().item().unwrap(), 1.0);
        let a = Tensor::new(vec![2.0], &[1, 1]).unwrap();
        let b = Tensor::new(vec![5.0], &[1, 1]).unwrap();
        assert_eq!(latent_content_loss(&a, &b).unwrap().item().unwrap(), 3.0);
        assert!(latent_style_loss(&a, &z).is_err());
    }

    #[test]
    fn linear_critic_penalty_is_analytic() {
        let shape = [1, 2, 3, 3];
        let real = Tensor::random_uniform(&[4, 1, 2, 3, 3], -2.0, 2.0, 3);
        let fake = Tensor::random_uniform(&[4, 1, 2, 3, 3], -2.0, 2.0, 4);
        for (norm, want) in [(3.0, 4.0), (1.0, 0.0), (0.5, 0.25)] {
            let c = LinearCritic::with_norm(&shape, norm, 9).unwrap();
            let p = gradient_penalty(&c, Domain::Y, &real, &fake, 17).unwrap();
            assert!((p.item().unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn total_loss_weighted_sum() {
        let one = Tensor::scalar(1.0);
        let t = GeneratorTerms {
            recon_x: one.clone(),
            recon_y: one.clone(),
            latent_content: one.clone(),
            latent_style: one.clone(),
            cyc: one.clone(),
            wgan_x: one.clone(),
            wgan_y: one.clone(),
            content_adv: one.clone(),
        };
        let w = LossWeights::default();
        let v = total_loss(&w, &t).unwrap().item().unwrap();
        // 2 * 1 + 2 * 10 + 0.1 + 2 * 10 + 1
        assert!((v - 43.1).abs() < 1e-12);
        let zero = total_loss(&w.scaled(0.0), &t).unwrap().item().unwrap();
        assert_eq!(zero, 0.0);
        let doubled = total_loss(&w.scaled(2.0), &t).unwrap().item().unwrap();
        assert!((doubled - 2.0 * v).abs() < 1e-12);
    }

    #[test]
    fn total_loss_names_nan_term() {
        let one = Tensor::scalar(1.0);
        let t = GeneratorTerms {
            recon_x: one.clone(),
            recon_y: one.clone(),
            latent_content: one.clone(),
            latent_style: one.clone(),
            cyc: Tensor::scalar(f64::NAN),
            wgan_x: one.clone(),
            wgan_y: one.clone(),
            content_adv: one,
        };
        match total_loss(&LossWeights::default(), &t) {
            Err(Error::NonFinite(name)) => assert_eq!(name, "cyc"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn metric_worked_example() {
        let mut a = vec![0u8; 16];
        let mut b = vec![0u8; 16];
        a[..8].fill(1);
        b[4..12].fill(1);
        assert_eq!(dice_metric(&a, &b).unwrap(), 0.5);
        assert_eq!(jaccard_metric(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(dice_metric(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard_metric(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert_eq!(dice_metric(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(dice_metric(&[2], &[1]).is_err());
    }

    #[test]
    fn negative_class_weight_rejected() {
        let logits = Tensor::zeros(&[1, 2, 1, 1, 1]);
        let target = Tensor::zeros(&[1, 1, 1, 1, 1]);
        assert!(soft_dice_weighted_ce(&logits, &target, [1.0, -1.0]).is_err());
    }

    #[test]
    fn csv_row_format() {
        let r = LossReport {
            total: 1.5,
            ..LossReport::default()
        };
        assert_eq!(r.csv_row(3, "content_disc"), "3,0,0,0,0,0,0,0,0,1.5,content_disc");
        assert_eq!(LossReport::CSV_HEADER.split(',').count(), r.csv_row(0, "x").split(',').count());
    }
}
