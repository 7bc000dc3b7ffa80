//! Finite-difference suites over every tensor op, every loss and the
//! second-order penalty path.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{
    content_disc_objective, content_encoder_objective, cross_cycle_loss, generator_adversarial_term,
    generator_terms, gradient_penalty, latent_content_loss, latent_style_loss, self_reconstruction_loss,
    soft_dice_weighted_ce, total_loss, wgan_critic_loss, LossWeights,
};
use crate::networks::{Domain, Group, ModelBundle, NetConfig};
use crate::tensor::gradcheck::{finite_diff_check, second_order_check};
use crate::tensor::{ConvGeometry, DType, Tensor};

/// Random points each check is evaluated at.
pub const POINTS: u64 = 10;
pub const FIRST_ORDER_TOL: f64 = 1e-6;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;
/// Full-model checks use a smaller step so that fewer coordinates straddle
/// an activation or L1 kink.
const EPS_MODEL: f64 = 1e-7;
/// A larger step for the second-order path, whose central differences are
/// taken of gradients rather than values.
const EPS_SECOND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Ops,
    Losses,
    Penalty,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Ops, Suite::Losses, Suite::Penalty];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Ops => "ops",
            Suite::Losses => "losses",
            Suite::Penalty => "penalty",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (expected ops, losses or penalty)")))
    }
}

/// Worst relative error of one check over all evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// The failing check with the largest error relative to its tolerance.
pub fn worst(checks: &[Check]) -> Option<&Check> {
    checks
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)))
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Ops => ops_suite(),
        Suite::Losses => losses_suite(),
        Suite::Penalty => penalty_suite(),
    }
}

#[derive(Clone, Copy)]
enum Dist {
    Signed,
    Positive,
}

fn point(shape: &[usize], seed: u64, dist: Dist) -> Tensor {
    match dist {
        Dist::Signed => Tensor::random_uniform(shape, -1.0, 1.0, seed),
        Dist::Positive => Tensor::random_uniform(shape, 0.5, 1.5, seed),
    }
}

/// Contracts an op output with fixed random weights so every output
/// coordinate contributes to the checked gradient.
fn project(t: &Tensor) -> Result<Tensor> {
    let w = Tensor::random_uniform(t.shape(), -1.0, 1.0, 0xC0FFEE ^ t.numel() as u64);
    Ok(t.mul(&w)?.sum())
}

fn first_order<F>(name: &str, shape: &[usize], dist: Dist, f: F) -> Result<Check>
where
    F: Fn(&Tensor, u64) -> Result<Tensor>,
{
    first_order_eps(name, shape, dist, EPS, f)
}

fn first_order_eps<F>(name: &str, shape: &[usize], dist: Dist, eps: f64, f: F) -> Result<Check>
where
    F: Fn(&Tensor, u64) -> Result<Tensor>,
{
    let mut worst = 0.0f64;
    for k in 0..POINTS {
        let p = point(shape, 1000 * k + 1, dist);
        worst = worst.max(finite_diff_check(|x| project(&f(x, k)?), &p, eps)?);
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance: FIRST_ORDER_TOL,
    })
}

/// Checks a unary op and, for binary ops, each argument with the other fixed.
fn unary<F>(name: &str, shape: &[usize], dist: Dist, f: F) -> Result<Check>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    first_order(name, shape, dist, |x, _| f(x))
}

fn binary<F>(name: &str, a: &[usize], b: &[usize], dist: Dist, f: F) -> Result<[Check; 2]>
where
    F: Fn(&Tensor, &Tensor) -> Result<Tensor>,
{
    let lhs = first_order(&format!("{name}[lhs]"), a, dist, |x, k| f(x, &point(b, 7 + k, dist)))?;
    let rhs = first_order(&format!("{name}[rhs]"), b, dist, |y, k| f(&point(a, 11 + k, dist), y))?;
    Ok([lhs, rhs])
}

fn ops_suite() -> Result<Vec<Check>> {
    use Dist::{Positive, Signed};
    let s = [2, 3];
    let vol = [2, 2, 3, 4, 4];
    let geom = ConvGeometry::new([1, 2, 2], [1, 1, 1]);
    let kshape = [3, 2, 3, 3, 3];
    let yshape = [2, 3, 3, 2, 2];
    let mut out = Vec::new();
    out.extend(binary("add", &s, &s, Signed, |a, b| Ok(a.add(b)?))?);
    out.extend(binary("add_broadcast", &s, &[1, 3], Signed, |a, b| Ok(a.add(b)?))?);
    out.extend(binary("sub", &s, &s, Signed, |a, b| Ok(a.sub(b)?))?);
    out.extend(binary("mul", &s, &s, Signed, |a, b| Ok(a.mul(b)?))?);
    out.extend(binary("div", &s, &s, Positive, |a, b| Ok(a.div(b)?))?);
    out.extend(binary("matmul", &[2, 3], &[3, 4], Signed, |a, b| Ok(a.matmul(b)?))?);
    out.extend(binary("lerp", &s, &s, Signed, |a, b| {
        Ok(a.lerp(b, &Tensor::new(vec![0.3, 0.8], &[2, 1])?)?)
    })?);
    out.extend(binary("l1_distance", &s, &s, Signed, |a, b| Ok(a.l1_distance(b)?))?);
    out.extend(binary("conv3d", &vol, &kshape, Signed, |x, k| Ok(x.conv3d(k, geom)?))?);
    out.extend(binary("conv3d_input_grad", &yshape, &kshape, Signed, |g, k| {
        Ok(g.conv3d_input_grad(k, geom, &vol)?)
    })?);
    out.extend(binary("conv3d_kernel_grad", &vol, &yshape, Signed, |x, g| {
        Ok(x.conv3d_kernel_grad(g, geom, &kshape)?)
    })?);
    out.extend(binary("linear", &[2, 3], &[3, 4], Signed, |x, w| Ok(x.linear(w, None)?))?);
    out.extend(binary("concat", &s, &[2, 2], Signed, |a, b| Ok(Tensor::concat(&[a, b], 1)?))?);

    let unaries: Vec<(&str, &[usize], Dist, Box<dyn Fn(&Tensor) -> Result<Tensor>>)> = vec![
        ("neg", &s, Signed, Box::new(|x| Ok(x.neg()))),
        ("scale", &s, Signed, Box::new(|x| Ok(x.scale(-1.7)))),
        ("add_scalar", &s, Signed, Box::new(|x| Ok(x.add_scalar(0.4)))),
        ("square", &s, Signed, Box::new(|x| Ok(x.square()))),
        ("exp", &s, Signed, Box::new(|x| Ok(x.exp()))),
        ("log", &s, Positive, Box::new(|x| Ok(x.log()?))),
        ("sqrt", &s, Positive, Box::new(|x| Ok(x.sqrt()?))),
        ("tanh", &s, Signed, Box::new(|x| Ok(x.tanh()))),
        ("sigmoid", &s, Signed, Box::new(|x| Ok(x.sigmoid()))),
        ("leaky_relu", &s, Signed, Box::new(|x| Ok(x.leaky_relu(0.2)))),
        ("relu", &s, Signed, Box::new(|x| Ok(x.relu()))),
        ("abs", &s, Signed, Box::new(|x| Ok(x.abs()))),
        ("clamp", &s, Signed, Box::new(|x| Ok(x.clamp(-0.5, 0.5)))),
        ("sum", &s, Signed, Box::new(|x| Ok(x.sum()))),
        ("mean", &s, Signed, Box::new(|x| Ok(x.mean()))),
        ("sum_to", &[2, 3, 4], Signed, Box::new(|x| Ok(x.sum_to(&[2, 1, 4])?))),
        ("broadcast_to", &[3, 1], Signed, Box::new(|x| Ok(x.broadcast_to(&[2, 3, 4])?))),
        ("reshape", &[2, 3, 4], Signed, Box::new(|x| Ok(x.reshape(&[4, 6])?))),
        ("transpose2", &[3, 4], Signed, Box::new(|x| Ok(x.transpose2()?))),
        ("sum_axes_keepdim", &[2, 3, 4], Signed, Box::new(|x| Ok(x.sum_axes_keepdim(&[0, 2])?))),
        ("mean_axes_keepdim", &[2, 3, 4], Signed, Box::new(|x| Ok(x.mean_axes_keepdim(&[1])?))),
        ("narrow", &[2, 5], Signed, Box::new(|x| Ok(x.narrow(1, 1, 3)?))),
        ("pad_axis", &[2, 3], Signed, Box::new(|x| Ok(x.pad_axis(1, 2, 6)?))),
        ("upsample3d_nearest", &vol, Signed, Box::new(|x| Ok(x.upsample3d_nearest([1, 2, 2])?))),
        ("sum_pool3d", &vol, Signed, Box::new(|x| Ok(x.sum_pool3d([1, 2, 2])?))),
        ("instance_norm", &vol, Signed, Box::new(|x| Ok(x.instance_norm(1e-5)?))),
        ("log_softmax_channels", &vol, Signed, Box::new(|x| Ok(x.log_softmax_channels()?))),
        ("softmax_channels", &vol, Signed, Box::new(|x| Ok(x.softmax_channels()?))),
        ("mean_per_sample", &vol, Signed, Box::new(|x| Ok(x.mean_per_sample()?))),
        ("sum_per_sample", &vol, Signed, Box::new(|x| Ok(x.sum_per_sample()?))),
    ];
    for (name, shape, dist, f) in unaries {
        out.push(unary(name, shape, dist, f)?);
    }
    let affine = |seed| Tensor::random_uniform(&[2, 2], 0.5, 1.5, seed);
    out.push(unary("adaptive_instance_norm[content]", &vol, Signed, |x| {
        Ok(x.adaptive_instance_norm(&affine(3), &affine(4), 1e-5)?)
    })?);
    out.push(unary("adaptive_instance_norm[scale]", &[2, 2], Signed, |s| {
        Ok(point(&vol, 5, Signed).adaptive_instance_norm(s, &affine(4), 1e-5)?)
    })?);
    Ok(out)
}

/// A model small enough for coordinate-wise finite differences, with a
/// larger init scale so gradients are far from zero.
fn tiny_bundle(seed: u64) -> Result<ModelBundle> {
    let cfg = NetConfig {
        patch: [2, 4, 4],
        content_channels: 2,
        style_dim: 2,
        width: 2,
        res_blocks: 1,
        style_hidden: 4,
        growth: 2,
        dense_layers: 1,
        seg_transition: 2,
        init_std: 0.4,
        dtype: DType::F64,
        ..NetConfig::default()
    };
    ModelBundle::new(cfg, seed)
}

fn first_param(bundle: &ModelBundle, g: Group) -> (String, Tensor) {
    bundle.parameters_of(&[g]).remove(0)
}

/// Finite differences of a bundle loss with respect to one parameter.
fn param_check<F>(name: &str, group: Group, tol: f64, eps: f64, f: F) -> Result<Check>
where
    F: Fn(&ModelBundle, u64) -> Result<Tensor>,
{
    let mut worst = 0.0f64;
    for k in 0..POINTS {
        let base = tiny_bundle(k)?;
        let (pname, p) = first_param(&base, group);
        let err = finite_diff_check(
            |theta| {
                let mut b = base.clone();
                b.set_parameter(&pname, theta.clone())?;
                f(&b, k)
            },
            &p.detach(),
            eps,
        )?;
        worst = worst.max(err);
    }
    Ok(Check {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance: tol,
    })
}

fn losses_suite() -> Result<Vec<Check>> {
    use Dist::Signed;
    let img = [2, 1, 2, 4, 4];
    let code = [2, 2, 2, 1, 1];
    let mut out = Vec::new();
    out.extend(binary("self_reconstruction_loss", &img, &img, Signed, |a, b| {
        Ok(self_reconstruction_loss(a, b)?)
    })?);
    out.extend(binary("latent_content_loss", &code, &code, Signed, |a, b| {
        Ok(latent_content_loss(a, b)?)
    })?);
    out.extend(binary("latent_style_loss", &[2, 2], &[2, 2], Signed, |a, b| {
        Ok(latent_style_loss(a, b)?)
    })?);
    out.push(first_order("soft_dice_weighted_ce", &[2, 2, 2, 3, 3], Signed, |logits, k| {
        let target = Tensor::random_uniform(&[2, 1, 2, 3, 3], 0.0, 1.0, 50 + k).to_vec();
        let target = Tensor::new(target.into_iter().map(|v| (v > 0.6) as u8 as f64).collect(), &[2, 1, 2, 3, 3])?;
        Ok(soft_dice_weighted_ce(logits, &target, [0.4, 1.7])?)
    })?);

    let pair = |k: u64| (point(&img, 60 + k, Signed), point(&img, 70 + k, Signed));
    out.push(first_order_eps("cross_cycle_loss", &img, Signed, EPS_MODEL, |x, k| {
        Ok(cross_cycle_loss(&tiny_bundle(k)?, x, &pair(k).1)?)
    })?);
    out.push(first_order_eps("generator_adversarial_term", &img, Signed, EPS_MODEL, |fake, k| {
        Ok(generator_adversarial_term(&tiny_bundle(k)?, Domain::Y, fake)?)
    })?);
    out.push(first_order_eps("content_encoder_objective", &code, Signed, EPS_MODEL, |zx, k| {
        Ok(content_encoder_objective(&tiny_bundle(k)?, zx, &point(&code, 80 + k, Signed))?)
    })?);
    out.push(first_order_eps("total_loss", &img, Signed, EPS_MODEL, |x, k| {
        let b = tiny_bundle(k)?;
        Ok(total_loss(&LossWeights::default(), &generator_terms(&b, x, &pair(k).1, true)?)?)
    })?);
    out.push(param_check(
        "content_disc_objective",
        Group::ContentDisc,
        FIRST_ORDER_TOL,
        EPS_MODEL,
        |b, k| Ok(content_disc_objective(b, &point(&code, 90 + k, Signed), &point(&code, 91 + k, Signed))?),
    )?);
    out.push(param_check("total_loss[decoder]", Group::DecY, FIRST_ORDER_TOL, EPS_MODEL, |b, k| {
        let (x, y) = pair(k);
        Ok(total_loss(&LossWeights::default(), &generator_terms(b, &x, &y, true)?)?)
    })?);
    Ok(out)
}

fn penalty_suite() -> Result<Vec<Check>> {
    use Dist::{Positive, Signed};
    let img = [2, 1, 2, 4, 4];
    let mut out = Vec::new();
    out.push(param_check("gradient_penalty", Group::CriticX, SECOND_ORDER_TOL, EPS_SECOND, |b, k| {
        Ok(gradient_penalty(b, Domain::X, &point(&img, 20 + k, Signed), &point(&img, 30 + k, Signed), k)?)
    })?);
    out.push(param_check("wgan_critic_loss", Group::CriticY, SECOND_ORDER_TOL, EPS_SECOND, |b, k| {
        let t = wgan_critic_loss(b, Domain::Y, &point(&img, 40 + k, Signed), &point(&img, 41 + k, Signed), 10.0, k)?;
        Ok(t.critic_loss)
    })?);

    // ∂/∂θ ‖∇ₓ Σ θ·op(x)‖² for every op the penalty path can differentiate twice
    let s = [2, 3];
    let vol = [1, 2, 3, 4, 4];
    let geom = ConvGeometry::new([1, 2, 2], [1, 1, 1]);
    let kernel = || point(&[2, 2, 3, 3, 3], 99, Signed);
    type Op2 = Box<dyn Fn(&Tensor) -> Result<Tensor>>;
    let ops: Vec<(&str, &[usize], Dist, Op2)> = vec![
        ("mul", &s, Signed, Box::new(|x| Ok(x.mul(&x.tanh())?))),
        ("div", &s, Positive, Box::new(|x| Ok(x.div(&x.add_scalar(1.0))?))),
        ("exp", &s, Signed, Box::new(|x| Ok(x.exp()))),
        ("log", &s, Positive, Box::new(|x| Ok(x.log()?))),
        ("tanh", &s, Signed, Box::new(|x| Ok(x.tanh()))),
        ("sigmoid", &s, Signed, Box::new(|x| Ok(x.sigmoid()))),
        ("square", &s, Signed, Box::new(|x| Ok(x.square()))),
        ("leaky_relu", &s, Signed, Box::new(|x| Ok(x.leaky_relu(0.2).square()))),
        ("abs", &s, Signed, Box::new(|x| Ok(x.abs().square()))),
        ("clamp", &s, Signed, Box::new(|x| Ok(x.clamp(-0.5, 0.5).square()))),
        ("matmul", &[2, 3], Signed, Box::new(|x| Ok(x.matmul(&x.transpose2()?)?))),
        ("sum_to", &[2, 3], Signed, Box::new(|x| Ok(x.sum_to(&[1, 3])?.square()))),
        ("broadcast_to", &[1, 3], Signed, Box::new(|x| Ok(x.broadcast_to(&[2, 3])?.square()))),
        ("narrow_pad", &[2, 5], Signed, Box::new(|x| Ok(x.narrow(1, 1, 3)?.pad_axis(1, 1, 5)?.square()))),
        ("concat", &s, Signed, Box::new(|x| Ok(Tensor::concat(&[x, &x.square()], 0)?.square()))),
        ("conv3d", &vol, Signed, Box::new(move |x| Ok(x.conv3d(&kernel(), geom)?.leaky_relu(0.2).square()))),
        ("upsample_pool", &vol, Signed, Box::new(|x| Ok(x.upsample3d_nearest([1, 2, 2])?.sum_pool3d([1, 2, 2])?.square()))),
        ("softmax_channels", &vol, Signed, Box::new(|x| Ok(x.softmax_channels()?))),
    ];
    for (name, shape, dist, f) in ops {
        let mut worst = 0.0f64;
        for k in 0..POINTS {
            let x = point(shape, 200 + k, dist);
            let theta = point(&f(&x)?.shape().to_vec(), 300 + k, Signed);
            let err = second_order_check(|x, th| -> Result<Tensor> { Ok(f(x)?.mul(th)?.sum()) }, &x, &theta, EPS_SECOND)?;
            worst = worst.max(err);
        }
        out.push(Check {
            name: format!("second_order:{name}"),
            max_rel_error: worst,
            tolerance: SECOND_ORDER_TOL,
        });
    }
    Ok(out)
}
