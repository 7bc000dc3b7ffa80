use super::bundle::GroupBuilder;
use super::layers::{conv, DOWN, POINTWISE, SAME3};
use super::{Critic, Domain, NetConfig, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn build_critic(b: &mut GroupBuilder<'_>, cfg: &NetConfig) {
    let (w, w2) = (cfg.width, 2 * cfg.width);
    b.conv("conv1", 1, w, 3);
    b.conv("conv2", w, w2, 3);
    b.conv("conv3", w2, 1, 3);
}

/// Unbounded score per sample. Only conv, leaky ReLU and mean are used, all of
/// which support double backward.
pub(crate) fn critic(p: &ParamGroup, cfg: &NetConfig, x: &Tensor) -> Result<Tensor> {
    let h = conv(p, "conv1", x, DOWN)?.leaky_relu(cfg.leaky_slope);
    let h = conv(p, "conv2", &h, DOWN)?.leaky_relu(cfg.leaky_slope);
    let h = conv(p, "conv3", &h, SAME3)?;
    Ok(h.mean_per_sample()?)
}

pub(crate) fn build_content_disc(b: &mut GroupBuilder<'_>, cfg: &NetConfig) {
    let w2 = 2 * cfg.width;
    b.conv("conv1", cfg.content_channels, w2, 3);
    b.conv("conv2", w2, w2, 3);
    b.conv("out", w2, 1, 1);
}

pub(crate) fn content_disc(p: &ParamGroup, cfg: &NetConfig, z: &Tensor) -> Result<Tensor> {
    let h = conv(p, "conv1", z, DOWN)?.leaky_relu(cfg.leaky_slope);
    let h = conv(p, "conv2", &h, DOWN)?.leaky_relu(cfg.leaky_slope);
    let h = conv(p, "out", &h, POINTWISE)?;
    Ok(h.mean_per_sample()?.sigmoid())
}

/// `D(y) = <w, y>` per sample, the same map for both domains.
///
/// Its input gradient is `w` everywhere, which makes the gradient penalty
/// analytically `(‖w‖₂ − 1)²`.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    pub weight: Tensor,
}

impl LinearCritic {
    pub fn new(weight: Tensor) -> Self {
        LinearCritic { weight }
    }

    /// A random direction rescaled to the requested Euclidean norm.
    pub fn with_norm(shape: &[usize], norm: f64, seed: u64) -> Result<Self> {
        let w = Tensor::random_uniform(shape, -1.0, 1.0, seed);
        let current = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let data = w.data().iter().map(|v| v * norm / current).collect();
        Ok(LinearCritic::new(Tensor::parameter(data, shape, w.dtype())?))
    }
}

impl Critic for LinearCritic {
    fn critic(&self, _domain: Domain, image: &Tensor) -> Result<Tensor> {
        let n = image.shape().first().copied().unwrap_or(0);
        if n == 0 || image.shape()[1..] != *self.weight.shape() {
            return Err(Error::invalid(format!(
                "linear critic expects [N, {:?}], got {:?}",
                self.weight.shape(),
                image.shape()
            )));
        }
        Ok(image.mul(&self.weight)?.sum_per_sample()?)
    }
}

/// Two-layer perceptron critic over flattened samples,
/// `D(y) = w₂ · leaky(W₁ y + b₁) + b₂`, shared by both domains.
#[derive(Debug, Clone)]
pub struct MlpCritic {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub leaky_slope: f64,
}

impl MlpCritic {
    /// Uniform fan-in initialization with `hidden` units.
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Self {
        let layer = |rows: usize, cols: usize, seed: u64| {
            let bound = (1.0 / rows as f64).sqrt();
            Tensor::random_uniform(&[rows, cols], -bound, bound, seed).requires_grad_(true)
        };
        MlpCritic {
            w1: layer(inputs, hidden, seed),
            b1: Tensor::zeros(&[hidden]).requires_grad_(true),
            w2: layer(hidden, 1, seed ^ 0x5bd1),
            b2: Tensor::zeros(&[1]).requires_grad_(true),
            leaky_slope: 0.2,
        }
    }

    pub fn parameters(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn set_parameters(&mut self, p: Vec<Tensor>) -> Result<()> {
        let [w1, b1, w2, b2]: [Tensor; 4] = p
            .try_into()
            .map_err(|p: Vec<Tensor>| Error::invalid(format!("mlp critic has 4 parameters, got {}", p.len())))?;
        *self = MlpCritic { w1, b1, w2, b2, ..*self };
        Ok(())
    }
}

impl Critic for MlpCritic {
    fn critic(&self, _domain: Domain, image: &Tensor) -> Result<Tensor> {
        let n = image.shape().first().copied().unwrap_or(0);
        let inputs = self.w1.shape()[0];
        if n == 0 || image.numel() != n * inputs {
            return Err(Error::invalid(format!(
                "mlp critic expects {inputs} values per sample, got shape {:?}",
                image.shape()
            )));
        }
        let h = image.reshape(&[n, inputs])?.linear(&self.w1, Some(&self.b1))?.leaky_relu(self.leaky_slope);
        Ok(h.linear(&self.w2, Some(&self.b2))?.reshape(&[n])?)
    }
}
