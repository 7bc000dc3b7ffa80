//! Style-conditioned decoder.
//!
//! A two-layer map turns the style vector into per-channel scale and shift
//! pairs, one pair per adaptive-instance-norm site in the residual blocks.
//! The scale half of the last linear layer is biased to one so that the zero
//! style vector yields plain instance normalization.

use super::bundle::GroupBuilder;
use super::layers::{conv, linear, SAME3, UP};
use super::{NetConfig, ParamGroup};
use crate::error::Result;
use crate::tensor::Tensor;

fn affine_count(cfg: &NetConfig) -> usize {
    // two norm sites per block, scale and shift per channel
    cfg.res_blocks * 2 * 2 * (2 * cfg.width)
}

pub(crate) fn build(b: &mut GroupBuilder<'_>, cfg: &NetConfig) {
    let (w, w2) = (cfg.width, 2 * cfg.width);
    b.linear("mlp.fc1", cfg.style_dim, cfg.style_hidden);
    b.linear("mlp.fc2", cfg.style_hidden, affine_count(cfg));
    let mut bias = vec![0.0; affine_count(cfg)];
    for site in 0..cfg.res_blocks * 2 {
        for c in 0..w2 {
            bias[site * 2 * w2 + c] = 1.0;
        }
    }
    let bias = crate::tensor::Tensor::parameter(bias, &[affine_count(cfg)], cfg.dtype)
        .expect("valid shape");
    b.group.insert("mlp.fc2.bias", bias);
    b.conv("conv_in", cfg.content_channels, w2, 3);
    for r in 0..cfg.res_blocks {
        b.conv(&format!("res{r}.conv1"), w2, w2, 3);
        b.conv(&format!("res{r}.conv2"), w2, w2, 3);
    }
    b.conv("up1", w2, w, 3);
    b.conv("up2", w, w, 3);
    b.conv("out", w, 1, 3);
}

pub(crate) fn decode(p: &ParamGroup, cfg: &NetConfig, content: &Tensor, style: &Tensor) -> Result<Tensor> {
    let eps = cfg.norm_eps;
    let w2 = 2 * cfg.width;
    let affine = linear(p, "mlp.fc2", &linear(p, "mlp.fc1", style)?.relu())?;
    let site = |i: usize| -> Result<(Tensor, Tensor)> {
        let scale = affine.narrow(1, i * 2 * w2, w2)?;
        let shift = affine.narrow(1, i * 2 * w2 + w2, w2)?;
        Ok((scale, shift))
    };
    let mut h = conv(p, "conv_in", content, SAME3)?.relu();
    for r in 0..cfg.res_blocks {
        let (s1, b1) = site(2 * r)?;
        let (s2, b2) = site(2 * r + 1)?;
        let t = conv(p, &format!("res{r}.conv1"), &h, SAME3)?
            .adaptive_instance_norm(&s1, &b1, eps)?
            .relu();
        let t = conv(p, &format!("res{r}.conv2"), &t, SAME3)?.adaptive_instance_norm(&s2, &b2, eps)?;
        h = h.add(&t)?;
    }
    let h = conv(p, "up1", &h.upsample3d_nearest(UP)?, SAME3)?.relu();
    let h = conv(p, "up2", &h.upsample3d_nearest(UP)?, SAME3)?.relu();
    let out = conv(p, "out", &h, SAME3)?;
    Ok(out.tanh().scale(cfg.output_scale))
}
