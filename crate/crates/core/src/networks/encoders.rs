use super::bundle::GroupBuilder;
use super::layers::{conv, linear, residual, DOWN, POINTWISE, SAME3};
use super::{NetConfig, ParamGroup};
use crate::error::Result;
use crate::tensor::Tensor;

pub(crate) fn build_content(b: &mut GroupBuilder<'_>, cfg: &NetConfig) {
    let (w, w2) = (cfg.width, 2 * cfg.width);
    b.conv("conv_in", 1, w, 3);
    b.conv("down1", w, w2, 3);
    b.conv("down2", w2, w2, 3);
    for r in 0..cfg.res_blocks {
        b.conv(&format!("res{r}.conv1"), w2, w2, 3);
        b.conv(&format!("res{r}.conv2"), w2, w2, 3);
    }
    b.conv("out", w2, cfg.content_channels, 1);
}

/// `[N,1,D,H,W] -> [N,Cc,D,H/4,W/4]`.
pub(crate) fn content(p: &ParamGroup, cfg: &NetConfig, x: &Tensor) -> Result<Tensor> {
    let eps = cfg.norm_eps;
    let mut h = conv(p, "conv_in", x, SAME3)?.instance_norm(eps)?.relu();
    h = conv(p, "down1", &h, DOWN)?.instance_norm(eps)?.relu();
    h = conv(p, "down2", &h, DOWN)?.instance_norm(eps)?.relu();
    for r in 0..cfg.res_blocks {
        h = residual(p, &format!("res{r}"), &h, eps)?;
    }
    conv(p, "out", &h, POINTWISE)
}

pub(crate) fn build_style(b: &mut GroupBuilder<'_>, cfg: &NetConfig) {
    let (w, w2) = (cfg.width, 2 * cfg.width);
    b.conv("down1", 1, w, 3);
    b.conv("down2", w, w2, 3);
    b.linear("fc", w2, cfg.style_dim);
}

/// `[N,1,D,H,W] -> [N,Cs]`: strided convs, global average pool, linear map.
pub(crate) fn style(p: &ParamGroup, x: &Tensor) -> Result<Tensor> {
    let h = conv(p, "down1", x, DOWN)?.relu();
    let h = conv(p, "down2", &h, DOWN)?.relu();
    let n = h.shape()[0];
    let c = h.shape()[1];
    let pooled = h.mean_axes_keepdim(&[2, 3, 4])?.reshape(&[n, c])?;
    linear(p, "fc", &pooled)
}
