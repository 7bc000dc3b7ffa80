//! Densely connected segmentation head.
//!
//! Two dense blocks, each followed by a pointwise transition and, while the
//! feature map is coarser than the patch, a nearest-neighbour upsampling.

use super::bundle::GroupBuilder;
use super::layers::{conv, POINTWISE, SAME3, UP};
use super::{NetConfig, ParamGroup};
use crate::error::Result;
use crate::tensor::Tensor;

const BLOCKS: usize = 2;
pub(crate) const CLASSES: usize = 2;

/// Input channel count of every layer in a dense block, followed by the
/// block's output channel count.
pub fn dense_block_channels(c_in: usize, growth: usize, layers: usize) -> Vec<usize> {
    (0..=layers).map(|l| c_in + l * growth).collect()
}

pub(crate) fn build(b: &mut GroupBuilder<'_>, cfg: &NetConfig, c_in: usize) {
    let mut c = c_in;
    for blk in 1..=BLOCKS {
        let chans = dense_block_channels(c, cfg.growth, cfg.dense_layers);
        for (l, &cin) in chans.iter().take(cfg.dense_layers).enumerate() {
            b.conv(&format!("block{blk}.layer{l}"), cin, cfg.growth, 3);
        }
        b.conv(&format!("trans{blk}"), chans[cfg.dense_layers], cfg.seg_transition, 1);
        c = cfg.seg_transition;
    }
    b.conv("out", c, CLASSES, 3);
}

fn dense_block(p: &ParamGroup, cfg: &NetConfig, blk: usize, x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    for l in 0..cfg.dense_layers {
        let new = conv(
            p,
            &format!("block{blk}.layer{l}"),
            &h.instance_norm(cfg.norm_eps)?.relu(),
            SAME3,
        )?;
        h = Tensor::concat(&[&h, &new], 1)?;
    }
    Ok(h)
}

/// `[N,C,D,h,w] -> [N,2,D,H,W]` logits, where `(H, W)` is the patch extent.
pub(crate) fn segment(p: &ParamGroup, cfg: &NetConfig, x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    for blk in 1..=BLOCKS {
        h = dense_block(p, cfg, blk, &h)?;
        h = conv(p, &format!("trans{blk}"), &h, POINTWISE)?;
        if h.shape()[3] < cfg.patch[1] {
            h = h.upsample3d_nearest(UP)?;
        }
    }
    conv(p, "out", &h, SAME3)
}
