use super::ParamGroup;
use crate::error::Result;
use crate::tensor::{ConvGeometry, Tensor};

/// In-plane downsampling by two; depth is preserved.
pub(crate) const DOWN: ConvGeometry = ConvGeometry {
    stride: [1, 2, 2],
    padding: [1, 1, 1],
};

pub(crate) const SAME3: ConvGeometry = ConvGeometry {
    stride: [1, 1, 1],
    padding: [1, 1, 1],
};

pub(crate) const POINTWISE: ConvGeometry = ConvGeometry {
    stride: [1, 1, 1],
    padding: [0, 0, 0],
};

pub(crate) const UP: [usize; 3] = [1, 2, 2];

pub(crate) fn conv(p: &ParamGroup, name: &str, x: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    let f = w.shape()[0];
    Ok(x.conv3d(w, geom)?.add(&b.reshape(&[1, f, 1, 1, 1])?)?)
}

pub(crate) fn linear(p: &ParamGroup, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(x.linear(w, Some(b))?)
}

/// `x + IN(conv(relu(IN(conv(x)))))`.
pub(crate) fn residual(p: &ParamGroup, name: &str, x: &Tensor, eps: f64) -> Result<Tensor> {
    let h = conv(p, &format!("{name}.conv1"), x, SAME3)?
        .instance_norm(eps)?
        .relu();
    let h = conv(p, &format!("{name}.conv2"), &h, SAME3)?.instance_norm(eps)?;
    Ok(x.add(&h)?)
}
