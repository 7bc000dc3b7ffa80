//! Reverse-mode traversal and the per-op vector-Jacobian products.

use std::collections::{HashMap, HashSet};

use super::{ConvGeometry, EnableGradGuard, NoGradGuard, Result, Tensor, TensorError, TensorId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
    Abs,
    Clamp(f64, f64),
    SumTo,
    BroadcastTo,
    Reshape,
    Transpose2,
    MatMul,
    Conv(ConvGeometry),
    ConvInputGrad(ConvGeometry),
    ConvKernelGrad(ConvGeometry),
    Upsample([usize; 3]),
    SumPool([usize; 3]),
    Narrow { axis: usize, start: usize },
    Pad { axis: usize, start: usize },
    Concat { axis: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Abs => "abs",
            Op::Clamp(..) => "clamp",
            Op::SumTo => "sum_to",
            Op::BroadcastTo => "broadcast_to",
            Op::Reshape => "reshape",
            Op::Transpose2 => "transpose2",
            Op::MatMul => "matmul",
            Op::Conv(_) => "conv3d",
            Op::ConvInputGrad(_) => "conv3d_input_grad",
            Op::ConvKernelGrad(_) => "conv3d_kernel_grad",
            Op::Upsample(_) => "upsample3d_nearest",
            Op::SumPool(_) => "sum_pool3d",
            Op::Narrow { .. } => "narrow",
            Op::Pad { .. } => "pad_axis",
            Op::Concat { .. } => "concat",
        }
    }

    /// Whether the backward rule is itself exactly differentiable.
    ///
    /// `sqrt` scales by a detached `1/(2 sqrt x)`, so its gradient carries no
    /// second-order information. Piecewise-linear ops use detached masks too,
    /// but their true second derivative is zero almost everywhere.
    pub(crate) fn second_order_certified(&self) -> bool {
        !matches!(self, Op::Sqrt)
    }

    /// Vector-Jacobian products for each input whose `needs` flag is set.
    fn vjp(&self, out: &Tensor, inputs: &[Tensor], g: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        let x = &inputs[0];
        let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
        match *self {
            Op::Add => Ok(vec![
                want(0).then(|| g.sum_to(x.shape())).transpose()?,
                want(1).then(|| g.sum_to(inputs[1].shape())).transpose()?,
            ]),
            Op::Sub => Ok(vec![
                want(0).then(|| g.sum_to(x.shape())).transpose()?,
                want(1).then(|| g.neg().sum_to(inputs[1].shape())).transpose()?,
            ]),
            Op::Mul => {
                let y = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.mul(y)?.sum_to(x.shape())).transpose()?,
                    want(1).then(|| g.mul(x)?.sum_to(y.shape())).transpose()?,
                ])
            }
            Op::Div => {
                let y = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.div(y)?.sum_to(x.shape())).transpose()?,
                    want(1)
                        .then(|| g.mul(out)?.div(y)?.neg().sum_to(y.shape()))
                        .transpose()?,
                ])
            }
            Op::Neg => one(Ok(g.neg())),
            Op::Scale(c) => one(Ok(g.scale(c))),
            Op::AddScalar(_) => one(Ok(g.clone())),
            Op::Exp => one(g.mul(out)),
            Op::Log => one(g.div(x)),
            Op::Sqrt => {
                let factor = out
                    .data()
                    .iter()
                    .map(|&r| if r > 0.0 { 0.5 / r } else { 0.0 })
                    .collect();
                one(g.mul(&Tensor::with_dtype(factor, out.shape(), out.dtype())?))
            }
            Op::Tanh => one(g.mul(&out.square().neg().add_scalar(1.0))),
            Op::Sigmoid => one(g.mul(&out.mul(&out.neg().add_scalar(1.0))?)),
            Op::LeakyRelu(slope) => one(g.mul(&mask(x, |v| if v > 0.0 { 1.0 } else { slope })?)),
            Op::Abs => one(g.mul(&mask(x, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })?)),
            Op::Clamp(lo, hi) => one(g.mul(&mask(x, |v| if v >= lo && v <= hi { 1.0 } else { 0.0 })?)),
            Op::SumTo => one(g.broadcast_to(x.shape())),
            Op::BroadcastTo => one(g.sum_to(x.shape())),
            Op::Reshape => one(g.reshape(x.shape())),
            Op::Transpose2 => one(g.transpose2()),
            Op::MatMul => {
                let y = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.matmul(&y.transpose2()?)).transpose()?,
                    want(1).then(|| x.transpose2()?.matmul(g)).transpose()?,
                ])
            }
            Op::Conv(geom) => {
                let k = &inputs[1];
                Ok(vec![
                    want(0).then(|| g.conv3d_input_grad(k, geom, x.shape())).transpose()?,
                    want(1).then(|| x.conv3d_kernel_grad(g, geom, k.shape())).transpose()?,
                ])
            }
            Op::ConvInputGrad(geom) => {
                // out = conv_t(gy, k)
                let (gy, k) = (x, &inputs[1]);
                Ok(vec![
                    want(0).then(|| g.conv3d(k, geom)).transpose()?,
                    want(1).then(|| g.conv3d_kernel_grad(gy, geom, k.shape())).transpose()?,
                ])
            }
            Op::ConvKernelGrad(geom) => {
                // out = conv_w(input, gy)
                let (input, gy) = (x, &inputs[1]);
                Ok(vec![
                    want(0).then(|| gy.conv3d_input_grad(g, geom, input.shape())).transpose()?,
                    want(1).then(|| input.conv3d(g, geom)).transpose()?,
                ])
            }
            Op::Upsample(f) => one(g.sum_pool3d(f)),
            Op::SumPool(f) => one(g.upsample3d_nearest(f)),
            Op::Narrow { axis, start } => one(g.pad_axis(axis, start, x.shape()[axis])),
            Op::Pad { axis, start } => one(g.narrow(axis, start, x.shape()[axis])),
            Op::Concat { axis } => {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(inputs.len());
                for (i, part) in inputs.iter().enumerate() {
                    let len = part.shape()[axis];
                    grads.push(want(i).then(|| g.narrow(axis, offset, len)).transpose()?);
                    offset += len;
                }
                Ok(grads)
            }
        }
    }
}

/// A detached elementwise function of `x`, used as a local-slope mask.
fn mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::with_dtype(x.data().iter().map(|&v| f(v)).collect(), x.shape(), x.dtype())
}

/// Gradients of a scalar with respect to the leaves it depends on.
#[derive(Default, Clone)]
pub struct Gradients {
    map: HashMap<TensorId, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.map.get(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Post-order over the differentiable part of the graph under `root`.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen: HashSet<TensorId> = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for inp in node.inputs.iter().rev() {
                if inp.requires_grad() && !seen.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}

fn run(
    output: &Tensor,
    wrt: &[&Tensor],
    create_graph: bool,
) -> Result<HashMap<TensorId, Tensor>> {
    if output.numel() != 1 {
        return Err(TensorError::NotScalar(output.shape().to_vec()));
    }
    if !output.requires_grad() {
        return Err(TensorError::NoGraph);
    }
    let targets: HashSet<TensorId> = wrt.iter().map(|t| t.id()).collect();
    let order = topo_order(output);

    // Nodes that lie on some path to a target.
    let mut reaches: HashSet<TensorId> = HashSet::new();
    for t in &order {
        let hit = targets.contains(&t.id())
            || t.node()
                .is_some_and(|n| n.inputs.iter().any(|i| reaches.contains(&i.id())));
        if hit {
            reaches.insert(t.id());
        }
    }

    let _mode: (Option<EnableGradGuard>, Option<NoGradGuard>) = if create_graph {
        (Some(EnableGradGuard::new()), None)
    } else {
        (None, Some(NoGradGuard::new()))
    };

    let mut grads: HashMap<TensorId, Tensor> = HashMap::new();
    grads.insert(
        output.id(),
        Tensor::with_dtype(vec![1.0], output.shape(), output.dtype())?,
    );
    let mut result = HashMap::new();
    for t in order.iter().rev() {
        if !reaches.contains(&t.id()) {
            continue;
        }
        let g = if targets.contains(&t.id()) {
            match grads.get(&t.id()) {
                Some(g) => {
                    result.insert(t.id(), g.clone());
                    g.clone()
                }
                None => continue,
            }
        } else {
            match grads.remove(&t.id()) {
                Some(g) => g,
                None => continue,
            }
        };
        let Some(node) = t.node() else { continue };
        if create_graph && !node.op.second_order_certified() {
            return Err(TensorError::UnsupportedSecondOrder(node.op.name()));
        }
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|i| i.requires_grad() && reaches.contains(&i.id()))
            .collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        let input_grads = node.op.vjp(t, &node.inputs, &g, &needs)?;
        for (inp, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            let merged = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&ig)?,
                None => ig,
            };
            grads.insert(inp.id(), merged);
        }
    }
    Ok(result)
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// Tensors that `output` does not depend on get a zero gradient. With
/// `create_graph` set, the returned tensors are graph nodes and can be
/// differentiated again; every op on the path must then be
/// second-order certified.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let mut map = run(output, wrt, create_graph)?;
    Ok(wrt
        .iter()
        .map(|t| {
            map.remove(&t.id())
                .unwrap_or_else(|| Tensor::zeros(t.shape()).to_dtype(t.dtype()))
        })
        .collect())
}

/// Gradients of a scalar loss with respect to every differentiable leaf
/// beneath it. `retain_secondary` records the backward pass itself.
pub fn backward(loss: &Tensor, retain_secondary: bool) -> Result<Gradients> {
    let leaves: Vec<Tensor> = topo_order(loss)
        .into_iter()
        .filter(|t| t.is_leaf() && t.requires_grad())
        .collect();
    let refs: Vec<&Tensor> = leaves.iter().collect();
    let map = run(loss, &refs, retain_secondary)?;
    Ok(Gradients { map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn param(v: f64) -> Tensor {
        Tensor::parameter(vec![v], &[], DType::F64).unwrap()
    }

    #[test]
    fn square_gradient() {
        let x = param(3.0);
        let y = x.mul(&x).unwrap();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn double_backward_of_squared_cubic_derivative() {
        // g(x) = (d/dx x^3)^2 = 9x^4, g'(x) = 36x^3 = 288 at x = 2
        let x = param(2.0);
        let cube = x.mul(&x).unwrap().mul(&x).unwrap();
        let dx = grad(&cube, &[&x], true).unwrap().remove(0);
        assert!((dx.item().unwrap() - 12.0).abs() < 1e-12);
        let gx = dx.square();
        let d2 = grad(&gx, &[&x], false).unwrap().remove(0);
        assert!((d2.item().unwrap() - 288.0).abs() < 1e-9);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2], DType::F64).unwrap();
        assert!(matches!(backward(&x.scale(2.0), false), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn detached_loss_has_no_graph() {
        let x = Tensor::parameter(vec![1.0], &[], DType::F64).unwrap();
        let y = x.scale(2.0).detach();
        assert!(matches!(backward(&y, false), Err(TensorError::NoGraph)));
    }

    #[test]
    fn unused_inputs_get_zero_gradient() {
        let x = param(1.0);
        let z = param(5.0);
        let y = x.scale(3.0);
        let gs = grad(&y, &[&x, &z], false).unwrap();
        assert_eq!(gs[0].item().unwrap(), 3.0);
        assert_eq!(gs[1].item().unwrap(), 0.0);
    }

    #[test]
    fn sqrt_is_rejected_on_second_order_path() {
        let x = param(4.0);
        let y = x.sqrt().unwrap();
        let err = grad(&y, &[&x], true).unwrap_err();
        assert_eq!(err, TensorError::UnsupportedSecondOrder("sqrt"));
        // first order is fine
        assert!((grad(&y, &[&x], false).unwrap()[0].item().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = param(1.5);
        let a = x.scale(2.0);
        let y = a.mul(&a).unwrap().add(&a).unwrap(); // 4x^2 + 2x
        let g = backward(&y, false).unwrap();
        assert!((g.get(&x).unwrap().item().unwrap() - (8.0 * 1.5 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn first_order_backward_records_nothing() {
        let x = param(2.0);
        let y = x.mul(&x).unwrap();
        let g = grad(&y, &[&x], false).unwrap().remove(0);
        assert!(!g.requires_grad());
        let g2 = grad(&y, &[&x], true).unwrap().remove(0);
        assert!(g2.requires_grad());
    }
}
