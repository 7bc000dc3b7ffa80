use super::shape::{broadcast_data, broadcast_shapes, can_broadcast_to, row_major_strides, sum_to_data};
use super::{numel, Op, Result, Tensor, TensorError};

fn map_unary(t: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, t.shape().to_vec(), op, &[t])
}

fn zip_binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    op: Op,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_op(data, a.shape().to_vec(), op, &[a, b]));
    }
    let shape = broadcast_shapes(name, a.shape(), b.shape())?;
    let data = if b.numel() == 1 {
        let y = b.data()[0];
        broadcast_data(a.data(), a.shape(), &shape)
            .into_iter()
            .map(|x| f(x, y))
            .collect()
    } else {
        let ad = broadcast_data(a.data(), a.shape(), &shape);
        let bd = broadcast_data(b.data(), b.shape(), &shape);
        ad.into_iter().zip(bd).map(|(x, y)| f(x, y)).collect()
    };
    Ok(Tensor::from_op(data, shape, op, &[a, b]))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        zip_binary("add", self, other, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        zip_binary("sub", self, other, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        zip_binary("mul", self, other, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().iter().any(|&v| v == 0.0) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        zip_binary("div", self, other, Op::Div, |x, y| x / y)
    }

    pub fn neg(&self) -> Tensor {
        map_unary(self, Op::Neg, |v| -v)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        map_unary(self, Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        map_unary(self, Op::AddScalar(c), |v| v + c)
    }

    pub fn square(&self) -> Tensor {
        // x*x keeps the second-order rule exact through Mul.
        self.mul(self).expect("identical shapes")
    }

    pub fn exp(&self) -> Tensor {
        map_unary(self, Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive argument {v}"),
            });
        }
        Ok(map_unary(self, Op::Log, f64::ln))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|&&v| !(v >= 0.0)) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("negative argument {v}"),
            });
        }
        Ok(map_unary(self, Op::Sqrt, f64::sqrt))
    }

    pub fn tanh(&self) -> Tensor {
        map_unary(self, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        map_unary(self, Op::Sigmoid, |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        map_unary(self, Op::LeakyRelu(slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn abs(&self) -> Tensor {
        map_unary(self, Op::Abs, f64::abs)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        map_unary(self, Op::Clamp(lo, hi), |v| v.clamp(lo, hi))
    }

    /// Sums broadcast axes away so the result has shape `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !can_broadcast_to(shape, self.shape()) {
            return Err(TensorError::shape(
                "sum_to",
                format!("{:?} cannot be reduced to {shape:?}", self.shape()),
            ));
        }
        let data = sum_to_data(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(data, shape.to_vec(), Op::SumTo, &[self]))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        if !can_broadcast_to(self.shape(), shape) {
            return Err(TensorError::shape(
                "broadcast_to",
                format!("{:?} cannot be broadcast to {shape:?}", self.shape()),
            ));
        }
        let data = broadcast_data(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(data, shape.to_vec(), Op::BroadcastTo, &[self]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} has {} elements, target {shape:?}", self.shape(), self.numel()),
            ));
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, &[self]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).expect("any shape reduces to a scalar")
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut target = self.shape().to_vec();
        for &a in axes {
            if a >= target.len() {
                return Err(TensorError::shape("sum_axes", format!("axis {a} out of range")));
            }
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn mean_axes_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes_keepdim(axes)?.scale(1.0 / count as f64))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::shape("transpose2", format!("rank 2 required, got {:?}", self.shape())));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(out, vec![c, r], Op::Transpose2, &[self]))
    }

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(TensorError::shape("matmul", format!("{a:?} x {b:?}")));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let (x, y) = (self.data(), other.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..][..n];
            for p in 0..k {
                let av = x[i * k + p];
                for (o, bv) in orow.iter_mut().zip(&y[p * n..][..n]) {
                    *o += av * bv;
                }
            }
        }
        Ok(Tensor::from_op(out, vec![m, n], Op::MatMul, &[self, other]))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(TensorError::shape(
                "narrow",
                format!("slice {start}..{} of axis {axis} in {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        let src = self.data();
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(out, shape, Op::Narrow { axis, start }, &[self]))
    }

    /// Embeds `self` at offset `start` of a zero tensor whose `axis` has extent `total`.
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || start + s[axis] > total {
            return Err(TensorError::shape(
                "pad_axis",
                format!("cannot place {s:?} at {start} of extent {total} on axis {axis}"),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let mut out = vec![0.0; outer * total * inner];
        let src = self.data();
        for o in 0..outer {
            let dst = (o * total + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..][..len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, Op::Pad { axis, start }, &[self]))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
        let s0 = first.shape();
        if axis >= s0.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == s0.len()
                && s.iter().zip(s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::shape("concat", format!("{s:?} vs {s0:?} along axis {axis}")));
            }
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * len..][..len]);
            }
        }
        let mut shape = s0.to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, Op::Concat { axis }, parts))
    }

    /// Maximum along `axis` (kept as extent 1), detached from the graph.
    pub fn max_axis_detached(&self, axis: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(TensorError::shape("max_axis", format!("axis {axis} out of range")));
        }
        let strides = row_major_strides(s);
        let outer: usize = s[..axis].iter().product();
        let inner = strides[axis];
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for a in 0..s[axis] {
                let base = (o * s[axis] + a) * inner;
                for i in 0..inner {
                    let v = self.data()[base + i];
                    let slot = &mut out[o * inner + i];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        let mut shape = s.to_vec();
        shape[axis] = 1;
        Tensor::with_dtype(out, &shape, self.dtype())
    }

    // ---- composites -------------------------------------------------------

    /// `self + t * (other - self)`; `t` broadcasts (e.g. one coefficient per sample).
    pub fn lerp(&self, other: &Tensor, t: &Tensor) -> Result<Tensor> {
        self.add(&t.mul(&other.sub(self)?)?)
    }

    /// `x W + b` for `x: [N, I]`, `W: [I, O]`, `b: [O]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    /// Mean absolute difference over all elements.
    pub fn l1_distance(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::shape(
                "l1_distance",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self.sub(other)?.abs().mean())
    }

    /// Per-sample, per-channel normalization over the spatial axes of a
    /// `[N, C, ...]` tensor.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        if self.rank() < 3 {
            return Err(TensorError::shape(
                "instance_norm",
                format!("need [N, C, spatial...], got {:?}", self.shape()),
            ));
        }
        let axes: Vec<usize> = (2..self.rank()).collect();
        let mu = self.mean_axes_keepdim(&axes)?;
        let centered = self.sub(&mu)?;
        let var = centered.square().mean_axes_keepdim(&axes)?;
        let std = var.add_scalar(eps).sqrt()?;
        centered.div(&std)
    }

    /// Instance normalization followed by a per-sample, per-channel affine map
    /// with `scale` and `shift` of shape `[N, C]`.
    pub fn adaptive_instance_norm(&self, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 3 || scale.shape() != [s[0], s[1]] || shift.shape() != [s[0], s[1]] {
            return Err(TensorError::shape(
                "adaptive_instance_norm",
                format!(
                    "content {s:?} needs scale/shift [{}, {}], got {:?} and {:?}",
                    s.first().copied().unwrap_or(0),
                    s.get(1).copied().unwrap_or(0),
                    scale.shape(),
                    shift.shape()
                ),
            ));
        }
        let mut affine_shape = vec![s[0], s[1]];
        affine_shape.resize(s.len(), 1);
        let normed = self.instance_norm(eps)?;
        normed
            .mul(&scale.reshape(&affine_shape)?)?
            .add(&shift.reshape(&affine_shape)?)
    }

    pub fn log_softmax_channels(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(TensorError::shape("log_softmax", "need a channel axis"));
        }
        let shifted = self.sub(&self.max_axis_detached(1)?)?;
        let lse = shifted.exp().sum_axes_keepdim(&[1])?.log()?;
        shifted.sub(&lse)
    }

    pub fn softmax_channels(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(TensorError::shape("softmax", "need a channel axis"));
        }
        let e = self.sub(&self.max_axis_detached(1)?)?.exp();
        e.div(&e.sum_axes_keepdim(&[1])?)
    }

    /// Mean over every axis except the batch axis: `[N, ...] -> [N]`.
    pub fn mean_per_sample(&self) -> Result<Tensor> {
        if self.rank() < 1 {
            return Err(TensorError::shape("mean_per_sample", "need a batch axis"));
        }
        let n = self.shape()[0];
        let per = (self.numel() / n) as f64;
        Ok(self.reshape(&[n, self.numel() / n])?.sum_to(&[n, 1])?.reshape(&[n])?.scale(1.0 / per))
    }

    /// Sum over every axis except the batch axis: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&self) -> Result<Tensor> {
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])?.sum_to(&[n, 1])?.reshape(&[n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lerp_endpoints() {
        let a = Tensor::random_uniform(&[2, 3], -1.0, 1.0, 1);
        let b = Tensor::random_uniform(&[2, 3], -1.0, 1.0, 2);
        let y = a.lerp(&b, &Tensor::scalar(0.0)).unwrap();
        assert!(y.bit_eq(&a));
        let z = a.lerp(&b, &Tensor::scalar(1.0)).unwrap();
        for (p, q) in z.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::new(vec![-1.0, 2.0], &[2]).unwrap();
        assert_eq!(x.leaky_relu(0.2).data(), &[-0.2, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 2.0]);
    }

    #[test]
    fn instance_norm_of_constant_channel_is_zero() {
        let x = Tensor::full(&[1, 2, 2, 2, 2], 3.5);
        let y = x.instance_norm(1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let x = Tensor::random_uniform(&[2, 3, 2, 3, 4], -2.0, 5.0, 9);
        let y = x.instance_norm(0.0).unwrap();
        for plane in y.data().chunks(24) {
            let m = plane.iter().sum::<f64>() / 24.0;
            let v = plane.iter().map(|p| (p - m).powi(2)).sum::<f64>() / 24.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_per_voxel() {
        let x = Tensor::random_uniform(&[2, 2, 1, 3, 3], -10.0, 10.0, 4);
        let p = x.softmax_channels().unwrap();
        for n in 0..2 {
            for v in 0..9 {
                let s = p.data()[n * 18 + v] + p.data()[n * 18 + 9 + v];
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
        let lp = x.log_softmax_channels().unwrap();
        for (a, b) in lp.data().iter().zip(p.data()) {
            assert!((a.exp() - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_domain_error() {
        let x = Tensor::new(vec![1.0, 0.0], &[2]).unwrap();
        assert!(matches!(x.log(), Err(TensorError::Domain { op: "log", .. })));
        let y = Tensor::new(vec![-1.0], &[1]).unwrap();
        assert!(y.sqrt().is_err());
    }

    #[test]
    fn narrow_pad_concat_are_consistent() {
        let a = Tensor::random_uniform(&[2, 3, 4], -1.0, 1.0, 1);
        let b = Tensor::random_uniform(&[2, 2, 4], -1.0, 1.0, 2);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5, 4]);
        assert!(c.narrow(1, 0, 3).unwrap().bit_eq(&a));
        assert!(c.narrow(1, 3, 2).unwrap().bit_eq(&b));
        let p = b.pad_axis(1, 3, 5).unwrap();
        assert_eq!(p.narrow(1, 0, 3).unwrap().data().iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.transpose2().unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
