//! 3D cross-correlation and its two adjoints.
//!
//! `conv3d(x, k)`, `conv3d_input_grad(g, k)` and `conv3d_kernel_grad(x, g)` are
//! bilinear and each one's partial derivatives are expressed by the other two,
//! so the family is closed under differentiation to any order.

use super::{numel, Op, Result, Tensor, TensorError};

/// Stride and zero padding per spatial axis (D, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvGeometry { stride, padding }
    }

    /// Unit stride with "same" padding for an odd cubic kernel.
    pub fn same(kernel: usize) -> Self {
        let p = kernel / 2;
        ConvGeometry::new([1, 1, 1], [p, p, p])
    }

    pub fn output_extent(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || padded < kernel[a] {
                return None;
            }
            out[a] = (padded - kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

/// Valid output positions `o` along one axis for kernel tap `k`:
/// `0 <= o*s + k - p < len`. Returns the half-open range of `o`.
#[inline]
fn valid_range(k: usize, p: usize, s: usize, len: usize, out_len: usize) -> (usize, usize) {
    // o*s >= p - k
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    // o*s + k - p <= len - 1  =>  o <= (len - 1 + p - k) / s
    let hi = if len + p > k {
        ((len - 1 + p - k) / s + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Dims {
    n: usize,
    c: usize,
    f: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
}

/// The input index along an axis for output position `o` and tap `k`, known to be valid.
#[inline]
fn src_index(o: usize, k: usize, p: usize, s: usize) -> usize {
    o * s + k - p
}

/// Unfolds one sample `[C, D, H, W]` into columns `[C * kvol, out_vol]`:
/// row `(c, tap)` holds the input value each output position sees through
/// that tap, zero where the tap falls into padding.
fn im2col(src: &[f64], d: &Dims, g: &ConvGeometry) -> Vec<f64> {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    let mut col = vec![0.0; d.c * kvol * out_vol];
    for c in 0..d.c {
        let plane = &src[c * in_vol..][..in_vol];
        for a in 0..kd {
            let (d0, d1) = valid_range(a, pd, sd, id, od);
            for b in 0..kh {
                let (h0, h1) = valid_range(b, ph, sh, ih, oh);
                for e in 0..kw {
                    let (w0, w1) = valid_range(e, pw, sw, iw, ow);
                    if w0 >= w1 {
                        continue;
                    }
                    let j = c * kvol + (a * kh + b) * kw + e;
                    let dst = &mut col[j * out_vol..][..out_vol];
                    for o_d in d0..d1 {
                        let zi = src_index(o_d, a, pd, sd);
                        for o_h in h0..h1 {
                            let yi = src_index(o_h, b, ph, sh);
                            let row = &plane[(zi * ih + yi) * iw..][..iw];
                            let drow = &mut dst[(o_d * oh + o_h) * ow..][..ow];
                            if sw == 1 {
                                let base = w0 + e - pw;
                                drow[w0..w1].copy_from_slice(&row[base..base + (w1 - w0)]);
                            } else {
                                for o_w in w0..w1 {
                                    drow[o_w] = row[src_index(o_w, e, pw, sw)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, D, H, W]`.
fn col2im(col: &[f64], dst: &mut [f64], d: &Dims, g: &ConvGeometry) {
    let [id, ih, iw] = d.input;
    let [kd, kh, kw] = d.kernel;
    let [od, oh, ow] = d.output;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let in_vol = id * ih * iw;
    let out_vol = od * oh * ow;
    let kvol = kd * kh * kw;
    for c in 0..d.c {
        let plane = &mut dst[c * in_vol..][..in_vol];
        for a in 0..kd {
            let (d0, d1) = valid_range(a, pd, sd, id, od);
            for b in 0..kh {
                let (h0, h1) = valid_range(b, ph, sh, ih, oh);
                for e in 0..kw {
                    let (w0, w1) = valid_range(e, pw, sw, iw, ow);
                    if w0 >= w1 {
                        continue;
                    }
                    let j = c * kvol + (a * kh + b) * kw + e;
                    let src = &col[j * out_vol..][..out_vol];
                    for o_d in d0..d1 {
                        let zi = src_index(o_d, a, pd, sd);
                        for o_h in h0..h1 {
                            let yi = src_index(o_h, b, ph, sh);
                            let srow = &src[(o_d * oh + o_h) * ow..][..ow];
                            let row = &mut plane[(zi * ih + yi) * iw..][..iw];
                            if sw == 1 {
                                let base = w0 + e - pw;
                                for (r, v) in row[base..base + (w1 - w0)].iter_mut().zip(&srow[w0..w1]) {
                                    *r += v;
                                }
                            } else {
                                for o_w in w0..w1 {
                                    row[src_index(o_w, e, pw, sw)] += srow[o_w];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (p, q) in y.iter_mut().zip(x) {
        *p += a * q;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // four partial sums keep the loop vectorizable; order is fixed, so the
    // result is deterministic
    let mut acc = [0.0; 4];
    let chunks = x.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * i + l] * y[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..x.len() {
        s += x[i] * y[i];
    }
    s
}

fn conv_forward(x: &[f64], k: &[f64], d: &Dims, g: &ConvGeometry) -> Vec<f64> {
    let in_vol: usize = d.input.iter().product();
    let out_vol: usize = d.output.iter().product();
    let rows = d.c * d.kernel.iter().product::<usize>();
    let mut out = vec![0.0; d.n * d.f * out_vol];
    for n in 0..d.n {
        let col = im2col(&x[n * d.c * in_vol..][..d.c * in_vol], d, g);
        for f in 0..d.f {
            let orow = &mut out[(n * d.f + f) * out_vol..][..out_vol];
            let krow = &k[f * rows..][..rows];
            for (j, &wv) in krow.iter().enumerate() {
                if wv != 0.0 {
                    axpy(orow, wv, &col[j * out_vol..][..out_vol]);
                }
            }
        }
    }
    out
}

/// Adjoint of `conv_forward` with respect to its input.
fn conv_input_grad(gy: &[f64], k: &[f64], d: &Dims, g: &ConvGeometry) -> Vec<f64> {
    let in_vol: usize = d.input.iter().product();
    let out_vol: usize = d.output.iter().product();
    let rows = d.c * d.kernel.iter().product::<usize>();
    let mut gx = vec![0.0; d.n * d.c * in_vol];
    let mut gcol = vec![0.0; rows * out_vol];
    for n in 0..d.n {
        gcol.fill(0.0);
        for f in 0..d.f {
            let grow = &gy[(n * d.f + f) * out_vol..][..out_vol];
            let krow = &k[f * rows..][..rows];
            for (j, &wv) in krow.iter().enumerate() {
                if wv != 0.0 {
                    axpy(&mut gcol[j * out_vol..][..out_vol], wv, grow);
                }
            }
        }
        col2im(&gcol, &mut gx[n * d.c * in_vol..][..d.c * in_vol], d, g);
    }
    gx
}

/// Adjoint of `conv_forward` with respect to its kernel.
fn conv_kernel_grad(x: &[f64], gy: &[f64], d: &Dims, g: &ConvGeometry) -> Vec<f64> {
    let in_vol: usize = d.input.iter().product();
    let out_vol: usize = d.output.iter().product();
    let rows = d.c * d.kernel.iter().product::<usize>();
    let mut gk = vec![0.0; d.f * rows];
    for n in 0..d.n {
        let col = im2col(&x[n * d.c * in_vol..][..d.c * in_vol], d, g);
        for f in 0..d.f {
            let grow = &gy[(n * d.f + f) * out_vol..][..out_vol];
            for j in 0..rows {
                gk[f * rows + j] += dot(grow, &col[j * out_vol..][..out_vol]);
            }
        }
    }
    gk
}

fn check_rank5(op: &'static str, name: &str, t: &Tensor) -> Result<()> {
    if t.rank() != 5 {
        return Err(TensorError::shape(
            op,
            format!("{name} must be rank 5 (N,C,D,H,W), got {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    /// 3D cross-correlation of `self` `[N,C,D,H,W]` with `kernel` `[F,C,kd,kh,kw]`.
    pub fn conv3d(&self, kernel: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
        const OP: &str = "conv3d";
        check_rank5(OP, "input", self)?;
        check_rank5(OP, "kernel", kernel)?;
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs[1] != ks[1] {
            return Err(TensorError::shape(
                OP,
                format!("input has {} channels but kernel expects {}", xs[1], ks[1]),
            ));
        }
        let output = geom.output_extent(spatial(xs), spatial(ks)).ok_or_else(|| {
            TensorError::shape(
                OP,
                format!(
                    "kernel {:?} does not fit input {:?} with padding {:?} and stride {:?}",
                    spatial(ks),
                    spatial(xs),
                    geom.padding,
                    geom.stride
                ),
            )
        })?;
        let dims = Dims {
            n: xs[0],
            c: xs[1],
            f: ks[0],
            input: spatial(xs),
            kernel: spatial(ks),
            output,
        };
        let data = conv_forward(self.data(), kernel.data(), &dims, &geom);
        let shape = vec![dims.n, dims.f, output[0], output[1], output[2]];
        Ok(Tensor::from_op(data, shape, Op::Conv(geom), &[self, kernel]))
    }

    /// Gradient of `conv3d` with respect to its input, given the output
    /// gradient `self` and the kernel. `input_shape` is the shape of the
    /// original input, which stride alone cannot recover.
    pub fn conv3d_input_grad(
        &self,
        kernel: &Tensor,
        geom: ConvGeometry,
        input_shape: &[usize],
    ) -> Result<Tensor> {
        const OP: &str = "conv3d_input_grad";
        check_rank5(OP, "output gradient", self)?;
        check_rank5(OP, "kernel", kernel)?;
        let dims = adjoint_dims(OP, input_shape, kernel.shape(), self.shape(), &geom)?;
        let data = conv_input_grad(self.data(), kernel.data(), &dims, &geom);
        Ok(Tensor::from_op(
            data,
            input_shape.to_vec(),
            Op::ConvInputGrad(geom),
            &[self, kernel],
        ))
    }

    /// Gradient of `conv3d` with respect to its kernel: `self` is the original
    /// input and `out_grad` the output gradient.
    pub fn conv3d_kernel_grad(
        &self,
        out_grad: &Tensor,
        geom: ConvGeometry,
        kernel_shape: &[usize],
    ) -> Result<Tensor> {
        const OP: &str = "conv3d_kernel_grad";
        check_rank5(OP, "input", self)?;
        check_rank5(OP, "output gradient", out_grad)?;
        let dims = adjoint_dims(OP, self.shape(), kernel_shape, out_grad.shape(), &geom)?;
        let data = conv_kernel_grad(self.data(), out_grad.data(), &dims, &geom);
        Ok(Tensor::from_op(
            data,
            kernel_shape.to_vec(),
            Op::ConvKernelGrad(geom),
            &[self, out_grad],
        ))
    }

    /// Nearest-neighbour upsampling of the spatial axes by integer factors.
    pub fn upsample3d_nearest(&self, factors: [usize; 3]) -> Result<Tensor> {
        check_rank5("upsample3d_nearest", "input", self)?;
        let s = self.shape();
        let [fd, fh, fw] = factors;
        if factors.contains(&0) {
            return Err(TensorError::shape("upsample3d_nearest", "zero factor"));
        }
        let (d, h, w) = (s[2], s[3], s[4]);
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let planes = s[0] * s[1];
        let mut out = vec![0.0; planes * od * oh * ow];
        let src = self.data();
        for p in 0..planes {
            let sp = &src[p * d * h * w..][..d * h * w];
            let dp = &mut out[p * od * oh * ow..][..od * oh * ow];
            for z in 0..od {
                for y in 0..oh {
                    let srow = &sp[((z / fd) * h + y / fh) * w..][..w];
                    let drow = &mut dp[(z * oh + y) * ow..][..ow];
                    for (x, v) in drow.iter_mut().enumerate() {
                        *v = srow[x / fw];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], od, oh, ow],
            Op::Upsample(factors),
            &[self],
        ))
    }

    /// Sums non-overlapping spatial blocks; the adjoint of nearest upsampling.
    pub fn sum_pool3d(&self, factors: [usize; 3]) -> Result<Tensor> {
        const OP: &str = "sum_pool3d";
        check_rank5(OP, "input", self)?;
        let s = self.shape();
        let [fd, fh, fw] = factors;
        if factors.contains(&0) || s[2] % fd != 0 || s[3] % fh != 0 || s[4] % fw != 0 {
            return Err(TensorError::shape(
                OP,
                format!("factors {factors:?} must divide spatial extents of {s:?}"),
            ));
        }
        let (d, h, w) = (s[2], s[3], s[4]);
        let (od, oh, ow) = (d / fd, h / fh, w / fw);
        let planes = s[0] * s[1];
        let mut out = vec![0.0; planes * od * oh * ow];
        let src = self.data();
        for p in 0..planes {
            let sp = &src[p * d * h * w..][..d * h * w];
            let dp = &mut out[p * od * oh * ow..][..od * oh * ow];
            for z in 0..d {
                for y in 0..h {
                    let srow = &sp[(z * h + y) * w..][..w];
                    let drow = &mut dp[((z / fd) * oh + y / fh) * ow..][..ow];
                    for (x, v) in srow.iter().enumerate() {
                        drow[x / fw] += v;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], od, oh, ow],
            Op::SumPool(factors),
            &[self],
        ))
    }
}

fn adjoint_dims(
    op: &'static str,
    input: &[usize],
    kernel: &[usize],
    output: &[usize],
    geom: &ConvGeometry,
) -> Result<Dims> {
    if input.len() != 5 || kernel.len() != 5 {
        return Err(TensorError::shape(op, "input and kernel shapes must be rank 5"));
    }
    let expect = geom
        .output_extent(spatial(input), spatial(kernel))
        .ok_or_else(|| TensorError::shape(op, "kernel does not fit input"))?;
    if output[0] != input[0]
        || output[1] != kernel[0]
        || input[1] != kernel[1]
        || spatial(output) != expect
    {
        return Err(TensorError::shape(
            op,
            format!(
                "inconsistent shapes: input {input:?}, kernel {kernel:?}, output {output:?}"
            ),
        ));
    }
    debug_assert_eq!(numel(output), output[0] * output[1] * expect.iter().product::<usize>());
    Ok(Dims {
        n: input[0],
        c: input[1],
        f: kernel[0],
        input: spatial(input),
        kernel: spatial(kernel),
        output: expect,
    })
}
