//! Central finite-difference verification of analytic gradients.

use super::{grad, no_grad, DType, Result, Tensor, TensorError};

fn perturbed(point: &Tensor, i: usize, delta: f64) -> Result<Tensor> {
    let mut data = point.to_vec();
    data[i] += delta;
    Tensor::with_dtype(data, point.shape(), point.dtype())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over the
/// coordinates of `point` for the scalar function `f`.
pub fn finite_diff_check<F, E>(f: F, point: &Tensor, eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&Tensor) -> std::result::Result<Tensor, E>,
    E: From<TensorError>,
{
    let x = point.requires_grad_(true);
    let y = f(&x)?;
    let analytic = grad(&y, &[&x], false)?.remove(0);
    let mut worst = 0.0f64;
    for i in 0..point.numel() {
        let (up, down) = no_grad(|| -> std::result::Result<(f64, f64), E> {
            Ok((
                f(&perturbed(point, i, eps)?)?.item()?,
                f(&perturbed(point, i, -eps)?)?.item()?,
            ))
        })?;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Checks the second-order path: the gradient of `‖∇ₓ f(x; θ)‖²` with respect
/// to `θ`, computed by double backward, against central differences of the
/// same quantity evaluated with first-order gradients only.
pub fn second_order_check<F, E>(f: F, x: &Tensor, theta: &Tensor, eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&Tensor, &Tensor) -> std::result::Result<Tensor, E>,
    E: From<TensorError>,
{
    let grad_norm_sq = |theta: &Tensor, create: bool| -> std::result::Result<Tensor, E> {
        let xv = x.requires_grad_(true);
        let y = f(&xv, theta)?;
        let gx = grad(&y, &[&xv], create)?.remove(0);
        Ok(gx.square().sum())
    };
    let th = theta.requires_grad_(true);
    let h = grad_norm_sq(&th, true)?;
    let analytic = grad(&h, &[&th], false)?.remove(0);
    let mut worst = 0.0f64;
    for i in 0..theta.numel() {
        let up = grad_norm_sq(&perturbed(theta, i, eps)?, false)?.item()?;
        let down = grad_norm_sq(&perturbed(theta, i, -eps)?, false)?.item()?;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// A random evaluation point with the given dtype.
pub fn random_point(shape: &[usize], seed: u64, dtype: DType) -> Tensor {
    Tensor::random_uniform(shape, -1.0, 1.0, seed).to_dtype(dtype)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let p = random_point(&[3, 4], 1, DType::F64);
        let err = finite_diff_check(|x| -> Result<Tensor> { Ok(x.sum()) }, &p, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // f(x) = sum(x * stopgrad(x)) has a deliberately incomplete gradient
        let p = random_point(&[5], 2, DType::F64);
        let err = finite_diff_check(|x| -> Result<Tensor> { Ok(x.mul(&x.detach())?.sum()) }, &p, 1e-5).unwrap();
        assert!(err > 1e-3);
    }
}
