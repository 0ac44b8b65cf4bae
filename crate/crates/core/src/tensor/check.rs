use super::{no_grad, Tensor};
use crate::error::Result;

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between the backward-pass gradient of `f` with
/// respect to `theta` and central differences with step `h`.
///
/// `f` must rebuild the scalar from the current values of `theta` each time
/// it is called; the check perturbs `theta` in place and restores it.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut() -> Result<Tensor>,
{
    let coords: Vec<usize> = (0..theta.numel()).collect();
    grad_check_coords(f, theta, h, &coords)
}

/// [`grad_check`] restricted to the listed coordinates of `theta`.
pub fn grad_check_coords<F>(mut f: F, theta: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: FnMut() -> Result<Tensor>,
{
    theta.zero_grad();
    f()?.backward()?;
    let analytic = theta.grad().unwrap_or_else(|| vec![0.0; theta.numel()]);
    theta.zero_grad();

    let mut worst = 0.0f64;
    for &i in coords {
        let original = theta.data()[i];
        theta.update(|d| d[i] = original + h);
        let plus = no_grad(&mut f)?.item();
        theta.update(|d| d[i] = original - h);
        let minus = no_grad(&mut f)?.item();
        theta.update(|d| d[i] = original);
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
