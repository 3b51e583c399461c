use crate::error::{Error, Result};

use super::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Central-difference gradient of `loss` at `point`.
pub fn finite_diff_grad<F>(mut loss: F, point: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    finite_diff_grad_at(&mut loss, point, eps, 0..point.len())
}

/// Like [`finite_diff_grad`] but only probes the listed coordinates; the
/// others are left at zero.
pub fn finite_diff_grad_at<F, I>(
    loss: &mut F,
    point: &Tensor,
    eps: f64,
    coords: I,
) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
    I: IntoIterator<Item = usize>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut probe = point.clone();
    let mut grad = vec![0.0; point.len()];
    for i in coords {
        let x = point.values()[i];
        probe.values_mut()[i] = x + eps;
        let up = loss(&probe);
        probe.values_mut()[i] = x - eps;
        let down = loss(&probe);
        probe.values_mut()[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "loss not finite when probing coordinate {i}"
            )));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    Tensor::new(point.shape().to_vec(), grad)
}

/// `|a - b| / (|a| + |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
