use rand::Rng;

use super::tensor::{Result, Tensor, TensorError};

/// Bound of the ReLU-gain Kaiming uniform scheme: `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> Result<f64> {
    if fan_in == 0 {
        return Err(TensorError::Invalid("kaiming init: fan_in must be positive".into()));
    }
    Ok((6.0 / fan_in as f64).sqrt())
}

/// Kaiming (He) uniform initialization, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = kaiming_bound(fan_in)?;
    uniform(shape, bound, rng)
}

/// `U(-bound, bound)` initialization.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Result<Tensor> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(TensorError::Invalid(format!("uniform init: bad bound {bound}")));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
