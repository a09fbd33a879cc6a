use super::{Result, Scalar, Tensor, TensorError};

/// Central-difference gradient of a scalar function:
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element `i`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Tensor<T>, h: T) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if h <= T::zero() || !h.is_finite() {
        return Err(TensorError::NonPositiveStep);
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    let two_h = h + h;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        for v in [up, down] {
            if !v.is_finite() {
                return Err(TensorError::NonFinite(v.to_f64_lossy()));
            }
        }
        grad.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative error needs equal shapes");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-8)
        })
        .fold(0.0, f64::max)
}
