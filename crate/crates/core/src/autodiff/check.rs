use super::Tensor;

/// Central-difference gradient `(f(x + h·eᵢ) - f(x - h·eᵢ)) / 2h` per
/// coordinate of `x`.
///
/// Test oracle for the analytic backward rules. `h` must be positive; the
/// caller owns the step-size choice and `h = 0` yields NaN/inf.
pub fn finite_diff_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let shape = x.shape();
    let base = x.values().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let plus = f(&Tensor::from_shape(shape, probe.clone()));
        probe[i] = base[i] - h;
        let minus = f(&Tensor::from_shape(shape, probe.clone()));
        probe[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::from_shape(shape, grad)
}
