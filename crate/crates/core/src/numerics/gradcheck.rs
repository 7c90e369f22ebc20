use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("epsilon {0} outside [1e-7, 1e-3]")]
    Epsilon(f64),
    #[error("analytic gradient has {got} entries, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("loss is not finite at the unperturbed point")]
    NonFiniteBase,
    #[error("loss is not finite when perturbing parameter {index}")]
    NonFinite { index: usize },
}

/// Compares an analytic gradient against central finite differences.
///
/// `loss_and_grad` evaluates the loss and its analytic gradient at a flat
/// parameter vector. Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)` over all parameters.
pub fn grad_check<F>(
    mut loss_and_grad: F,
    params: &[f64],
    epsilon: f64,
) -> Result<f64, GradCheckError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(GradCheckError::Epsilon(epsilon));
    }
    let (base, analytic) = loss_and_grad(params);
    if !base.is_finite() {
        return Err(GradCheckError::NonFiniteBase);
    }
    if analytic.len() != params.len() {
        return Err(GradCheckError::Length {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let (plus, _) = loss_and_grad(&x);
        x[i] = orig - epsilon;
        let (minus, _) = loss_and_grad(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradCheckError::NonFinite { index: i });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
