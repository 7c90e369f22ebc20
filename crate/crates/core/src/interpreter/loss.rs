use crate::numerics::{ClusterIndicator, Graph, Matrix, Var};

use super::{InterpreterError, SequenceBatch};

/// Per-element weights realizing the masked reconstruction mean: each real
/// sequence contributes the mean over its valid steps and all features, and
/// the batch value is the mean over real sequences. All-padding sequences
/// carry no weight.
pub fn reconstruction_weights(valid_lengths: &[usize], l: usize, f: usize) -> Matrix {
    let real = valid_lengths.iter().filter(|&&v| v > 0).count();
    let mut w = Matrix::zeros(valid_lengths.len(), l * f);
    if real == 0 {
        return w;
    }
    for (r, &v) in valid_lengths.iter().enumerate() {
        let v = v.min(l);
        if v > 0 {
            let scale = 1.0 / (v * f * real) as f64;
            w.row_mut(r)[..v * f].fill(scale);
        }
    }
    w
}

/// Masked mean squared error between `x` and `x_hat`, both `B × (L·F)`.
pub fn reconstruction_loss(x: &Matrix, x_hat: &Matrix, valid_lengths: &[usize], f: usize) -> f64 {
    assert_eq!(x.shape(), x_hat.shape(), "reconstruction shapes differ");
    assert_eq!(x.rows(), valid_lengths.len());
    let w = reconstruction_weights(valid_lengths, x.cols() / f, f);
    x.as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .zip(w.as_slice())
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

/// Graph form of [`reconstruction_loss`] with `pred` the decoder output.
pub fn reconstruction_loss_node(g: &mut Graph, pred: Var, batch: &SequenceBatch) -> Var {
    let w = reconstruction_weights(&batch.valid_lengths, batch.l, batch.f);
    g.weighted_sq_err(pred, batch.x.clone(), w)
}

fn check_indicator(h_rows: usize, f: &ClusterIndicator) -> Result<(), InterpreterError> {
    if f.n() != h_rows {
        return Err(InterpreterError::Shape(format!(
            "cluster indicator has {} rows for a batch of {h_rows}",
            f.n()
        )));
    }
    Ok(())
}

/// Spectral k-means relaxation for a batch whose rows are sequences:
/// `Tr(H Hᵀ) − Tr(Fᵀ H Hᵀ F)`. Equivalent to the column-oriented form with
/// sequences as columns of `H`.
pub fn trace_loss(h: &Matrix, f: &ClusterIndicator) -> Result<f64, InterpreterError> {
    check_indicator(h.rows(), f)?;
    let fth = f.matrix.transpose().matmul(h);
    Ok(h.frobenius_sq() - fth.frobenius_sq())
}

/// Graph form of [`trace_loss`]; `f` enters as a constant.
pub fn trace_loss_node(g: &mut Graph, h: Var, f: &ClusterIndicator) -> Result<Var, InterpreterError> {
    check_indicator(g.value(h).rows(), f)?;
    let total = g.square(h);
    let total = g.sum(total);
    let ft = g.constant(f.matrix.transpose());
    let proj = g.matmul(ft, h);
    let kept = g.square(proj);
    let kept = g.sum(kept);
    Ok(g.sub(total, kept))
}

/// Batch Gram matrix `H Hᵀ` (sequences × sequences).
pub fn gram(h: &Matrix) -> Matrix {
    h.matmul(&h.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::top_k_eigenvectors;

    #[test]
    fn reconstruction_basics() {
        let x = Matrix::zeros(2, 6);
        let ones = Matrix::filled(2, 6, 1.0);
        assert_eq!(reconstruction_loss(&x, &x, &[3, 3], 2), 0.0);
        assert!((reconstruction_loss(&x, &ones, &[3, 3], 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn padded_tail_is_ignored() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 0.0, 0.0]]);
        let good = Matrix::from_rows(&[vec![1.0, 3.0, 0.0, 0.0]]);
        let bad = Matrix::from_rows(&[vec![1.0, 3.0, 99.0, -7.0]]);
        let a = reconstruction_loss(&x, &good, &[1], 2);
        let b = reconstruction_loss(&x, &bad, &[1], 2);
        assert_eq!(a, b);
        assert_eq!(a, 0.5);
    }

    #[test]
    fn empty_sequences_carry_no_weight() {
        let w = reconstruction_weights(&[2, 0], 2, 1);
        assert_eq!(w.row(0), &[0.5, 0.5]);
        assert_eq!(w.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn diagonal_gram_residual() {
        // H Hᵀ = diag(5, 3, 1)
        let h = Matrix::from_diag(&[5f64.sqrt(), 3f64.sqrt(), 1.0]);
        let f = top_k_eigenvectors(&gram(&h), 2).unwrap();
        assert!((trace_loss(&h, &f).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_shape_mismatch() {
        let h = Matrix::zeros(4, 2);
        let f = top_k_eigenvectors(&Matrix::identity(3), 2).unwrap();
        assert!(trace_loss(&h, &f).is_err());
    }
}
