//! Symmetric eigendecomposition (cyclic Jacobi) and the orthonormal cluster
//! indicator built from the leading eigenvectors of a Gram matrix.

use super::tensor::Matrix;
use super::NumericsError;

/// Relative asymmetry tolerated before a matrix is rejected.
const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;
/// Entries at or below this magnitude are skipped by the sign convention.
const SIGN_EPS: f64 = 1e-12;

/// Full eigendecomposition of a symmetric matrix, sorted by descending
/// eigenvalue. Exact ties keep the Jacobi column order.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: Matrix,
}

/// Relaxed cluster-membership matrix: `n_sequences × K` with orthonormal
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterIndicator {
    pub matrix: Matrix,
    /// Interpreter iterations since the last refresh.
    pub stale_counter: usize,
}

impl ClusterIndicator {
    pub fn k(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    /// Largest deviation of `FᵀF` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let ftf = self.matrix.transpose().matmul(&self.matrix);
        ftf.max_abs_diff(&Matrix::identity(self.k()))
    }
}

fn check_symmetric(a: &Matrix) -> Result<(), NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for j in i + 1..a.cols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(NumericsError::NotSymmetric(worst));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen, NumericsError> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.clone();
    // symmetrise exactly so rotations see one value per pair
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let scale: f64 = m.frobenius_sq().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sign = first_significant_sign(&v, src);
        for r in 0..n {
            vectors[(r, dst)] = sign * v[(r, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn first_significant_sign(v: &Matrix, col: usize) -> f64 {
    (0..v.rows())
        .map(|r| v[(r, col)])
        .find(|x| x.abs() > SIGN_EPS)
        .map_or(1.0, |x| x.signum())
}

/// The `k` leading eigenvectors of a symmetric PSD Gram matrix as a
/// cluster indicator. The first significant entry of every column is
/// positive; exact eigenvalue ties are broken by index.
pub fn top_k_eigenvectors(gram: &Matrix, k: usize) -> Result<ClusterIndicator, NumericsError> {
    let n = gram.rows();
    if k == 0 || k > n {
        return Err(NumericsError::InvalidArgument(format!(
            "k must be in [1, {n}], got {k}"
        )));
    }
    let eig = symmetric_eigen(gram)?;
    let mut f = Matrix::zeros(n, k);
    for r in 0..n {
        for c in 0..k {
            f[(r, c)] = eig.vectors[(r, c)];
        }
    }
    Ok(ClusterIndicator {
        matrix: f,
        stale_counter: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_picks_leading_basis_vectors() {
        let f = top_k_eigenvectors(&Matrix::identity(3), 2).unwrap();
        assert_eq!(
            f.matrix,
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]])
        );
    }

    #[test]
    fn diagonal_spectrum() {
        let f = top_k_eigenvectors(&Matrix::from_diag(&[5.0, 3.0, 1.0]), 2).unwrap();
        assert_eq!(
            f.matrix,
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]])
        );
        let f = top_k_eigenvectors(&Matrix::from_diag(&[1.0, 3.0, 5.0]), 1).unwrap();
        assert_eq!(f.matrix.column(0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_asymmetric_and_bad_k() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(top_k_eigenvectors(&a, 1), Err(NumericsError::NotSymmetric(_))));
        assert!(top_k_eigenvectors(&Matrix::identity(2), 3).is_err());
        assert!(top_k_eigenvectors(&Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn sign_convention_first_entry_positive() {
        let a = Matrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        let f = top_k_eigenvectors(&a, 2).unwrap();
        for c in 0..2 {
            assert!(f.matrix[(0, c)] > 0.0);
        }
        assert!(f.orthonormality_error() < 1e-12);
    }
}
