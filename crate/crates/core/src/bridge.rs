//! Coupling between the interpreter and the classifier.
//!
//! For one player, the unit-normalized latent rows give a cosine similarity
//! matrix (MAG). A sign matrix derived from the current cluster ids rewards
//! same-cluster pairs (−1) and penalizes cross-cluster pairs (+1). Their
//! elementwise product (IRL) is reduced to a distribution over the player's
//! sequences, which is matched against the classifier's penultimate ReLU
//! activations.

use thiserror::Error;

use crate::numerics::{softmax_rows, unit_rows, Graph, Matrix, Var};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

/// Per-player intermediate tensors, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeTensors {
    pub mag: Matrix,
    pub sign: Matrix,
    pub irl: Matrix,
    pub reduced: Vec<f64>,
}

/// Cosine similarity between the rows of `h_u` (`S × M`). The diagonal is 1;
/// a row with negligible norm has similarity 0 to every other row.
pub fn magnitude(h_u: &Matrix) -> Matrix {
    let (units, _) = unit_rows(h_u);
    let s = h_u.rows();
    let mut mag = units.matmul(&units.transpose());
    for i in 0..s {
        mag[(i, i)] = 1.0;
    }
    mag
}

/// +1 where `i ≠ j` and the ids differ, −1 otherwise (diagonal included).
pub fn sign_matrix(ids: &[usize]) -> Matrix {
    let s = ids.len();
    let mut m = Matrix::filled(s, s, -1.0);
    for i in 0..s {
        for j in 0..s {
            if i != j && ids[i] != ids[j] {
                m[(i, j)] = 1.0;
            }
        }
    }
    m
}

pub fn irl(mag: &Matrix, sign: &Matrix) -> Matrix {
    assert_eq!(mag.shape(), sign.shape());
    let data = mag.as_slice().iter().zip(sign.as_slice()).map(|(a, b)| a * b).collect();
    Matrix::new(mag.rows(), mag.cols(), data).expect("same shape")
}

/// Scores each IRL row with the shared weight vector, then softmaxes over
/// the `S` scores.
pub fn reduce_irl(irl: &Matrix, weights: &[f64]) -> Vec<f64> {
    assert_eq!(irl.cols(), weights.len());
    let scores: Vec<f64> = (0..irl.rows())
        .map(|r| irl.row(r).iter().zip(weights).map(|(a, w)| a * w).sum())
        .collect();
    let n = scores.len();
    softmax_rows(&Matrix::new(1, n, scores).expect("row vector"), None).into_vec()
}

/// Mean squared difference between penultimate activations and the reduced
/// IRL vector of one player.
pub fn bridge_loss(c_relu: &[f64], reduced: &[f64]) -> Result<f64, BridgeError> {
    if c_relu.len() != reduced.len() {
        return Err(BridgeError::Length(c_relu.len(), reduced.len()));
    }
    let s = c_relu.len() as f64;
    Ok(c_relu.iter().zip(reduced).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s)
}

/// `β·(recon + λ/2·trace) + (1 − β)·bridge`.
pub fn interpreter_total_loss(recon: f64, trace: f64, bridge: f64, beta: f64, lambda: f64) -> f64 {
    beta * (recon + 0.5 * lambda * trace) + (1.0 - beta) * bridge
}

pub fn bridge_tensors(h_u: &Matrix, ids: &[usize], weights: &[f64]) -> BridgeTensors {
    let mag = magnitude(h_u);
    let sign = sign_matrix(ids);
    let irl = irl(&mag, &sign);
    let reduced = reduce_irl(&irl, weights);
    BridgeTensors {
        mag,
        sign,
        irl,
        reduced,
    }
}

/// Bridge loss over a batch of `P` players whose `S` latent rows are
/// contiguous in `h` (`(P·S) × M`), averaged over players.
///
/// `signs` stacks the per-player sign matrices (`(P·S) × S`), `reducer` is
/// the `1 × S` weight vector and `c_relu` the frozen `P × S` penultimate
/// activations.
pub fn bridge_loss_node(g: &mut Graph, h: Var, s: usize, signs: &Matrix, reducer: Var, c_relu: &Matrix) -> Var {
    let rows = g.value(h).rows();
    let p = rows / s;
    assert_eq!(rows, p * s);
    assert_eq!(signs.shape(), (rows, s));
    assert_eq!(c_relu.shape(), (p, s));
    let mag = g.cosine_blocks(h, s);
    let sign = g.constant(signs.clone());
    let irl = g.mul(mag, sign);
    let w = g.reshape(reducer, s, 1);
    let scores = g.matmul(irl, w);
    let scores = g.reshape(scores, p, s);
    let reduced = g.softmax_rows(scores);
    let weights = Matrix::filled(p, s, 1.0 / (p * s) as f64);
    g.weighted_sq_err(reduced, c_relu.clone(), weights)
}

/// Graph form of [`interpreter_total_loss`]; `bridge` may be absent.
pub fn interpreter_total_node(
    g: &mut Graph,
    recon: Var,
    trace: Var,
    bridge: Option<Var>,
    beta: f64,
    lambda: f64,
) -> Var {
    let t = g.scale(trace, 0.5 * lambda);
    let inner = g.add(recon, t);
    let total = g.scale(inner, beta);
    match bridge {
        Some(b) => {
            let b = g.scale(b, 1.0 - beta);
            g.add(total, b)
        }
        None => total,
    }
}
