//! Finite-difference checks for every differentiable graph operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqforge_core::numerics::{grad_check, Graph, Matrix, ParamId, ParamStore, Tensor, Var};

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], v).unwrap()
}

/// Checks `build` (which maps parameter leaves to a scalar) at random
/// parameter values of the given shapes.
fn check(shapes: &[(usize, usize)], seed: u64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        store.add(format!("p{i}"), random_tensor(&mut rng, r, c));
    }
    let x0 = store.flatten();
    let f = |x: &[f64]| {
        let mut s = store.clone();
        s.set_flat(x).unwrap();
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..s.len()).map(|i| g.param(ParamId(i), s.get(ParamId(i)))).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        (g.scalar(out), s.flat_grad(&grads))
    };
    grad_check(f, &x0, 1e-5).unwrap()
}

const TOL: f64 = 1e-7;

#[test]
fn matmul_add_sub_mul() {
    let err = check(&[(3, 4), (4, 2), (3, 2), (3, 2)], 1, |g, v| {
        let ab = g.matmul(v[0], v[1]);
        let s = g.add(ab, v[2]);
        let d = g.sub(s, v[3]);
        let m = g.mul(d, ab);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn add_row_scale_square_mean() {
    let err = check(&[(4, 3), (1, 3)], 2, |g, v| {
        let a = g.add_row(v[0], v[1]);
        let s = g.scale(a, -1.7);
        let q = g.square(s);
        g.mean(q)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn activations() {
    let err = check(&[(3, 5)], 3, |g, v| {
        let a = g.sigmoid(v[0]);
        let b = g.tanh(v[0]);
        let c = g.relu(v[0]);
        let ab = g.mul(a, b);
        let abc = g.add(ab, c);
        g.sum(abc)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn slice_concat_reshape() {
    let err = check(&[(2, 6), (2, 3)], 4, |g, v| {
        let s = g.slice_cols(v[0], 2, 3);
        let c = g.concat_cols(&[v[1], s, v[1]]);
        let r = g.reshape(c, 3, 6);
        let q = g.square(r);
        let w = g.concat_cols(&[q, r]);
        let t = g.tanh(w);
        g.sum(t)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn softmax_and_prefix_softmax() {
    let err = check(&[(3, 4), (3, 4)], 5, |g, v| {
        let p = g.softmax_rows(v[0]);
        let q = g.softmax_rows_prefix(v[0], &[4, 2, 0]);
        let a = g.mul(p, v[1]);
        let b = g.mul(q, v[1]);
        let s = g.add(a, b);
        g.sum(s)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn lstm_cell() {
    let err = check(&[(3, 8), (3, 2), (3, 4)], 6, |g, v| {
        let out = g.lstm_cell(v[0], v[1]);
        let m = g.mul(out, v[2]);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn attention_scores_and_context() {
    // B=2, T=3, A=2, m=2
    let err = check(&[(2, 6), (2, 2), (1, 2), (2, 6), (2, 2)], 7, |g, v| {
        let s = g.attn_scores(v[0], v[1], v[2]);
        let a = g.softmax_rows_prefix(s, &[3, 2]);
        let c = g.attn_context(a, v[3]);
        let m = g.mul(c, v[4]);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn select_rows() {
    let err = check(&[(3, 2), (3, 2), (3, 2)], 8, |g, v| {
        let s = g.select_rows(&[v[0], v[1]], &[1, 0, 1]);
        let m = g.mul(s, v[2]);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn cosine_blocks() {
    // two blocks of three rows
    let err = check(&[(6, 4), (6, 3)], 9, |g, v| {
        let c = g.cosine_blocks(v[0], 3);
        let m = g.mul(c, v[1]);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn gather_with_zero_padding() {
    let err = check(&[(2, 3), (2, 2)], 10, |g, v| {
        let idx = vec![0, usize::MAX, 5, 5];
        let x = g.gather(v[0], 2, 2, idx);
        let m = g.mul(x, v[1]);
        g.sum(m)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn weighted_sq_err_and_cross_entropy() {
    let target = Matrix::from_rows(&[vec![0.5, -0.2, 1.0], vec![0.0, 0.3, -1.0]]);
    let weights = Matrix::from_rows(&[vec![1.0, 0.5, 0.0], vec![2.0, 1.0, 1.0]]);
    let err = check(&[(2, 3)], 11, move |g, v| {
        let e = g.weighted_sq_err(v[0], target.clone(), weights.clone());
        let p = g.softmax_rows(v[0]);
        let c = g.cross_entropy(p, &[2, 0]);
        g.add(e, c)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Matrix::filled(2, 2, 1.0));
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = g.param(id, store.get(id));
    let m = g.matmul(c, w);
    let s = g.sum(m);
    let grads = g.backward(s);
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(w).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
}
