use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqforge_core::interpreter::{
    gram, reconstruction_loss, reconstruction_loss_node, trace_loss, trace_loss_node, InterpreterConfig,
    InterpreterModel, SequenceBatch, SequenceId,
};
use seqforge_core::numerics::{grad_check, top_k_eigenvectors, Graph, Matrix, ParamStore};

fn toy_config() -> InterpreterConfig {
    InterpreterConfig {
        features: 2,
        hidden: vec![3, 2, 2],
        attention_dim: 3,
        reducer_len: 0,
    }
}

fn random_batch(rows: usize, l: usize, f: usize, lens: &[usize], seed: u64) -> SequenceBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Matrix::zeros(rows, l * f);
    for (r, &v) in lens.iter().enumerate() {
        for c in 0..v * f {
            x.row_mut(r)[c] = rng.random_range(-1.5..1.5);
        }
    }
    SequenceBatch {
        x,
        valid_lengths: lens.to_vec(),
        ids: (0..rows).map(|i| SequenceId { player: i, position: 0 }).collect(),
        l,
        f,
    }
}

// ---- scalar oracle -------------------------------------------------------

fn p(store: &ParamStore, name: &str) -> (Vec<f64>, usize) {
    let t = store.get(store.id_of(name).unwrap());
    let cols = *t.shape().last().unwrap();
    (t.values().to_vec(), cols)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM step on plain vectors; weights are `(in + h) × 4h` row-major.
fn step(w: &(Vec<f64>, usize), b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let z: Vec<f64> = x.iter().chain(h).copied().collect();
    let mut gates = b.to_vec();
    for (i, zi) in z.iter().enumerate() {
        for j in 0..4 * n {
            gates[j] += zi * w.0[i * w.1 + j];
        }
    }
    let mut hn = vec![0.0; n];
    let mut cn = vec![0.0; n];
    for j in 0..n {
        cn[j] = sig(gates[n + j]) * c[j] + sig(gates[j]) * gates[2 * n + j].tanh();
        hn[j] = sig(gates[3 * n + j]) * cn[j].tanh();
    }
    (hn, cn)
}

fn vecmat(x: &[f64], w: &(Vec<f64>, usize)) -> Vec<f64> {
    (0..w.1).map(|j| x.iter().enumerate().map(|(i, xi)| xi * w.0[i * w.1 + j]).sum()).collect()
}

/// Encodes and decodes one sequence with explicit loops.
fn oracle(model: &InterpreterModel, seq: &[Vec<f64>], valid: usize) -> (Vec<f64>, Vec<f64>) {
    let s = &model.params;
    let hidden = &model.config.hidden;
    let l = seq.len();
    let last = valid.clamp(1, l) - 1;
    let mut layer_in: Vec<Vec<f64>> = seq.to_vec();
    let mut enc_out: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut latent = Vec::new();
    for (li, &n) in hidden.iter().enumerate() {
        let w = p(s, &format!("enc{li}.w"));
        let b = p(s, &format!("enc{li}.b")).0;
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        let mut outs = Vec::new();
        for x in &layer_in {
            (h, c) = step(&w, &b, x, &h, &c);
            outs.push(h.clone());
        }
        latent.extend_from_slice(&outs[last]);
        enc_out.push(outs.clone());
        layer_in = outs;
    }

    let f = model.config.features;
    let mut hs: Vec<Vec<f64>> = (0..hidden.len()).map(|li| enc_out[li][last].clone()).collect();
    let mut cs: Vec<Vec<f64>> = hidden.iter().map(|&n| vec![0.0; n]).collect();
    let mut prev = vec![0.0; f];
    let mut recon = Vec::new();
    let attend = valid.max(1).min(l);
    for _ in 0..l {
        let mut below = prev.clone();
        for li in 0..hidden.len() {
            let we = p(s, &format!("att{li}.we"));
            let wd = p(s, &format!("att{li}.wd"));
            let v = p(s, &format!("att{li}.v")).0;
            let q = vecmat(&hs[li], &wd);
            let scores: Vec<f64> = (0..attend)
                .map(|t| {
                    let k = vecmat(&enc_out[li][t], &we);
                    k.iter().zip(&q).zip(&v).map(|((k, q), v)| v * (k + q).tanh()).sum()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut ctx = vec![0.0; hidden[li]];
            for t in 0..attend {
                for (j, c) in ctx.iter_mut().enumerate() {
                    *c += e[t] / z * enc_out[li][t][j];
                }
            }
            let input: Vec<f64> = below.iter().chain(&ctx).copied().collect();
            let w = p(s, &format!("dec{li}.w"));
            let b = p(s, &format!("dec{li}.b")).0;
            let (h, c) = step(&w, &b, &input, &hs[li], &cs[li]);
            hs[li] = h;
            cs[li] = c;
            below = hs[li].clone();
        }
        let ow = p(s, "out.w");
        let ob = p(s, "out.b").0;
        let y: Vec<f64> = vecmat(&below, &ow).iter().zip(&ob).map(|(a, b)| a + b).collect();
        recon.extend_from_slice(&y);
        prev = y;
    }
    (latent, recon)
}

#[test]
fn matches_unrolled_cell_oracle() {
    let model = InterpreterModel::new(toy_config(), 11).unwrap();
    let batch = random_batch(3, 4, 2, &[4, 2, 0], 5);
    let latent = model.encode(&batch).unwrap();
    let recon = model.reconstruct(&batch).unwrap();
    for r in 0..3 {
        let seq: Vec<Vec<f64>> = batch.x.row(r).chunks(2).map(<[f64]>::to_vec).collect();
        let (h, y) = oracle(&model, &seq, batch.valid_lengths[r]);
        for (a, b) in latent.h.row(r).iter().zip(&h) {
            assert!((a - b).abs() < 1e-10, "latent row {r}: {a} vs {b}");
        }
        for (a, b) in recon.row(r).iter().zip(&y) {
            assert!((a - b).abs() < 1e-10, "recon row {r}: {a} vs {b}");
        }
    }
}

#[test]
fn latent_width_is_sum_of_hidden_sizes() {
    let model = InterpreterModel::new(toy_config(), 1).unwrap();
    let batch = random_batch(5, 4, 2, &[4, 4, 3, 1, 2], 2);
    assert_eq!(model.encode(&batch).unwrap().h.shape(), (5, 7));
    assert_eq!(model.reconstruct(&batch).unwrap().shape(), (5, 8));
}

#[test]
fn zero_weights_give_zero_outputs() {
    let mut model = InterpreterModel::new(toy_config(), 3).unwrap();
    let n = model.params.num_scalars();
    model.params.set_flat(&vec![0.0; n]).unwrap();
    let batch = random_batch(2, 4, 2, &[4, 3], 9);
    assert!(model.encode(&batch).unwrap().h.as_slice().iter().all(|&v| v == 0.0));
    assert!(model.reconstruct(&batch).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn duplicate_rows_encode_identically() {
    let model = InterpreterModel::new(toy_config(), 4).unwrap();
    let mut batch = random_batch(2, 4, 2, &[3, 3], 6);
    let first = batch.x.row(0).to_vec();
    batch.x.row_mut(1).copy_from_slice(&first);
    let h = model.encode(&batch).unwrap().h;
    assert_eq!(h.row(0), h.row(1));
    // bit-identical across calls
    assert_eq!(model.encode(&batch).unwrap().h, h);
}

#[test]
fn single_step_attention_returns_that_output() {
    let model = InterpreterModel::new(toy_config(), 8).unwrap();
    let batch = random_batch(2, 1, 2, &[1, 1], 3);
    let mut g = Graph::new();
    let enc = model.encode_graph(&mut g, &batch).unwrap();
    let values = enc.outputs[0];
    let scores = g.constant(Matrix::from_rows(&[vec![0.3], vec![-2.0]]));
    let alpha = g.softmax_rows_prefix(scores, &[1, 1]);
    let ctx = g.attn_context(alpha, values);
    assert_eq!(g.value(ctx), g.value(values));
}

#[test]
fn reconstruction_gradients_pass_grad_check() {
    let model = InterpreterModel::new(toy_config(), 21).unwrap();
    let batch = random_batch(3, 3, 2, &[3, 2, 1], 4);
    let mut probe = model.clone();
    let flat = model.params.flatten();
    let err = grad_check(
        |theta| {
            probe.params.set_flat(theta).unwrap();
            let mut g = Graph::new();
            let enc = probe.encode_graph(&mut g, &batch).unwrap();
            let y = probe.decode_graph(&mut g, &enc, &batch);
            let loss = reconstruction_loss_node(&mut g, y, &batch);
            let grads = g.backward(loss);
            (g.scalar(loss), probe.params.flat_grad(&grads))
        },
        &flat,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "relative gradient error {err}");
}

#[test]
fn trace_gradients_pass_grad_check() {
    let model = InterpreterModel::new(toy_config(), 22).unwrap();
    let batch = random_batch(4, 3, 2, &[3, 2, 3, 1], 7);
    let h = model.encode(&batch).unwrap().h;
    let f = top_k_eigenvectors(&gram(&h), 2).unwrap();
    let mut probe = model.clone();
    let err = grad_check(
        |theta| {
            probe.params.set_flat(theta).unwrap();
            let mut g = Graph::new();
            let enc = probe.encode_graph(&mut g, &batch).unwrap();
            let loss = trace_loss_node(&mut g, enc.latent, &f).unwrap();
            let grads = g.backward(loss);
            (g.scalar(loss), probe.params.flat_grad(&grads))
        },
        &model.params.flatten(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "relative gradient error {err}");
}

#[test]
fn graph_losses_match_direct_values() {
    let model = InterpreterModel::new(toy_config(), 30).unwrap();
    let batch = random_batch(4, 4, 2, &[4, 1, 0, 2], 8);
    let mut g = Graph::new();
    let enc = model.encode_graph(&mut g, &batch).unwrap();
    let y = model.decode_graph(&mut g, &enc, &batch);
    let rl = reconstruction_loss_node(&mut g, y, &batch);
    let direct = reconstruction_loss(&batch.x, g.value(y), &batch.valid_lengths, 2);
    assert!((g.scalar(rl) - direct).abs() < 1e-14);
    let h = g.value(enc.latent).clone();
    let f = top_k_eigenvectors(&gram(&h), 2).unwrap();
    let tl = trace_loss_node(&mut g, enc.latent, &f).unwrap();
    assert!((g.scalar(tl) - trace_loss(&h, &f).unwrap()).abs() < 1e-12);
}

fn residual_spectrum(h: &Matrix, k: usize) -> f64 {
    let g = gram(h);
    let n = g.rows();
    let dm = DMatrix::from_row_slice(n, n, g.as_slice());
    let mut ev: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev[k..].iter().sum()
}

#[test]
fn trace_loss_equals_residual_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = Matrix::new(20, 8, (0..160).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    for k in [1, 3, 7] {
        let f = top_k_eigenvectors(&gram(&h), k).unwrap();
        let got = trace_loss(&h, &f).unwrap();
        let want = residual_spectrum(&h, k);
        assert!((got - want).abs() < 1e-8, "k={k}: {got} vs {want}");
    }
}

#[test]
fn low_rank_latents_have_zero_trace_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let a = Matrix::new(12, 2, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let b = Matrix::new(2, 5, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let h = a.matmul(&b);
    let f = top_k_eigenvectors(&gram(&h), 3).unwrap();
    assert!(trace_loss(&h, &f).unwrap().abs() < 1e-8);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = InterpreterConfig {
        reducer_len: 4,
        ..toy_config()
    };
    let model = InterpreterModel::new(cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("interp");
    model.save(&path, serde_json::json!({"epoch": 3})).unwrap();
    let (back, extra) = InterpreterModel::load(&path).unwrap();
    assert_eq!(extra["epoch"], 3);
    assert_eq!(back.params, model.params);
    assert_eq!(back.config, model.config);
    assert!(back.reducer().is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trace_loss_nonnegative_at_optimum(seed in 0u64..1000, n in 2usize..12, m in 1usize..6, k in 1usize..4) {
        prop_assume!(k <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let f = top_k_eigenvectors(&gram(&h), k).unwrap();
        prop_assert!(trace_loss(&h, &f).unwrap() >= -1e-8);
    }

    #[test]
    fn reconstruction_ignores_padded_content(seed in 0u64..1000, valid in 0usize..5, noise in -50.0f64..50.0) {
        let model = InterpreterModel::new(toy_config(), seed).unwrap();
        let batch = random_batch(1, 5, 2, &[valid], seed);
        let mut dirty = batch.clone();
        for c in valid * 2..10 {
            dirty.x.row_mut(0)[c] = noise;
        }
        let y = model.reconstruct(&batch).unwrap();
        let clean = reconstruction_loss(&batch.x, &y, &batch.valid_lengths, 2);
        let messy = reconstruction_loss(&dirty.x, &y, &dirty.valid_lengths, 2);
        prop_assert_eq!(clean, messy);
    }
}
