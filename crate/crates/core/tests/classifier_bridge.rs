use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqforge_core::bridge::{bridge_loss, bridge_loss_node, bridge_tensors, reduce_irl, sign_matrix};
use seqforge_core::classifier::{
    build_adjacency, cce_loss, map_frequency, ClassifierConfig, ClassifierModel, Variant,
};
use seqforge_core::interpreter::{InterpreterConfig, InterpreterModel, SequenceBatch, SequenceId};
use seqforge_core::numerics::{grad_check, Graph, Matrix};

fn config(variant: Variant) -> ClassifierConfig {
    ClassifierConfig {
        variant,
        k: 7,
        s: 5,
        latent_dim: 4,
        classes: 3,
        conv_channels: [2, 3],
        recurrent_hidden: 3,
    }
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weights(model: &ClassifierModel, name: &str) -> Vec<f64> {
    model.params.get(model.params.id_of(name).unwrap()).values().to_vec()
}

/// Direct 3×3 same-padded convolution followed by ReLU; `x[c][y][x]`.
fn conv(x: &[Vec<Vec<f64>>], w: &[f64], b: &[f64], cout: usize) -> Vec<Vec<Vec<f64>>> {
    let k = x[0].len();
    let cin = x.len();
    let mut out = vec![vec![vec![0.0; k]; k]; cout];
    for (o, plane) in out.iter_mut().enumerate() {
        for y in 0..k {
            for xx in 0..k {
                let mut acc = b[o];
                for (c, chan) in x.iter().enumerate() {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) = (y as isize + dy as isize - 1, xx as isize + dx as isize - 1);
                            if sy < 0 || sx < 0 || sy >= k as isize || sx >= k as isize {
                                continue;
                            }
                            let row = c * 9 + dy * 3 + dx;
                            acc += chan[sy as usize][sx as usize] * w[row * cout + o];
                        }
                    }
                }
                assert!(cin > 0);
                plane[y][xx] = acc.max(0.0);
            }
        }
    }
    out
}

fn dense(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    (0..n)
        .map(|j| b[j] + x.iter().enumerate().map(|(i, v)| v * w[i * n + j]).sum::<f64>())
        .collect()
}

#[test]
fn tm_forward_matches_direct_convolution() {
    let cfg = config(Variant::TransitionMatrix);
    let mut model = ClassifierModel::new(cfg.clone(), 3).unwrap();
    // non-zero biases exercise the bias path too
    let flat: Vec<f64> = model.params.flatten().iter().enumerate().map(|(i, v)| v + 0.01 * (i % 5) as f64).collect();
    model.params.set_flat(&flat).unwrap();
    let input = random_input(2, 49, 17);
    let acts = model.forward(&input).unwrap();
    for (r, act) in acts.iter().enumerate() {
        let grid: Vec<Vec<f64>> = input.row(r).chunks(7).map(<[f64]>::to_vec).collect();
        let a1 = conv(&[grid], &weights(&model, "conv1.w"), &weights(&model, "conv1.b"), 2);
        let a2 = conv(&a1, &weights(&model, "conv2.w"), &weights(&model, "conv2.b"), 3);
        // flatten in (cell, channel) order
        let mut feat = Vec::new();
        for y in 0..7 {
            for x in 0..7 {
                for plane in &a2 {
                    feat.push(plane[y][x]);
                }
            }
        }
        let pen: Vec<f64> = dense(&feat, &weights(&model, "hidden.w"), &weights(&model, "hidden.b"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let logits = dense(&pen, &weights(&model, "out.w"), &weights(&model, "out.b"));
        for (a, b) in act.penultimate.iter().zip(&pen) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in act.logits.iter().zip(&logits) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    for v in [Variant::TransitionMatrix, Variant::Sequential, Variant::Frequency] {
        let cfg = config(v);
        let mut model = ClassifierModel::new(cfg.clone(), 1).unwrap();
        let n = model.params.num_scalars();
        model.params.set_flat(&vec![0.0; n]).unwrap();
        let acts = model.forward(&random_input(3, cfg.input_width(), 2)).unwrap();
        for a in acts {
            assert!(a.logits.iter().all(|&l| l == 0.0));
            assert!(a.probabilities.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
            assert_eq!(a.penultimate.len(), 5);
        }
    }
}

#[test]
fn activations_are_well_formed() {
    for v in [Variant::TransitionMatrix, Variant::Sequential, Variant::Frequency] {
        let cfg = config(v);
        let model = ClassifierModel::new(cfg.clone(), 9).unwrap();
        for a in model.forward(&random_input(4, cfg.input_width(), 5)).unwrap() {
            assert_eq!(a.penultimate.len(), cfg.s);
            assert!(a.penultimate.iter().all(|&p| p >= 0.0));
            assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(model.forward(&random_input(1, cfg.input_width() + 1, 5)).is_err());
    }
}

#[test]
fn sequential_variant_is_order_sensitive() {
    let cfg = config(Variant::Sequential);
    let model = ClassifierModel::new(cfg, 4).unwrap();
    let x = random_input(1, 20, 8);
    let mut swapped = x.clone();
    swapped.row_mut(0).rotate_left(4);
    let a = model.forward(&x).unwrap();
    let b = model.forward(&swapped).unwrap();
    assert_ne!(a[0].logits, b[0].logits);
}

#[test]
fn cce_values() {
    assert_eq!(cce_loss(&[vec![0.0, 1.0, 0.0]], &[1]), 0.0);
    assert!((cce_loss(&[vec![1.0 / 3.0; 3]], &[2]) - 3f64.ln()).abs() < 1e-15);
    assert!((cce_loss(&[vec![1.0, 0.0]], &[1]) - (-(1e-12f64).ln())).abs() < 1e-9);
}

#[test]
fn classifier_gradients_pass_grad_check() {
    for v in [Variant::TransitionMatrix, Variant::Sequential, Variant::Frequency] {
        let cfg = config(v);
        let model = ClassifierModel::new(cfg.clone(), 12).unwrap();
        let input = random_input(3, cfg.input_width(), 13);
        let labels = [0, 2, 1];
        let mut probe = model.clone();
        let err = grad_check(
            |theta| {
                probe.params.set_flat(theta).unwrap();
                let mut g = Graph::new();
                let x = g.constant(input.clone());
                let nodes = probe.forward_graph(&mut g, x).unwrap();
                let loss = g.cross_entropy(nodes.probabilities, &labels);
                let grads = g.backward(loss);
                (g.scalar(loss), probe.params.flat_grad(&grads))
            },
            &model.params.flatten(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{v:?}: {err}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = ClassifierModel::new(config(Variant::TransitionMatrix), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(&dir.path().join("c"), serde_json::json!({})).unwrap();
    let (back, _) = ClassifierModel::load(&dir.path().join("c")).unwrap();
    assert_eq!(back.params, model.params);
    assert!(InterpreterModel::load(&dir.path().join("c")).is_err());
}

#[test]
fn reduce_matches_hand_softmax() {
    let irl = Matrix::from_rows(&[
        vec![-1.0, 0.2, -0.4, 0.9],
        vec![0.2, -1.0, 0.3, -0.1],
        vec![-0.4, 0.3, -1.0, 0.5],
        vec![0.9, -0.1, 0.5, -1.0],
    ]);
    let w = [0.5, -1.5, 2.0, 0.25];
    let scores: Vec<f64> = (0..4).map(|r| (0..4).map(|c| irl[(r, c)] * w[c]).sum()).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let got = reduce_irl(&irl, &w);
    for (g, s) in got.iter().zip(&scores) {
        assert!((g - s.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn batched_bridge_matches_per_player_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = 4;
    let h = random_input(2 * s, 3, 21);
    let ids = [vec![0, 0, 1, 2], vec![1, 1, 1, 0]];
    let w: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = random_input(2, s, 22);
    let mut signs = Matrix::zeros(2 * s, s);
    let mut want = 0.0;
    for p in 0..2 {
        let sm = sign_matrix(&ids[p]);
        for r in 0..s {
            signs.row_mut(p * s + r).copy_from_slice(sm.row(r));
        }
        let hu = Matrix::from_rows(&(0..s).map(|r| h.row(p * s + r).to_vec()).collect::<Vec<_>>());
        let t = bridge_tensors(&hu, &ids[p], &w);
        want += bridge_loss(c.row(p), &t.reduced).unwrap() / 2.0;
    }
    let mut g = Graph::new();
    let hv = g.constant(h);
    let wv = g.constant(Matrix::new(1, s, w).unwrap());
    let loss = bridge_loss_node(&mut g, hv, s, &signs, wv, &c);
    assert!((g.scalar(loss) - want).abs() < 1e-14);
}

#[test]
fn bridge_gradients_reach_encoder_weights() {
    let s = 3;
    let cfg = InterpreterConfig {
        features: 2,
        hidden: vec![3, 2, 2],
        attention_dim: 2,
        reducer_len: s,
    };
    let model = InterpreterModel::new(cfg, 8).unwrap();
    let batch = SequenceBatch {
        x: random_input(2 * s, 6, 31),
        valid_lengths: vec![3; 2 * s],
        ids: (0..2 * s).map(|i| SequenceId { player: i / s, position: i % s }).collect(),
        l: 3,
        f: 2,
    };
    let signs = {
        let mut m = Matrix::zeros(2 * s, s);
        for (p, ids) in [[0, 1, 1], [2, 2, 0]].iter().enumerate() {
            let sm = sign_matrix(ids);
            for r in 0..s {
                m.row_mut(p * s + r).copy_from_slice(sm.row(r));
            }
        }
        m
    };
    let c = Matrix::from_rows(&[vec![0.1, 0.0, 0.7], vec![0.3, 0.3, 0.0]]);
    let mut probe = model.clone();
    let reducer = model.reducer().unwrap();
    let err = grad_check(
        |theta| {
            probe.params.set_flat(theta).unwrap();
            let mut g = Graph::new();
            let enc = probe.encode_graph(&mut g, &batch).unwrap();
            let w = g.param(reducer, probe.params.get(reducer));
            let loss = bridge_loss_node(&mut g, enc.latent, s, &signs, w, &c);
            let grads = g.backward(loss);
            (g.scalar(loss), probe.params.flat_grad(&grads))
        },
        &model.params.flatten(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "relative gradient error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_relabel_permutes_rows_and_columns(ids in prop::collection::vec(0usize..4, 1..12), perm_seed in 0u64..100) {
        let k = 4;
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        let b: Vec<Option<usize>> = ids.iter().map(|&i| Some(perm[i])).collect();
        let ta = build_adjacency(&a, k).unwrap();
        let tb = build_adjacency(&b, k).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(ta.counts[i][j], tb.counts[perm[i]][perm[j]]);
            }
        }
        prop_assert_eq!(ta.total() as usize, ids.len() - 1);
    }

    #[test]
    fn frequency_sums_to_one(ids in prop::collection::vec(prop::option::of(0usize..5), 1..15)) {
        match map_frequency(&ids, 5) {
            Ok(h) => prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12),
            Err(_) => prop_assert!(ids.iter().all(Option::is_none)),
        }
    }

    #[test]
    fn bridge_invariants(seed in 0u64..500, s in 1usize..7, m in 1usize..5, id_seed in 0u64..50) {
        let h = random_input(s, m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(id_seed);
        let ids: Vec<usize> = (0..s).map(|_| rng.random_range(0..3)).collect();
        let w: Vec<f64> = (0..s).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = bridge_tensors(&h, &ids, &w);
        for i in 0..s {
            prop_assert!((t.mag[(i, i)] - 1.0).abs() < 1e-9);
            prop_assert_eq!(t.sign[(i, i)], -1.0);
            for j in 0..s {
                prop_assert!((t.mag[(i, j)] - t.mag[(j, i)]).abs() < 1e-12);
                prop_assert!(t.mag[(i, j)].abs() <= 1.0 + 1e-12);
                prop_assert_eq!(t.sign[(i, j)], t.sign[(j, i)]);
                prop_assert_eq!(t.irl[(i, j)], t.mag[(i, j)] * t.sign[(i, j)]);
            }
        }
        prop_assert!((t.reduced.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(t.reduced.iter().all(|&r| r > 0.0 && r < 1.0 || s == 1));
        let c: Vec<f64> = (0..s).map(|_| rng.random_range(0.0..1.0)).collect();
        prop_assert!(bridge_loss(&c, &t.reduced).unwrap() >= 0.0);
        prop_assert_eq!(bridge_loss(&t.reduced, &t.reduced).unwrap(), 0.0);
    }
}
