use nalgebra::DMatrix;
use proptest::prelude::*;
use seqforge_core::classifier::build_adjacency;
use seqforge_core::evaluation::{adjacency_entropy, cluster_recovery, precision_recall};
use seqforge_core::numerics::{kmeans, symmetric_eigen, top_k_eigenvectors, Matrix};

fn gram_of(values: &[f64], n: usize, m: usize) -> Matrix {
    let h = Matrix::new(n, m, values.to_vec()).unwrap();
    h.matmul(&h.transpose())
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..9, 1usize..6).prop_flat_map(|(n, m)| (Just(n), Just(m), prop::collection::vec(-2.0f64..2.0, n * m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_eigenvectors_are_orthonormal_and_capture_the_top_spectrum(
        (n, m, values) in matrix_strategy(),
        k_frac in 0.0f64..1.0,
    ) {
        let g = gram_of(&values, n, m);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let f = top_k_eigenvectors(&g, k).unwrap();
        prop_assert!(f.orthonormality_error() < 1e-8);
        let captured = f.matrix.transpose().matmul(&g).matmul(&f.matrix);
        let trace: f64 = (0..k).map(|i| captured[(i, i)]).sum();
        let mut ev: Vec<f64> = DMatrix::from_row_slice(n, n, g.as_slice()).symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let want: f64 = ev[..k].iter().sum();
        prop_assert!((trace - want).abs() < 1e-8 * want.abs().max(1.0), "{} vs {}", trace, want);
    }

    #[test]
    fn eigen_decomposition_is_deterministic((n, m, values) in matrix_strategy()) {
        let g = gram_of(&values, n, m);
        let (a, b) = (symmetric_eigen(&g).unwrap(), symmetric_eigen(&g).unwrap());
        prop_assert_eq!(a.values, b.values);
        prop_assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn kmeans_inertia_never_increases(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3..40),
        k in 1usize..4,
        seed in 0u64..1000,
    ) {
        let x = Matrix::from_rows(&points);
        let fit = kmeans(&x, k, seed).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.inertia_history);
        }
        prop_assert_eq!(fit.assignments.len(), points.len());
        let again = kmeans(&x, k, seed).unwrap();
        prop_assert_eq!(fit.assignments, again.assignments);
    }

    #[test]
    fn entropy_is_invariant_to_cluster_relabeling(
        ids in prop::collection::vec(prop::option::of(0usize..5), 1..20),
        shift in 0usize..5,
    ) {
        let relabeled: Vec<Option<usize>> = ids.iter().map(|i| i.map(|c| (c + shift) % 5)).collect();
        let a = adjacency_entropy(&build_adjacency(&ids, 5).unwrap());
        let b = adjacency_entropy(&build_adjacency(&relabeled, 5).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=2.0 * 5f64.log2() + 1e-12).contains(&a));
        let nonzero = build_adjacency(&ids, 5).unwrap().normalized.as_slice().iter().filter(|&&p| p > 0.0).count();
        prop_assert_eq!(a == 0.0, nonzero <= 1);
    }

    #[test]
    fn ari_is_symmetric_and_label_invariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 2..30),
        shift in 1usize..4,
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let ab = cluster_recovery(&a, &b).unwrap();
        let ba = cluster_recovery(&b, &a).unwrap();
        let shifted: Vec<usize> = a.iter().map(|x| (x + shift) % 4).collect();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((cluster_recovery(&shifted, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((cluster_recovery(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_and_recall_are_percentages(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
    ) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let classes = vec!["a".to_string(), "b".into(), "c".into()];
        let r = precision_recall(&pred, &truth, &classes).unwrap();
        for v in r.precision.iter().chain(&r.recall) {
            prop_assert!((0.0..=100.0).contains(v));
        }
        let total: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, pred.len());
    }
}
