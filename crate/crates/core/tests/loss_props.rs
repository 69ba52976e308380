use proptest::prelude::*;
use spotscape::eval::{kmeans_once, EVAL_MAX_ITER, KMEANS_TOL};
use spotscape::losses::{
    prototypical_loss, reconstruction_loss, similarity_scaling_loss, similarity_telescope_loss, Granularity,
    PrototypeSet,
};
use spotscape::numeric::{DenseMatrix, SeededRng};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
        .prop_filter("rows away from zero", |m| {
            m.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3)
        })
}

fn rotation(angle: f64, d: usize, i: usize, j: usize) -> DenseMatrix {
    let mut q = DenseMatrix::identity(d);
    let (s, c) = angle.sin_cos();
    q.set(i, i, c);
    q.set(j, j, c);
    q.set(i, j, -s);
    q.set(j, i, s);
    q
}

/// A permutation of `0..n` that keeps every index inside its block of `block`.
fn block_permutation(n: usize, block: usize, keys: &[u32]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for chunk in perm.chunks_mut(block) {
        chunk.sort_by_key(|&i| (keys[i], i));
    }
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn telescope_is_nonnegative_and_zero_on_identical_views(z1 in matrix(6, 3), z2 in matrix(6, 3)) {
        let (loss, h) = similarity_telescope_loss(&z1, &z2).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, h.max_abs_diff(&h.transpose()) == 0.0);
        prop_assert!(similarity_telescope_loss(&z1, &z1).unwrap().0 <= 1e-12);
    }

    #[test]
    fn telescope_ignores_shared_rotations(
        z1 in matrix(6, 4),
        z2 in matrix(6, 4),
        angles in prop::collection::vec(0.0f64..6.3, 3),
    ) {
        let q = rotation(angles[0], 4, 0, 1)
            .matmul(&rotation(angles[1], 4, 1, 2)).unwrap()
            .matmul(&rotation(angles[2], 4, 2, 3)).unwrap();
        let (base, _) = similarity_telescope_loss(&z1, &z2).unwrap();
        let (turned, _) = similarity_telescope_loss(&z1.matmul(&q).unwrap(), &z2.matmul(&q).unwrap()).unwrap();
        prop_assert!((base - turned).abs() <= 1e-9);
    }

    #[test]
    fn reconstruction_is_nonnegative(x in matrix(4, 3), a in matrix(4, 3), b in matrix(4, 3)) {
        prop_assert!(reconstruction_loss(&x, &a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn scaling_is_nonnegative_and_ignores_within_slice_order(
        z1 in matrix(8, 3),
        z2 in matrix(8, 3),
        keys in prop::collection::vec(any::<u32>(), 8),
        k in 1usize..4,
        include_self in any::<bool>(),
    ) {
        let membership = [0, 0, 0, 0, 1, 1, 1, 1];
        let (_, h) = similarity_telescope_loss(&z1, &z2).unwrap();
        let base = similarity_scaling_loss(&h, &membership, k, include_self).unwrap();
        prop_assert!(base >= 0.0);
        let perm = block_permutation(8, 4, &keys);
        let (_, hp) = similarity_telescope_loss(&z1.select_rows(&perm), &z2.select_rows(&perm)).unwrap();
        let permuted = similarity_scaling_loss(&hp, &membership, k, include_self).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-12);
    }

    #[test]
    fn prototypical_is_nonnegative_at_nearest_assignments(
        z in matrix(6, 3),
        p in matrix(3, 3),
        tau in 0.1f64..2.0,
    ) {
        let zn = z.row_l2_normalize().unwrap();
        let pn = p.row_l2_normalize().unwrap();
        let sims = zn.matmul(&pn.transpose()).unwrap();
        let assignments = sims
            .iter_rows()
            .map(|r| (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best }))
            .collect();
        let set = PrototypeSet { granularities: vec![Granularity { centroids: pn, assignments }] };
        prop_assert!(prototypical_loss(&z, &set, tau).unwrap() >= 0.0);
    }

    #[test]
    fn lloyd_objective_never_increases(data in matrix(12, 2), k in 2usize..5, seed in any::<u64>()) {
        let run = kmeans_once(&data, k, &mut SeededRng::new(seed, "k"), EVAL_MAX_ITER, KMEANS_TOL).unwrap();
        for w in run.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}
