use proptest::prelude::*;
use rand::RngCore;
use spotscape::numeric::{top_k_mean, DenseMatrix, SeededRng, SparseAdjacency, Tape};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = DenseMatrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| DenseMatrix::new(r, c, v).unwrap())
    })
}

/// Symmetric weighted adjacency over `n` nodes from a list of candidate pairs.
fn symmetric_adjacency() -> impl Strategy<Value = SparseAdjacency> {
    (1usize..10).prop_flat_map(|n| {
        prop::collection::btree_map((0..n, 0..n), 0.1f64..3.0, 0..20).prop_map(move |pairs| {
            let mut seen = std::collections::BTreeMap::new();
            for ((a, b), w) in pairs {
                seen.entry((a.min(b), a.max(b))).or_insert(w);
            }
            let mut edges = Vec::new();
            for ((a, b), w) in seen {
                edges.push((a, b, w));
                if a != b {
                    edges.push((b, a, w));
                }
            }
            SparseAdjacency::from_edges(n, edges, true).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalized_rows_have_unit_length(m in matrix(1..8, 1..6)) {
        prop_assume!(m.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6));
        let n = m.row_l2_normalize().unwrap();
        for row in n.iter_rows() {
            let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((len - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sparse_product_matches_dense(a in symmetric_adjacency(), seed in any::<u64>()) {
        let n = a.node_count();
        let mut rng = SeededRng::new(seed, "x");
        let x = DenseMatrix::from_fn(n, 3, |_, _| (rng.next_u32() % 1000) as f64 / 100.0 - 5.0);
        let sparse = a.matmul_dense(&x).unwrap();
        let dense = a.to_dense().matmul(&x).unwrap();
        prop_assert!(sparse.max_abs_diff(&dense) <= 1e-12);
    }

    #[test]
    fn full_top_k_is_the_mean(v in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let top = top_k_mean(&v, v.len()).unwrap();
        prop_assert!((top - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
    }

    #[test]
    fn identical_streams_repeat(seed in any::<u64>(), stream in "[a-z/0-9]{0,12}") {
        let mut a = SeededRng::new(seed, &stream);
        let mut b = SeededRng::new(seed, &stream);
        for _ in 0..16 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn matmul_square_mean_gradient_matches_differences(a in matrix(2..4, 2..4), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed, "b");
        let b = DenseMatrix::from_fn(a.cols(), 3, |_, _| (rng.next_u32() % 2000) as f64 / 1000.0 - 1.0);
        let value = |a: &DenseMatrix| {
            let mut t = Tape::new();
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            let p = t.matmul(va, vb).unwrap();
            let s = t.square(p).unwrap();
            let m = t.mean(s).unwrap();
            t.scalar(m)
        };
        let mut t = Tape::new();
        let (va, vb) = (t.leaf(a.clone()), t.constant(b.clone()));
        let p = t.matmul(va, vb).unwrap();
        let s = t.square(p).unwrap();
        let m = t.mean(s).unwrap();
        let grad = t.gradients_of(m, &[va]).unwrap().remove(0);
        let h = 1e-4;
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..a.len() {
            let mut up = a.clone();
            up.as_mut_slice()[i] += h;
            let mut down = a.clone();
            down.as_mut_slice()[i] -= h;
            let fd = (value(&up) - value(&down)) / (2.0 * h);
            diff += (fd - grad.as_slice()[i]).powi(2);
            scale += grad.as_slice()[i].powi(2);
        }
        prop_assert!(diff.sqrt() <= 1e-4 * scale.sqrt().max(1e-6));
    }
}
