use dgcnn::graph::{knn_graph, pairwise_sq_distances};
use dgcnn::{Error, FeatureMatrix};
use proptest::prelude::*;

/// Exhaustive construction: direct squared distances, sorted by
/// (distance, index).
fn brute_force(x: &FeatureMatrix, k: usize, self_loop: bool) -> Vec<usize> {
    let n = x.n();
    let mut table = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if self_loop {
            table.push(i);
            table.extend(cand.iter().take(k - 1).map(|c| c.1));
        } else {
            table.extend(cand.iter().take(k).map(|c| c.1));
        }
    }
    table
}

/// Points on a coarse lattice, so distances are exact and ties common.
fn lattice_cloud(max_n: usize, f: usize) -> impl Strategy<Value = FeatureMatrix> {
    (2..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-8i32..8, n * f)
            .prop_map(move |v| FeatureMatrix::new(n, f, v.into_iter().map(|c| f64::from(c) * 0.25).collect()).unwrap())
    })
}

fn real_cloud(max_n: usize, f: usize) -> impl Strategy<Value = FeatureMatrix> {
    (2..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-1.0..1.0f64, n * f).prop_map(move |v| FeatureMatrix::new(n, f, v).unwrap())
    })
}

#[test]
fn hand_fixture_with_ties() {
    // 0 and 2 are equidistant from 1; the lower index wins
    let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![4.0]]).unwrap();
    let g = knn_graph(&x, 2, false).unwrap();
    assert_eq!(g.neighbors(), &[1, 2, 0, 2, 1, 0, 2, 1]);
    let g = knn_graph(&x, 2, true).unwrap();
    assert_eq!(g.neighbors(), &[0, 1, 1, 0, 2, 1, 3, 2]);
    assert!(matches!(knn_graph(&x, 4, false), Err(Error::Parameter(_))));
    assert!(knn_graph(&x, 4, true).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_brute_force(x in prop_oneof![lattice_cloud(24, 3), real_cloud(24, 4)], self_loop in any::<bool>(), kf in 0.0..1.0f64) {
        let n = x.n();
        let max_k = if self_loop { n } else { n - 1 };
        let k = 1 + ((kf * max_k as f64) as usize).min(max_k - 1);
        let g = knn_graph(&x, k, self_loop).unwrap();
        prop_assert_eq!(g.neighbors(), &brute_force(&x, k, self_loop)[..]);
    }

    #[test]
    fn permutation_relabels_the_graph(x in real_cloud(30, 3), seed in any::<u64>(), self_loop in any::<bool>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let n = x.n();
        let k = (n - 1).min(5);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let g = knn_graph(&x, k, self_loop).unwrap();
        let gp = knn_graph(&x.select_rows(&order).unwrap(), k, self_loop).unwrap();
        prop_assert_eq!(gp, g.relabeled(&order).unwrap());
    }

    #[test]
    fn translation_leaves_the_graph_unchanged(x in lattice_cloud(30, 3), t in prop::collection::vec(-16i32..16, 3)) {
        let t: Vec<f64> = t.into_iter().map(|v| f64::from(v) * 0.5).collect();
        let k = (x.n() - 1).min(6);
        let moved = x.translated(&t).unwrap();
        prop_assert_eq!(knn_graph(&moved, k, true).unwrap(), knn_graph(&x, k, true).unwrap());
        prop_assert_eq!(knn_graph(&moved, k, false).unwrap(), knn_graph(&x, k, false).unwrap());
    }

    #[test]
    fn self_distance_is_zero(x in real_cloud(40, 5)) {
        let d = pairwise_sq_distances(&x);
        for i in 0..x.n() {
            prop_assert_eq!(d.at(&[i, i]), 0.0);
        }
        prop_assert!(d.data().iter().all(|&v| v >= 0.0));
    }
}
