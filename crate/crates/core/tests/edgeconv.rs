use dgcnn::edgeconv::{asym_edge_feature, edgeconv_forward, Aggregation, EdgeConv, EdgeFunction};
use dgcnn::graph::knn_graph;
use dgcnn::models::{Activation, BatchNormSettings, DenseOptions, Init, ParamStore};
use dgcnn::{FeatureMatrix, NeighborGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FUNCTIONS: [EdgeFunction; 6] = [
    EdgeFunction::GlobalOnly,
    EdgeFunction::NeighborOnly,
    EdgeFunction::NeighborGaussian { bandwidth: 1.0 },
    EdgeFunction::LocalOnly,
    EdgeFunction::CentralizedAsym,
    EdgeFunction::PairConcat,
];

fn layer(seed: u64, function: EdgeFunction, aggregation: Aggregation) -> (ParamStore, EdgeConv) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = DenseOptions::hidden(Activation::LeakyRelu(0.2), BatchNormSettings::default());
    let l = EdgeConv::new(&mut store, "e", 3, &[8, 6], function, aggregation, opts, &mut rng).unwrap();
    (store, l)
}

fn cloud(seed: u64, n: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(n, 3, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_diff(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn strategy() -> impl Strategy<Value = (usize, Aggregation, u64)> {
    (0..FUNCTIONS.len(), prop_oneof![Just(Aggregation::Max), Just(Aggregation::Sum)], any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffling_a_neighbour_row_is_invisible((f, agg, seed) in strategy()) {
        let (store, l) = layer(seed, FUNCTIONS[f], agg);
        let x = cloud(seed ^ 1, 30);
        let g = knn_graph(&x, 7, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut table = g.neighbors().to_vec();
        for row in table.chunks_mut(7) {
            // the self edge stays in front
            row[1..].shuffle(&mut rng);
        }
        let shuffled = NeighborGraph::from_table(30, 7, table, true).unwrap();
        let a = edgeconv_forward(&x, &g, &l, &store).unwrap();
        let b = edgeconv_forward(&x, &shuffled, &l, &store).unwrap();
        match agg {
            Aggregation::Max => prop_assert_eq!(a.values(), b.values()),
            Aggregation::Sum => prop_assert!(max_diff(&a, &b) < 1e-12),
        }
    }

    #[test]
    fn whole_cloud_permutation_is_equivariant((f, agg, seed) in strategy()) {
        let (store, l) = layer(seed, FUNCTIONS[f], agg);
        let x = cloud(seed ^ 3, 25);
        let g = knn_graph(&x, 5, true).unwrap();
        let mut order: Vec<usize> = (0..25).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 4));
        let y = edgeconv_forward(&x, &g, &l, &store).unwrap();
        let yp = edgeconv_forward(&x.select_rows(&order).unwrap(), &g.relabeled(&order).unwrap(), &l, &store).unwrap();
        prop_assert!(max_diff(&yp, &y.select_rows(&order).unwrap()) < 1e-12);
    }

    #[test]
    fn global_only_ignores_the_graph(agg in prop_oneof![Just(Aggregation::Max), Just(Aggregation::Sum)], seed in any::<u64>()) {
        let (store, l) = layer(seed, EdgeFunction::GlobalOnly, agg);
        let x = cloud(seed ^ 5, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        let mut random_graph = || NeighborGraph::from_table(20, 4, (0..80).map(|_| rng.random_range(0..20)).collect(), false).unwrap();
        let a = edgeconv_forward(&x, &random_graph(), &l, &store).unwrap();
        let b = edgeconv_forward(&x, &random_graph(), &l, &store).unwrap();
        prop_assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn zero_phi_block_gives_translation_invariance(seed in any::<u64>(), t in prop::collection::vec(-4.0..4.0f64, 3)) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = DenseOptions { batch_norm: None, activation: Activation::LeakyRelu(0.2), bias: false, init: Init::Glorot };
        let l = EdgeConv::new(&mut store, "t", 3, &[8, 4], EdgeFunction::CentralizedAsym, Aggregation::Max, opts, &mut rng).unwrap();
        let w = store.get_mut(l.mlp[0].weight);
        let cols = w.shape()[1];
        w.data_mut()[..3 * cols].fill(0.0);
        let x = cloud(seed ^ 7, 32);
        let g = knn_graph(&x, 6, true).unwrap();
        let a = edgeconv_forward(&x, &g, &l, &store).unwrap();
        let b = edgeconv_forward(&x.translated(&t).unwrap(), &g, &l, &store).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-9);
    }
}

/// One linear layer with exact ReLU against `ReLU(θ·(x_j - x_i) + φ·x_i)`
/// evaluated edge by edge, on 1000 edges.
#[test]
fn shared_mlp_matches_the_per_edge_formula() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let opts = DenseOptions { batch_norm: None, activation: Activation::Relu, bias: false, init: Init::Glorot };
    let l = EdgeConv::new(&mut store, "m", 3, &[5], EdgeFunction::CentralizedAsym, Aggregation::Max, opts, &mut rng).unwrap();
    let x = cloud(18, 1000);
    let table: Vec<usize> = (0..1000).map(|i| (i * 7 + 3) % 1000).collect();
    let g = NeighborGraph::from_table(1000, 1, table.clone(), false).unwrap();
    let y = edgeconv_forward(&x, &g, &l, &store).unwrap();

    let w = store.get(l.mlp[0].weight);
    // weight rows 0..3 multiply x_i (φ), rows 3..6 the displacement (θ);
    // the formula wants them as 5 × 3
    let block = |first: usize| {
        let t: Vec<f64> = (0..5).flat_map(|m| (0..3).map(move |c| w.at(&[first + c, m]))).collect();
        dgcnn::Tensor::new(vec![5, 3], t).unwrap()
    };
    let (phi, theta) = (block(0), block(3));
    for (i, &j) in table.iter().enumerate() {
        let want: Vec<f64> = asym_edge_feature(x.row(i), x.row(j), &theta, &phi).unwrap().into_iter().map(|v| v.max(0.0)).collect();
        for (a, b) in y.row(i).iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "edge {i}->{j}: {a} vs {b}");
        }
    }
}
