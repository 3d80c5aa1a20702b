//! The EdgeConv operator.
//!
//! For every directed edge `(i, j)` of a neighbour graph an edge input is
//! formed from `x_i` and `x_j` according to an [`EdgeFunction`], pushed
//! through a shared MLP, and reduced per centre point with a channel-wise
//! symmetric [`Aggregation`]. Edge tensors are materialised as
//! `(points·k) × width` matrices, so memory grows as `O(n·k·width)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{batch_edge_index, FeatureMatrix, NeighborGraph};
use crate::models::{run_mlp, DenseLayer, DenseOptions, Forward, ParamStore};
use crate::tensor::{Real, Tape, Tensor, Var};

/// How the edge input is built from a centre `x_i` and a neighbour `x_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeFunction {
    /// `x_i` only; the graph is irrelevant (PointNet-style).
    GlobalOnly,
    /// `x_j` only.
    NeighborOnly,
    /// `x_j` only, with the MLP output weighted by
    /// `exp(-|x_i - x_j|² / (2·bandwidth²))`.
    NeighborGaussian { bandwidth: Real },
    /// `x_j - x_i` only.
    LocalOnly,
    /// `x_i ⊕ (x_j - x_i)`.
    #[default]
    CentralizedAsym,
    /// `x_i ⊕ x_j`, the uncentred input used by the centralisation ablation.
    PairConcat,
}

impl EdgeFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EdgeFunction::NeighborGaussian { bandwidth } if !(bandwidth > 0.0) => Err(Error::param(
                format!("gaussian bandwidth must be positive, got {bandwidth}"),
            )),
            _ => Ok(()),
        }
    }

    /// Width of the edge input for `f`-wide point features.
    pub fn input_width(&self, f: usize) -> usize {
        match self {
            EdgeFunction::CentralizedAsym | EdgeFunction::PairConcat => 2 * f,
            _ => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    Sum,
}

fn check_rows(tape: &Tape, x: Var, graphs: &[NeighborGraph]) -> Result<usize> {
    let (rows, _) = tape.value(x).dims2()?;
    let n = graphs.first().map_or(0, NeighborGraph::n);
    if graphs.is_empty() || rows != n * graphs.len() {
        return Err(Error::dim(format!(
            "{rows} feature rows do not match {} graphs of {n} points",
            graphs.len()
        )));
    }
    Ok(n)
}

/// Edge inputs for a batch of clouds stacked row-wise in `x`; one row per
/// edge, edges ordered by centre and then neighbour rank.
pub fn edge_inputs(tape: &mut Tape, x: Var, graphs: &[NeighborGraph], function: EdgeFunction) -> Result<Var> {
    check_rows(tape, x, graphs)?;
    function.validate()?;
    let (centers, neighbors) = batch_edge_index(graphs)?;
    match function {
        EdgeFunction::GlobalOnly => tape.gather_rows(x, &centers),
        EdgeFunction::NeighborOnly | EdgeFunction::NeighborGaussian { .. } => tape.gather_rows(x, &neighbors),
        EdgeFunction::LocalOnly => {
            let xi = tape.gather_rows(x, &centers)?;
            let xj = tape.gather_rows(x, &neighbors)?;
            tape.sub(xj, xi)
        }
        EdgeFunction::CentralizedAsym => {
            let xi = tape.gather_rows(x, &centers)?;
            let xj = tape.gather_rows(x, &neighbors)?;
            let d = tape.sub(xj, xi)?;
            tape.concat(&[xi, d], 1)
        }
        EdgeFunction::PairConcat => {
            let xi = tape.gather_rows(x, &centers)?;
            let xj = tape.gather_rows(x, &neighbors)?;
            tape.concat(&[xi, xj], 1)
        }
    }
}

/// Reduces `(points·k) × M` edge features to `points × M`.
pub fn aggregate(tape: &mut Tape, edges: Var, points: usize, k: usize, agg: Aggregation) -> Result<Var> {
    let (rows, _) = tape.value(edges).dims2()?;
    if k == 0 || rows != points * k {
        return Err(Error::dim(format!("{rows} edge rows do not split into {points} x {k}")));
    }
    match agg {
        Aggregation::Max => Ok(tape.max_row_groups(edges, k)?.0),
        Aggregation::Sum => tape.sum_row_groups(edges, k),
    }
}

/// One EdgeConv stage: edge function, shared MLP, aggregation.
#[derive(Clone, Debug)]
pub struct EdgeConv {
    pub mlp: Vec<DenseLayer>,
    pub function: EdgeFunction,
    pub aggregation: Aggregation,
    pub in_width: usize,
}

impl EdgeConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        widths: &[usize],
        function: EdgeFunction,
        aggregation: Aggregation,
        opts: DenseOptions,
        rng: &mut R,
    ) -> Result<Self> {
        function.validate()?;
        if widths.is_empty() {
            return Err(Error::param("EdgeConv needs at least one MLP layer"));
        }
        let mut mlp = Vec::with_capacity(widths.len());
        let mut prev = function.input_width(in_width);
        for (l, &w) in widths.iter().enumerate() {
            mlp.push(DenseLayer::new(store, &format!("{name}.mlp{l}"), prev, w, opts, rng));
            prev = w;
        }
        Ok(Self { mlp, function, aggregation, in_width })
    }

    pub fn out_width(&self) -> usize {
        self.mlp.last().map_or(0, |l| l.out_width)
    }

    /// Applies the stage to a batch of clouds stacked row-wise in `x`, one
    /// graph per cloud.
    pub fn forward(&self, fwd: &mut Forward, x: Var, graphs: &[NeighborGraph]) -> Result<Var> {
        let n = check_rows(&fwd.tape, x, graphs)?;
        let points = n * graphs.len();
        let k = graphs[0].k();
        if self.function == EdgeFunction::GlobalOnly && self.aggregation == Aggregation::Max {
            // Every edge of point i carries MLP(x_i); the max of k copies is
            // MLP(x_i) itself.
            return run_mlp(&self.mlp, fwd, x);
        }
        let first = self.first_layer_edges(fwd, x, graphs)?;
        let first = self.mlp[0].finish(fwd, first)?;
        let mut h = run_mlp(&self.mlp[1..], fwd, first)?;
        if let EdgeFunction::NeighborGaussian { bandwidth } = self.function {
            let (centers, neighbors) = batch_edge_index(graphs)?;
            let xi = fwd.tape.gather_rows(x, &centers)?;
            let xj = fwd.tape.gather_rows(x, &neighbors)?;
            let d = fwd.tape.sub(xj, xi)?;
            let w = fwd.tape.gaussian_weight(d, bandwidth)?;
            h = fwd.tape.scale_rows(h, w)?;
        }
        aggregate(&mut fwd.tape, h, points, k, self.aggregation)
    }
}

impl EdgeConv {
    /// Linear part of the first MLP layer for every edge.
    ///
    /// The edge input is linear in `x_i` and `x_j`, so `e_ij·W` splits into
    /// per-point products that are gathered per edge: for the centralised
    /// form `[x_i, x_j - x_i]·[W₁; W₂] = x_i·(W₁ - W₂) + x_j·W₂`. This costs
    /// `O(n·F·M)` multiplications instead of `O(n·k·F·M)`.
    fn first_layer_edges(&self, fwd: &mut Forward, x: Var, graphs: &[NeighborGraph]) -> Result<Var> {
        let layer = &self.mlp[0];
        let f = fwd.tape.shape(x)[1];
        if layer.in_width != self.function.input_width(f) {
            return Err(Error::dim(format!(
                "EdgeConv expects {}-wide points, got {f}",
                self.in_width
            )));
        }
        let (centers, neighbors) = batch_edge_index(graphs)?;
        let w = fwd.param(layer.weight)?;
        let tape = &mut fwd.tape;
        match self.function {
            EdgeFunction::GlobalOnly => {
                let p = tape.matmul(x, w)?;
                tape.gather_rows(p, &centers)
            }
            EdgeFunction::NeighborOnly | EdgeFunction::NeighborGaussian { .. } => {
                let p = tape.matmul(x, w)?;
                tape.gather_rows(p, &neighbors)
            }
            EdgeFunction::LocalOnly => {
                let p = tape.matmul(x, w)?;
                let pj = tape.gather_rows(p, &neighbors)?;
                let pi = tape.gather_rows(p, &centers)?;
                tape.sub(pj, pi)
            }
            EdgeFunction::CentralizedAsym | EdgeFunction::PairConcat => {
                let top: Vec<usize> = (0..f).collect();
                let bottom: Vec<usize> = (f..2 * f).collect();
                let w1 = tape.gather_rows(w, &top)?;
                let w2 = tape.gather_rows(w, &bottom)?;
                let wi = if self.function == EdgeFunction::CentralizedAsym { tape.sub(w1, w2)? } else { w1 };
                let pi = tape.matmul(x, wi)?;
                let pj = tape.matmul(x, w2)?;
                tape.gather_add(pi, &centers, pj, &neighbors)
            }
        }
    }

    /// The stage evaluated literally: materialised edge inputs pushed
    /// through the shared MLP. Used to check the factored path.
    pub fn forward_reference(&self, fwd: &mut Forward, x: Var, graphs: &[NeighborGraph]) -> Result<Var> {
        let n = check_rows(&fwd.tape, x, graphs)?;
        let inputs = edge_inputs(&mut fwd.tape, x, graphs, self.function)?;
        let mut h = run_mlp(&self.mlp, fwd, inputs)?;
        if let EdgeFunction::NeighborGaussian { bandwidth } = self.function {
            let (centers, neighbors) = batch_edge_index(graphs)?;
            let xi = fwd.tape.gather_rows(x, &centers)?;
            let xj = fwd.tape.gather_rows(x, &neighbors)?;
            let d = fwd.tape.sub(xj, xi)?;
            let w = fwd.tape.gaussian_weight(d, bandwidth)?;
            h = fwd.tape.scale_rows(h, w)?;
        }
        aggregate(&mut fwd.tape, h, n * graphs.len(), graphs[0].k(), self.aggregation)
    }
}

/// Evaluation-mode EdgeConv on a single cloud.
pub fn edgeconv_forward(
    x: &FeatureMatrix,
    graph: &NeighborGraph,
    layer: &EdgeConv,
    store: &ParamStore,
) -> Result<FeatureMatrix> {
    if graph.n() != x.n() {
        return Err(Error::dim("graph and features cover different point counts"));
    }
    let mut fwd = Forward::eval(store);
    let xv = fwd.tape.constant(x.to_tensor())?;
    let y = layer.forward(&mut fwd, xv, std::slice::from_ref(graph))?;
    FeatureMatrix::from_tensor(fwd.tape.value(y))
}

/// Single-layer asymmetric edge feature
/// `e_m = ReLU(θ_m · (x_j - x_i) + φ_m · x_i)` with `θ, φ` given as `M × F`
/// row matrices.
pub fn asym_edge_feature(x_i: &[Real], x_j: &[Real], theta: &Tensor, phi: &Tensor) -> Result<Vec<Real>> {
    let (m, f) = theta.dims2()?;
    if phi.shape() != [m, f] || x_i.len() != f || x_j.len() != f {
        return Err(Error::dim("edge feature operands have inconsistent widths"));
    }
    Ok((0..m)
        .map(|c| {
            let t = theta.row(c);
            let p = phi.row(c);
            let mut acc = 0.0;
            for d in 0..f {
                acc += t[d] * (x_j[d] - x_i[d]) + p[d] * x_i[d];
            }
            acc.max(0.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::knn_graph;
    use crate::models::{Activation, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap()
    }

    fn plain(activation: Activation) -> DenseOptions {
        DenseOptions { batch_norm: None, activation, bias: false, init: Init::Zero }
    }

    fn single_weight_layer(activation: Activation, function: EdgeFunction, w: &[Real]) -> (ParamStore, EdgeConv) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = EdgeConv::new(&mut store, "ec", 1, &[1], function, Aggregation::Max, plain(activation), &mut rng)
            .unwrap();
        store.get_mut(layer.mlp[0].weight).data_mut().copy_from_slice(w);
        (store, layer)
    }

    #[test]
    fn local_only_line_fixture() {
        let x = line();
        let g = knn_graph(&x, 2, false).unwrap();
        let (store, layer) = single_weight_layer(Activation::Identity, EdgeFunction::LocalOnly, &[1.0]);
        let y = edgeconv_forward(&x, &g, &layer, &store).unwrap();
        assert_eq!(y.values(), &[3.0, 2.0, -2.0]);
        let (store, layer) = single_weight_layer(Activation::Relu, EdgeFunction::LocalOnly, &[1.0]);
        let y = edgeconv_forward(&x, &g, &layer, &store).unwrap();
        assert_eq!(y.values(), &[3.0, 2.0, 0.0]);
    }

    #[test]
    fn self_edge_input_has_zero_difference() {
        let x = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![5.0, -1.0]]).unwrap();
        let g = knn_graph(&x, 1, true).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.to_tensor()).unwrap();
        let e = edge_inputs(&mut tape, xv, &[g], EdgeFunction::CentralizedAsym).unwrap();
        assert_eq!(tape.value(e).data(), &[1.0, 2.0, 0.0, 0.0, 5.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn local_only_difference_of_two_points() {
        let x = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let g = knn_graph(&x, 1, false).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.to_tensor()).unwrap();
        let e = edge_inputs(&mut tape, xv, &[g], EdgeFunction::LocalOnly).unwrap();
        assert_eq!(tape.value(e).row(0), &[3.0, 4.0]);
    }

    #[test]
    fn asym_reference_values() {
        let theta = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let phi = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        assert_eq!(asym_edge_feature(&[2.0], &[5.0], &theta, &phi).unwrap(), vec![4.0]);
        // Equal endpoints leave only the φ term.
        assert_eq!(asym_edge_feature(&[2.0], &[2.0], &theta, &phi).unwrap(), vec![1.0]);
    }

    #[test]
    fn aggregate_max_and_sum() {
        let mut tape = Tape::new();
        // Two points, k = 2, two channels.
        let e = tape
            .constant(Tensor::new(vec![4, 2], vec![1.0, 2.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let m = aggregate(&mut tape, e, 2, 2, Aggregation::Max).unwrap();
        assert_eq!(tape.value(m).data(), &[5.0, 2.0, 0.0, 0.0]);
        let s = aggregate(&mut tape, e, 2, 2, Aggregation::Sum).unwrap();
        assert_eq!(tape.value(s).data(), &[6.0, 2.0, 0.0, 0.0]);
        let single = aggregate(&mut tape, e, 4, 1, Aggregation::Max).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(e).data());
    }

    #[test]
    fn factored_first_layer_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = FeatureMatrix::new(12, 3, (0..36).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect())
            .unwrap();
        let g = knn_graph(&x, 4, true).unwrap();
        for function in [
            EdgeFunction::GlobalOnly,
            EdgeFunction::NeighborOnly,
            EdgeFunction::NeighborGaussian { bandwidth: 0.7 },
            EdgeFunction::LocalOnly,
            EdgeFunction::CentralizedAsym,
            EdgeFunction::PairConcat,
        ] {
            for agg in [Aggregation::Max, Aggregation::Sum] {
                let mut store = ParamStore::new();
                let opts = DenseOptions { batch_norm: None, activation: Activation::LeakyRelu(0.2), bias: true, init: Init::Glorot };
                let layer = EdgeConv::new(&mut store, "ec", 3, &[5, 4], function, agg, opts, &mut rng).unwrap();
                let mut fwd = Forward::eval(&store);
                let xv = fwd.tape.constant(x.to_tensor()).unwrap();
                let fast = layer.forward(&mut fwd, xv, std::slice::from_ref(&g)).unwrap();
                let slow = layer.forward_reference(&mut fwd, xv, std::slice::from_ref(&g)).unwrap();
                let diff = fwd.tape.value(fast).max_abs_diff(fwd.tape.value(slow));
                assert!(diff < 1e-12, "{function:?} {agg:?}: {diff}");
            }
        }
    }

    #[test]
    fn gaussian_bandwidth_must_be_positive() {
        assert!(EdgeFunction::NeighborGaussian { bandwidth: 0.0 }.validate().is_err());
        assert!(EdgeFunction::NeighborGaussian { bandwidth: 0.5 }.validate().is_ok());
    }

    #[test]
    fn mismatched_graph_is_rejected() {
        let x = line();
        let other = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let g = knn_graph(&other, 1, false).unwrap();
        let (store, layer) = single_weight_layer(Activation::Identity, EdgeFunction::LocalOnly, &[1.0]);
        assert!(matches!(edgeconv_forward(&x, &g, &layer, &store), Err(Error::Dimension(_))));
    }
}
