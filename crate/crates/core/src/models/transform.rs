use rand::Rng;

use super::config::TransformConfig;
use super::forward::Forward;
use super::layers::{run_mlp, Activation, BatchNormSettings, DenseLayer, DenseOptions, Init};
use super::params::ParamStore;
use super::{batch_knn, global_pool};
use crate::edgeconv::{Aggregation, EdgeConv, EdgeFunction};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, NeighborGraph};
use crate::tensor::{Tensor, Var};

/// Predicts a 3×3 matrix per cloud and applies it to the coordinates.
///
/// The last layer starts at zero with an identity bias, so a freshly built
/// transformer leaves the input unchanged.
#[derive(Clone, Debug)]
pub struct SpatialTransform {
    edge: EdgeConv,
    embed: DenseLayer,
    head: Vec<DenseLayer>,
    output: DenseLayer,
    k: usize,
    self_loop: bool,
}

impl SpatialTransform {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &TransformConfig,
        k: usize,
        self_loop: bool,
        activation: Activation,
        bn: BatchNormSettings,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.edge_widths.is_empty() {
            return Err(Error::Config("transformer needs at least one edge MLP width".into()));
        }
        let hidden = DenseOptions::hidden(activation, bn);
        let edge = EdgeConv::new(
            store,
            &format!("{name}.edge"),
            3,
            &cfg.edge_widths,
            EdgeFunction::CentralizedAsym,
            Aggregation::Max,
            hidden,
            rng,
        )?;
        let embed = DenseLayer::new(store, &format!("{name}.embed"), edge.out_width(), cfg.embed_width, hidden, rng);
        let mut head = Vec::new();
        let mut prev = cfg.embed_width;
        for (l, &w) in cfg.head_widths.iter().enumerate() {
            head.push(DenseLayer::new(store, &format!("{name}.head{l}"), prev, w, hidden, rng));
            prev = w;
        }
        let out_opts = DenseOptions { init: Init::Zero, ..DenseOptions::output() };
        let output = DenseLayer::new(store, &format!("{name}.out"), prev, 9, out_opts, rng);
        let bias = output.bias.expect("output layer has a bias");
        store.get_mut(bias).data_mut().copy_from_slice(Tensor::identity(3).data());
        Ok(Self { edge, embed, head, output, k, self_loop })
    }

    /// `coords` holds `batch` clouds of 3-D points stacked row-wise. Returns
    /// the `batch × 3 × 3` matrices and the transformed coordinates.
    pub fn forward(&self, fwd: &mut Forward, coords: Var, batch: usize) -> Result<(Var, Var)> {
        let (rows, f) = fwd.tape.value(coords).dims2()?;
        if f != 3 {
            return Err(Error::dim(format!("spatial transformer expects 3 columns, got {f}")));
        }
        let n = rows / batch;
        let graphs = batch_knn(&fwd.tape, coords, batch, self.k, self.self_loop)?;
        let h = self.edge.forward(fwd, coords, &graphs)?;
        let h = self.embed.forward(fwd, h)?;
        let pooled = global_pool(&mut fwd.tape, h, batch, Aggregation::Max)?;
        let h = run_mlp(&self.head, fwd, pooled)?;
        let m = self.output.forward(fwd, h)?;
        let m = fwd.tape.reshape(m, &[batch, 3, 3])?;
        let pts = fwd.tape.reshape(coords, &[batch, n, 3])?;
        let moved = fwd.tape.batched_matmul(pts, m)?;
        let moved = fwd.tape.reshape(moved, &[rows, 3])?;
        Ok((m, moved))
    }

    /// Evaluation-mode transform of a single cloud: `(matrix, points·matrix)`.
    pub fn apply(&self, store: &ParamStore, points: &FeatureMatrix) -> Result<(Tensor, FeatureMatrix)> {
        let mut fwd = Forward::eval(store);
        let x = fwd.tape.constant(points.to_tensor())?;
        let (m, moved) = self.forward(&mut fwd, x, 1)?;
        let matrix = fwd.tape.value(m).clone().reshape(&[3, 3])?;
        Ok((matrix, FeatureMatrix::from_tensor(fwd.tape.value(moved))?))
    }

    /// The graph the transformer builds on its input.
    pub fn input_graph(&self, points: &FeatureMatrix) -> Result<NeighborGraph> {
        crate::graph::knn_graph(points, self.k, self.self_loop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_transformer_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = SpatialTransform::new(
            &mut store,
            "t",
            &TransformConfig::desk(),
            4,
            true,
            Activation::LeakyRelu(0.2),
            BatchNormSettings::default(),
            &mut rng,
        )
        .unwrap();
        let pts = FeatureMatrix::from_rows(&[
            vec![0.1, 0.2, 0.3],
            vec![-0.4, 0.5, 0.0],
            vec![0.9, -0.1, 0.2],
            vec![0.0, 0.0, -0.7],
            vec![0.3, 0.3, 0.3],
        ])
        .unwrap();
        let (m, moved) = t.apply(&store, &pts).unwrap();
        assert_eq!(m.data(), Tensor::identity(3).data());
        assert_eq!(moved.values(), pts.values());
    }
}
