//! Network assemblies: the classification network, the part-segmentation
//! network, the 3×3 spatial transformer and the PointNet-style baseline.

mod classifier;
mod config;
mod forward;
mod layers;
mod params;
mod segmenter;
mod transform;

pub use classifier::{argmax, Classifier, ClassifierOutput};
pub use config::{ClassifierConfig, SegmenterConfig, TransformConfig};
pub use forward::{Forward, ForwardRecord};
pub use layers::{run_mlp, Activation, BatchNorm, BatchNormSettings, DenseLayer, DenseOptions, Init};
pub use params::{glorot_uniform, ParamEntry, ParamId, ParamStore};
pub use segmenter::{Segmenter, SegmenterOutput};
pub use transform::SpatialTransform;

use crate::error::{Error, Result};
use crate::graph::{knn_rows, FeatureMatrix, NeighborGraph};
use crate::tensor::{Tape, Tensor, Var};

/// Stacks equally sized clouds row-wise into a `(B·n) × f` tensor.
pub(crate) fn stack_clouds(clouds: &[&FeatureMatrix]) -> Result<(Tensor, usize)> {
    let first = clouds.first().ok_or_else(|| Error::param("empty batch"))?;
    let (n, f) = (first.n(), first.f());
    let mut data = Vec::with_capacity(clouds.len() * n * f);
    for c in clouds {
        if c.n() != n || c.f() != f {
            return Err(Error::dim("clouds in a batch must share point count and width"));
        }
        data.extend_from_slice(c.values());
    }
    Ok((Tensor::new(vec![clouds.len() * n, f], data)?, n))
}

/// One k-NN graph per cloud of a stacked feature matrix on the tape.
pub(crate) fn batch_knn(tape: &Tape, x: Var, batch: usize, k: usize, self_loop: bool) -> Result<Vec<NeighborGraph>> {
    let (rows, f) = tape.value(x).dims2()?;
    let n = rows / batch;
    let values = tape.value(x).data();
    (0..batch)
        .map(|b| knn_rows(&values[b * n * f..(b + 1) * n * f], n, f, k, self_loop))
        .collect()
}

/// Self-loop-only graphs, for edge functions that never look at neighbours.
pub(crate) fn identity_graphs(batch: usize, n: usize) -> Vec<NeighborGraph> {
    let g = NeighborGraph::from_table(n, 1, (0..n).collect(), true).expect("identity graph is valid");
    vec![g; batch]
}

/// Max or sum over the points of each cloud: `(B·n) × C -> B × C`.
pub(crate) fn global_pool(
    tape: &mut Tape,
    x: Var,
    batch: usize,
    pool: crate::edgeconv::Aggregation,
) -> Result<Var> {
    let (rows, _) = tape.value(x).dims2()?;
    match pool {
        crate::edgeconv::Aggregation::Max => Ok(tape.max_row_groups(x, rows / batch)?.0),
        crate::edgeconv::Aggregation::Sum => tape.sum_row_groups(x, rows / batch),
    }
}
