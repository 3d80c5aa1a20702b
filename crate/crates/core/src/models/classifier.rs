use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ClassifierConfig;
use super::forward::Forward;
use super::layers::{Activation, DenseLayer, DenseOptions};
use super::params::ParamStore;
use super::transform::SpatialTransform;
use super::{batch_knn, global_pool, identity_graphs, stack_clouds};
use crate::edgeconv::{EdgeConv, EdgeFunction};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, NeighborGraph};
use crate::tensor::{Real, Tensor, Var};

/// Classification network: four EdgeConv stages whose outputs are
/// concatenated, a shared embedding, global pooling and a dense head.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    transform: Option<SpatialTransform>,
    stages: Vec<EdgeConv>,
    embed: DenseLayer,
    head: Vec<DenseLayer>,
    output: DenseLayer,
}

/// Tape handles produced by one classifier pass.
pub struct ClassifierOutput {
    /// `B × classes`.
    pub logits: Var,
    /// Graph used by each stage, one per cloud.
    pub graphs: Vec<Vec<NeighborGraph>>,
    /// Input to the first stage (after the optional transformer).
    pub stage_input: Var,
    /// Output of each EdgeConv stage, `(B·n) × width`.
    pub stage_features: Vec<Var>,
    /// `B × 3 × 3` transformer matrices, when enabled.
    pub transform: Option<Var>,
}

impl Classifier {
    /// Builds the network with Glorot-initialised weights drawn from `seed`.
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let act = Activation::LeakyRelu(config.leaky_slope);
        let hidden = DenseOptions::hidden(act, config.batch_norm);
        let transform = if config.use_spatial_transformer {
            if config.input_width != 3 {
                return Err(Error::Config("the spatial transformer needs 3-D input points".into()));
            }
            Some(SpatialTransform::new(
                &mut store,
                "transform",
                &config.transform,
                config.k,
                config.self_loop,
                act,
                config.batch_norm,
                &mut rng,
            )?)
        } else {
            None
        };
        let function = config.edge_function();
        let mut stages = Vec::new();
        let mut prev = config.input_width;
        for (s, &w) in config.edgeconv_widths.iter().enumerate() {
            let stage = EdgeConv::new(
                &mut store,
                &format!("edgeconv{}", s + 1),
                prev,
                &[w],
                function,
                config.aggregation,
                hidden,
                &mut rng,
            )?;
            prev = w;
            stages.push(stage);
        }
        let concat: usize = config.edgeconv_widths.iter().sum();
        let embed = DenseLayer::new(&mut store, "embed", concat, config.embed_width, hidden, &mut rng);
        let mut head = Vec::new();
        let mut prev = config.embed_width;
        for (l, &w) in config.head_widths.iter().enumerate() {
            head.push(DenseLayer::new(&mut store, &format!("head{l}"), prev, w, hidden, &mut rng));
            prev = w;
        }
        let output = DenseLayer::new(&mut store, "output", prev, config.num_classes, DenseOptions::output(), &mut rng);
        Ok(Self { config, store, transform, stages, embed, head, output })
    }

    /// The graph-independent baseline with otherwise identical layout.
    pub fn pointnet_baseline(config: ClassifierConfig, seed: u64) -> Result<Self> {
        Self::new(config.pointnet_baseline(), seed)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn has_transform(&self) -> bool {
        self.transform.is_some()
    }

    /// Runs the network on a batch of equally sized clouds. `fwd` must have
    /// been created over `self.store`.
    pub fn forward(&self, fwd: &mut Forward, clouds: &[&FeatureMatrix]) -> Result<ClassifierOutput> {
        let (stacked, _) = stack_clouds(clouds)?;
        let x = fwd.tape.constant(stacked)?;
        self.forward_var(fwd, x, clouds.len())
    }

    /// Same as [`Classifier::forward`] on points already on the tape,
    /// stacked row-wise as `[batch·n × input_width]`; gradients then reach
    /// the coordinates as well.
    pub fn forward_var(&self, fwd: &mut Forward, x: Var, batch: usize) -> Result<ClassifierOutput> {
        let (rows, width) = fwd.tape.value(x).dims2()?;
        if width != self.config.input_width {
            return Err(Error::dim(format!(
                "classifier expects {} input channels, got {width}",
                self.config.input_width
            )));
        }
        if batch == 0 || rows % batch != 0 {
            return Err(Error::dim(format!("{rows} rows do not split into {batch} clouds")));
        }
        let n = rows / batch;
        let mut x = x;
        let needs_graph = self.config.edge_function() != EdgeFunction::GlobalOnly;
        if (needs_graph || self.transform.is_some()) && n < self.config.k {
            return Err(Error::param(format!("k = {} exceeds the {n} points per cloud", self.config.k)));
        }
        let mut matrix = None;
        if let Some(t) = &self.transform {
            let (m, moved) = t.forward(fwd, x, batch)?;
            matrix = Some(m);
            x = moved;
        }
        let stage_input = x;
        let graph_for = |fwd: &Forward, x: Var| -> Result<Vec<NeighborGraph>> {
            if needs_graph {
                batch_knn(&fwd.tape, x, batch, self.config.k, self.config.self_loop)
            } else {
                Ok(identity_graphs(batch, n))
            }
        };
        let input_graphs = graph_for(fwd, x)?;
        let mut graphs = Vec::with_capacity(self.stages.len());
        let mut features = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let g = if s == 0 || !self.config.dynamic_graph { input_graphs.clone() } else { graph_for(fwd, x)? };
            x = stage.forward(fwd, x, &g)?;
            graphs.push(g);
            features.push(x);
        }
        let cat = fwd.tape.concat(&features, 1)?;
        let h = self.embed.forward(fwd, cat)?;
        let mut h = global_pool(&mut fwd.tape, h, batch, self.config.global_pool)?;
        for layer in &self.head {
            h = layer.forward(fwd, h)?;
            h = fwd.dropout(h, self.config.dropout_keep)?;
        }
        let logits = self.output.forward(fwd, h)?;
        Ok(ClassifierOutput { logits, graphs, stage_input, stage_features: features, transform: matrix })
    }

    /// Evaluation-mode logits for a single cloud.
    pub fn logits(&self, cloud: &FeatureMatrix) -> Result<Vec<Real>> {
        let mut fwd = Forward::eval(&self.store);
        let out = self.forward(&mut fwd, &[cloud])?;
        Ok(fwd.tape.value(out.logits).data().to_vec())
    }

    /// Evaluation-mode logits for a batch, `B × classes`.
    pub fn logits_batch(&self, clouds: &[&FeatureMatrix]) -> Result<Tensor> {
        let mut fwd = Forward::eval(&self.store);
        let out = self.forward(&mut fwd, clouds)?;
        Ok(fwd.tape.value(out.logits).clone())
    }

    pub fn predict(&self, cloud: &FeatureMatrix) -> Result<usize> {
        Ok(argmax(&self.logits(cloud)?))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[Real]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
