use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SegmenterConfig;
use super::forward::Forward;
use super::layers::{Activation, DenseLayer, DenseOptions};
use super::params::ParamStore;
use super::transform::SpatialTransform;
use super::{batch_knn, global_pool, identity_graphs, stack_clouds};
use crate::edgeconv::{EdgeConv, EdgeFunction};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, NeighborGraph};
use crate::tensor::{Real, Tensor, Var};

/// Part-segmentation network. Per-point stage features are joined with the
/// pooled global descriptor (and an optional category one-hot) before a
/// point-wise head predicts part logits.
#[derive(Clone, Debug)]
pub struct Segmenter {
    pub config: SegmenterConfig,
    pub store: ParamStore,
    transform: Option<SpatialTransform>,
    stages: Vec<EdgeConv>,
    embed: DenseLayer,
    head: Vec<DenseLayer>,
    output: DenseLayer,
}

pub struct SegmenterOutput {
    /// `(B·n) × parts`.
    pub logits: Var,
    pub graphs: Vec<Vec<NeighborGraph>>,
    pub stage_input: Var,
    pub stage_features: Vec<Var>,
    pub transform: Option<Var>,
}

impl Segmenter {
    pub fn new(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let act = Activation::LeakyRelu(config.leaky_slope);
        let hidden = DenseOptions::hidden(act, config.batch_norm);
        let transform = if config.use_spatial_transformer {
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
        let mut stages = Vec::new();
        let mut prev = config.input_width;
        for (s, &w) in config.edgeconv_widths.iter().enumerate() {
            stages.push(EdgeConv::new(
                &mut store,
                &format!("edgeconv{}", s + 1),
                prev,
                &[w],
                config.edge_function,
                config.aggregation,
                hidden,
                &mut rng,
            )?);
            prev = w;
        }
        let local: usize = config.edgeconv_widths.iter().sum();
        let embed = DenseLayer::new(&mut store, "embed", local, config.embed_width, hidden, &mut rng);
        let mut head = Vec::new();
        let mut prev = local + config.embed_width + config.category_vector_width;
        for (l, &w) in config.head_widths.iter().enumerate() {
            head.push(DenseLayer::new(&mut store, &format!("head{l}"), prev, w, hidden, &mut rng));
            prev = w;
        }
        let output =
            DenseLayer::new(&mut store, "output", prev, config.num_part_labels, DenseOptions::output(), &mut rng);
        Ok(Self { config, store, transform, stages, embed, head, output })
    }

    /// `categories` holds one vector of `category_vector_width` entries per
    /// cloud and must be omitted when that width is zero.
    pub fn forward(
        &self,
        fwd: &mut Forward,
        clouds: &[&FeatureMatrix],
        categories: Option<&[Vec<Real>]>,
    ) -> Result<SegmenterOutput> {
        let cfg = &self.config;
        let (stacked, n) = stack_clouds(clouds)?;
        let batch = clouds.len();
        let f = stacked.shape()[1];
        if f != cfg.input_width {
            return Err(Error::dim(format!("segmenter expects {} input channels, got {f}", cfg.input_width)));
        }
        let category = self.category_tensor(batch, categories)?;
        let needs_graph = cfg.edge_function != EdgeFunction::GlobalOnly;
        if (needs_graph || self.transform.is_some()) && n < cfg.k {
            return Err(Error::param(format!("k = {} exceeds the {n} points per cloud", cfg.k)));
        }
        let mut x = fwd.tape.constant(stacked)?;
        let mut matrix = None;
        if let Some(t) = &self.transform {
            let coords = if f == 3 { x } else { fwd.tape.slice_cols(x, 0, 3)? };
            let (m, moved) = t.forward(fwd, coords, batch)?;
            matrix = Some(m);
            x = if f == 3 {
                moved
            } else {
                let rest = fwd.tape.slice_cols(x, 3, f)?;
                fwd.tape.concat(&[moved, rest], 1)?
            };
        }
        let stage_input = x;
        let graph_for = |fwd: &Forward, x: Var| -> Result<Vec<NeighborGraph>> {
            if needs_graph {
                batch_knn(&fwd.tape, x, batch, cfg.k, cfg.self_loop)
            } else {
                Ok(identity_graphs(batch, n))
            }
        };
        let input_graphs = graph_for(fwd, x)?;
        let mut graphs = Vec::new();
        let mut features = Vec::new();
        for (s, stage) in self.stages.iter().enumerate() {
            let g = if s == 0 || !cfg.dynamic_graph { input_graphs.clone() } else { graph_for(fwd, x)? };
            x = stage.forward(fwd, x, &g)?;
            graphs.push(g);
            features.push(x);
        }
        let local = fwd.tape.concat(&features, 1)?;
        let h = self.embed.forward(fwd, local)?;
        let mut global = global_pool(&mut fwd.tape, h, batch, cfg.global_pool)?;
        if let Some(c) = category {
            let c = fwd.tape.constant(c)?;
            global = fwd.tape.concat(&[global, c], 1)?;
        }
        let owner: Vec<usize> = (0..batch * n).map(|r| r / n).collect();
        let spread = fwd.tape.gather_rows(global, &owner)?;
        let mut h = fwd.tape.concat(&[local, spread], 1)?;
        let last = self.head.len().saturating_sub(1);
        for (l, layer) in self.head.iter().enumerate() {
            h = layer.forward(fwd, h)?;
            if l < last {
                h = fwd.dropout(h, cfg.dropout_keep)?;
            }
        }
        let logits = self.output.forward(fwd, h)?;
        Ok(SegmenterOutput { logits, graphs, stage_input, stage_features: features, transform: matrix })
    }

    fn category_tensor(&self, batch: usize, categories: Option<&[Vec<Real>]>) -> Result<Option<Tensor>> {
        let width = self.config.category_vector_width;
        match categories {
            None if width == 0 => Ok(None),
            None => Err(Error::param(format!("a category vector of width {width} is required"))),
            Some(_) if width == 0 => Err(Error::param("this segmenter takes no category vector")),
            Some(c) => {
                if c.len() != batch || c.iter().any(|v| v.len() != width) {
                    return Err(Error::param(format!("expected {batch} category vectors of width {width}")));
                }
                Ok(Some(Tensor::new(vec![batch, width], c.concat())?))
            }
        }
    }

    /// Evaluation-mode part logits for one cloud, `n × parts`.
    pub fn segment(&self, cloud: &FeatureMatrix, category: Option<&[Real]>) -> Result<Tensor> {
        let mut fwd = Forward::eval(&self.store);
        let cats = category.map(|c| vec![c.to_vec()]);
        let out = self.forward(&mut fwd, &[cloud], cats.as_deref())?;
        Ok(fwd.tape.value(out.logits).clone())
    }

    /// Per-point arg-max part labels.
    pub fn predict(&self, cloud: &FeatureMatrix, category: Option<&[Real]>) -> Result<Vec<usize>> {
        let logits = self.segment(cloud, category)?;
        let (n, _) = logits.dims2()?;
        Ok((0..n).map(|i| super::classifier::argmax(logits.row(i))).collect())
    }
}
