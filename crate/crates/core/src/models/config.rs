use serde::{Deserialize, Serialize};

use super::layers::BatchNormSettings;
use crate::edgeconv::{Aggregation, EdgeFunction};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Spatial transformer sub-network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub edge_widths: Vec<usize>,
    pub embed_width: usize,
    pub head_widths: Vec<usize>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self { edge_widths: vec![64, 128], embed_width: 1024, head_widths: vec![512, 256] }
    }
}

impl TransformConfig {
    pub fn desk() -> Self {
        Self { edge_widths: vec![16, 32], embed_width: 64, head_widths: vec![32, 16] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub k: usize,
    pub self_loop: bool,
    /// Output width of each EdgeConv stage; exactly four stages.
    pub edgeconv_widths: Vec<usize>,
    pub embed_width: usize,
    pub head_widths: Vec<usize>,
    pub num_classes: usize,
    pub dropout_keep: Real,
    pub dynamic_graph: bool,
    /// `x_i ⊕ (x_j - x_i)` edge inputs when set, `x_i ⊕ x_j` otherwise.
    pub centralization: bool,
    /// Overrides the edge function implied by `centralization`.
    pub edge_function: Option<EdgeFunction>,
    pub aggregation: Aggregation,
    pub global_pool: Aggregation,
    pub use_spatial_transformer: bool,
    pub transform: TransformConfig,
    pub leaky_slope: Real,
    pub batch_norm: BatchNormSettings,
    pub input_width: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            k: 20,
            self_loop: true,
            edgeconv_widths: vec![64, 64, 128, 256],
            embed_width: 1024,
            head_widths: vec![512, 256],
            num_classes: 40,
            dropout_keep: 0.5,
            dynamic_graph: true,
            centralization: true,
            edge_function: None,
            aggregation: Aggregation::Max,
            global_pool: Aggregation::Max,
            use_spatial_transformer: false,
            transform: TransformConfig::default(),
            leaky_slope: 0.2,
            batch_norm: BatchNormSettings::default(),
            input_width: 3,
        }
    }
}

impl ClassifierConfig {
    /// Reduced widths that train in minutes on one CPU core.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            k: 10,
            edgeconv_widths: vec![16, 16, 32, 32],
            embed_width: 128,
            head_widths: vec![64, 32],
            num_classes,
            transform: TransformConfig::desk(),
            ..Self::default()
        }
    }

    /// The same network with the graph-independent `x_i` edge function.
    pub fn pointnet_baseline(mut self) -> Self {
        self.edge_function = Some(EdgeFunction::GlobalOnly);
        self
    }

    pub fn edge_function(&self) -> EdgeFunction {
        self.edge_function.unwrap_or(if self.centralization {
            EdgeFunction::CentralizedAsym
        } else {
            EdgeFunction::PairConcat
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.edgeconv_widths.len() != 4 {
            return Err(Error::Config(format!(
                "the classifier has four EdgeConv stages, got {} widths",
                self.edgeconv_widths.len()
            )));
        }
        validate_common(
            self.k,
            self.num_classes,
            self.dropout_keep,
            self.leaky_slope,
            &self.batch_norm,
            self.input_width,
        )?;
        self.edge_function().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub k: usize,
    pub self_loop: bool,
    /// Output width of each EdgeConv stage; exactly three stages.
    pub edgeconv_widths: Vec<usize>,
    pub embed_width: usize,
    pub head_widths: Vec<usize>,
    pub num_part_labels: usize,
    /// Width of the per-shape category one-hot; 0 disables it.
    pub category_vector_width: usize,
    pub use_spatial_transformer: bool,
    pub transform: TransformConfig,
    pub dropout_keep: Real,
    pub dynamic_graph: bool,
    pub edge_function: EdgeFunction,
    pub aggregation: Aggregation,
    pub global_pool: Aggregation,
    pub leaky_slope: Real,
    pub batch_norm: BatchNormSettings,
    /// Per-point input channels; the first three are coordinates.
    pub input_width: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            k: 20,
            self_loop: true,
            edgeconv_widths: vec![64, 64, 64],
            embed_width: 1024,
            head_widths: vec![256, 256, 128],
            num_part_labels: 50,
            category_vector_width: 16,
            use_spatial_transformer: true,
            transform: TransformConfig::default(),
            dropout_keep: 0.5,
            dynamic_graph: true,
            edge_function: EdgeFunction::CentralizedAsym,
            aggregation: Aggregation::Max,
            global_pool: Aggregation::Max,
            leaky_slope: 0.2,
            batch_norm: BatchNormSettings::default(),
            input_width: 3,
        }
    }
}

impl SegmenterConfig {
    pub fn desk(num_part_labels: usize, category_vector_width: usize) -> Self {
        Self {
            k: 10,
            edgeconv_widths: vec![16, 16, 16],
            embed_width: 64,
            head_widths: vec![64, 32, 32],
            num_part_labels,
            category_vector_width,
            transform: TransformConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.edgeconv_widths.len() != 3 {
            return Err(Error::Config(format!(
                "the segmenter has three EdgeConv stages, got {} widths",
                self.edgeconv_widths.len()
            )));
        }
        if self.use_spatial_transformer && self.input_width < 3 {
            return Err(Error::Config("the spatial transformer needs three coordinate channels".into()));
        }
        validate_common(
            self.k,
            self.num_part_labels,
            self.dropout_keep,
            self.leaky_slope,
            &self.batch_norm,
            self.input_width,
        )?;
        self.edge_function.validate()
    }
}

fn validate_common(
    k: usize,
    outputs: usize,
    keep: Real,
    slope: Real,
    bn: &BatchNormSettings,
    input_width: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if outputs == 0 {
        return Err(Error::Config("at least one output class is required".into()));
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config(format!("dropout keep probability {keep} is outside (0, 1]")));
    }
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Config(format!("leaky slope {slope} is outside (0, 1)")));
    }
    if !(bn.eps > 0.0) || !(0.0..1.0).contains(&bn.momentum) {
        return Err(Error::Config("batch norm needs eps > 0 and momentum in [0, 1)".into()));
    }
    if input_width == 0 {
        return Err(Error::Config("input width must be positive".into()));
    }
    Ok(())
}
