//! Point-cloud ingestion, mesh sampling, normalisation, dataset containers
//! and the synthetic desk-scale benchmark.

mod export;
mod manifest;
mod mesh;
mod off;
mod synth;
mod xyz;

pub use export::{export_feature_distances, feature_distances, DistanceLayer};
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use mesh::{normalize_unit_sphere, sample_mesh, sample_mesh_with_faces, Normalization};
pub use off::{load_off_mesh, parse_off, Mesh};
pub use synth::{four_class_benchmark, synth_dataset, synth_split, texture_benchmark, SynthSpec, GENERATORS};
pub use xyz::{load_xyz, parse_xyz};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;

/// One point cloud with whichever labels the task provides.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud {
    pub points: FeatureMatrix,
    pub class_label: Option<usize>,
    pub point_labels: Option<Vec<usize>>,
    pub category: Option<usize>,
}

impl LabeledCloud {
    pub fn new(points: FeatureMatrix) -> Self {
        Self { points, class_label: None, point_labels: None, category: None }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.point_labels {
            Some(l) if l.len() != self.points.n() => Err(Error::Data(format!(
                "{} point labels for {} points",
                l.len(),
                self.points.n()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    /// How clouds were normalised, e.g. `"unit_sphere"` or `"none"`.
    pub normalization: String,
    pub class_names: Vec<String>,
    /// Global part labels belonging to each category.
    pub part_sets: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<LabeledCloud>,
    pub split: Split,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        let seen = self.clouds.iter().filter_map(|c| c.class_label).max().map_or(0, |m| m + 1);
        seen.max(self.metadata.class_names.len())
    }

    pub fn num_part_labels(&self) -> usize {
        let from_sets = self.metadata.part_sets.iter().flatten().max().map_or(0, |m| m + 1);
        let seen = self
            .clouds
            .iter()
            .filter_map(|c| c.point_labels.as_ref())
            .flatten()
            .max()
            .map_or(0, |m| m + 1);
        from_sets.max(seen)
    }

    /// Class labels of every cloud; a data error if any is missing.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.clouds
            .iter()
            .enumerate()
            .map(|(i, c)| c.class_label.ok_or_else(|| Error::Data(format!("cloud {i} has no class label"))))
            .collect()
    }

    /// Shuffled 80/20-style split into `(train, val)` with disjoint members.
    pub fn split_validation(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::param(format!("validation fraction {val_fraction} is outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        let pick = |idx: &[usize], split| Dataset {
            clouds: idx.iter().map(|&i| self.clouds[i].clone()).collect(),
            split,
            metadata: self.metadata.clone(),
        };
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((pick(&train, Split::Train), pick(&val, Split::Val)))
    }

    /// Keeps only clouds whose class label is listed, relabelled to their
    /// position in `classes`.
    pub fn restrict_classes(&self, classes: &[usize]) -> Dataset {
        let clouds = self
            .clouds
            .iter()
            .filter_map(|c| {
                let pos = classes.iter().position(|&k| Some(k) == c.class_label)?;
                Some(LabeledCloud { class_label: Some(pos), ..c.clone() })
            })
            .collect();
        let names = classes.iter().filter_map(|&k| self.metadata.class_names.get(k).cloned()).collect();
        Dataset { clouds, split: self.split, metadata: DatasetMetadata { class_names: names, ..self.metadata.clone() } }
    }
}
