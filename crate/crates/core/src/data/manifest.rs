use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{load_off_mesh, load_xyz, normalize_unit_sphere, sample_mesh, Dataset, DatasetMetadata, LabeledCloud, Split};
use crate::error::{Error, Result};

/// Dataset manifest, read from TOML:
///
/// ```toml
/// seed = 7
/// points_per_cloud = 1024
/// class_names = ["chair", "table"]
/// part_sets = [[0, 1], [2, 3]]
///
/// [[files]]
/// path = "chair_0001.off"
/// label = 0
/// split = "train"
/// ```
///
/// `.off` meshes are sampled; any other file is read as XYZ(+label) text.
/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_points")]
    pub points_per_cloud: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub part_sets: Vec<Vec<usize>>,
    pub files: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
    pub category: Option<usize>,
    pub split: Split,
}

fn default_points() -> usize {
    1024
}

fn default_true() -> bool {
    true
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: Manifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

impl Manifest {
    /// Loads every file of one split. Sampling of entry `i` uses its own
    /// stream derived from the manifest seed, so splits load independently.
    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let mut clouds = Vec::new();
        for (i, entry) in self.files.iter().enumerate().filter(|(_, e)| e.split == split) {
            let path = self.base_dir.join(&entry.path);
            let mut cloud = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
                let mesh = load_off_mesh(&path)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64);
                LabeledCloud::new(sample_mesh(&mesh, self.points_per_cloud, &mut rng)?)
            } else {
                load_xyz(&path)?
            };
            if self.normalize {
                cloud.points = normalize_unit_sphere(&cloud.points)?.0;
            }
            cloud.class_label = entry.label;
            cloud.category = entry.category;
            cloud.validate()?;
            if let (Some(cat), Some(labels)) = (cloud.category, &cloud.point_labels) {
                let parts = self
                    .part_sets
                    .get(cat)
                    .ok_or_else(|| Error::Data(format!("{}: unknown category {cat}", path.display())))?;
                if let Some(bad) = labels.iter().find(|l| !parts.contains(l)) {
                    return Err(Error::Data(format!(
                        "{}: part label {bad} is not in category {cat}",
                        path.display()
                    )));
                }
            }
            clouds.push(cloud);
        }
        Ok(Dataset {
            clouds,
            split,
            metadata: DatasetMetadata {
                seed: self.seed,
                normalization: if self.normalize { "unit_sphere".into() } else { "none".into() },
                class_names: self.class_names.clone(),
                part_sets: self.part_sets.clone(),
            },
        })
    }
}
