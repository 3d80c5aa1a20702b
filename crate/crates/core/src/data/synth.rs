use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_unit_sphere, Dataset, DatasetMetadata, LabeledCloud, Split};
use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::tensor::Real;

/// Known generator names.
///
/// `smooth_sphere` and `bumpy_sphere` form the texture pair. Both sample
/// points in small patches around random centres on the unit sphere and
/// displace them radially by one sample of `n` i.i.d. `N(0, noise²)`
/// offsets. The bumpy class assigns offsets to points at random; the smooth
/// class gives each patch a block of consecutive ranks, so points in a patch
/// sit at nearly the same height. The patch layout and the offset multiset
/// have the same distribution in both classes; only the agreement between
/// neighbouring points tells them apart.
pub const GENERATORS: [&str; 6] = ["sphere", "cube", "cylinder", "plane", "smooth_sphere", "bumpy_sphere"];

/// Number of part labels each generator emits.
fn part_count(generator: &str) -> usize {
    match generator {
        "cube" => 3,
        "cylinder" => 2,
        _ => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Generator name per class, in label order.
    pub classes: Vec<String>,
    pub per_class: usize,
    pub points: usize,
    /// Gaussian jitter for plain shapes; radial texture amplitude for the
    /// texture pair.
    pub noise: Real,
    /// Points per texture patch.
    pub texture_patch: usize,
    /// Angular spread (radians) of the points around a patch centre.
    pub patch_spread: Real,
    pub random_rotation: bool,
    pub normalize: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec!["smooth_sphere".into(), "bumpy_sphere".into(), "cube".into(), "cylinder".into()],
            per_class: 100,
            points: 256,
            noise: 0.08,
            texture_patch: 16,
            patch_spread: 0.04,
            random_rotation: true,
            normalize: true,
        }
    }
}

impl SynthSpec {
    pub fn texture_pair() -> Self {
        Self { classes: vec!["smooth_sphere".into(), "bumpy_sphere".into()], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::param("synthetic spec lists no classes"));
        }
        for g in &self.classes {
            if !GENERATORS.contains(&g.as_str()) {
                return Err(Error::param(format!("unknown generator `{g}`; known: {}", GENERATORS.join(", "))));
            }
        }
        if self.points == 0 {
            return Err(Error::param("clouds need at least one point"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param(format!("noise {} must be a finite non-negative number", self.noise)));
        }
        let textured = self.classes.iter().any(|g| g == "smooth_sphere" || g == "bumpy_sphere");
        if textured && self.noise == 0.0 {
            return Err(Error::param(
                "the smooth and bumpy spheres coincide without noise; set a positive noise level",
            ));
        }
        if self.texture_patch == 0 || !(self.patch_spread > 0.0 && self.patch_spread.is_finite()) {
            return Err(Error::param("texture patches need at least one point and a positive finite spread"));
        }
        Ok(())
    }

    /// Global part labels of each class.
    pub fn part_sets(&self) -> Vec<Vec<usize>> {
        let mut next = 0;
        self.classes
            .iter()
            .map(|g| {
                let set: Vec<usize> = (next..next + part_count(g)).collect();
                next += set.len();
                set
            })
            .collect()
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [Real; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-9 {
            return v.map(|c| (c / norm) as Real);
        }
    }
}

/// Rotation by a uniform random angle about the vertical (z) axis.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[Real; 3]; 3] {
    let a = rng.random_range(0.0..std::f64::consts::TAU) as Real;
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Points and local part indices of one clean shape.
fn clean_shape<R: Rng + ?Sized>(generator: &str, n: usize, rng: &mut R) -> (Vec<[Real; 3]>, Vec<usize>) {
    let mut pts = Vec::with_capacity(n);
    let mut parts = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, part) = match generator {
            "cube" => {
                let face = rng.random_range(0..6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
                p.swap(2, axis);
                p[axis] = sign;
                (p, axis)
            }
            "cylinder" => {
                // Side area 4π against 2π for both caps together.
                let theta = rng.random_range(0.0..std::f64::consts::TAU) as Real;
                if rng.random::<f64>() < 2.0 / 3.0 {
                    ([theta.cos(), theta.sin(), rng.random_range(-1.0..1.0)], 0)
                } else {
                    let r = rng.random::<f64>().sqrt() as Real;
                    let z = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    ([r * theta.cos(), r * theta.sin(), z], 1)
                }
            }
            "plane" => ([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0], 0),
            _ => (unit_vector(rng), 0),
        };
        pts.push(p);
        parts.push(part);
    }
    (pts, parts)
}

fn textured_sphere<R: Rng + ?Sized>(smooth: bool, spec: &SynthSpec, rng: &mut R) -> Vec<[Real; 3]> {
    let n = spec.points;
    let m = spec.texture_patch;
    let spread = Normal::new(0.0, spec.patch_spread as f64).expect("validated spread");
    let mut dirs = Vec::with_capacity(n);
    while dirs.len() < n {
        let c = unit_vector(rng);
        for _ in 0..m.min(n - dirs.len()) {
            let p: [Real; 3] = std::array::from_fn(|a| c[a] + spread.sample(rng) as Real);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            dirs.push(p.map(|v| v / norm));
        }
    }
    let normal = Normal::new(0.0, spec.noise as f64).expect("validated noise");
    let mut offsets: Vec<Real> = (0..n).map(|_| normal.sample(rng) as Real).collect();
    if smooth {
        offsets.sort_by(Real::total_cmp);
        let mut blocks: Vec<&[Real]> = offsets.chunks(m).collect();
        // the short block, if any, must land on the short last patch
        let full = n / m;
        blocks[..full].shuffle(rng);
        offsets = blocks.concat();
    } else {
        offsets.shuffle(rng);
    }
    dirs.iter().zip(&offsets).map(|(d, o)| d.map(|c| c * (1.0 + o))).collect()
}

fn generate<R: Rng + ?Sized>(generator: &str, spec: &SynthSpec, rng: &mut R) -> Result<(FeatureMatrix, Vec<usize>)> {
    let (mut pts, parts) = match generator {
        "smooth_sphere" | "bumpy_sphere" => {
            (textured_sphere(generator == "smooth_sphere", spec, rng), vec![0; spec.points])
        }
        g => {
            let (mut pts, parts) = clean_shape(g, spec.points, rng);
            if spec.noise > 0.0 {
                let normal = Normal::new(0.0, spec.noise as f64).expect("validated noise");
                for p in &mut pts {
                    p.iter_mut().for_each(|c| *c += normal.sample(rng) as Real);
                }
            }
            (pts, parts)
        }
    };
    if spec.random_rotation {
        let r = random_rotation(rng);
        for p in &mut pts {
            let q = *p;
            *p = std::array::from_fn(|a| r[a][0] * q[0] + r[a][1] * q[1] + r[a][2] * q[2]);
        }
    }
    let mut cloud = FeatureMatrix::new(spec.points, 3, pts.into_iter().flatten().collect())?;
    if spec.normalize {
        cloud = normalize_unit_sphere(&cloud)?.0;
    }
    Ok((cloud, parts))
}

/// `per_class` clouds of every class, interleaved by class. Categories
/// equal class labels and part labels are global (see [`SynthSpec::part_sets`]).
pub fn synth_dataset<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let part_sets = spec.part_sets();
    let mut clouds = Vec::with_capacity(spec.per_class * spec.classes.len());
    for _ in 0..spec.per_class {
        for (label, g) in spec.classes.iter().enumerate() {
            let (points, parts) = generate(g, spec, rng)?;
            clouds.push(LabeledCloud {
                points,
                class_label: Some(label),
                point_labels: Some(parts.iter().map(|&p| part_sets[label][p]).collect()),
                category: Some(label),
            });
        }
    }
    Ok(Dataset {
        clouds,
        split: Split::Train,
        metadata: DatasetMetadata {
            seed: 0,
            normalization: if spec.normalize { "unit_sphere".into() } else { "none".into() },
            class_names: spec.classes.clone(),
            part_sets,
        },
    })
}

/// Train and test sets drawn from independent streams of one seed.
pub fn synth_split(spec: &SynthSpec, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let make = |per_class, stream, split| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut d = synth_dataset(&SynthSpec { per_class, ..spec.clone() }, &mut rng)?;
        d.split = split;
        d.metadata.seed = seed;
        Ok(d)
    };
    Ok((make(train_per_class, 0, Split::Train)?, make(test_per_class, 1, Split::Test)?))
}

/// Four classes (smooth sphere, bumpy sphere, cube, cylinder), 100 train and
/// 25 test clouds each, 256 points per cloud.
pub fn four_class_benchmark(seed: u64) -> Result<(Dataset, Dataset)> {
    synth_split(&SynthSpec::default(), 100, 25, seed)
}

/// The smooth-versus-bumpy pair alone, 200 train and 50 test clouds each.
pub fn texture_benchmark(seed: u64) -> Result<(Dataset, Dataset)> {
    synth_split(&SynthSpec::texture_pair(), 200, 50, seed)
}
