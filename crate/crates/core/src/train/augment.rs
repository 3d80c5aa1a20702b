use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::tensor::Real;

/// Random global scale, global shift and per-point jitter of the first
/// three channels. Each transform can be switched off on its own.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale: bool,
    pub scale_range: [Real; 2],
    pub shift: bool,
    /// Shift drawn from `U[-shift_range, shift_range]` per axis.
    pub shift_range: Real,
    pub jitter: bool,
    pub jitter_sigma: Real,
    pub jitter_clip: Real,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: true,
            scale_range: [0.66, 1.5],
            shift: true,
            shift_range: 0.2,
            jitter: true,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("scale range [{lo}, {hi}] must be positive and ordered")));
        }
        if !(self.shift_range >= 0.0 && self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return Err(Error::Config("shift and jitter magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn augment<R: Rng + ?Sized>(points: &FeatureMatrix, cfg: &AugmentConfig, rng: &mut R) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(points.clone());
    }
    let (n, f) = (points.n(), points.f());
    let dims = f.min(3);
    let [lo, hi] = cfg.scale_range;
    let s = if cfg.scale && hi > lo { rng.random_range(lo..=hi) } else if cfg.scale { lo } else { 1.0 };
    let shift: [Real; 3] = std::array::from_fn(|_| {
        if cfg.shift && cfg.shift_range > 0.0 {
            rng.random_range(-cfg.shift_range..=cfg.shift_range)
        } else {
            0.0
        }
    });
    let jitter = (cfg.jitter && cfg.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.jitter_sigma as f64).expect("validated sigma"));
    let mut values = points.values().to_vec();
    for i in 0..n {
        for d in 0..dims {
            let v = &mut values[i * f + d];
            *v = *v * s + shift[d];
            if let Some(j) = &jitter {
                *v += (j.sample(rng) as Real).clamp(-cfg.jitter_clip, cfg.jitter_clip);
            }
        }
    }
    FeatureMatrix::new(n, f, values)
}
