use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// One cosine cycle from `lr_max` at epoch 0 to `lr_min` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSchedule {
    pub lr_max: Real,
    pub lr_min: Real,
    pub total_epochs: usize,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self { lr_max: 0.1, lr_min: 0.001, total_epochs: 250 }
    }
}

pub fn cosine_lr(epoch: usize, schedule: &CosineSchedule) -> Result<Real> {
    let CosineSchedule { lr_max, lr_min, total_epochs } = *schedule;
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::param(format!("epoch {epoch} is outside 0..={total_epochs}")));
    }
    if !(lr_min >= 0.0 && lr_min <= lr_max) {
        return Err(Error::param(format!("need 0 <= lr_min <= lr_max, got {lr_min} and {lr_max}")));
    }
    if epoch == total_epochs {
        return Ok(lr_min);
    }
    let t = epoch as Real / total_epochs as Real;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI as Real * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = CosineSchedule { total_epochs: 50, ..CosineSchedule::default() };
        assert_eq!(cosine_lr(0, &s).unwrap(), 0.1);
        assert_eq!(cosine_lr(50, &s).unwrap(), 0.001);
        assert!((cosine_lr(25, &s).unwrap() - 0.0505).abs() < 1e-15);
        assert!(matches!(cosine_lr(51, &s), Err(Error::Parameter(_))));
    }
}
