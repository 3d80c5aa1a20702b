use crate::error::{Error, Result};
use crate::models::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Classical momentum: `v <- μ·v + g`, `p <- p - lr·v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: Real,
    velocity: Vec<Option<Tensor>>,
}

impl SgdMomentum {
    pub fn new(momentum: Real) -> Self {
        Self { momentum, velocity: Vec::new() }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor> {
        self.velocity.get(id.0).and_then(Option::as_ref)
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// moves, so a non-finite gradient leaves the store untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: Real) -> Result<()> {
        for (id, g) in grads {
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "gradient of `{}` is {} at element {pos}",
                    store.entry(*id).name,
                    g.data()[pos]
                )));
            }
            if g.shape() != store.get(*id).shape() {
                return Err(Error::dim(format!("gradient shape mismatch for `{}`", store.entry(*id).name)));
            }
        }
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, g) in grads {
            let v = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(*id).data_mut();
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: Real) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value), true);
        (s, id)
    }

    #[test]
    fn hand_iterated_steps() {
        let (mut s, id) = one_param(0.0);
        let mut opt = SgdMomentum::new(0.9);
        opt.step(&mut s, &[(id, Tensor::scalar(1.0))], 0.1).unwrap();
        assert!((s.get(id).data()[0] + 0.1).abs() < 1e-15);
        opt.step(&mut s, &[(id, Tensor::scalar(1.0))], 0.1).unwrap();
        assert!((s.get(id).data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, id) = one_param(2.5);
        SgdMomentum::new(0.9).step(&mut s, &[(id, Tensor::scalar(0.0))], 0.1).unwrap();
        assert_eq!(s.get(id).data()[0], 2.5);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut s, id) = one_param(1.0);
        let err = SgdMomentum::new(0.9).step(&mut s, &[(id, Tensor::scalar(Real::NAN))], 0.1);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(s.get(id).data()[0], 1.0);
    }
}
