use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::Forward;
use super::params::{glorot_uniform, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(Real),
}

impl Activation {
    pub fn apply(self, fwd: &mut Forward, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => fwd.tape.relu(x),
            Activation::LeakyRelu(slope) => fwd.tape.leaky_relu(x, slope),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSettings {
    /// Weight of the previous running estimate in each update.
    pub momentum: Real,
    pub eps: Real,
}

impl Default for BatchNormSettings {
    fn default() -> Self {
        Self { momentum: 0.9, eps: 1e-5 }
    }
}

/// Per-channel batch normalisation with learned affine parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub settings: BatchNormSettings,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, settings: BatchNormSettings) -> Self {
        Self {
            gamma: store.add(format!("{name}.bn.gamma"), Tensor::ones(&[width]), true),
            beta: store.add(format!("{name}.bn.beta"), Tensor::zeros(&[width]), true),
            running_mean: store.add(format!("{name}.bn.running_mean"), Tensor::zeros(&[width]), false),
            running_var: store.add(format!("{name}.bn.running_var"), Tensor::ones(&[width]), false),
            settings,
        }
    }

    /// Training mode normalises with batch statistics and queues the running
    /// update `running = momentum·running + (1 - momentum)·batch`; evaluation
    /// mode uses the stored running statistics.
    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var> {
        let gamma = fwd.param(self.gamma)?;
        let beta = fwd.param(self.beta)?;
        let BatchNormSettings { momentum, eps } = self.settings;
        if fwd.training() {
            let (y, mean, var) = fwd.tape.batch_norm_train(x, gamma, beta, eps)?;
            let store = fwd.store();
            let blend = |old: &Tensor, new: &[Real]| -> Vec<Real> {
                old.data()
                    .iter()
                    .zip(new)
                    .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
                    .collect()
            };
            let new_mean = blend(store.get(self.running_mean), &mean);
            let new_var = blend(store.get(self.running_var), &var);
            fwd.record_running(self.running_mean, new_mean);
            fwd.record_running(self.running_var, new_var);
            Ok(y)
        } else {
            let store = fwd.store();
            let mean = store.get(self.running_mean).data().to_vec();
            let var = store.get(self.running_var).data().to_vec();
            fwd.tape.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Glorot,
    Zero,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseOptions {
    pub batch_norm: Option<BatchNormSettings>,
    pub activation: Activation,
    /// A bias is only created when there is no batch norm, which would
    /// cancel it anyway.
    pub bias: bool,
    pub init: Init,
}

impl DenseOptions {
    pub fn hidden(activation: Activation, bn: BatchNormSettings) -> Self {
        Self { batch_norm: Some(bn), activation, bias: false, init: Init::Glorot }
    }

    pub fn output() -> Self {
        Self { batch_norm: None, activation: Activation::Identity, bias: true, init: Init::Glorot }
    }
}

/// `activation(bn(x·W + b))`, applied row-wise.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
    pub in_width: usize,
    pub out_width: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        opts: DenseOptions,
        rng: &mut R,
    ) -> Self {
        let w = match opts.init {
            Init::Glorot => glorot_uniform(rng, in_width, out_width),
            Init::Zero => Tensor::zeros(&[in_width, out_width]),
        };
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = (opts.bias && opts.batch_norm.is_none())
            .then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_width]), true));
        let bn = opts.batch_norm.map(|s| BatchNorm::new(store, name, out_width, s));
        Self { weight, bias, bn, activation: opts.activation, in_width, out_width }
    }

    pub fn forward(&self, fwd: &mut Forward, x: Var) -> Result<Var> {
        let width = fwd.tape.shape(x).last().copied().unwrap_or(0);
        if width != self.in_width {
            return Err(Error::dim(format!(
                "dense layer expects width {}, got {width}",
                self.in_width
            )));
        }
        let w = fwd.param(self.weight)?;
        let y = fwd.tape.matmul(x, w)?;
        self.finish(fwd, y)
    }

    /// Bias, batch norm and activation applied to an already computed
    /// linear part `x·W`.
    pub fn finish(&self, fwd: &mut Forward, mut y: Var) -> Result<Var> {
        if let Some(b) = self.bias {
            let b = fwd.param(b)?;
            y = fwd.tape.add_bias(y, b)?;
        }
        if let Some(bn) = &self.bn {
            y = bn.forward(fwd, y)?;
        }
        self.activation.apply(fwd, y)
    }
}

/// Stack of dense layers applied in order.
pub fn run_mlp(layers: &[DenseLayer], fwd: &mut Forward, mut x: Var) -> Result<Var> {
    for layer in layers {
        x = layer.forward(fwd, x)?;
    }
    Ok(x)
}
