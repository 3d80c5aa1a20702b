use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

/// State of one forward pass: the tape, which parameters were placed on it,
/// the dropout stream and pending batch-norm running-statistic updates.
pub struct Forward<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
    running: Vec<(ParamId, Vec<Real>)>,
}

impl<'s> Forward<'s> {
    pub fn new(store: &'s ParamStore, training: bool, seed: u64) -> Self {
        Self::with_tape(Tape::new(), store, training, seed)
    }

    /// Continues recording on an existing tape, e.g. one whose leaves are
    /// being perturbed by a gradient check.
    pub fn with_tape(tape: Tape, store: &'s ParamStore, training: bool, seed: u64) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            running: Vec::new(),
        }
    }

    pub fn eval(store: &'s ParamStore) -> Self {
        Self::new(store, false, 0)
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Inverted dropout in training mode, identity otherwise.
    pub fn dropout(&mut self, x: Var, keep: Real) -> Result<Var> {
        self.tape.dropout(x, keep, self.training, &mut self.rng)
    }

    /// Tape handle for a parameter, placing it on the tape on first use.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let entry = self.store.entry(id);
        let v = self.tape.leaf(entry.value.clone(), entry.trainable)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// Uses `var` wherever the network asks for parameter `id`.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound[id.0] = Some(var);
    }

    pub(crate) fn record_running(&mut self, id: ParamId, values: Vec<Real>) {
        self.running.push((id, values));
    }

    pub fn finish(self) -> ForwardRecord {
        let bindings = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        ForwardRecord { tape: self.tape, bindings, running: self.running }
    }
}

/// What remains of a forward pass once the parameter store may be mutated
/// again.
pub struct ForwardRecord {
    pub tape: Tape,
    bindings: Vec<(ParamId, Var)>,
    running: Vec<(ParamId, Vec<Real>)>,
}

impl ForwardRecord {
    /// Gradients of every trainable parameter that took part in the pass,
    /// in parameter order.
    pub fn param_grads(&self, store: &ParamStore, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bindings
            .iter()
            .filter(|(id, _)| store.entry(*id).trainable)
            .map(|&(id, v)| (id, grads.wrt(v)))
            .collect()
    }

    pub fn apply_running_updates(&self, store: &mut ParamStore) {
        for (id, values) in &self.running {
            store.get_mut(*id).data_mut().copy_from_slice(values);
        }
    }
}
