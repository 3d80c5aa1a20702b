//! Named parameter storage shared by every network.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{decode_checkpoint, encode_checkpoint, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Batch-norm running statistics are stored but not optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of scalars the optimiser updates.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self.entries.iter().map(|e| (e.name.as_str(), &e.value)))
    }

    /// Replaces every value from a checkpoint with exactly the same names
    /// and shapes.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let loaded = decode_checkpoint(bytes)?;
        if loaded.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                loaded.len(),
                self.entries.len()
            )));
        }
        for (entry, (name, value)) in self.entries.iter().zip(&loaded) {
            if &entry.name != name || entry.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint entry {name} {:?} does not match model entry {} {:?}",
                    value.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
        }
        for (entry, (_, value)) in self.entries.iter_mut().zip(loaded) {
            entry.value = value;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_bytes(&bytes)
    }
}

/// Glorot-uniform matrix, entries in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit) as Real)
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape is consistent")
}
