//! Ordered, named parameter registry.

use std::path::Path;

use super::checkpoint::{read_checkpoint, write_checkpoint, TensorData};
use super::Tensor;
use crate::error::{Error, Result};

/// The trainable parameters of a model, in registration order.
///
/// Order is part of the contract: the optimizer state, the checkpoint file
/// layout, and determinism of updates all key off it.
#[derive(Clone, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Tensor {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor.clone()));
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Detach values into plain data (for checkpoints or thread transfer).
    pub fn snapshot(&self) -> Vec<TensorData> {
        self.entries
            .iter()
            .map(|(name, t)| TensorData {
                name: name.clone(),
                shape: t.shape(),
                data: t.data(),
            })
            .collect()
    }

    /// Overwrite parameter values from a snapshot; names and shapes must
    /// match the registry exactly (order included).
    pub fn restore(&self, snapshot: &[TensorData]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                self.entries.len(),
                snapshot.len()
            )));
        }
        for ((name, tensor), saved) in self.entries.iter().zip(snapshot) {
            if *name != saved.name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: expected {name}, found {}",
                    saved.name
                )));
            }
            if tensor.shape() != saved.shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    tensor.shape(),
                    saved.shape
                )));
            }
            tensor.set_data(saved.data.clone());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.snapshot())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        self.restore(&read_checkpoint(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trip() {
        let mut params = Params::new();
        let w = params.register("w", Tensor::param(&[2], vec![1.0, 2.0]));
        params.register("b", Tensor::param(&[1], vec![0.5]));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        params.save(&path).unwrap();

        w.set_data(vec![9.0, 9.0]);
        params.load(&path).unwrap();
        assert_eq!(w.data(), vec![1.0, 2.0]);
    }

    #[test]
    fn restore_rejects_mismatched_names() {
        let mut a = Params::new();
        a.register("x", Tensor::param(&[1], vec![0.0]));
        let mut b = Params::new();
        b.register("y", Tensor::param(&[1], vec![0.0]));
        assert!(a.restore(&b.snapshot()).is_err());
    }
}
