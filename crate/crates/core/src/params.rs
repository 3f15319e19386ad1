//! Named parameter collections shared by the networks, the optimizers and
//! the checkpoint format.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Frozen entries (fixed filters) are stored and checkpointed but never
    /// updated.
    pub trainable: bool,
}

/// Ordered, name-addressed set of leaf tensors. Trainable entries track
/// gradients; each optimizer step swaps in fresh leaves.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: Vec<f64>, shape: &[usize], trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let tensor = Tensor::new(data, shape)?.with_requires_grad(trainable);
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scalar count over trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum()
    }

    /// Scalar count over every stored entry, frozen ones included.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces the values of `name` with a fresh leaf of the same shape.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let p = &mut self.params[i];
        p.tensor = Tensor::new(data, p.tensor.shape())?.with_requires_grad(p.trainable);
        Ok(())
    }

    /// Substitutes `tensor` (graph connections included) for `name`.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let p = &mut self.params[i];
        if tensor.shape() != p.tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter {name} is {:?}, replacement is {:?}",
                p.tensor.shape(),
                tensor.shape()
            )));
        }
        p.tensor = tensor;
        Ok(())
    }

    /// Copy in which no entry tracks gradients.
    pub fn frozen(&self) -> ParamStore {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                tensor: p.tensor.detach(),
                trainable: false,
            })
            .collect();
        ParamStore {
            params,
            index: self.index.clone(),
        }
    }

    /// Overwrites values from `(name, shape, data)` records. Names and shapes
    /// must match this store exactly.
    pub fn load_values(&mut self, records: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                records.len()
            )));
        }
        for (name, shape, data) in records {
            let p = self
                .param(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name}")))?;
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {shape:?}, model expects {:?}",
                    p.tensor.shape()
                )));
            }
            self.set_data(name, data.clone())?;
        }
        Ok(())
    }

    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.to_vec()))
            .collect()
    }
}

/// Seeded weight initializers.
pub(crate) struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect()
    }

    /// Glorot-uniform for a `fan_in → fan_out` map.
    pub fn xavier(&mut self, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
        self.uniform(n, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// He-uniform, for layers followed by a rectifier.
    pub fn he(&mut self, n: usize, fan_in: usize) -> Vec<f64> {
        self.uniform(n, (6.0 / fan_in as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_get_and_freeze() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1.0, 2.0], &[2], true).unwrap();
        store.insert("k", vec![0.5], &[1], false).unwrap();
        assert!(store.insert("w", vec![0.0], &[1], true).is_err());
        assert!(store.get("w").unwrap().requires_grad());
        assert!(!store.get("k").unwrap().requires_grad());
        assert_eq!(store.trainable_count(), 2);
        assert_eq!(store.total_count(), 3);
        let frozen = store.frozen();
        assert!(frozen.iter().all(|p| !p.tensor.requires_grad()));
        assert!(store.get("missing").is_err());
    }

    #[test]
    fn load_values_checks_shapes() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1.0, 2.0], &[2], true).unwrap();
        let good = vec![("w".to_string(), vec![2], vec![3.0, 4.0])];
        store.load_values(&good).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[3.0, 4.0]);
        let bad = vec![("w".to_string(), vec![1, 2], vec![3.0, 4.0])];
        assert!(store.load_values(&bad).is_err());
    }
}
