//! Named parameter storage, deterministic initialization, the `Y4KW`
//! container and batch-norm folding.

mod container;
mod fold;
mod prng;

use std::sync::Arc;

use indexmap::IndexMap;

use crate::blocks::{ParamKind, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::dims_to_shape;
use crate::graph::ModelGraph;
use crate::tensor::{Element, Tensor};

pub use container::{decode, encode, load, save, ManifestEntry, CONTAINER_VERSION, MAGIC};
pub use fold::fold_batchnorm;
pub use prng::SplitMix64;

/// One stored parameter with its logical dimensions (1-D for vectors,
/// 4-D for convolution kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    dims: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> ParamTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param",
                dim: "numel",
                expected,
                actual: data.len(),
            });
        }
        Ok(ParamTensor {
            dims,
            data: Arc::new(data),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        Tensor::from_shared(dims_to_shape(&self.dims), Arc::clone(&self.data))
    }

    pub fn cast<U: Element>(&self) -> ParamTensor<U> {
        ParamTensor {
            dims: self.dims.clone(),
            data: Arc::new(self.data.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }
}

/// Running statistics are stored alongside parameters but are not learnable.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Ordered map from layer-qualified names to parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    entries: IndexMap<String, ParamTensor<T>>,
}

/// Single-precision store used for inference and serialization.
pub type WeightStore = Weights<f32>;

impl<T> Default for Weights<T> {
    fn default() -> Self {
        Weights {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Element> Weights<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: ParamTensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate weight name {name:?}")));
        }
        self.entries.insert(name, param);
        Ok(())
    }

    /// Overwrites an existing entry; the dimensions must not change.
    pub fn replace(&mut self, name: &str, param: ParamTensor<T>) -> Result<()> {
        let slot = self.entries.get_mut(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if slot.dims != param.dims {
            return Err(Error::WeightShape {
                name: name.to_string(),
                expected: slot.dims.clone(),
                actual: param.dims,
            });
        }
        *slot = param;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every stored scalar, running statistics included.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(ParamTensor::numel).sum()
    }

    /// Learnable scalars only; matches the analyzer's parameter total.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| !is_buffer(k))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> Weights<U> {
        Weights {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks that every spec has exactly one entry of the right shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let p = self
                .get(&spec.name)
                .ok_or_else(|| Error::MissingWeight(spec.name.clone()))?;
            if p.dims() != spec.dims.as_slice() {
                return Err(Error::WeightShape {
                    name: spec.name.clone(),
                    expected: spec.dims.clone(),
                    actual: p.dims().to_vec(),
                });
            }
        }
        if self.len() != specs.len() {
            let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra = self.names().find(|n| !known.contains(n)).unwrap_or_default();
            return Err(Error::InvalidInput(format!("unexpected weight {extra:?} in store")));
        }
        Ok(())
    }
}

/// How batch-norm entries are filled by [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormInit {
    /// gamma = 1, beta = 0, mean = 0, var = 1.
    Identity,
    /// Random statistics drawn from the stream; exercises every BN term in
    /// gradient and folding checks.
    Perturbed,
}

/// Fills `specs` in order from one SplitMix64 stream seeded with `seed`.
///
/// Convolution weights and biases are `uniform(-b, b)` with
/// `b = 1/sqrt(fan_in)`, each draw mapped as `(2u - 1) * b` where `u` is the
/// generator's next `[0, 1)` double.
pub fn init_params<T: Element>(specs: &[ParamSpec], seed: u64, bn: BatchNormInit) -> Result<Weights<T>> {
    let mut rng = SplitMix64::new(seed);
    let mut store = Weights::new();
    for spec in specs {
        let numel = spec.numel();
        let data: Vec<T> = match (spec.kind, bn) {
            (ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in }, _) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel).map(|_| T::lit((2.0 * rng.next_f64() - 1.0) * bound)).collect()
            }
            (ParamKind::BnGamma, BatchNormInit::Identity) => vec![T::one(); numel],
            (ParamKind::BnBeta | ParamKind::BnMean, BatchNormInit::Identity) => vec![T::zero(); numel],
            (ParamKind::BnVar, BatchNormInit::Identity) => vec![T::one(); numel],
            (ParamKind::BnGamma | ParamKind::BnVar, BatchNormInit::Perturbed) => {
                (0..numel).map(|_| T::lit(0.5 + rng.next_f64())).collect()
            }
            (ParamKind::BnBeta | ParamKind::BnMean, BatchNormInit::Perturbed) => {
                (0..numel).map(|_| T::lit(rng.next_f64() - 0.5)).collect()
            }
        };
        store.insert(spec.name.clone(), ParamTensor::new(spec.dims.clone(), data)?)?;
    }
    Ok(store)
}

/// Deterministic initialization of every parameter of `graph`.
pub fn random_init(graph: &ModelGraph, seed: u64) -> Result<WeightStore> {
    init_params(&graph.param_specs(), seed, BatchNormInit::Identity)
}
