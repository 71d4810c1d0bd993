//! Execution backends for block forward passes.
//!
//! Blocks describe their computation once against [`Exec`]. [`Eval`] runs it
//! directly on tensors; [`crate::autodiff::Tape`] records it for reverse-mode
//! differentiation.

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::tensor::{self, Activation, AttentionSpec, ConvGeometry, ConvParams, Element, Shape, Tensor};
use crate::weights::Weights;

pub trait Exec<T: Element> {
    type Value: Clone;

    fn shape(&self, v: &Self::Value) -> Shape;

    /// Fetches a named parameter, checking it has the expected dimensions.
    fn param(&mut self, name: &str, dims: &[usize]) -> Result<Self::Value>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        bias: Option<&Self::Value>,
        geometry: ConvGeometry,
    ) -> Result<Self::Value>;

    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Result<Self::Value>;

    #[allow(clippy::too_many_arguments)]
    fn batchnorm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mean: &Self::Value,
        var: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value>;

    fn maxpool2d(&mut self, x: &Self::Value, k: usize, stride: usize, pad: usize) -> Result<Self::Value>;

    fn upsample(&mut self, x: &Self::Value, scale: usize) -> Result<Self::Value>;

    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;

    fn slice_channels(&mut self, x: &Self::Value, start: usize, end: usize) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn attention(&mut self, qkv: &Self::Value, spec: &AttentionSpec) -> Result<Self::Value>;
}

/// Converts stored parameter dims to a 4-D tensor shape; vectors become `(len, 1, 1, 1)`.
pub(crate) fn dims_to_shape(dims: &[usize]) -> Shape {
    let mut full = [1usize; 4];
    for (slot, &d) in full.iter_mut().zip(dims) {
        *slot = d;
    }
    Shape::new(full[0], full[1], full[2], full[3])
}

/// Direct evaluation over a weight store.
pub struct Eval<'a, T> {
    weights: &'a Weights<T>,
    reads: IndexSet<String>,
}

impl<'a, T: Element> Eval<'a, T> {
    pub fn new(weights: &'a Weights<T>) -> Self {
        Eval {
            weights,
            reads: IndexSet::new(),
        }
    }

    /// Names of every parameter fetched so far, in first-read order.
    pub fn reads(&self) -> &IndexSet<String> {
        &self.reads
    }
}

impl<T: Element> Exec<T> for Eval<'_, T> {
    type Value = Tensor<T>;

    fn shape(&self, v: &Tensor<T>) -> Shape {
        v.shape()
    }

    fn param(&mut self, name: &str, dims: &[usize]) -> Result<Tensor<T>> {
        let p = self
            .weights
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if p.dims() != dims {
            return Err(Error::WeightShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                actual: p.dims().to_vec(),
            });
        }
        self.reads.insert(name.to_string());
        p.to_tensor()
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geometry: ConvGeometry,
    ) -> Result<Tensor<T>> {
        let p = ConvParams {
            weight: weight.clone(),
            bias: bias.cloned(),
            geometry,
        };
        tensor::conv2d(x, &p)
    }

    fn activation(&mut self, x: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
        Ok(tensor::pointwise_nonlinearity(x, kind))
    }

    fn batchnorm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        tensor::batchnorm_inference(x, gamma.data(), beta.data(), mean.data(), var.data(), T::lit(eps))
    }

    fn maxpool2d(&mut self, x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
        tensor::maxpool2d(x, k, stride, pad)
    }

    fn upsample(&mut self, x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
        tensor::upsample_nearest(x, scale)
    }

    fn concat(&mut self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn slice_channels(&mut self, x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
        tensor::slice_channels(x, start, end)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::add(a, b)
    }

    fn attention(&mut self, qkv: &Tensor<T>, spec: &AttentionSpec) -> Result<Tensor<T>> {
        tensor::attention(qkv, spec)
    }
}
