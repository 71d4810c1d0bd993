//! Reverse-mode differentiation over block forward passes, in double precision.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{self, Activation, AttentionSpec, ConvGeometry, ConvParams, Shape, Tensor};
use crate::weights::Weights;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Conv {
        x: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        geometry: ConvGeometry,
    },
    Activation {
        x: NodeId,
        kind: Activation,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        var: NodeId,
        eps: f64,
    },
    MaxPool {
        x: NodeId,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Upsample {
        x: NodeId,
        scale: usize,
    },
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Add(NodeId, NodeId),
}

struct Node {
    value: Tensor<f64>,
    op: Op,
}

/// Records executed operations so gradients can be propagated back.
pub struct Tape<'a> {
    weights: &'a Weights<f64>,
    nodes: Vec<Node>,
    params: IndexMap<String, NodeId>,
}

/// Gradients for every node of a tape after one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor<f64>>>,
    params: IndexMap<String, NodeId>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> Option<&Tensor<f64>> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn of_param(&self, name: &str) -> Option<&Tensor<f64>> {
        self.params.get(name).and_then(|&id| self.of(id))
    }
}

impl<'a> Tape<'a> {
    pub fn new(weights: &'a Weights<f64>) -> Self {
        Tape {
            weights,
            nodes: Vec::new(),
            params: IndexMap::new(),
        }
    }

    pub fn input(&mut self, value: Tensor<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<f64> {
        &self.nodes[id].value
    }

    /// Parameters read during the recorded forward pass, by name.
    pub fn params(&self) -> &IndexMap<String, NodeId> {
        &self.params
    }

    fn push(&mut self, value: Tensor<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    fn accumulate(grads: &mut [Option<Tensor<f64>>], id: NodeId, g: Tensor<f64>) -> Result<()> {
        grads[id] = Some(match grads[id].take() {
            None => g,
            Some(prev) => tensor::add(&prev, &g)?,
        });
        Ok(())
    }

    /// Propagates `seed` (the gradient of the loss w.r.t. node `output`) to all
    /// earlier nodes.
    pub fn backward(&self, output: NodeId, seed: Tensor<f64>) -> Result<Gradients> {
        if seed.shape() != self.nodes[output].value.shape() {
            return Err(Error::IncompatibleShapes {
                op: "backward seed",
                left: self.nodes[output].value.shape().to_string(),
                right: seed.shape().to_string(),
            });
        }
        let mut grads: Vec<Option<Tensor<f64>>> = vec![None; self.nodes.len()];
        grads[output] = Some(seed);

        for id in (0..=output).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let v = |n: NodeId| &self.nodes[n].value;
            match &self.nodes[id].op {
                Op::Input | Op::Param => {}
                Op::Conv {
                    x,
                    weight,
                    bias,
                    geometry,
                } => {
                    let p = ConvParams {
                        weight: v(*weight).clone(),
                        bias: bias.map(|b| v(b).clone()),
                        geometry: *geometry,
                    };
                    let cg = tensor::conv2d_backward(v(*x), &p, &g)?;
                    Self::accumulate(&mut grads, *x, cg.input)?;
                    Self::accumulate(&mut grads, *weight, cg.weight)?;
                    if let (Some(b), Some(db)) = (bias, cg.bias) {
                        Self::accumulate(&mut grads, *b, db)?;
                    }
                }
                Op::Activation { x, kind } => {
                    let dx = tensor::nonlinearity_backward(v(*x), *kind, &g)?;
                    Self::accumulate(&mut grads, *x, dx)?;
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let bg = tensor::batchnorm_backward(
                        v(*x),
                        v(*gamma).data(),
                        v(*mean).data(),
                        v(*var).data(),
                        *eps,
                        &g,
                    )?;
                    Self::accumulate(&mut grads, *x, bg.input)?;
                    Self::accumulate(&mut grads, *gamma, Tensor::new(v(*gamma).shape(), bg.gamma)?)?;
                    Self::accumulate(&mut grads, *beta, Tensor::new(v(*beta).shape(), bg.beta)?)?;
                    Self::accumulate(&mut grads, *mean, Tensor::new(v(*mean).shape(), bg.mean)?)?;
                    Self::accumulate(&mut grads, *var, Tensor::new(v(*var).shape(), bg.var)?)?;
                }
                Op::MaxPool { x, k, stride, pad } => {
                    let dx = tensor::maxpool2d_backward(v(*x), *k, *stride, *pad, &g)?;
                    Self::accumulate(&mut grads, *x, dx)?;
                }
                Op::Upsample { x, scale } => {
                    let dx = tensor::upsample_nearest_backward(v(*x).shape(), *scale, &g)?;
                    Self::accumulate(&mut grads, *x, dx)?;
                }
                Op::Concat(xs) => {
                    let shapes: Vec<Shape> = xs.iter().map(|&n| v(n).shape()).collect();
                    for (&n, dx) in xs.iter().zip(tensor::concat_backward(&shapes, &g)?) {
                        Self::accumulate(&mut grads, n, dx)?;
                    }
                }
                Op::Slice { x, start } => {
                    let dx = tensor::slice_channels_backward(v(*x).shape(), *start, &g)?;
                    Self::accumulate(&mut grads, *x, dx)?;
                }
                Op::Add(a, b) => {
                    let (da, db) = tensor::add_backward(&g);
                    Self::accumulate(&mut grads, *a, da)?;
                    Self::accumulate(&mut grads, *b, db)?;
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

impl Exec<f64> for Tape<'_> {
    type Value = NodeId;

    fn shape(&self, v: &NodeId) -> Shape {
        self.nodes[*v].value.shape()
    }

    fn param(&mut self, name: &str, dims: &[usize]) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
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
        let id = self.push(p.to_tensor()?, Op::Param);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    fn conv2d(&mut self, x: &NodeId, weight: &NodeId, bias: Option<&NodeId>, geometry: ConvGeometry) -> Result<NodeId> {
        let p = ConvParams {
            weight: self.value(*weight).clone(),
            bias: bias.map(|b| self.value(*b).clone()),
            geometry,
        };
        let out = tensor::conv2d(self.value(*x), &p)?;
        Ok(self.push(
            out,
            Op::Conv {
                x: *x,
                weight: *weight,
                bias: bias.copied(),
                geometry,
            },
        ))
    }

    fn activation(&mut self, x: &NodeId, kind: Activation) -> Result<NodeId> {
        let out = tensor::pointwise_nonlinearity(self.value(*x), kind);
        Ok(self.push(out, Op::Activation { x: *x, kind }))
    }

    fn batchnorm(
        &mut self,
        x: &NodeId,
        gamma: &NodeId,
        beta: &NodeId,
        mean: &NodeId,
        var: &NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let out = tensor::batchnorm_inference(
            self.value(*x),
            self.value(*gamma).data(),
            self.value(*beta).data(),
            self.value(*mean).data(),
            self.value(*var).data(),
            eps,
        )?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x: *x,
                gamma: *gamma,
                beta: *beta,
                mean: *mean,
                var: *var,
                eps,
            },
        ))
    }

    fn maxpool2d(&mut self, x: &NodeId, k: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let out = tensor::maxpool2d(self.value(*x), k, stride, pad)?;
        Ok(self.push(out, Op::MaxPool { x: *x, k, stride, pad }))
    }

    fn upsample(&mut self, x: &NodeId, scale: usize) -> Result<NodeId> {
        let out = tensor::upsample_nearest(self.value(*x), scale)?;
        Ok(self.push(out, Op::Upsample { x: *x, scale }))
    }

    fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let refs: Vec<&Tensor<f64>> = xs.iter().map(|&n| self.value(n)).collect();
        let out = tensor::concat_channels(&refs)?;
        Ok(self.push(out, Op::Concat(xs.to_vec())))
    }

    fn slice_channels(&mut self, x: &NodeId, start: usize, end: usize) -> Result<NodeId> {
        let out = tensor::slice_channels(self.value(*x), start, end)?;
        Ok(self.push(out, Op::Slice { x: *x, start }))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let out = tensor::add(self.value(*a), self.value(*b))?;
        Ok(self.push(out, Op::Add(*a, *b)))
    }

    fn attention(&mut self, _qkv: &NodeId, _spec: &AttentionSpec) -> Result<NodeId> {
        Err(Error::Unsupported("attention"))
    }
}
