//! Dense NCHW tensors and the deterministic kernel set every block is built on.
//!
//! Kernels are generic over [`Element`] so the same code runs in single
//! precision for inference and in double precision for gradient checking.
//! Work inside a kernel is split across output planes with rayon; each output
//! element is always accumulated in the same order, so results are
//! bit-identical regardless of thread count.

mod backward;
mod kernels;

use std::fmt;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::{
    add_backward, batchnorm_backward, concat_backward, conv2d_backward, maxpool2d_backward,
    nonlinearity_backward, slice_channels_backward, upsample_nearest_backward, BatchNormGrads,
    ConvGrads,
};
pub use kernels::{
    add, attention, attention_weights, batchnorm_inference, concat_channels, conv2d, maxpool2d,
    pointwise_nonlinearity, slice_channels, softmax_in_place, upsample_nearest, AttentionSpec,
};

/// Floating-point element type of a tensor.
pub trait Element: Float + Sum + Default + fmt::Debug + Send + Sync + 'static {
    const NAME: &'static str;

    fn lit(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 literal fits every element type")
    }

    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";
}

impl Element for f64 {
    const NAME: &'static str = "f64";
}

/// Extent of a 4-D NCHW tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Immutable dense tensor. Cloning shares the underlying buffer.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                dim: "numel",
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Wraps an existing shared buffer; used by weight stores to avoid copies.
    pub fn from_shared(shape: Shape, data: Arc<Vec<T>>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                dim: "numel",
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    /// A per-channel vector stored as `(len, 1, 1, 1)`.
    pub fn vector(values: Vec<T>) -> Self {
        let shape = Shape::new(values.len(), 1, 1, 1);
        Tensor {
            shape,
            data: Arc::new(values),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn shared_data(&self) -> &Arc<Vec<T>> {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        Self::from_shared(shape, Arc::clone(&self.data))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

/// Pointwise nonlinearity applied after a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Sigmoid,
    Identity,
}

/// Explicit per-side zero padding. Even kernels need it asymmetric to keep
/// the spatial extent at stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Padding {
            top,
            bottom,
            left,
            right,
        }
    }

    /// "Same" padding for a stride-1 kernel of size `k`; the extra row and
    /// column of an even kernel go to the bottom/right.
    pub const fn same(k: usize) -> Self {
        let lo = (k - 1) / 2;
        let hi = k - 1 - lo;
        Padding::new(lo, hi, lo, hi)
    }
}

/// Stride, padding and grouping of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: Padding,
    pub groups: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: (1, 1),
            padding: Padding::default(),
            groups: 1,
        }
    }
}

impl ConvGeometry {
    /// Output `(h, w)` for a `kh × kw` kernel over an `h × w` plane.
    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidBlock("stride must be positive".into()));
        }
        if ph < kh || pw < kw || kh == 0 || kw == 0 {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!("padded input {ph}x{pw} smaller than kernel {kh}x{kw}"),
            });
        }
        Ok(((ph - kh) / self.stride.0 + 1, (pw - kw) / self.stride.1 + 1))
    }
}

/// Weights and geometry of one convolution: weight is
/// `(c_out, c_in / groups, k_h, k_w)`, bias is an optional length-`c_out` vector.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: ConvGeometry,
}
