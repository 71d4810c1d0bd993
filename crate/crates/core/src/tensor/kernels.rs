use rayon::prelude::*;

use super::{Activation, ConvParams, Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Range of output positions `o` for which `o * stride + k - pad` lands inside
/// `[0, len)`. Returned as a half-open interval.
#[inline]
pub(super) fn valid_range(out: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    if len + pad < k + 1 {
        return (0, 0);
    }
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = ((len - 1 + pad - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub(super) struct ConvDims {
    pub input: Shape,
    pub c_out: usize,
    pub cin_per_group: usize,
    pub cout_per_group: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(super) fn conv_dims<T: Element>(input: Shape, p: &ConvParams<T>) -> Result<ConvDims> {
    let ws = p.weight.shape();
    let groups = p.geometry.groups;
    if groups == 0 {
        return Err(Error::InvalidBlock("conv2d: groups must be positive".into()));
    }
    if !ws.n.is_multiple_of(groups) {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "output channels (multiple of groups)",
            expected: ws.n.div_ceil(groups) * groups,
            actual: ws.n,
        });
    }
    if input.c != ws.c * groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: ws.c * groups,
            actual: input.c,
        });
    }
    if let Some(b) = &p.bias {
        if b.len() != ws.n {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: ws.n,
                actual: b.len(),
            });
        }
    }
    let (oh, ow) = p.geometry.output_hw(input.h, input.w, ws.h, ws.w)?;
    if input.n == 0 || ws.n == 0 {
        return Err(Error::EmptyOutput {
            op: "conv2d",
            detail: format!("input {input}, weight {ws}"),
        });
    }
    Ok(ConvDims {
        input,
        c_out: ws.n,
        cin_per_group: ws.c,
        cout_per_group: ws.n / groups,
        kh: ws.h,
        kw: ws.w,
        oh,
        ow,
    })
}

/// Grouped 2-D convolution with asymmetric zero padding.
pub fn conv2d<T: Element>(input: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let d = conv_dims(input.shape(), p)?;
    let (sh, sw) = p.geometry.stride;
    let pad = p.geometry.padding;
    let (h, w) = (d.input.h, d.input.w);
    let x = input.data();
    let weight = p.weight.data();
    let bias = p.bias.as_ref().map(|b| b.data());
    let out_plane = d.oh * d.ow;
    let mut out = vec![T::zero(); d.input.n * d.c_out * out_plane];

    out.par_chunks_mut(out_plane).enumerate().for_each(|(idx, plane)| {
        let n = idx / d.c_out;
        let oc = idx % d.c_out;
        let group = oc / d.cout_per_group;
        for icl in 0..d.cin_per_group {
            let ic = group * d.cin_per_group + icl;
            let in_plane = &x[(n * d.input.c + ic) * h * w..][..h * w];
            for ky in 0..d.kh {
                let (oy0, oy1) = valid_range(d.oh, sh, ky, pad.top, h);
                for kx in 0..d.kw {
                    let wv = weight[((oc * d.cin_per_group + icl) * d.kh + ky) * d.kw + kx];
                    let (ox0, ox1) = valid_range(d.ow, sw, kx, pad.left, w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * sh + ky - pad.top;
                        let row = &in_plane[iy * w..(iy + 1) * w];
                        let orow = &mut plane[oy * d.ow..(oy + 1) * d.ow];
                        if sw == 1 {
                            let shift = kx as isize - pad.left as isize;
                            let src = &row[(ox0 as isize + shift) as usize..(ox1 as isize + shift) as usize];
                            for (o, &v) in orow[ox0..ox1].iter_mut().zip(src) {
                                *o = *o + wv * v;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate().take(ox1).skip(ox0) {
                                *o = *o + wv * row[ox * sw + kx - pad.left];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            for v in plane.iter_mut() {
                *v = *v + b[oc];
            }
        }
    });

    Tensor::new(Shape::new(d.input.n, d.c_out, d.oh, d.ow), out)
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn pointwise_nonlinearity<T: Element>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Identity => input.clone(),
        Activation::Sigmoid => input.map(sigmoid),
        Activation::Silu => input.map(|x| x * sigmoid(x)),
    }
}

/// Max pooling with a `-inf` sentinel in padded cells, so padding never wins.
pub fn maxpool2d<T: Element>(input: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    let (oh, ow) = pool_output(s, k, stride, pad)?;
    let x = input.data();
    let mut out = vec![T::zero(); s.n * s.c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let in_plane = &x[idx * s.h * s.w..][..s.h * s.w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let v = in_plane[iy as usize * s.w + ix as usize];
                        if v > best {
                            best = v;
                        }
                    }
                }
                plane[oy * ow + ox] = best;
            }
        }
    });
    Tensor::new(Shape::new(s.n, s.c, oh, ow), out)
}

pub(super) fn pool_output(s: Shape, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidInput("maxpool2d: kernel and stride must be positive".into()));
    }
    if s.h + 2 * pad < k || s.w + 2 * pad < k {
        return Err(Error::EmptyOutput {
            op: "maxpool2d",
            detail: format!("input {s} with pad {pad} smaller than kernel {k}"),
        });
    }
    Ok(((s.h + 2 * pad - k) / stride + 1, (s.w + 2 * pad - k) / stride + 1))
}

pub fn upsample_nearest<T: Element>(input: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    if scale == 0 {
        return Err(Error::InvalidInput("upsample: scale must be at least 1".into()));
    }
    if scale == 1 {
        return Ok(input.clone());
    }
    let s = input.shape();
    let (oh, ow) = (s.h * scale, s.w * scale);
    let x = input.data();
    let mut out = vec![T::zero(); s.n * s.c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, plane)| {
        let in_plane = &x[idx * s.h * s.w..][..s.h * s.w];
        for oy in 0..oh {
            let row = &in_plane[(oy / scale) * s.w..][..s.w];
            for (ox, o) in plane[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *o = row[ox / scale];
            }
        }
    });
    Tensor::new(Shape::new(s.n, s.c, oh, ow), out)
}

pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidInput("concat: no inputs".into()))?
        .shape();
    if inputs.len() == 1 {
        return Ok(inputs[0].clone());
    }
    for t in &inputs[1..] {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::IncompatibleShapes {
                op: "concat",
                left: first.to_string(),
                right: s.to_string(),
            });
        }
    }
    let c_total: usize = inputs.iter().map(|t| t.shape().c).sum();
    let plane = first.plane();
    let mut out = Vec::with_capacity(first.n * c_total * plane);
    for n in 0..first.n {
        for t in inputs {
            let c = t.shape().c;
            out.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::new(first.with_c(c_total), out)
}

/// Channels `[start, end)` of `input`.
pub fn slice_channels<T: Element>(input: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if start > end || end > s.c {
        return Err(Error::InvalidInput(format!(
            "slice_channels: range {start}..{end} outside 0..{}",
            s.c
        )));
    }
    if start == 0 && end == s.c {
        return Ok(input.clone());
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * (end - start) * plane);
    for n in 0..s.n {
        out.extend_from_slice(&input.data()[(n * s.c + start) * plane..(n * s.c + end) * plane]);
    }
    Tensor::new(s.with_c(end - start), out)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::IncompatibleShapes {
            op: "add",
            left: a.shape().to_string(),
            right: b.shape().to_string(),
        });
    }
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), out)
}

/// Inference-mode batch normalization with stored running statistics.
pub fn batchnorm_inference<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let s = input.shape();
    for (name, v) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if v.len() != s.c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm",
                dim: name,
                expected: s.c,
                actual: v.len(),
            });
        }
    }
    let plane = s.plane();
    let mut out = input.data().to_vec();
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, p)| {
        let c = idx % s.c;
        let inv = (var[c] + eps).sqrt().recip();
        for v in p.iter_mut() {
            *v = gamma[c] * (*v - mean[c]) * inv + beta[c];
        }
    });
    Tensor::new(s, out)
}

/// Softmax of one row, computed in place with max-subtraction.
pub fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Head layout of a fused query/key/value tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub key_dim: usize,
    pub head_dim: usize,
    pub scale: f64,
}

impl AttentionSpec {
    pub fn qkv_channels(&self) -> usize {
        self.heads * (2 * self.key_dim + self.head_dim)
    }
}

/// Row-normalized attention matrix `softmax(scale · qᵀk)` for one head,
/// where `q` and `k` are `key_dim × positions` row-major.
pub fn attention_weights<T: Element>(q: &[T], k: &[T], key_dim: usize, scale: T) -> Vec<Vec<T>> {
    let positions = q.len() / key_dim.max(1);
    (0..positions)
        .map(|i| attention_row(q, k, key_dim, positions, i, scale))
        .collect()
}

fn attention_row<T: Element>(q: &[T], k: &[T], key_dim: usize, positions: usize, i: usize, scale: T) -> Vec<T> {
    let mut scores = vec![T::zero(); positions];
    for d in 0..key_dim {
        let qv = q[d * positions + i];
        for (s, &kv) in scores.iter_mut().zip(&k[d * positions..(d + 1) * positions]) {
            *s = *s + qv * kv;
        }
    }
    for s in scores.iter_mut() {
        *s = *s * scale;
    }
    softmax_in_place(&mut scores);
    scores
}

/// Multi-head spatial self-attention over the `h·w` positions of a fused
/// `qkv` tensor laid out per head as `[q (key_dim), k (key_dim), v (head_dim)]`.
/// Returns `(n, heads·head_dim, h, w)`. Rows are computed one at a time so
/// memory stays linear in the number of positions.
pub fn attention<T: Element>(qkv: &Tensor<T>, spec: &AttentionSpec) -> Result<Tensor<T>> {
    let s = qkv.shape();
    if s.c != spec.qkv_channels() {
        return Err(Error::ShapeMismatch {
            op: "attention",
            dim: "qkv channels",
            expected: spec.qkv_channels(),
            actual: s.c,
        });
    }
    let positions = s.plane();
    let per_head = 2 * spec.key_dim + spec.head_dim;
    let c_out = spec.heads * spec.head_dim;
    let scale = T::lit(spec.scale);
    let x = qkv.data();
    let mut out = vec![T::zero(); s.n * c_out * positions];

    for n in 0..s.n {
        for head in 0..spec.heads {
            let base = (n * s.c + head * per_head) * positions;
            let q = &x[base..base + spec.key_dim * positions];
            let k = &x[base + spec.key_dim * positions..base + 2 * spec.key_dim * positions];
            let v = &x[base + 2 * spec.key_dim * positions..base + per_head * positions];
            let rows: Vec<Vec<T>> = (0..positions)
                .into_par_iter()
                .map(|i| {
                    let p = attention_row(q, k, spec.key_dim, positions, i, scale);
                    (0..spec.head_dim)
                        .map(|d| {
                            let vrow = &v[d * positions..(d + 1) * positions];
                            vrow.iter().zip(&p).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                        })
                        .collect()
                })
                .collect();
            let obase = (n * c_out + head * spec.head_dim) * positions;
            for (i, row) in rows.iter().enumerate() {
                for (d, &val) in row.iter().enumerate() {
                    out[obase + d * positions + i] = val;
                }
            }
        }
    }
    Tensor::new(Shape::new(s.n, c_out, s.h, s.w), out)
}
