//! Analytic gradients of the kernel set. Each function takes the forward
//! operands plus the gradient of the loss with respect to the forward output.

use rayon::prelude::*;

use super::kernels::{conv_dims, pool_output, sigmoid, valid_range};
use super::{Activation, ConvParams, Element, Shape, Tensor};
use crate::error::{Error, Result};

fn check_grad_shape(op: &'static str, expected: Shape, grad: &Tensor<impl Element>) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::IncompatibleShapes {
            op,
            left: expected.to_string(),
            right: grad.shape().to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let d = conv_dims(input.shape(), p)?;
    check_grad_shape("conv2d backward", Shape::new(d.input.n, d.c_out, d.oh, d.ow), grad_out)?;
    let (sh, sw) = p.geometry.stride;
    let pad = p.geometry.padding;
    let (h, w) = (d.input.h, d.input.w);
    let x = input.data();
    let g = grad_out.data();
    let weight = p.weight.data();
    let out_plane = d.oh * d.ow;

    // Weight gradient: one chunk per output channel.
    let wsize = d.cin_per_group * d.kh * d.kw;
    let mut dw = vec![T::zero(); d.c_out * wsize];
    dw.par_chunks_mut(wsize).enumerate().for_each(|(oc, chunk)| {
        let group = oc / d.cout_per_group;
        for n in 0..d.input.n {
            let gplane = &g[(n * d.c_out + oc) * out_plane..][..out_plane];
            for icl in 0..d.cin_per_group {
                let ic = group * d.cin_per_group + icl;
                let in_plane = &x[(n * d.input.c + ic) * h * w..][..h * w];
                for ky in 0..d.kh {
                    let (oy0, oy1) = valid_range(d.oh, sh, ky, pad.top, h);
                    for kx in 0..d.kw {
                        let (ox0, ox1) = valid_range(d.ow, sw, kx, pad.left, w);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - pad.top;
                            for ox in ox0..ox1 {
                                let ix = ox * sw + kx - pad.left;
                                acc = acc + gplane[oy * d.ow + ox] * in_plane[iy * w + ix];
                            }
                        }
                        let slot = &mut chunk[(icl * d.kh + ky) * d.kw + kx];
                        *slot = *slot + acc;
                    }
                }
            }
        }
    });

    // Input gradient: one chunk per (n, input channel) plane.
    let mut dx = vec![T::zero(); d.input.numel()];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let n = idx / d.input.c;
        let ic = idx % d.input.c;
        let group = ic / d.cin_per_group;
        let icl = ic % d.cin_per_group;
        for ocl in 0..d.cout_per_group {
            let oc = group * d.cout_per_group + ocl;
            let gplane = &g[(n * d.c_out + oc) * out_plane..][..out_plane];
            for ky in 0..d.kh {
                let (oy0, oy1) = valid_range(d.oh, sh, ky, pad.top, h);
                for kx in 0..d.kw {
                    let wv = weight[((oc * d.cin_per_group + icl) * d.kh + ky) * d.kw + kx];
                    let (ox0, ox1) = valid_range(d.ow, sw, kx, pad.left, w);
                    for oy in oy0..oy1 {
                        let iy = oy * sh + ky - pad.top;
                        for ox in ox0..ox1 {
                            let ix = ox * sw + kx - pad.left;
                            plane[iy * w + ix] = plane[iy * w + ix] + wv * gplane[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    });

    let bias = match &p.bias {
        Some(_) => {
            let db = (0..d.c_out)
                .map(|oc| {
                    (0..d.input.n)
                        .flat_map(|n| g[(n * d.c_out + oc) * out_plane..][..out_plane].iter().copied())
                        .fold(T::zero(), |a, b| a + b)
                })
                .collect();
            Some(Tensor::vector(db))
        }
        None => None,
    };

    Ok(ConvGrads {
        input: Tensor::new(d.input, dx)?,
        weight: Tensor::new(p.weight.shape(), dw)?,
        bias,
    })
}

pub fn nonlinearity_backward<T: Element>(
    input: &Tensor<T>,
    kind: Activation,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_grad_shape("activation backward", input.shape(), grad_out)?;
    let grad = match kind {
        Activation::Identity => return Ok(grad_out.clone()),
        Activation::Sigmoid => input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| {
                let s = sigmoid(x);
                g * s * (T::one() - s)
            })
            .collect(),
        Activation::Silu => input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| {
                let s = sigmoid(x);
                g * s * (T::one() + x * (T::one() - s))
            })
            .collect(),
    };
    Tensor::new(input.shape(), grad)
}

/// Routes each output gradient to the first maximal cell of its window,
/// scanning in the same order as the forward pass.
pub fn maxpool2d_backward<T: Element>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let (oh, ow) = pool_output(s, k, stride, pad)?;
    check_grad_shape("maxpool2d backward", Shape::new(s.n, s.c, oh, ow), grad_out)?;
    let x = input.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); s.numel()];
    dx.par_chunks_mut(s.plane()).enumerate().for_each(|(idx, plane)| {
        let in_plane = &x[idx * s.plane()..][..s.plane()];
        let gplane = &g[idx * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut arg = None;
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
                        let off = iy as usize * s.w + ix as usize;
                        if in_plane[off] > best {
                            best = in_plane[off];
                            arg = Some(off);
                        }
                    }
                }
                if let Some(off) = arg {
                    plane[off] = plane[off] + gplane[oy * ow + ox];
                }
            }
        }
    });
    Tensor::new(s, dx)
}

pub fn upsample_nearest_backward<T: Element>(input_shape: Shape, scale: usize, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input_shape;
    check_grad_shape(
        "upsample backward",
        Shape::new(s.n, s.c, s.h * scale, s.w * scale),
        grad_out,
    )?;
    let (oh, ow) = (s.h * scale, s.w * scale);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); s.numel()];
    dx.par_chunks_mut(s.plane()).enumerate().for_each(|(idx, plane)| {
        let gplane = &g[idx * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let off = (oy / scale) * s.w + ox / scale;
                plane[off] = plane[off] + gplane[oy * ow + ox];
            }
        }
    });
    Tensor::new(s, dx)
}

/// Splits the output gradient back into per-input channel slices.
pub fn concat_backward<T: Element>(input_shapes: &[Shape], grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut start = 0;
    let mut grads = Vec::with_capacity(input_shapes.len());
    for s in input_shapes {
        grads.push(super::slice_channels(grad_out, start, start + s.c)?);
        start += s.c;
    }
    if start != grad_out.shape().c {
        return Err(Error::ShapeMismatch {
            op: "concat backward",
            dim: "channels",
            expected: start,
            actual: grad_out.shape().c,
        });
    }
    Ok(grads)
}

pub fn slice_channels_backward<T: Element>(
    input_shape: Shape,
    start: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    if start + gs.c > input_shape.c || gs.n != input_shape.n || gs.plane() != input_shape.plane() {
        return Err(Error::IncompatibleShapes {
            op: "slice backward",
            left: input_shape.to_string(),
            right: gs.to_string(),
        });
    }
    let plane = input_shape.plane();
    let mut dx = vec![T::zero(); input_shape.numel()];
    for n in 0..gs.n {
        let src = &grad_out.data()[n * gs.c * plane..(n + 1) * gs.c * plane];
        let dst = (n * input_shape.c + start) * plane;
        dx[dst..dst + src.len()].copy_from_slice(src);
    }
    Tensor::new(input_shape, dx)
}

pub fn add_backward<T: Element>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub fn batchnorm_backward<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = input.shape();
    check_grad_shape("batchnorm backward", s, grad_out)?;
    let plane = s.plane();
    let x = input.data();
    let g = grad_out.data();
    let half = T::lit(0.5);
    let mut dx = vec![T::zero(); s.numel()];
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut dmean = vec![T::zero(); s.c];
    let mut dvar = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let inv = (var[c] + eps).sqrt().recip();
            let off = (n * s.c + c) * plane;
            for i in off..off + plane {
                let xhat = (x[i] - mean[c]) * inv;
                dx[i] = g[i] * gamma[c] * inv;
                dgamma[c] = dgamma[c] + g[i] * xhat;
                dbeta[c] = dbeta[c] + g[i];
                dmean[c] = dmean[c] - g[i] * gamma[c] * inv;
                dvar[c] = dvar[c] - half * g[i] * gamma[c] * xhat * inv * inv;
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(s, dx)?,
        gamma: dgamma,
        beta: dbeta,
        mean: dmean,
        var: dvar,
    })
}
