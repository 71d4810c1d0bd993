//! Finite-difference verification of reverse-mode gradients.
//!
//! The scalar loss is `L = Σ r ⊙ f(x)` for a fixed random `r`. Analytic
//! gradients of `L` with respect to the input and every parameter read come
//! from [`Tape`]; each is compared with the central difference
//! `(L(θ + ε) − L(θ − ε)) / 2ε`. The error of one coordinate is
//! `|g_a − g_n| / max(|g_a|, |g_n|, floor)`; the floor keeps coordinates
//! whose true gradient is zero from dividing by rounding noise.

use serde::Serialize;

use crate::autodiff::Tape;
use crate::blocks::{Block, C3k2Block, GhostConvBlock, ParamSpec, SppfBlock};
use crate::error::{Error, Result};
use crate::exec::{Eval, Exec};
use crate::tensor::{Shape, Tensor};
use crate::weights::{init_params, BatchNormInit, ParamTensor, SplitMix64, Weights};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-6;
/// Blocks accepted by [`check_named`].
pub const BLOCK_NAMES: &[&str] = &["GhostConv", "C3k2", "SPPF"];

/// A single-input computation with named parameters.
pub trait Differentiable {
    fn param_specs(&self) -> Vec<ParamSpec>;
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value>;
}

const PREFIX: &str = "block";

impl Differentiable for Block {
    fn param_specs(&self) -> Vec<ParamSpec> {
        Block::param_specs(self, PREFIX)
    }

    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let mut out = self.forward(ex, PREFIX, std::slice::from_ref(x))?;
        match out.len() {
            1 => Ok(out.remove(0)),
            n => Err(Error::InvalidInput(format!("gradcheck needs one output, got {n}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub name: String,
    pub input_shape: [usize; 4],
    pub eps: f64,
    pub tolerance: f64,
    /// Number of coordinates compared (input plus parameters).
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest relative error, e.g. `input[17]`.
    pub worst: String,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn summary(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let cmp = if self.passed { "<" } else { ">=" };
        format!(
            "{verdict} max_rel_err {cmp} {:e} ({}: max_rel_err={:.3e} at {}, max_abs_err={:.3e}, {} coordinates, eps={:e})",
            self.tolerance, self.name, self.max_rel_err, self.worst, self.max_abs_err, self.checked, self.eps
        )
    }
}

fn output<D: Differentiable>(f: &D, weights: &Weights<f64>, x: &Tensor<f64>, len: usize) -> Result<Tensor<f64>> {
    let mut ex = Eval::new(weights);
    let y = f.run(&mut ex, x)?;
    if y.data().len() != len {
        return Err(Error::InvalidInput("output size changed between evaluations".into()));
    }
    Ok(y)
}

/// `(L(+) − L(−)) / 2ε`, differenced per output element before the
/// weighted sum so the two large losses never cancel.
fn central<D: Differentiable>(f: &D, plus: (&Weights<f64>, &Tensor<f64>), minus: (&Weights<f64>, &Tensor<f64>), r: &[f64], eps: f64) -> Result<f64> {
    let yp = output(f, plus.0, plus.1, r.len())?;
    let ym = output(f, minus.0, minus.1, r.len())?;
    let dl: f64 = yp.data().iter().zip(ym.data()).zip(r).map(|((a, b), w)| (a - b) * w).sum();
    Ok(dl / (2.0 * eps))
}

fn perturbed(t: &Tensor<f64>, i: usize, delta: f64) -> Result<Tensor<f64>> {
    let mut data = t.data().to_vec();
    data[i] += delta;
    Tensor::new(t.shape(), data)
}

fn with_param(weights: &Weights<f64>, name: &str, i: usize, delta: f64) -> Result<Weights<f64>> {
    let p = weights.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
    let mut data = p.data().to_vec();
    data[i] += delta;
    let mut w = weights.clone();
    w.replace(name, ParamTensor::new(p.dims().to_vec(), data)?)?;
    Ok(w)
}

#[derive(Default)]
struct Worst {
    checked: usize,
    rel: f64,
    abs: f64,
    at: String,
}

impl Worst {
    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.abs = self.abs.max(abs);
        if rel > self.rel || self.at.is_empty() {
            self.rel = rel;
            self.at = at();
        }
    }
}

/// Compares analytic and numeric gradients of `f` at input `x`.
pub fn check<D: Differentiable>(name: &str, f: &D, weights: &Weights<f64>, x: &Tensor<f64>, eps: f64, seed: u64) -> Result<GradcheckReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new(weights);
    let xi = tape.input(x.clone());
    let yi = f.run(&mut tape, &xi)?;
    let out_shape = tape.value(yi).shape();
    let mut rng = SplitMix64::new(seed ^ 0x5EED);
    let r: Vec<f64> = (0..out_shape.numel()).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
    let grads = tape.backward(yi, Tensor::new(out_shape, r.clone())?)?;

    let mut worst = Worst::default();
    let zeros_x = Tensor::zeros(x.shape());
    let gx = grads.of(xi).unwrap_or(&zeros_x);
    for i in 0..x.data().len() {
        let numeric = central(f, (weights, &perturbed(x, i, eps)?), (weights, &perturbed(x, i, -eps)?), &r, eps)?;
        worst.record(gx.data()[i], numeric, || format!("input[{i}]"));
    }
    for (pname, _) in tape.params() {
        let p = weights.get(pname).ok_or_else(|| Error::MissingWeight(pname.clone()))?;
        let zeros = vec![0.0; p.numel()];
        let g = grads.of_param(pname).map(|t| t.data()).unwrap_or(&zeros);
        for (i, &analytic) in g.iter().enumerate() {
            let (wp, wm) = (with_param(weights, pname, i, eps)?, with_param(weights, pname, i, -eps)?);
            let numeric = central(f, (&wp, x), (&wm, x), &r, eps)?;
            worst.record(analytic, numeric, || format!("{pname}[{i}]"));
        }
    }
    let s = x.shape();
    Ok(GradcheckReport {
        name: name.to_string(),
        input_shape: [s.n, s.c, s.h, s.w],
        eps,
        tolerance: TOLERANCE,
        checked: worst.checked,
        max_rel_err: worst.rel,
        max_abs_err: worst.abs,
        worst: worst.at,
        passed: worst.rel < TOLERANCE,
    })
}

/// Uniform `[-1, 1)` tensor from a SplitMix64 stream.
pub fn random_input(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_, _, _, _| 2.0 * rng.next_f64() - 1.0)
}

/// Block instance checked by name on a `1×4×6×6` input: GhostConv 4→4
/// (3×3 primary, stride 1), C3k2 4→4 with one bottleneck, SPPF 4→4.
pub fn named_block(name: &str) -> Result<Block> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "ghostconv" => Block::GhostConv(GhostConvBlock::new(4, 4, 3, 1)?),
        "c3k2" => Block::C3k2(C3k2Block::new(4, 4, 1, true)?),
        "sppf" => Block::Sppf(SppfBlock::new(4, 4)?),
        _ => {
            return Err(Error::InvalidInput(format!(
                "unknown gradcheck block {name:?}; valid: {}",
                BLOCK_NAMES.join(", ")
            )))
        }
    })
}

/// Double-precision check of a named block with perturbed batch-norm
/// statistics.
pub fn check_named(name: &str, eps: f64, seed: u64) -> Result<GradcheckReport> {
    let block = named_block(name)?;
    let weights: Weights<f64> = init_params(&Differentiable::param_specs(&block), seed, BatchNormInit::Perturbed)?;
    let x = random_input(Shape::new(1, 4, 6, 6), seed.wrapping_add(1));
    check(block.kind(), &block, &weights, &x, eps, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::ParamKind;
    use crate::tensor::{Activation, ConvGeometry, Padding};

    struct ConvOp {
        c_in: usize,
        c_out: usize,
        k: usize,
        geometry: ConvGeometry,
    }

    impl Differentiable for ConvOp {
        fn param_specs(&self) -> Vec<ParamSpec> {
            let fan_in = self.c_in / self.geometry.groups * self.k * self.k;
            vec![
                ParamSpec::new("w", vec![self.c_out, self.c_in / self.geometry.groups, self.k, self.k], ParamKind::Weight { fan_in }),
                ParamSpec::new("b", vec![self.c_out], ParamKind::Bias { fan_in }),
            ]
        }

        fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
            let w = ex.param("w", &[self.c_out, self.c_in / self.geometry.groups, self.k, self.k])?;
            let b = ex.param("b", &[self.c_out])?;
            ex.conv2d(x, &w, Some(&b), self.geometry)
        }
    }

    fn conv_case(c_in: usize, c_out: usize, k: usize, geometry: ConvGeometry, hw: usize) -> GradcheckReport {
        let op = ConvOp { c_in, c_out, k, geometry };
        let w = init_params(&op.param_specs(), 3, BatchNormInit::Identity).unwrap();
        let x = random_input(Shape::new(1, c_in, hw, hw), 4);
        check("conv2d", &op, &w, &x, DEFAULT_EPS, 5).unwrap()
    }

    #[test]
    fn conv2d_dense() {
        let r = conv_case(2, 3, 3, ConvGeometry::default(), 4);
        assert!(r.passed, "{}", r.summary());
    }

    #[test]
    fn conv2d_strided_grouped_padded() {
        let g = ConvGeometry {
            stride: (2, 2),
            padding: Padding::new(1, 0, 0, 1),
            groups: 2,
        };
        let r = conv_case(4, 4, 3, g, 5);
        assert!(r.passed, "{}", r.summary());
    }

    struct Chain;

    impl Differentiable for Chain {
        fn param_specs(&self) -> Vec<ParamSpec> {
            let c = 2;
            vec![
                ParamSpec::new("g", vec![c], ParamKind::BnGamma),
                ParamSpec::new("b", vec![c], ParamKind::BnBeta),
                ParamSpec::new("m", vec![c], ParamKind::BnMean),
                ParamSpec::new("v", vec![c], ParamKind::BnVar),
            ]
        }

        fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
            let [g, b, m, v] = ["g", "b", "m", "v"].map(|n| ex.param(n, &[2]));
            let y = ex.batchnorm(x, &g?, &b?, &m?, &v?, 1e-3)?;
            let y = ex.activation(&y, Activation::Silu)?;
            let s = ex.activation(&y, Activation::Sigmoid)?;
            let p = ex.maxpool2d(&s, 3, 1, 1)?;
            let u = ex.upsample(&p, 2)?;
            let y2 = ex.upsample(&y, 2)?;
            let sum = ex.add(&u, &y2)?;
            let cat = ex.concat(&[sum.clone(), y2])?;
            ex.slice_channels(&cat, 1, 3)
        }
    }

    #[test]
    fn pointwise_pool_and_plumbing_ops() {
        let w = init_params(&Chain.param_specs(), 9, BatchNormInit::Perturbed).unwrap();
        let x = random_input(Shape::new(1, 2, 4, 4), 10);
        let r = check("chain", &Chain, &w, &x, DEFAULT_EPS, 11).unwrap();
        assert!(r.passed, "{}", r.summary());
    }

    #[test]
    fn named_blocks_pass() {
        for name in BLOCK_NAMES {
            let r = check_named(name, DEFAULT_EPS, 0).unwrap();
            assert!(r.passed, "{}", r.summary());
            assert!(r.checked > 144);
        }
    }

    #[test]
    fn error_measure() {
        let mut w = Worst::default();
        w.record(1.0, 1.0 + 1e-9, || "a".into());
        w.record(0.0, 1e-12, || "b".into());
        w.record(2.0, 1.0, || "c".into());
        assert_eq!(w.checked, 3);
        assert_eq!((w.rel, w.abs, w.at.as_str()), (0.5, 1.0, "c"));
    }

    #[test]
    fn unknown_name() {
        assert!(check_named("Detect", DEFAULT_EPS, 0).is_err());
    }
}
