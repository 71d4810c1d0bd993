//! Network building blocks with a uniform contract: forward pass, output
//! shape, learnable parameter count and FLOP count.
//!
//! FLOPs are counted as 2 × multiply-accumulates for convolutions and
//! attention matmuls. Pooling, activations, batch norm, residual adds and
//! concatenation count as zero.

mod conv;
mod csp;
mod detect;
mod psa;
mod sppf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Element, Shape};

pub use conv::{auto_padding, ConvBlock, GhostConvBlock, DEFAULT_BN_EPS, GHOST_CHEAP_KERNEL};
pub use csp::{C3GhostBlock, C3k2Block, CspBlock, GhostBottleneck, InnerBlock, K2Bottleneck, DEFAULT_EXPANSION, K2_PADDING};
pub use detect::{DetectBranch, DetectHead, REG_MAX};
pub use psa::{C2psaBlock, PsaConfig, PsaUnit};
pub use sppf::{SppfBlock, SPPF_POOL};

pub const FLOPS_CONVENTION: &str = "2·MAC";

/// Role of a stored parameter; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::BnMean | ParamKind::BnVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, kind: ParamKind) -> Self {
        ParamSpec {
            name: name.into(),
            dims,
            kind,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Single-input, single-output block.
pub trait Module {
    fn kind(&self) -> &'static str;

    fn in_channels(&self) -> usize;

    fn out_channels(&self) -> usize;

    fn out_shape(&self, input: Shape) -> Result<Shape>;

    fn flops(&self, input: Shape) -> Result<u64>;

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>);

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value>;

    /// Visits every convolution (with its parameter prefix) in forward order.
    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()>;

    fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.param_specs("")
            .iter()
            .filter(|s| s.kind.is_learnable())
            .map(ParamSpec::numel)
            .sum()
    }

    fn check_input(&self, input: Shape) -> Result<()> {
        if input.c != self.in_channels() || input.c == 0 {
            return Err(Error::ChannelMismatch {
                block: format!("{}({}→{})", self.kind(), self.in_channels(), self.out_channels()),
                expected: self.in_channels(),
                actual: input.c,
            });
        }
        Ok(())
    }
}

/// A graph layer: a compute block or a wiring layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Conv(ConvBlock),
    GhostConv(GhostConvBlock),
    C3k2(C3k2Block),
    C3Ghost(C3GhostBlock),
    Sppf(SppfBlock),
    C2psa(C2psaBlock),
    Upsample { scale: usize },
    Concat,
    Detect(DetectHead),
}

macro_rules! dispatch {
    ($self:expr, $b:ident => $e:expr, $other:pat => $o:expr) => {
        match $self {
            Block::Conv($b) => $e,
            Block::GhostConv($b) => $e,
            Block::C3k2($b) => $e,
            Block::C3Ghost($b) => $e,
            Block::Sppf($b) => $e,
            Block::C2psa($b) => $e,
            $other => $o,
        }
    };
}

impl Block {
    pub fn kind(&self) -> &'static str {
        dispatch!(self, b => b.kind(), other => match other {
            Block::Upsample { .. } => "Upsample",
            Block::Concat => "Concat",
            Block::Detect(_) => "Detect",
            _ => unreachable!(),
        })
    }

    fn single_input(&self, inputs: &[Shape]) -> Result<Shape> {
        match inputs {
            [s] => Ok(*s),
            _ => Err(Error::InvalidInput(format!(
                "{} takes exactly one input, got {}",
                self.kind(),
                inputs.len()
            ))),
        }
    }

    pub fn out_shapes(&self, inputs: &[Shape]) -> Result<Vec<Shape>> {
        match self {
            Block::Upsample { scale } => {
                let s = self.single_input(inputs)?;
                Ok(vec![Shape::new(s.n, s.c, s.h * scale, s.w * scale)])
            }
            Block::Concat => {
                let first = *inputs
                    .first()
                    .ok_or_else(|| Error::InvalidInput("Concat needs at least one input".into()))?;
                for s in &inputs[1..] {
                    if s.n != first.n || s.h != first.h || s.w != first.w {
                        return Err(Error::IncompatibleShapes {
                            op: "Concat",
                            left: first.to_string(),
                            right: s.to_string(),
                        });
                    }
                }
                Ok(vec![first.with_c(inputs.iter().map(|s| s.c).sum())])
            }
            Block::Detect(d) => d.out_shapes(inputs),
            _ => {
                let s = self.single_input(inputs)?;
                dispatch!(self, b => Ok(vec![b.out_shape(s)?]), _ => unreachable!())
            }
        }
    }

    pub fn flops(&self, inputs: &[Shape]) -> Result<u64> {
        match self {
            Block::Upsample { .. } | Block::Concat => {
                self.out_shapes(inputs)?;
                Ok(0)
            }
            Block::Detect(d) => d.flops(inputs),
            _ => {
                let s = self.single_input(inputs)?;
                dispatch!(self, b => b.flops(s), _ => unreachable!())
            }
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        match self {
            Block::Upsample { .. } | Block::Concat => {}
            Block::Detect(d) => d.collect_params(prefix, out),
            _ => dispatch!(self, b => b.collect_params(prefix, out), _ => unreachable!()),
        }
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_specs("")
            .iter()
            .filter(|s| s.kind.is_learnable())
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, inputs: &[E::Value]) -> Result<Vec<E::Value>> {
        match self {
            Block::Upsample { scale } => match inputs {
                [x] => Ok(vec![ex.upsample(x, *scale)?]),
                _ => Err(Error::InvalidInput("Upsample takes exactly one input".into())),
            },
            Block::Concat => Ok(vec![ex.concat(inputs)?]),
            Block::Detect(d) => d.forward(ex, prefix, inputs),
            _ => match inputs {
                [x] => dispatch!(self, b => Ok(vec![b.forward(ex, prefix, x)?]), _ => unreachable!()),
                _ => Err(Error::InvalidInput(format!("{} takes exactly one input", self.kind()))),
            },
        }
    }

    pub fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        match self {
            Block::Upsample { .. } | Block::Concat => Ok(()),
            Block::Detect(d) => d.visit_convs(prefix, f),
            _ => dispatch!(self, b => b.visit_convs(prefix, f), _ => unreachable!()),
        }
    }
}
