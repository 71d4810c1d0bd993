use std::fmt::Debug;

use super::conv::{ConvBlock, GhostConvBlock};
use super::{join, Module, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Activation, Element, Padding, Shape};

/// Inner block of a split/append/merge CSP layer: maps `h` channels to `h`
/// channels at stride 1.
pub trait InnerBlock: Module + Debug + Clone + PartialEq {
    const NAME: &'static str;

    fn build(channels: usize, shortcut: bool) -> Result<Self>;
}

/// Two 2×2 convolutions with bottom/right padding, optional residual.
#[derive(Debug, Clone, PartialEq)]
pub struct K2Bottleneck {
    pub c: usize,
    pub cv1: ConvBlock,
    pub cv2: ConvBlock,
    pub shortcut: bool,
}

pub const K2_PADDING: Padding = Padding {
    top: 0,
    bottom: 1,
    left: 0,
    right: 1,
};

impl InnerBlock for K2Bottleneck {
    const NAME: &'static str = "K2Bottleneck";

    fn build(c: usize, shortcut: bool) -> Result<Self> {
        let conv = ConvBlock::new(c, c, 2, 1).with_padding(K2_PADDING);
        conv.validate()?;
        Ok(K2Bottleneck {
            c,
            cv1: conv.clone(),
            cv2: conv,
            shortcut,
        })
    }
}

impl Module for K2Bottleneck {
    fn kind(&self) -> &'static str {
        Self::NAME
    }

    fn in_channels(&self) -> usize {
        self.c
    }

    fn out_channels(&self) -> usize {
        self.c
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        self.cv2.out_shape(self.cv1.out_shape(input)?)
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mid = self.cv1.out_shape(input)?;
        Ok(self.cv1.flops(input)? + self.cv2.flops(mid)?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.cv1.collect_params(&join(prefix, "cv1"), out);
        self.cv2.collect_params(&join(prefix, "cv2"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let y = self.cv1.forward(ex, &join(prefix, "cv1"), x)?;
        let y = self.cv2.forward(ex, &join(prefix, "cv2"), &y)?;
        if self.shortcut {
            ex.add(x, &y)
        } else {
            Ok(y)
        }
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.cv1.visit_convs(&join(prefix, "cv1"), f)?;
        self.cv2.visit_convs(&join(prefix, "cv2"), f)
    }
}

/// GhostConv (SiLU) then GhostConv (linear), plus residual.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostBottleneck {
    pub c: usize,
    pub ghost1: GhostConvBlock,
    pub ghost2: GhostConvBlock,
    pub shortcut: bool,
}

impl InnerBlock for GhostBottleneck {
    const NAME: &'static str = "GhostBottleneck";

    fn build(c: usize, shortcut: bool) -> Result<Self> {
        Ok(GhostBottleneck {
            c,
            ghost1: GhostConvBlock::new(c, c, 1, 1)?,
            ghost2: GhostConvBlock::with_act(c, c, 1, 1, Activation::Identity)?,
            shortcut,
        })
    }
}

impl Module for GhostBottleneck {
    fn kind(&self) -> &'static str {
        Self::NAME
    }

    fn in_channels(&self) -> usize {
        self.c
    }

    fn out_channels(&self) -> usize {
        self.c
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        self.ghost2.out_shape(self.ghost1.out_shape(input)?)
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mid = self.ghost1.out_shape(input)?;
        Ok(self.ghost1.flops(input)? + self.ghost2.flops(mid)?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.ghost1.collect_params(&join(prefix, "ghost1"), out);
        self.ghost2.collect_params(&join(prefix, "ghost2"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let y = self.ghost1.forward(ex, &join(prefix, "ghost1"), x)?;
        let y = self.ghost2.forward(ex, &join(prefix, "ghost2"), &y)?;
        if self.shortcut {
            ex.add(x, &y)
        } else {
            Ok(y)
        }
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.ghost1.visit_convs(&join(prefix, "ghost1"), f)?;
        self.ghost2.visit_convs(&join(prefix, "ghost2"), f)
    }
}

/// Split/append/merge block.
///
/// A 1×1 convolution expands to `2h` channels (`h = c_out·e`); the second
/// half runs through `n` inner blocks in sequence, every intermediate is
/// kept, and a 1×1 convolution merges the `(2 + n)·h` channels to `c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct CspBlock<B> {
    pub c_in: usize,
    pub c_out: usize,
    pub hidden: usize,
    pub split: ConvBlock,
    pub inner: Vec<B>,
    pub merge: ConvBlock,
}

pub type C3k2Block = CspBlock<K2Bottleneck>;
pub type C3GhostBlock = CspBlock<GhostBottleneck>;

pub const DEFAULT_EXPANSION: f64 = 0.5;

impl<B: InnerBlock> CspBlock<B> {
    /// Block with the default expansion `h = c_out/2`.
    pub fn new(c_in: usize, c_out: usize, n: usize, shortcut: bool) -> Result<Self> {
        Self::with_expansion(c_in, c_out, n, shortcut, DEFAULT_EXPANSION)
    }

    pub fn with_expansion(c_in: usize, c_out: usize, n: usize, shortcut: bool, e: f64) -> Result<Self> {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::InvalidBlock(format!("{}: expansion {e} outside (0, 1]", B::NAME)));
        }
        let hidden = (c_out as f64 * e) as usize;
        if c_in == 0 || hidden == 0 {
            return Err(Error::InvalidBlock(format!(
                "CSP[{}]({c_in}→{c_out}): hidden width must be positive",
                B::NAME
            )));
        }
        let split = ConvBlock::new(c_in, 2 * hidden, 1, 1);
        let merge = ConvBlock::new((2 + n) * hidden, c_out, 1, 1);
        split.validate()?;
        merge.validate()?;
        let inner = (0..n).map(|_| B::build(hidden, shortcut)).collect::<Result<_>>()?;
        Ok(CspBlock {
            c_in,
            c_out,
            hidden,
            split,
            inner,
            merge,
        })
    }

    pub fn depth(&self) -> usize {
        self.inner.len()
    }
}

fn kind_of<B: InnerBlock>() -> &'static str {
    match B::NAME {
        "GhostBottleneck" => "C3Ghost",
        _ => "C3k2",
    }
}

impl<B: InnerBlock> Module for CspBlock<B> {
    fn kind(&self) -> &'static str {
        kind_of::<B>()
    }

    fn in_channels(&self) -> usize {
        self.c_in
    }

    fn out_channels(&self) -> usize {
        self.c_out
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        let mut s = self.split.out_shape(input)?.with_c(self.hidden);
        for b in &self.inner {
            s = b.out_shape(s)?;
        }
        self.merge.out_shape(s.with_c(self.merge.c_in))
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mut total = self.split.flops(input)?;
        let mut s = self.split.out_shape(input)?.with_c(self.hidden);
        for b in &self.inner {
            total += b.flops(s)?;
            s = b.out_shape(s)?;
        }
        Ok(total + self.merge.flops(s.with_c(self.merge.c_in))?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.split.collect_params(&join(prefix, "split"), out);
        for (i, b) in self.inner.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("m.{i}")), out);
        }
        self.merge.collect_params(&join(prefix, "merge"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let y = self.split.forward(ex, &join(prefix, "split"), x)?;
        let h = self.hidden;
        let mut parts = vec![ex.slice_channels(&y, 0, h)?, ex.slice_channels(&y, h, 2 * h)?];
        for (i, b) in self.inner.iter().enumerate() {
            let last = parts.last().expect("two halves present").clone();
            parts.push(b.forward(ex, &join(prefix, &format!("m.{i}")), &last)?);
        }
        let cat = ex.concat(&parts)?;
        self.merge.forward(ex, &join(prefix, "merge"), &cat)
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.split.visit_convs(&join(prefix, "split"), f)?;
        for (i, b) in self.inner.iter_mut().enumerate() {
            b.visit_convs(&join(prefix, &format!("m.{i}")), f)?;
        }
        self.merge.visit_convs(&join(prefix, "merge"), f)
    }
}
