use super::conv::ConvBlock;
use super::{join, Module, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Element, Shape};

/// Distribution bins per box side.
pub const REG_MAX: usize = 16;

/// Per-scale branch pair: box distribution (`4·reg_max` channels) and class
/// logits (`nc` channels), concatenated in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectBranch {
    pub box_convs: Vec<ConvBlock>,
    pub cls_convs: Vec<ConvBlock>,
}

/// Anchor-free multi-scale detection head.
///
/// Box branch: 3×3 conv, 3×3 conv, 1×1 projection. Class branch: depthwise
/// 3×3, 1×1, depthwise 3×3, 1×1, 1×1 projection. Default widths follow
/// `c_box = max(16, c0/4, 4·reg_max)` and `c_cls = max(c0, min(nc, 100))`
/// where `c0` is the first scale's input width.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectHead {
    pub nc: usize,
    pub reg_max: usize,
    pub in_channels: Vec<usize>,
    pub c_box: usize,
    pub c_cls: usize,
    pub branches: Vec<DetectBranch>,
}

impl DetectHead {
    pub fn new(nc: usize, in_channels: &[usize]) -> Result<Self> {
        let c0 = *in_channels
            .first()
            .ok_or_else(|| Error::InvalidBlock("Detect needs at least one input scale".into()))?;
        let c_box = 16.max(c0 / 4).max(4 * REG_MAX);
        let c_cls = c0.max(nc.min(100));
        Self::with_widths(nc, in_channels, c_box, c_cls)
    }

    pub fn with_widths(nc: usize, in_channels: &[usize], c_box: usize, c_cls: usize) -> Result<Self> {
        if nc == 0 {
            return Err(Error::InvalidBlock("Detect: class count must be positive".into()));
        }
        if in_channels.is_empty() || c_box == 0 || c_cls == 0 {
            return Err(Error::InvalidBlock(format!(
                "Detect: invalid widths (inputs {in_channels:?}, box {c_box}, cls {c_cls})"
            )));
        }
        let reg_max = REG_MAX;
        let mut branches = Vec::with_capacity(in_channels.len());
        for &c in in_channels {
            let box_convs = vec![
                ConvBlock::new(c, c_box, 3, 1),
                ConvBlock::new(c_box, c_box, 3, 1),
                ConvBlock::plain(c_box, 4 * reg_max, 1),
            ];
            let cls_convs = vec![
                ConvBlock::depthwise(c, 3, 1),
                ConvBlock::new(c, c_cls, 1, 1),
                ConvBlock::depthwise(c_cls, 3, 1),
                ConvBlock::new(c_cls, c_cls, 1, 1),
                ConvBlock::plain(c_cls, nc, 1),
            ];
            for conv in box_convs.iter().chain(&cls_convs) {
                conv.validate()?;
            }
            branches.push(DetectBranch { box_convs, cls_convs });
        }
        Ok(DetectHead {
            nc,
            reg_max,
            in_channels: in_channels.to_vec(),
            c_box,
            c_cls,
            branches,
        })
    }

    pub fn num_scales(&self) -> usize {
        self.branches.len()
    }

    pub fn out_channels(&self) -> usize {
        4 * self.reg_max + self.nc
    }

    fn check_inputs(&self, inputs: &[Shape]) -> Result<()> {
        if inputs.len() != self.branches.len() {
            return Err(Error::InvalidInput(format!(
                "Detect expects {} input scales, got {}",
                self.branches.len(),
                inputs.len()
            )));
        }
        for (s, &c) in inputs.iter().zip(&self.in_channels) {
            if s.c != c {
                return Err(Error::ChannelMismatch {
                    block: format!("Detect(scale {c})"),
                    expected: c,
                    actual: s.c,
                });
            }
        }
        Ok(())
    }

    pub fn out_shapes(&self, inputs: &[Shape]) -> Result<Vec<Shape>> {
        self.check_inputs(inputs)?;
        inputs
            .iter()
            .zip(&self.branches)
            .map(|(&s, b)| {
                let bx = chain_shape(&b.box_convs, s)?;
                let cl = chain_shape(&b.cls_convs, s)?;
                Ok(bx.with_c(bx.c + cl.c))
            })
            .collect()
    }

    pub fn flops(&self, inputs: &[Shape]) -> Result<u64> {
        self.check_inputs(inputs)?;
        let mut total = 0;
        for (&s, b) in inputs.iter().zip(&self.branches) {
            total += chain_flops(&b.box_convs, s)? + chain_flops(&b.cls_convs, s)?;
        }
        Ok(total)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        for (i, b) in self.branches.iter().enumerate() {
            for (j, conv) in b.box_convs.iter().enumerate() {
                conv.collect_params(&join(prefix, &format!("box.{i}.{j}")), out);
            }
            for (j, conv) in b.cls_convs.iter().enumerate() {
                conv.collect_params(&join(prefix, &format!("cls.{i}.{j}")), out);
            }
        }
    }

    /// One raw tensor per scale, `(n, 4·reg_max + nc, h, w)`.
    pub fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, inputs: &[E::Value]) -> Result<Vec<E::Value>> {
        let shapes: Vec<Shape> = inputs.iter().map(|v| ex.shape(v)).collect();
        self.check_inputs(&shapes)?;
        let mut outs = Vec::with_capacity(inputs.len());
        for (i, (x, b)) in inputs.iter().zip(&self.branches).enumerate() {
            let mut bx = x.clone();
            for (j, conv) in b.box_convs.iter().enumerate() {
                bx = conv.forward(ex, &join(prefix, &format!("box.{i}.{j}")), &bx)?;
            }
            let mut cl = x.clone();
            for (j, conv) in b.cls_convs.iter().enumerate() {
                cl = conv.forward(ex, &join(prefix, &format!("cls.{i}.{j}")), &cl)?;
            }
            outs.push(ex.concat(&[bx, cl])?);
        }
        Ok(outs)
    }

    pub fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        for (i, b) in self.branches.iter_mut().enumerate() {
            for (j, conv) in b.box_convs.iter_mut().enumerate() {
                f(&join(prefix, &format!("box.{i}.{j}")), conv)?;
            }
            for (j, conv) in b.cls_convs.iter_mut().enumerate() {
                f(&join(prefix, &format!("cls.{i}.{j}")), conv)?;
            }
        }
        Ok(())
    }
}

fn chain_shape(convs: &[ConvBlock], mut s: Shape) -> Result<Shape> {
    for c in convs {
        s = c.out_shape(s)?;
    }
    Ok(s)
}

fn chain_flops(convs: &[ConvBlock], mut s: Shape) -> Result<u64> {
    let mut total = 0;
    for c in convs {
        total += c.flops(s)?;
        s = c.out_shape(s)?;
    }
    Ok(total)
}
