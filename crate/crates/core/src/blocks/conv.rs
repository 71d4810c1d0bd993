use super::{join, Module, ParamKind, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Activation, ConvGeometry, Element, Padding, Shape};

pub const DEFAULT_BN_EPS: f64 = 1e-3;

/// Convolution followed by optional inference batch norm and an activation.
///
/// With batch norm the convolution carries no bias; learnable parameters are
/// then `k·k·c_in·c_out/groups + 2·c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
    pub act: Activation,
    pub bn: bool,
    pub bias: bool,
    pub bn_eps: f64,
}

/// Odd kernels pad `k/2` on every side. Even kernels pad bottom/right only
/// at stride 1 and not at all when strided (patchify).
pub fn auto_padding(kernel: usize, stride: usize) -> Padding {
    if kernel % 2 == 1 {
        Padding::uniform(kernel / 2)
    } else if stride == 1 {
        Padding::same(kernel)
    } else {
        Padding::default()
    }
}

impl ConvBlock {
    /// Conv + BN + SiLU with automatic padding.
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        ConvBlock {
            c_in,
            c_out,
            kernel,
            stride,
            padding: auto_padding(kernel, stride),
            groups: 1,
            act: Activation::Silu,
            bn: true,
            bias: false,
            bn_eps: DEFAULT_BN_EPS,
        }
    }

    /// Depthwise variant: one group per channel.
    pub fn depthwise(c: usize, kernel: usize, stride: usize) -> Self {
        ConvBlock {
            groups: c,
            ..ConvBlock::new(c, c, kernel, stride)
        }
    }

    /// Bare convolution with bias, no BN and no activation.
    pub fn plain(c_in: usize, c_out: usize, kernel: usize) -> Self {
        ConvBlock {
            act: Activation::Identity,
            bn: false,
            bias: true,
            ..ConvBlock::new(c_in, c_out, kernel, 1)
        }
    }

    pub fn with_act(mut self, act: Activation) -> Self {
        self.act = act;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bn_eps(mut self, eps: f64) -> Self {
        self.bn_eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidBlock(format!("Conv({}→{}): {msg}", self.c_in, self.c_out)));
        if self.c_in == 0 || self.c_out == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return fail("kernel, stride and groups must be positive".into());
        }
        if !self.c_in.is_multiple_of(self.groups) || !self.c_out.is_multiple_of(self.groups) {
            return fail(format!("groups {} must divide both channel counts", self.groups));
        }
        if self.bn && self.bn_eps < 0.0 {
            return fail("batch-norm eps must be non-negative".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            stride: (self.stride, self.stride),
            padding: self.padding,
            groups: self.groups,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.c_out, self.c_in / self.groups, self.kernel, self.kernel]
    }

    fn fan_in(&self) -> usize {
        self.c_in / self.groups * self.kernel * self.kernel
    }
}

impl Module for ConvBlock {
    fn kind(&self) -> &'static str {
        "Conv"
    }

    fn in_channels(&self) -> usize {
        self.c_in
    }

    fn out_channels(&self) -> usize {
        self.c_out
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        self.check_input(input)?;
        let (h, w) = self.geometry().output_hw(input.h, input.w, self.kernel, self.kernel)?;
        Ok(Shape::new(input.n, self.c_out, h, w))
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        let out = self.out_shape(input)?;
        Ok(2 * out.numel() as u64 * self.fan_in() as u64)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        let fan_in = self.fan_in();
        out.push(ParamSpec {
            name: join(prefix, "conv.weight"),
            dims: self.weight_dims().to_vec(),
            kind: ParamKind::Weight { fan_in },
        });
        if self.bias {
            out.push(ParamSpec {
                name: join(prefix, "conv.bias"),
                dims: vec![self.c_out],
                kind: ParamKind::Bias { fan_in },
            });
        }
        if self.bn {
            for (name, kind) in [
                ("bn.weight", ParamKind::BnGamma),
                ("bn.bias", ParamKind::BnBeta),
                ("bn.running_mean", ParamKind::BnMean),
                ("bn.running_var", ParamKind::BnVar),
            ] {
                out.push(ParamSpec {
                    name: join(prefix, name),
                    dims: vec![self.c_out],
                    kind,
                });
            }
        }
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.validate()?;
        self.check_input(ex.shape(x))?;
        let w = ex.param(&join(prefix, "conv.weight"), &self.weight_dims())?;
        let b = if self.bias {
            Some(ex.param(&join(prefix, "conv.bias"), &[self.c_out])?)
        } else {
            None
        };
        let mut y = ex.conv2d(x, &w, b.as_ref(), self.geometry())?;
        if self.bn {
            let c = [self.c_out];
            let gamma = ex.param(&join(prefix, "bn.weight"), &c)?;
            let beta = ex.param(&join(prefix, "bn.bias"), &c)?;
            let mean = ex.param(&join(prefix, "bn.running_mean"), &c)?;
            let var = ex.param(&join(prefix, "bn.running_var"), &c)?;
            y = ex.batchnorm(&y, &gamma, &beta, &mean, &var, self.bn_eps)?;
        }
        ex.activation(&y, self.act)
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        f(prefix, self)
    }
}

/// Ghost convolution: half the output channels from a primary convolution,
/// the other half from a cheap 5×5 depthwise convolution of those, concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostConvBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub primary: ConvBlock,
    pub cheap: ConvBlock,
}

pub const GHOST_CHEAP_KERNEL: usize = 5;

impl GhostConvBlock {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::with_act(c_in, c_out, kernel, stride, Activation::Silu)
    }

    pub fn with_act(c_in: usize, c_out: usize, kernel: usize, stride: usize, act: Activation) -> Result<Self> {
        if c_out == 0 || !c_out.is_multiple_of(2) {
            return Err(Error::InvalidBlock(format!(
                "GhostConv({c_in}→{c_out}): output channels must be even and positive"
            )));
        }
        let half = c_out / 2;
        let block = GhostConvBlock {
            c_in,
            c_out,
            primary: ConvBlock::new(c_in, half, kernel, stride).with_act(act),
            cheap: ConvBlock::depthwise(half, GHOST_CHEAP_KERNEL, 1).with_act(act),
        };
        block.primary.validate()?;
        Ok(block)
    }
}

impl Module for GhostConvBlock {
    fn kind(&self) -> &'static str {
        "GhostConv"
    }

    fn in_channels(&self) -> usize {
        self.c_in
    }

    fn out_channels(&self) -> usize {
        self.c_out
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        let y = self.primary.out_shape(input)?;
        Ok(y.with_c(self.c_out))
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mid = self.primary.out_shape(input)?;
        Ok(self.primary.flops(input)? + self.cheap.flops(mid)?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.primary.collect_params(&join(prefix, "primary"), out);
        self.cheap.collect_params(&join(prefix, "cheap"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let y = self.primary.forward(ex, &join(prefix, "primary"), x)?;
        let z = self.cheap.forward(ex, &join(prefix, "cheap"), &y)?;
        ex.concat(&[y, z])
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.primary.visit_convs(&join(prefix, "primary"), f)?;
        self.cheap.visit_convs(&join(prefix, "cheap"), f)
    }
}
