use super::conv::ConvBlock;
use super::{join, Module, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Element, Shape};

pub const SPPF_POOL: usize = 5;

/// Reduce, three chained 5×5 stride-1 max-pools, concatenate all four
/// stages, project.
#[derive(Debug, Clone, PartialEq)]
pub struct SppfBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub reduce: ConvBlock,
    pub project: ConvBlock,
}

impl SppfBlock {
    pub fn new(c_in: usize, c_out: usize) -> Result<Self> {
        let hidden = c_in / 2;
        if hidden == 0 {
            return Err(Error::InvalidBlock(format!("SPPF({c_in}→{c_out}): needs at least 2 input channels")));
        }
        let reduce = ConvBlock::new(c_in, hidden, 1, 1);
        let project = ConvBlock::new(4 * hidden, c_out, 1, 1);
        reduce.validate()?;
        project.validate()?;
        Ok(SppfBlock {
            c_in,
            c_out,
            reduce,
            project,
        })
    }
}

impl Module for SppfBlock {
    fn kind(&self) -> &'static str {
        "SPPF"
    }

    fn in_channels(&self) -> usize {
        self.c_in
    }

    fn out_channels(&self) -> usize {
        self.c_out
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        let mid = self.reduce.out_shape(input)?;
        self.project.out_shape(mid.with_c(4 * mid.c))
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mid = self.reduce.out_shape(input)?;
        Ok(self.reduce.flops(input)? + self.project.flops(mid.with_c(4 * mid.c))?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.reduce.collect_params(&join(prefix, "reduce"), out);
        self.project.collect_params(&join(prefix, "project"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let p = SPPF_POOL;
        let y0 = self.reduce.forward(ex, &join(prefix, "reduce"), x)?;
        let y1 = ex.maxpool2d(&y0, p, 1, p / 2)?;
        let y2 = ex.maxpool2d(&y1, p, 1, p / 2)?;
        let y3 = ex.maxpool2d(&y2, p, 1, p / 2)?;
        let cat = ex.concat(&[y0, y1, y2, y3])?;
        self.project.forward(ex, &join(prefix, "project"), &cat)
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.reduce.visit_convs(&join(prefix, "reduce"), f)?;
        self.project.visit_convs(&join(prefix, "project"), f)
    }
}
