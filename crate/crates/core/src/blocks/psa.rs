use serde::{Deserialize, Serialize};

use super::conv::ConvBlock;
use super::{join, Module, ParamSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Activation, AttentionSpec, Element, Shape};

/// Constants of the position-sensitive attention unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsaConfig {
    /// Channels per head; the head count is `max(1, c / channels_per_head)`.
    pub channels_per_head: usize,
    /// Query/key width as a fraction of the per-head value width.
    pub attn_ratio: f64,
    pub ffn_expansion: usize,
    /// Kernel of the depthwise positional branch applied to the values.
    pub pe_kernel: usize,
}

impl Default for PsaConfig {
    fn default() -> Self {
        PsaConfig {
            channels_per_head: 64,
            attn_ratio: 0.5,
            ffn_expansion: 2,
            pe_kernel: 3,
        }
    }
}

/// Attention plus feed-forward, each with a residual:
///
/// ```text
/// x = x + proj(attn(qkv(x)) + pe(v))
/// x = x + ffn2(ffn1(x))
/// ```
///
/// Queries are scaled by `key_dim^-0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsaUnit {
    pub c: usize,
    pub spec: AttentionSpec,
    pub qkv: ConvBlock,
    pub pe: ConvBlock,
    pub proj: ConvBlock,
    pub ffn1: ConvBlock,
    pub ffn2: ConvBlock,
}

impl PsaUnit {
    pub fn new(c: usize, cfg: PsaConfig) -> Result<Self> {
        if cfg.channels_per_head == 0 || cfg.ffn_expansion == 0 || !(cfg.attn_ratio > 0.0) {
            return Err(Error::InvalidBlock(format!("PSA({c}): invalid constants {cfg:?}")));
        }
        let heads = (c / cfg.channels_per_head).max(1);
        if !c.is_multiple_of(heads) {
            return Err(Error::InvalidBlock(format!("PSA({c}): {heads} heads do not divide channels")));
        }
        let head_dim = c / heads;
        let key_dim = (head_dim as f64 * cfg.attn_ratio) as usize;
        if key_dim == 0 {
            return Err(Error::InvalidBlock(format!("PSA({c}): key width rounds to zero")));
        }
        let spec = AttentionSpec {
            heads,
            key_dim,
            head_dim,
            scale: (key_dim as f64).powf(-0.5),
        };
        let linear = Activation::Identity;
        let unit = PsaUnit {
            c,
            spec,
            qkv: ConvBlock::new(c, spec.qkv_channels(), 1, 1).with_act(linear),
            pe: ConvBlock::depthwise(c, cfg.pe_kernel, 1).with_act(linear),
            proj: ConvBlock::new(c, c, 1, 1).with_act(linear),
            ffn1: ConvBlock::new(c, cfg.ffn_expansion * c, 1, 1),
            ffn2: ConvBlock::new(cfg.ffn_expansion * c, c, 1, 1).with_act(linear),
        };
        for conv in [&unit.qkv, &unit.pe, &unit.proj, &unit.ffn1, &unit.ffn2] {
            conv.validate()?;
        }
        Ok(unit)
    }

    /// `2·MAC` of the two attention matmuls over `positions` tokens.
    pub fn attention_flops(&self, positions: usize) -> u64 {
        let s = &self.spec;
        let p = positions as u64;
        2 * s.heads as u64 * p * p * (s.key_dim + s.head_dim) as u64
    }

    fn convs(&self) -> [(&'static str, &ConvBlock); 5] {
        [
            ("attn.qkv", &self.qkv),
            ("attn.pe", &self.pe),
            ("attn.proj", &self.proj),
            ("ffn.0", &self.ffn1),
            ("ffn.1", &self.ffn2),
        ]
    }
}

impl Module for PsaUnit {
    fn kind(&self) -> &'static str {
        "PSA"
    }

    fn in_channels(&self) -> usize {
        self.c
    }

    fn out_channels(&self) -> usize {
        self.c
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        Ok(input)
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let mut total = input.n as u64 * self.attention_flops(input.plane());
        total += self.qkv.flops(input)?;
        total += self.pe.flops(input)?;
        total += self.proj.flops(input)?;
        total += self.ffn1.flops(input)?;
        total += self.ffn2.flops(self.ffn1.out_shape(input)?)?;
        Ok(total)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        for (name, conv) in self.convs() {
            conv.collect_params(&join(prefix, name), out);
        }
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let s = self.spec;
        let qkv = self.qkv.forward(ex, &join(prefix, "attn.qkv"), x)?;
        let attended = ex.attention(&qkv, &s)?;
        let per_head = 2 * s.key_dim + s.head_dim;
        let values = (0..s.heads)
            .map(|h| ex.slice_channels(&qkv, h * per_head + 2 * s.key_dim, (h + 1) * per_head))
            .collect::<Result<Vec<_>>>()?;
        let v = ex.concat(&values)?;
        let pos = self.pe.forward(ex, &join(prefix, "attn.pe"), &v)?;
        let mixed = ex.add(&attended, &pos)?;
        let projected = self.proj.forward(ex, &join(prefix, "attn.proj"), &mixed)?;
        let x = ex.add(x, &projected)?;
        let hidden = self.ffn1.forward(ex, &join(prefix, "ffn.0"), &x)?;
        let ffn = self.ffn2.forward(ex, &join(prefix, "ffn.1"), &hidden)?;
        ex.add(&x, &ffn)
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        f(&join(prefix, "attn.qkv"), &mut self.qkv)?;
        f(&join(prefix, "attn.pe"), &mut self.pe)?;
        f(&join(prefix, "attn.proj"), &mut self.proj)?;
        f(&join(prefix, "ffn.0"), &mut self.ffn1)?;
        f(&join(prefix, "ffn.1"), &mut self.ffn2)
    }
}

/// Split into halves `(a, b)`, run `b` through `n` attention units, merge
/// `concat(a, b')` with a 1×1 convolution. Input and output widths match.
#[derive(Debug, Clone, PartialEq)]
pub struct C2psaBlock {
    pub c: usize,
    pub hidden: usize,
    pub config: PsaConfig,
    pub split: ConvBlock,
    pub units: Vec<PsaUnit>,
    pub merge: ConvBlock,
}

impl C2psaBlock {
    pub fn new(c_in: usize, c_out: usize, n: usize) -> Result<Self> {
        Self::with_config(c_in, c_out, n, PsaConfig::default())
    }

    pub fn with_config(c_in: usize, c_out: usize, n: usize, config: PsaConfig) -> Result<Self> {
        if c_in != c_out {
            return Err(Error::InvalidBlock(format!("C2PSA({c_in}→{c_out}): input and output widths must match")));
        }
        let hidden = c_in / 2;
        if hidden == 0 {
            return Err(Error::InvalidBlock(format!("C2PSA({c_in}): needs at least 2 channels")));
        }
        let split = ConvBlock::new(c_in, 2 * hidden, 1, 1);
        let merge = ConvBlock::new(2 * hidden, c_out, 1, 1);
        split.validate()?;
        let units = (0..n).map(|_| PsaUnit::new(hidden, config)).collect::<Result<_>>()?;
        Ok(C2psaBlock {
            c: c_in,
            hidden,
            config,
            split,
            units,
            merge,
        })
    }
}

impl Module for C2psaBlock {
    fn kind(&self) -> &'static str {
        "C2PSA"
    }

    fn in_channels(&self) -> usize {
        self.c
    }

    fn out_channels(&self) -> usize {
        self.c
    }

    fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.check_input(input)?;
        let s = self.split.out_shape(input)?;
        self.merge.out_shape(s)
    }

    fn flops(&self, input: Shape) -> Result<u64> {
        self.check_input(input)?;
        let s = self.split.out_shape(input)?;
        let mut total = self.split.flops(input)? + self.merge.flops(s)?;
        for u in &self.units {
            total += u.flops(s.with_c(self.hidden))?;
        }
        Ok(total)
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamSpec>) {
        self.split.collect_params(&join(prefix, "split"), out);
        for (i, u) in self.units.iter().enumerate() {
            u.collect_params(&join(prefix, &format!("m.{i}")), out);
        }
        self.merge.collect_params(&join(prefix, "merge"), out);
    }

    fn forward<T: Element, E: Exec<T>>(&self, ex: &mut E, prefix: &str, x: &E::Value) -> Result<E::Value> {
        self.check_input(ex.shape(x))?;
        let y = self.split.forward(ex, &join(prefix, "split"), x)?;
        let h = self.hidden;
        let a = ex.slice_channels(&y, 0, h)?;
        let mut b = ex.slice_channels(&y, h, 2 * h)?;
        for (i, u) in self.units.iter().enumerate() {
            b = u.forward(ex, &join(prefix, &format!("m.{i}")), &b)?;
        }
        let cat = ex.concat(&[a, b])?;
        self.merge.forward(ex, &join(prefix, "merge"), &cat)
    }

    fn visit_convs(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<()> {
        self.split.visit_convs(&join(prefix, "split"), f)?;
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_convs(&join(prefix, &format!("m.{i}")), f)?;
        }
        self.merge.visit_convs(&join(prefix, "merge"), f)
    }
}
