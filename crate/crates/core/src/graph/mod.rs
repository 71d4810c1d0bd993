//! Config parsing, graph construction with shape/parameter/FLOP annotations,
//! and full-network execution.

mod config;
mod variants;

use serde::Serialize;

use crate::blocks::{
    Block, C2psaBlock, C3GhostBlock, C3k2Block, ConvBlock, DetectHead, GhostConvBlock, ParamSpec, SppfBlock,
    DEFAULT_EXPANSION,
};
use crate::error::{Error, Result};
use crate::exec::{Eval, Exec};
use crate::tensor::{Element, Shape, Tensor};
use crate::weights::Weights;

pub use config::{parse_config, serialize_config, LayerSpec, ModelConfig, Source, BLOCK_TYPES};
pub use variants::{builtin_variant, VARIANT_NAMES};

use config::Args;

/// Strides a detection scale may run at.
pub const DETECT_STRIDES: [usize; 4] = [4, 8, 16, 32];

pub const IMAGE_CHANNELS: usize = 3;

/// One instantiated layer with its build-time annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub index: usize,
    pub sources: Vec<Source>,
    pub block: Block,
    pub input_shapes: Vec<Shape>,
    pub output_shapes: Vec<Shape>,
    pub params: usize,
    pub flops: u64,
}

impl Layer {
    pub fn prefix(&self) -> String {
        layer_prefix(self.index)
    }
}

pub fn layer_prefix(index: usize) -> String {
    format!("layers.{index}")
}

/// One detection scale as seen by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectScale {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// Channels of the feature map feeding this scale.
    pub in_channels: usize,
}

/// Validated, topologically ordered network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    config: ModelConfig,
    input_shape: Shape,
    layers: Vec<Layer>,
    scales: Vec<DetectScale>,
}

fn instantiate(index: usize, spec: &LayerSpec, in_channels: &[usize], nc: usize) -> Result<Block> {
    let args = Args {
        index,
        kind: &spec.kind,
        values: &spec.args,
    };
    let single = || -> Result<usize> {
        match in_channels {
            [c] => Ok(*c),
            _ => Err(Error::config(
                Some(index),
                format!("{} takes exactly one input, got {}", spec.kind, in_channels.len()),
            )),
        }
    };
    let wrap = |e: Error| match e {
        Error::InvalidBlock(msg) => Error::config(Some(index), msg),
        other => other,
    };
    let block = match spec.kind.as_str() {
        "Conv" => {
            args.max_len(3)?;
            let conv = ConvBlock::new(single()?, args.usize(0, None)?, args.usize(1, Some(1))?, args.usize(2, Some(1))?);
            conv.validate().map_err(wrap)?;
            Block::Conv(conv)
        }
        "GhostConv" => {
            args.max_len(3)?;
            let g = GhostConvBlock::new(single()?, args.usize(0, None)?, args.usize(1, Some(1))?, args.usize(2, Some(1))?);
            Block::GhostConv(g.map_err(wrap)?)
        }
        "C3k2" | "C3Ghost" => {
            args.max_len(4)?;
            let (c_in, c_out) = (single()?, args.usize(0, None)?);
            let n = args.usize(1, Some(1))?;
            let shortcut = args.bool(2, true)?;
            let e = args.f64(3, DEFAULT_EXPANSION)?;
            if spec.kind == "C3k2" {
                Block::C3k2(C3k2Block::with_expansion(c_in, c_out, n, shortcut, e).map_err(wrap)?)
            } else {
                Block::C3Ghost(C3GhostBlock::with_expansion(c_in, c_out, n, shortcut, e).map_err(wrap)?)
            }
        }
        "SPPF" => {
            args.max_len(1)?;
            Block::Sppf(SppfBlock::new(single()?, args.usize(0, None)?).map_err(wrap)?)
        }
        "C2PSA" => {
            args.max_len(2)?;
            Block::C2psa(C2psaBlock::new(single()?, args.usize(0, None)?, args.usize(1, Some(1))?).map_err(wrap)?)
        }
        "Upsample" => {
            args.max_len(1)?;
            single()?;
            let scale = args.usize(0, Some(2))?;
            if scale == 0 {
                return Err(Error::config(Some(index), "Upsample scale must be positive"));
            }
            Block::Upsample { scale }
        }
        "Concat" => {
            args.max_len(0)?;
            Block::Concat
        }
        "Detect" => {
            let head = match spec.args.len() {
                0 => DetectHead::new(nc, in_channels),
                2 => DetectHead::with_widths(nc, in_channels, args.usize(0, None)?, args.usize(1, None)?),
                n => return Err(Error::config(Some(index), format!("Detect takes 0 or 2 arguments, got {n}"))),
            };
            Block::Detect(head.map_err(wrap)?)
        }
        other => return Err(Error::config(Some(index), format!("unknown block type {other:?}"))),
    };
    Ok(block)
}

/// Instantiates every layer and propagates shapes at `config.input_size`.
pub fn build(config: &ModelConfig) -> Result<ModelGraph> {
    config.validate()?;
    let [h, w] = config.input_size;
    let input_shape = Shape::new(1, IMAGE_CHANNELS, h, w);
    let mut layers: Vec<Layer> = Vec::with_capacity(config.layers.len());
    for (index, spec) in config.layers.iter().enumerate() {
        let sources = config.sources(index)?;
        let input_shapes: Vec<Shape> = sources
            .iter()
            .map(|s| match *s {
                Source::Image => input_shape,
                Source::Layer(j) => layers[j].output_shapes[0],
            })
            .collect();
        let in_channels: Vec<usize> = input_shapes.iter().map(|s| s.c).collect();
        let block = instantiate(index, spec, &in_channels, config.nc)?;
        let propagate = |e: Error| Error::ShapePropagation {
            layer: index,
            msg: format!("{} with inputs [{}]: {e}", spec.kind, join_shapes(&input_shapes)),
        };
        let output_shapes = block.out_shapes(&input_shapes).map_err(propagate)?;
        let flops = block.flops(&input_shapes).map_err(propagate)?;
        layers.push(Layer {
            index,
            sources,
            params: block.param_count(),
            block,
            input_shapes,
            output_shapes,
            flops,
        });
    }

    let detect = layers.last().expect("validated non-empty");
    let mut scales = Vec::new();
    for (i, s) in detect.input_shapes.iter().enumerate() {
        let ok = s.h > 0 && s.w > 0 && h % s.h == 0 && w % s.w == 0 && h / s.h == w / s.w;
        let stride = if ok { h / s.h } else { 0 };
        if !DETECT_STRIDES.contains(&stride) {
            return Err(Error::ShapePropagation {
                layer: detect.index,
                msg: format!(
                    "detect input {i} is {}x{} for a {h}x{w} image; strides must be one of {DETECT_STRIDES:?}",
                    s.h, s.w
                ),
            });
        }
        scales.push(DetectScale {
            stride,
            height: s.h,
            width: s.w,
            in_channels: s.c,
        });
    }

    Ok(ModelGraph {
        config: config.clone(),
        input_shape,
        layers,
        scales,
    })
}

fn join_shapes(shapes: &[Shape]) -> String {
    shapes.iter().map(Shape::to_string).collect::<Vec<_>>().join(", ")
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn nc(&self) -> usize {
        self.config.nc
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn detect_head(&self) -> &DetectHead {
        match &self.layers.last().expect("non-empty").block {
            Block::Detect(d) => d,
            _ => unreachable!("validated: Detect is last"),
        }
    }

    pub fn scales(&self) -> &[DetectScale] {
        &self.scales
    }

    pub fn strides(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.stride).collect()
    }

    pub fn max_stride(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.output_shapes)
            .map(|s| self.input_shape.h / s.h.max(1))
            .max()
            .unwrap_or(1)
    }

    pub fn reg_max(&self) -> usize {
        self.detect_head().reg_max
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.block.collect_params(&l.prefix(), &mut out);
        }
        out
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// Counts block kinds, e.g. `("Conv", 7)`.
    pub fn count_kind(&self, kind: &str) -> usize {
        self.layers.iter().filter(|l| l.block.kind() == kind).count()
    }

    /// Applies `f` to every convolution, with its parameter prefix, then
    /// re-derives the annotations.
    pub fn map_convs(&self, mut f: impl FnMut(&str, &mut ConvBlock) -> Result<()>) -> Result<ModelGraph> {
        let mut g = self.clone();
        for l in &mut g.layers {
            let prefix = l.prefix();
            l.block.visit_convs(&prefix, &mut f)?;
            l.output_shapes = l.block.out_shapes(&l.input_shapes)?;
            l.flops = l.block.flops(&l.input_shapes)?;
            l.params = l.block.param_count();
        }
        Ok(g)
    }

    /// Runs every layer through `ex`, freeing intermediate values after their
    /// last consumer. Each layer's output shape is checked against its build
    /// annotation (batch dimension excepted).
    pub fn forward_with<T: Element, E: Exec<T>>(&self, ex: &mut E, image: &E::Value) -> Result<Vec<E::Value>> {
        let s = ex.shape(image);
        let expect = self.input_shape;
        if (s.c, s.h, s.w) != (expect.c, expect.h, expect.w) || s.n == 0 {
            return Err(Error::InvalidInput(format!(
                "image tensor is {s}, model {:?} expects Nx{}x{}x{}",
                self.config.name, expect.c, expect.h, expect.w
            )));
        }
        let mut last_use = vec![0usize; self.layers.len()];
        for l in &self.layers {
            for src in &l.sources {
                if let Source::Layer(j) = *src {
                    last_use[j] = l.index;
                }
            }
        }
        let mut values: Vec<Option<E::Value>> = vec![None; self.layers.len()];
        let mut outputs = Vec::new();
        for l in &self.layers {
            let inputs = l
                .sources
                .iter()
                .map(|src| match *src {
                    Source::Image => Ok(image.clone()),
                    Source::Layer(j) => values[j]
                        .clone()
                        .ok_or_else(|| Error::InvalidInput(format!("layer {j} output was released early"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = l.block.forward(ex, &l.prefix(), &inputs)?;
            for (v, want) in out.iter().zip(&l.output_shapes) {
                let got = ex.shape(v);
                if (got.c, got.h, got.w) != (want.c, want.h, want.w) || got.n != s.n {
                    return Err(Error::ShapePropagation {
                        layer: l.index,
                        msg: format!("forward produced {got}, annotation says {want}"),
                    });
                }
            }
            for src in &l.sources {
                if let Source::Layer(j) = *src {
                    if last_use[j] == l.index {
                        values[j] = None;
                    }
                }
            }
            if matches!(l.block, Block::Detect(_)) {
                outputs = out;
            } else {
                values[l.index] = Some(out.swap_remove(0));
            }
        }
        Ok(outputs)
    }

    /// Raw head outputs, one `(n, 4·reg_max + nc, h_s, w_s)` tensor per scale.
    pub fn forward_full<T: Element>(&self, weights: &Weights<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        weights.validate(&self.param_specs())?;
        self.forward_with(&mut Eval::new(weights), image)
    }
}
