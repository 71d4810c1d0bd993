//! Built-in network variants.
//!
//! All seven share one layer template (indices 0–22: backbone, SPPF, C2PSA,
//! top-down and bottom-up fusion), so rows stay comparable:
//!
//! ```text
//!  0 conv   /2 (/4 with the 4×4 stride-4 stem)   12 concat [-1, 6]
//!  1 conv   /4 (stride 1 with the stem)          13 csp           P4 top-down
//!  2 csp    /4                                   14 upsample
//!  3 conv   /8                                   15 concat [-1, 4]
//!  4 csp    /8                                   16 csp           P3 out
//!  5 conv   /16                                  17 conv s2
//!  6 csp    /16                                  18 concat [-1, 13]
//!  7 conv   /32                                  19 csp           P4 out
//!  8 csp    /32                                  20 conv s2
//!  9 SPPF                                        21 concat [-1, 10]
//! 10 C2PSA                                       22 csp           P5 out
//! 11 upsample
//! ```
//!
//! Channel widths per variant are listed next to each definition; they are
//! calibrated reconstructions, not published values.

use serde_json::{json, Value};

use super::config::{LayerSpec, ModelConfig};
use crate::error::{Error, Result};

pub const VARIANT_NAMES: [&str; 7] = [
    "baseline",
    "p2-head",
    "p2-lightweight-bb",
    "ghostconv-all",
    "hybrid",
    "hybrid-c3ghost",
    "yolo11-4k",
];

pub const DEFAULT_INPUT: usize = 3840;

#[derive(Clone, Copy, PartialEq)]
enum P2 {
    None,
    /// Upsample the P3 output and fuse it with the layer-2 backbone map.
    Fused,
    /// Tap the layer-1 GhostConv, refine it with a GhostConv, fuse with the
    /// upsampled P3 output, then a C3k2.
    Tap,
}

struct Plan {
    name: &'static str,
    /// Widths of backbone layers 0..=8 (8 also sets SPPF and C2PSA).
    backbone: [usize; 9],
    /// Expansion of the two early CSP blocks (layers 2 and 4).
    early_e: f64,
    /// Widths of head CSP layers 13, 16, 19, 22.
    head: [usize; 4],
    /// Width of the P2 branch.
    p2_width: usize,
    p2: P2,
    /// Layers whose convolution is a GhostConv.
    ghost: &'static [usize],
    csp: &'static str,
    stem4: bool,
    /// Kernel of the stride-2 backbone convolutions (layers 3, 5, 7).
    down_kernel: usize,
    detect_widths: Option<(usize, usize)>,
}

const STRIDED_CONVS: [usize; 7] = [0, 1, 3, 5, 7, 17, 20];

fn layer(from: &[i64], kind: &str, args: Vec<Value>) -> LayerSpec {
    LayerSpec::new(from, kind, args)
}

impl Plan {
    fn conv(&self, index: usize, c: usize, k: usize, s: usize) -> LayerSpec {
        let kind = if self.ghost.contains(&index) { "GhostConv" } else { "Conv" };
        layer(&[-1], kind, vec![json!(c), json!(k), json!(s)])
    }

    fn csp(&self, from: &[i64], c: usize, shortcut: bool, e: Option<f64>) -> LayerSpec {
        let mut args = vec![json!(c), json!(1), json!(shortcut)];
        if let Some(e) = e {
            args.push(json!(e));
        }
        layer(from, self.csp, args)
    }

    fn config(&self) -> ModelConfig {
        let b = self.backbone;
        let [h13, h16, h19, h22] = self.head;
        let mut layers = Vec::new();
        if self.stem4 {
            layers.push(layer(&[-1], "Conv", vec![json!(b[0]), json!(4), json!(4)]));
            layers.push(self.conv(1, b[1], 1, 1));
        } else {
            layers.push(self.conv(0, b[0], 3, 2));
            layers.push(self.conv(1, b[1], 3, 2));
        }
        layers.extend([
            self.csp(&[-1], b[2], true, Some(self.early_e)),
            self.conv(3, b[3], self.down_kernel, 2),
            self.csp(&[-1], b[4], true, Some(self.early_e)),
            self.conv(5, b[5], self.down_kernel, 2),
            self.csp(&[-1], b[6], true, None),
            self.conv(7, b[7], self.down_kernel, 2),
            self.csp(&[-1], b[8], true, None),
            layer(&[-1], "SPPF", vec![json!(b[8])]),
            layer(&[-1], "C2PSA", vec![json!(b[8]), json!(1)]),
            layer(&[-1], "Upsample", vec![json!(2)]),
            layer(&[-1, 6], "Concat", vec![]),
            self.csp(&[-1], h13, false, None),
            layer(&[-1], "Upsample", vec![json!(2)]),
            layer(&[-1, 4], "Concat", vec![]),
            self.csp(&[-1], h16, false, None),
            self.conv(17, h16, 3, 2),
            layer(&[-1, 13], "Concat", vec![]),
            self.csp(&[-1], h19, false, None),
            self.conv(20, h19, 3, 2),
            layer(&[-1, 10], "Concat", vec![]),
            self.csp(&[-1], h22, false, None),
        ]);
        let detect_from: Vec<i64> = match self.p2 {
            P2::None => vec![16, 19, 22],
            P2::Fused => {
                layers.push(layer(&[16], "Upsample", vec![json!(2)]));
                layers.push(layer(&[-1, 2], "Concat", vec![]));
                layers.push(self.csp(&[-1], self.p2_width, false, None));
                vec![25, 16, 19, 22]
            }
            P2::Tap => {
                layers.push(layer(&[1], "GhostConv", vec![json!(self.p2_width), json!(1), json!(1)]));
                layers.push(layer(&[16], "Upsample", vec![json!(2)]));
                layers.push(layer(&[-1, 23], "Concat", vec![]));
                layers.push(layer(&[-1], "C3k2", vec![json!(self.p2_width), json!(1), json!(false)]));
                vec![26, 16, 19, 22]
            }
        };
        let detect_args = match self.detect_widths {
            Some((b, c)) => vec![json!(b), json!(c)],
            None => vec![],
        };
        layers.push(layer(&detect_from, "Detect", detect_args));
        ModelConfig {
            name: self.name.to_string(),
            nc: 1,
            input_size: [DEFAULT_INPUT, DEFAULT_INPUT],
            layers,
        }
    }
}

// Widths: backbone 16-32-64-64-128-128-128-256-256, head 128/64/128/256.
const BASELINE: Plan = Plan {
    name: "baseline",
    backbone: [16, 32, 64, 64, 128, 128, 128, 256, 256],
    early_e: 0.25,
    head: [128, 64, 128, 256],
    p2_width: 0,
    p2: P2::None,
    ghost: &[],
    csp: "C3k2",
    stem4: false,
    down_kernel: 3,
    detect_widths: None,
};

// Baseline widths plus a 32-wide P2 branch fused from layer 2.
const P2_HEAD: Plan = Plan {
    name: "p2-head",
    p2_width: 32,
    p2: P2::Fused,
    ..BASELINE
};

// Compact early stages (e = 0.125), wider deep stages:
// backbone 16-32-48-64-96-192-192-384-384, head 192/96/192/384, P2 48.
const P2_LIGHTWEIGHT_BB: Plan = Plan {
    name: "p2-lightweight-bb",
    backbone: [16, 32, 48, 64, 96, 192, 192, 384, 384],
    early_e: 0.125,
    head: [192, 96, 192, 384],
    p2_width: 48,
    p2: P2::Fused,
    ..BASELINE
};

// Lightweight backbone with every convolution layer a GhostConv.
const GHOSTCONV_ALL: Plan = Plan {
    name: "ghostconv-all",
    ghost: &STRIDED_CONVS,
    ..P2_LIGHTWEIGHT_BB
};

// GhostConv at the stride-2 and stride-4 layers only, narrower deep stages:
// backbone 16-32-48-64-96-128-128-128-128, head 96/48/96/128, P2 32.
const HYBRID: Plan = Plan {
    name: "hybrid",
    backbone: [16, 32, 48, 64, 96, 128, 128, 128, 128],
    head: [96, 48, 96, 128],
    p2_width: 32,
    ghost: &[0, 1],
    ..P2_LIGHTWEIGHT_BB
};

// Hybrid with C3Ghost in place of every C3k2.
const HYBRID_C3GHOST: Plan = Plan {
    name: "hybrid-c3ghost",
    csp: "C3Ghost",
    ..HYBRID
};

// Hybrid with kernel-stride tuning: a 4×4 stride-4 stem, a 1×1 GhostConv at
// layer 1, 2×2 stride-2 downsampling, a P2 branch tapped from layer 1 and
// reduced detect widths:
// backbone 16-32-32-64-64-128-128-256-256, head 64/32/96/128, P2 16,
// detect box/cls widths 16/16.
const YOLO11_4K: Plan = Plan {
    name: "yolo11-4k",
    backbone: [16, 32, 32, 64, 64, 128, 128, 256, 256],
    head: [64, 32, 96, 128],
    p2_width: 16,
    p2: P2::Tap,
    stem4: true,
    down_kernel: 2,
    detect_widths: Some((16, 16)),
    ..HYBRID
};

const PLANS: [&Plan; 7] = [
    &BASELINE,
    &P2_HEAD,
    &P2_LIGHTWEIGHT_BB,
    &GHOSTCONV_ALL,
    &HYBRID,
    &HYBRID_C3GHOST,
    &YOLO11_4K,
];

/// Built-in config by name, at the default 3840×3840 input.
pub fn builtin_variant(name: &str) -> Result<ModelConfig> {
    PLANS
        .iter()
        .find(|p| p.name == name)
        .map(|p| p.config())
        .ok_or_else(|| Error::UnknownVariant {
            name: name.to_string(),
            valid: VARIANT_NAMES.iter().map(|s| s.to_string()).collect(),
        })
}
