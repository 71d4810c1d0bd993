//! Per-layer cost reports and variant comparison.
//!
//! JSON schema of [`AnalysisReport`]:
//!
//! ```text
//! {
//!   "model": str, "input_size": [h, w], "flops_convention": "2·MAC",
//!   "layers": [{"index", "from": [int], "type", "output_shapes": [[n, c, h, w]], "params", "flops"}],
//!   "total_params": int, "total_flops": int, "gflops": float,
//!   "detect_scales": [{"stride", "height", "width", "in_channels"}],
//!   "published": null | {"params", "gflops", "map50", "inference_ms"}
//! }
//! ```

use serde::Serialize;

use crate::blocks::FLOPS_CONVENTION;
use crate::error::Result;
use crate::graph::{build, builtin_variant, DetectScale, ModelGraph};

/// Figures published for the seven variants; transcribed, never computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Published {
    pub params: u64,
    pub gflops: f64,
    pub map50: &'static str,
    pub inference_ms: &'static str,
}

const PUBLISHED: [(&str, Published); 7] = [
    ("baseline", Published { params: 2_582_542, gflops: 6.3, map50: "0.904±0.011", inference_ms: "112.3±0.15" }),
    ("p2-head", Published { params: 2_634_248, gflops: 10.1, map50: "0.908±0.002", inference_ms: "126.6±0.12" }),
    ("p2-lightweight-bb", Published { params: 4_846_512, gflops: 13.9, map50: "0.867±0.023", inference_ms: "102.6±0.12" }),
    ("ghostconv-all", Published { params: 4_224_896, gflops: 12.3, map50: "0.873±0.012", inference_ms: "104.46±0.162" }),
    ("hybrid", Published { params: 1_149_212, gflops: 7.0, map50: "0.888±0.021", inference_ms: "71.2±0.126" }),
    ("hybrid-c3ghost", Published { params: 786_662, gflops: 5.2, map50: "0.847±0.022", inference_ms: "61.38±0.098" }),
    ("yolo11-4k", Published { params: 1_377_444, gflops: 2.4, map50: "0.950±0.007", inference_ms: "28.3±0.126" }),
];

pub fn published(variant: &str) -> Option<Published> {
    PUBLISHED.iter().find(|(n, _)| *n == variant).map(|(_, p)| *p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub from: Vec<i64>,
    #[serde(rename = "type")]
    pub kind: String,
    pub output_shapes: Vec<[usize; 4]>,
    pub params: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub model: String,
    pub input_size: [usize; 2],
    pub flops_convention: &'static str,
    pub layers: Vec<LayerRow>,
    pub total_params: usize,
    pub total_flops: u64,
    pub gflops: f64,
    pub detect_scales: Vec<DetectScale>,
    pub published: Option<Published>,
}

pub fn gflops(flops: u64) -> f64 {
    flops as f64 / 1e9
}

pub fn analyze(graph: &ModelGraph) -> AnalysisReport {
    let config = graph.config();
    let layers: Vec<LayerRow> = graph
        .layers()
        .iter()
        .map(|l| LayerRow {
            index: l.index,
            from: config.layers[l.index].from.clone(),
            kind: l.block.kind().to_string(),
            output_shapes: l.output_shapes.iter().map(|s| [s.n, s.c, s.h, s.w]).collect(),
            params: l.params,
            flops: l.flops,
        })
        .collect();
    let total_params = layers.iter().map(|r| r.params).sum();
    let total_flops = layers.iter().map(|r| r.flops).sum();
    AnalysisReport {
        model: config.name.clone(),
        input_size: config.input_size,
        flops_convention: FLOPS_CONVENTION,
        layers,
        total_params,
        total_flops,
        gflops: gflops(total_flops),
        detect_scales: graph.scales().to_vec(),
        published: published(&config.name),
    }
}

fn shapes_cell(shapes: &[[usize; 4]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{}x{}x{}x{}", s[0], s[1], s[2], s[3]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn from_cell(from: &[i64]) -> String {
    from.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
}

/// Thousands separators for integer columns.
pub fn group(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn signed_pct(computed: f64, reference: f64) -> String {
    format!("{:+.1}%", 100.0 * (computed - reference) / reference)
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "model {}  input {}x{}  FLOPs convention: {}\n",
            self.model, self.input_size[0], self.input_size[1], self.flops_convention
        );
        let rows: Vec<[String; 6]> = self
            .layers
            .iter()
            .map(|r| {
                [
                    r.index.to_string(),
                    from_cell(&r.from),
                    r.kind.clone(),
                    shapes_cell(&r.output_shapes),
                    group(r.params as u64),
                    group(r.flops),
                ]
            })
            .collect();
        let header = ["idx", "from", "type", "output", "params", "flops"];
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                let pad = w - c.chars().count();
                // numeric columns right-aligned
                if i == 0 || i >= 4 {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                } else {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                }
                s.push_str("  ");
            }
            s.trim_end().to_string() + "\n"
        };
        out.push_str(&line(&header.map(String::from)));
        for r in &rows {
            out.push_str(&line(r));
        }
        out.push_str(&format!(
            "total params {}  total FLOPs {}  GFLOPs {:.1}\n",
            group(self.total_params as u64),
            group(self.total_flops),
            self.gflops
        ));
        let scales: Vec<String> = self
            .detect_scales
            .iter()
            .map(|s| format!("{}x{} (stride {})", s.height, s.width, s.stride))
            .collect();
        out.push_str(&format!("detect scales: {}\n", scales.join(", ")));
        if let Some(p) = self.published {
            out.push_str(&format!(
                "published: params {} ({} computed), GFLOPs {:.1}\n",
                group(p.params),
                signed_pct(self.total_params as f64, p.params as f64),
                p.gflops
            ));
        }
        out
    }
}

/// Resolutions reported by [`compare_variants`]: the native 4K input and the
/// conventional 640 input.
pub const COMPARE_SIZES: [usize; 2] = [3840, 640];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub params: usize,
    pub flops_3840: u64,
    pub gflops_3840: f64,
    pub flops_640: u64,
    pub gflops_640: f64,
    pub published: Option<Published>,
    /// `computed - published`.
    pub params_delta: Option<i64>,
    /// `gflops_640 - published`.
    pub gflops_640_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub flops_convention: &'static str,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_variants(names: &[&str]) -> Result<Comparison> {
    let mut rows = Vec::with_capacity(names.len());
    for &name in names {
        let config = builtin_variant(name)?;
        let g4k = build(&config.clone().with_input_size(COMPARE_SIZES[0], COMPARE_SIZES[0]))?;
        let g640 = build(&config.with_input_size(COMPARE_SIZES[1], COMPARE_SIZES[1]))?;
        let params = g4k.total_params();
        let published = published(name);
        rows.push(ComparisonRow {
            variant: name.to_string(),
            params,
            flops_3840: g4k.total_flops(),
            gflops_3840: gflops(g4k.total_flops()),
            flops_640: g640.total_flops(),
            gflops_640: gflops(g640.total_flops()),
            published,
            params_delta: published.map(|p| params as i64 - p.params as i64),
            gflops_640_delta: published.map(|p| gflops(g640.total_flops()) - p.gflops),
        });
    }
    Ok(Comparison {
        flops_convention: FLOPS_CONVENTION,
        rows,
    })
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "FLOPs convention: {}; \"published\" columns are transcribed reference values\n",
            self.flops_convention
        );
        out.push_str(&format!(
            "{:<18} {:>10} {:>11} {:>10} {:>16} {:>10} {:>10} {:>10} {:>12} {:>13}\n",
            "variant",
            "params",
            "GFLOPs@3840",
            "GFLOPs@640",
            "published params",
            "Δparams",
            "published",
            "ΔGFLOPs",
            "mAP@50",
            "inference ms"
        ));
        for r in &self.rows {
            let (pp, pg, map, ms, dp, dg) = match r.published {
                Some(p) => (
                    group(p.params),
                    format!("{:.1}", p.gflops),
                    p.map50.to_string(),
                    p.inference_ms.to_string(),
                    signed_pct(r.params as f64, p.params as f64),
                    format!("{:+.1}", r.gflops_640 - p.gflops),
                ),
                None => Default::default(),
            };
            out.push_str(&format!(
                "{:<18} {:>10} {:>11.1} {:>10.1} {:>16} {:>10} {:>10} {:>10} {:>12} {:>13}\n",
                r.variant,
                group(r.params as u64),
                r.gflops_3840,
                r.gflops_640,
                pp,
                dp,
                pg,
                dg,
                map,
                ms
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LayerSpec, ModelConfig, VARIANT_NAMES};
    use serde_json::json;

    #[test]
    fn two_layer_hand_count() {
        let g = build(&ModelConfig {
            name: "two".into(),
            nc: 1,
            input_size: [32, 32],
            layers: vec![
                LayerSpec::new(&[-1], "Conv", vec![json!(8), json!(3), json!(2)]),
                LayerSpec::new(&[-1], "Conv", vec![json!(4), json!(1), json!(2)]),
                LayerSpec::new(&[-1], "Detect", vec![]),
            ],
        })
        .unwrap();
        let r = analyze(&g);
        assert_eq!(r.layers[0].params + r.layers[1].params, 272);
        assert_eq!(r.total_params, r.layers.iter().map(|l| l.params).sum::<usize>());
        assert_eq!(r, analyze(&g));
    }

    #[test]
    fn compare_emits_reference_columns() {
        let c = compare_variants(&VARIANT_NAMES).unwrap();
        assert_eq!(c.rows.len(), 7);
        let base = &c.rows[0].published.unwrap();
        assert_eq!((base.gflops, base.inference_ms), (6.3, "112.3±0.15"));
        assert_eq!(c.rows[6].published.unwrap().map50, "0.950±0.007");
        assert!(c.rows[6].flops_3840 < c.rows[0].flops_3840);
    }

    #[test]
    fn grouping() {
        assert_eq!(group(0), "0");
        assert_eq!(group(999), "999");
        assert_eq!(group(1000), "1,000");
        assert_eq!(group(2_582_542), "2,582,542");
    }

    #[test]
    fn json_has_scales() {
        let g = build(&builtin_variant("yolo11-4k").unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&analyze(&g).to_json()).unwrap();
        let sides: Vec<u64> = v["detect_scales"].as_array().unwrap().iter().map(|s| s["height"].as_u64().unwrap()).collect();
        assert_eq!(sides, [960, 480, 240, 120]);
        assert_eq!(v["flops_convention"], "2·MAC");
    }
}
