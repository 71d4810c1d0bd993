//! Image-to-detections pipeline: letterbox, forward, distribution decode,
//! class-aware NMS with optional panoramic seam wrap.
//!
//! Detection JSON written by the CLI:
//!
//! ```text
//! {"image": str, "width": int, "height": int,
//!  "detections": [{"class_id": int, "confidence": float, "box": [x1, y1, x2, y2], "wrapped": bool?}],
//!  "timing_ms": {"preprocess": float, "forward": float, "decode": float, "nms": float}}
//! ```
//!
//! `wrapped` is present (and true) only for seam-crossing boxes, which are
//! stored with `x1 > x2`.

mod decode;
mod nms;
mod preprocess;

use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Bbox;
use crate::graph::ModelGraph;
use crate::weights::WeightStore;

pub use decode::{decode, distribution_expectation, place_box};
pub use nms::{detection_iou, nms, rank};
pub use preprocess::{load_image, preprocess, Letterbox};

pub const DEFAULT_CONF: f64 = 0.25;
pub const DEFAULT_IOU: f64 = 0.45;
pub const DEFAULT_MAX_DETECTIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub wrap_seam: bool,
    pub max_detections: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            conf_threshold: DEFAULT_CONF,
            iou_threshold: DEFAULT_IOU,
            wrap_seam: false,
            max_detections: DEFAULT_MAX_DETECTIONS,
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One prediction in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub class_id: usize,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: Bbox,
    #[serde(default, skip_serializing_if = "is_false")]
    pub wrapped: bool,
}

impl DetectionBox {
    /// Box with a continuous horizontal extent: wrapped boxes get `x2 + width`.
    pub fn unwrapped(&self, width: f64) -> Bbox {
        let mut b = self.bbox;
        if self.wrapped {
            b[2] += width;
        }
        b
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub preprocess: f64,
    pub forward: f64,
    pub decode: f64,
    pub nms: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.preprocess + self.forward + self.decode + self.nms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    #[serde(default)]
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<DetectionBox>,
    #[serde(default)]
    pub timing_ms: Timing,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// preprocess → forward → decode → NMS, timing each stage.
pub fn detect_image(graph: &ModelGraph, weights: &WeightStore, image: &RgbImage, cfg: &InferConfig) -> Result<DetectionReport> {
    let input = graph.input_shape();
    let t = Instant::now();
    let (x, lb) = preprocess(image, input.h, input.w)?;
    let preprocess_ms = ms_since(t);

    let t = Instant::now();
    let raw = graph.forward_full(weights, &x)?;
    let forward_ms = ms_since(t);

    let t = Instant::now();
    let head = graph.detect_head();
    let boxes = decode(&raw, &graph.strides(), head.reg_max, head.nc, &lb, cfg)?;
    let decode_ms = ms_since(t);

    let t = Instant::now();
    let kept = nms(&boxes, cfg, Some(lb.source_width as f64));
    let nms_ms = ms_since(t);

    Ok(DetectionReport {
        image: String::new(),
        width: lb.source_width,
        height: lb.source_height,
        detections: kept,
        timing_ms: Timing {
            preprocess: preprocess_ms,
            forward: forward_ms,
            decode: decode_ms,
            nms: nms_ms,
        },
    })
}
