use std::cmp::Ordering;

use super::{DetectionBox, InferConfig};
use crate::geometry::iou;

/// Ranking used by NMS: confidence descending, then `x1`, `y1`, `x2`, `y2`
/// and class ascending, so equal-confidence inputs still order totally.
pub fn rank(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox[0].total_cmp(&b.bbox[0]))
        .then(a.bbox[1].total_cmp(&b.bbox[1]))
        .then(a.bbox[2].total_cmp(&b.bbox[2]))
        .then(a.bbox[3].total_cmp(&b.bbox[3]))
        .then(a.class_id.cmp(&b.class_id))
}

/// IoU of two detections; with a seam width, wrapped boxes are unrolled and
/// the best of the `0, ±width` shifts is used.
pub fn detection_iou(a: &DetectionBox, b: &DetectionBox, seam_width: Option<f64>) -> f64 {
    match seam_width {
        None => iou(&a.bbox, &b.bbox, None),
        Some(w) => iou(&a.unwrapped(w), &b.unwrapped(w), Some(w)),
    }
}

/// Class-aware greedy suppression. Boxes are visited in [`rank`] order; one
/// is kept unless a kept box of the same class overlaps it with IoU above
/// `cfg.iou_threshold`. At most `cfg.max_detections` boxes are returned.
pub fn nms(boxes: &[DetectionBox], cfg: &InferConfig, seam_width: Option<f64>) -> Vec<DetectionBox> {
    let seam = if cfg.wrap_seam { seam_width } else { None };
    let mut order: Vec<&DetectionBox> = boxes.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<DetectionBox> = Vec::new();
    for b in order {
        if kept.len() >= cfg.max_detections {
            break;
        }
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == b.class_id && detection_iou(k, b, seam) > cfg.iou_threshold);
        if !suppressed {
            kept.push(*b);
        }
    }
    kept
}
