use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::dataset::GroundTruthBox;
use crate::geometry::iou;
use crate::infer::DetectionBox;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Value of `P` or `R` when the ratio is `0 / 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyRatio {
    #[default]
    One,
    Zero,
}

impl EmptyRatio {
    fn ratio(self, num: usize, den: usize) -> f64 {
        if den == 0 {
            match self {
                EmptyRatio::One => 1.0,
                EmptyRatio::Zero => 0.0,
            }
        } else {
            num as f64 / den as f64
        }
    }
}

/// `P = TP / (TP + FP)`, `R = TP / (TP + FN)`.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize, empty: EmptyRatio) -> (f64, f64) {
    (empty.ratio(tp, tp + fp), empty.ratio(tp, tp + fn_))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Envelope sampled at recall 0.00, 0.01, ..., 1.00 and averaged.
    #[default]
    Point101,
    /// Exact area under the precision envelope.
    AllPoint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvalOptions {
    pub interpolation: Interpolation,
    pub empty_ratio: EmptyRatio,
    /// Horizontal period for seam-aware matching of panoramic images.
    pub wrap_width: Option<f64>,
}

/// One image's ground truth and predictions. `width` unrolls wrapped
/// detections.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub id: String,
    pub width: usize,
    pub ground_truths: Vec<GroundTruthBox>,
    pub detections: Vec<DetectionBox>,
}

/// Order in which detections claim ground truths: confidence descending,
/// ties by input position.
fn by_confidence(dets: &[DetectionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching at one IoU threshold. Visiting detections by confidence,
/// each takes the unmatched same-class ground truth of highest IoU, provided
/// that IoU reaches `threshold`. Returns the matched ground-truth index per
/// detection, in input order.
pub fn match_detections(
    dets: &[DetectionBox],
    gts: &[GroundTruthBox],
    threshold: f64,
    width: f64,
    wrap_width: Option<f64>,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for d in by_confidence(dets) {
        let det = &dets[d];
        let bbox = det.unwrapped(width);
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.class_id != det.class_id {
                continue;
            }
            let v = iou(&bbox, &gt.bbox, wrap_width);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

/// Area under the precision-recall curve of a ranked list of hit flags.
pub fn ap_from_ranked(hits: &[bool], n_gt: usize, interpolation: Interpolation) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interpolation {
        Interpolation::Point101 => {
            let sum: f64 = (0..=100)
                .map(|i| {
                    let r = i as f64 / 100.0;
                    let k = recall.partition_point(|&x| x < r);
                    precision.get(k).copied().unwrap_or(0.0)
                })
                .sum();
            sum / 101.0
        }
        Interpolation::AllPoint => {
            let mut area = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassAp {
    pub ap: f64,
    pub ground_truths: usize,
    pub detections: usize,
    pub tp: usize,
    pub fp: usize,
}

/// Per-image hit flags with confidences, matched at `threshold`.
fn ranked_hits(images: &[EvalImage], threshold: f64, wrap_width: Option<f64>) -> Vec<(usize, f64, bool)> {
    let per_image: Vec<Vec<(usize, f64, bool)>> = images
        .par_iter()
        .map(|im| {
            let m = match_detections(&im.detections, &im.ground_truths, threshold, im.width as f64, wrap_width);
            by_confidence(&im.detections)
                .into_iter()
                .map(|d| (im.detections[d].class_id, im.detections[d].confidence, m[d].is_some()))
                .collect()
        })
        .collect();
    let mut all: Vec<(usize, f64, bool)> = per_image.into_iter().flatten().collect();
    // stable: ties keep image order, then per-image rank
    all.sort_by(|a, b| b.1.total_cmp(&a.1));
    all
}

fn gt_counts(images: &[EvalImage]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for gt in images.iter().flat_map(|im| &im.ground_truths) {
        *counts.entry(gt.class_id).or_insert(0) += 1;
    }
    counts
}

/// AP for every class with at least one ground-truth box.
pub fn average_precision(images: &[EvalImage], threshold: f64, opts: &EvalOptions) -> BTreeMap<usize, ClassAp> {
    let ranked = ranked_hits(images, threshold, opts.wrap_width);
    gt_counts(images)
        .into_iter()
        .map(|(class, n_gt)| {
            let hits: Vec<bool> = ranked.iter().filter(|r| r.0 == class).map(|r| r.2).collect();
            let tp = hits.iter().filter(|&&h| h).count();
            let stats = ClassAp {
                ap: ap_from_ranked(&hits, n_gt, opts.interpolation),
                ground_truths: n_gt,
                detections: hits.len(),
                tp,
                fp: hits.len() - tp,
            };
            (class, stats)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapResult {
    pub thresholds: Vec<f64>,
    /// Class id to AP at each threshold.
    pub per_class: BTreeMap<usize, Vec<f64>>,
    /// Mean over classes at each threshold.
    pub per_threshold: Vec<f64>,
    pub map50: f64,
    pub map50_95: f64,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// mAP at IoU 0.50 and averaged over 0.50:0.05:0.95. Classes are those with
/// ground truth; with none, both values are 0.
pub fn map_range(images: &[EvalImage], opts: &EvalOptions) -> MapResult {
    let thresholds = coco_thresholds();
    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &t in &thresholds {
        for (class, s) in average_precision(images, t, opts) {
            per_class.entry(class).or_default().push(s.ap);
        }
    }
    let per_threshold = (0..thresholds.len())
        .map(|i| mean(per_class.values().map(|aps| aps[i])))
        .collect();
    let map50 = mean(per_class.values().map(|aps| aps[0]));
    let map50_95 = mean(per_class.values().map(|aps| aps.iter().sum::<f64>() / aps.len() as f64));
    MapResult {
        thresholds,
        per_class,
        per_threshold,
        map50,
        map50_95,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(class_id: usize, bbox: [f64; 4]) -> GroundTruthBox {
        GroundTruthBox {
            image_id: "a".into(),
            class_id,
            bbox,
        }
    }

    fn det(class_id: usize, confidence: f64, bbox: [f64; 4]) -> DetectionBox {
        DetectionBox {
            class_id,
            confidence,
            bbox,
            wrapped: false,
        }
    }

    fn image(gts: Vec<GroundTruthBox>, dets: Vec<DetectionBox>) -> EvalImage {
        EvalImage {
            id: "a".into(),
            width: 100,
            ground_truths: gts,
            detections: dets,
        }
    }

    #[test]
    fn thresholds_are_ten_exact_values() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[1], 0.55);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn precision_recall_cases() {
        assert_eq!(precision_recall(5, 0, 0, EmptyRatio::One).0, 1.0);
        assert_eq!(precision_recall(3, 1, 2, EmptyRatio::One), (0.75, 0.6));
        assert_eq!(precision_recall(0, 0, 4, EmptyRatio::One), (1.0, 0.0));
        assert_eq!(precision_recall(0, 0, 4, EmptyRatio::Zero), (0.0, 0.0));
    }

    #[test]
    fn perfect_detector() {
        let im = image(
            vec![gt(0, [0.0, 0.0, 10.0, 10.0]), gt(0, [20.0, 0.0, 30.0, 10.0])],
            vec![det(0, 0.9, [0.0, 0.0, 10.0, 10.0]), det(0, 0.8, [20.0, 0.0, 30.0, 10.0])],
        );
        let r = map_range(&[im], &EvalOptions::default());
        assert_eq!((r.map50, r.map50_95), (1.0, 1.0));
    }

    #[test]
    fn no_detections_is_zero() {
        let im = image(vec![gt(0, [0.0, 0.0, 10.0, 10.0])], vec![]);
        assert_eq!(map_range(&[im], &EvalOptions::default()).map50, 0.0);
    }

    #[test]
    fn offset_fixture() {
        // IoU 0.52: passes 0.50 only
        let im = image(vec![gt(0, [0.0, 0.0, 10.0, 10.0])], vec![det(0, 0.9, [0.0, 0.0, 10.0, 5.2])]);
        let r = map_range(&[im], &EvalOptions::default());
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.map50_95, 0.1);
        assert_eq!(r.per_class[&0], r.per_threshold);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let g = [0.0, 0.0, 10.0, 10.0];
        let m = match_detections(&[det(0, 0.9, g), det(0, 0.8, g)], &[gt(0, g)], 0.5, 100.0, None);
        assert_eq!(m, vec![Some(0), None]);
    }

    #[test]
    fn highest_iou_wins() {
        let gts = [gt(0, [0.0, 0.0, 10.0, 10.0]), gt(0, [2.0, 0.0, 12.0, 10.0])];
        let m = match_detections(&[det(0, 0.9, [2.0, 0.0, 12.0, 10.0])], &gts, 0.5, 100.0, None);
        assert_eq!(m, vec![Some(1)]);
    }

    #[test]
    fn wrap_matching() {
        let d = DetectionBox {
            wrapped: true,
            ..det(0, 0.9, [95.0, 0.0, 5.0, 10.0])
        };
        let g = [gt(0, [0.0, 0.0, 5.0, 10.0]), gt(0, [95.0, 0.0, 100.0, 10.0])];
        assert_eq!(match_detections(&[d], &g[..1], 0.5, 100.0, None), vec![None]);
        assert_eq!(match_detections(&[d], &g[1..], 0.5, 100.0, None), vec![Some(0)]);
        let spanning = [gt(0, [-5.0, 0.0, 5.0, 10.0])];
        assert_eq!(match_detections(&[d], &spanning, 0.9, 100.0, Some(100.0)), vec![Some(0)]);
    }

    #[test]
    fn half_recall_ap() {
        let hits = [true, false];
        assert!((ap_from_ranked(&hits, 2, Interpolation::Point101) - 51.0 / 101.0).abs() < 1e-15);
        assert_eq!(ap_from_ranked(&hits, 2, Interpolation::AllPoint), 0.5);
    }
}
