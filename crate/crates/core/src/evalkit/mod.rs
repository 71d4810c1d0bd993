//! Detection-quality evaluation: YOLO label ingestion, greedy IoU matching,
//! precision/recall, AP/mAP over IoU 0.50:0.05:0.95, k-fold splits and box
//! size statistics.
//!
//! Published detection statistics of the trained 4K model on its panoramic
//! test set, for orientation only: 1,604 objects, mean 28.9 × 133.2 px,
//! min 2.7 × 25.14 px, max 126.5 × 319.8 px (width × height).

mod dataset;
mod metrics;
mod splits;
mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Bbox;
use crate::infer::DetectionReport;

pub use crate::geometry::iou;
pub use dataset::{label_ids, load_dataset, load_labels, parse_labels, Dataset, GroundTruthBox, ImageRecord, IMAGE_EXTENSIONS};
pub use metrics::{
    ap_from_ranked, average_precision, coco_thresholds, map_range, match_detections, precision_recall, ClassAp,
    EmptyRatio, EvalImage, EvalOptions, Interpolation, MapResult,
};
pub use splits::{kfold_split, Iteration, KFold, TRAIN_FRACTION};
pub use stats::{bbox_stats, write_size_csv, BoxStats, DimStats};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub ground_truths: usize,
    pub detections: usize,
    /// Counts at IoU 0.50.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// AP at each of the ten thresholds.
    pub ap: Vec<f64>,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: usize,
    pub options: EvalOptions,
    pub iou_thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// mAP at each threshold.
    pub map: Vec<f64>,
    pub map50: f64,
    pub map50_95: f64,
    pub ground_truth_boxes: BoxStats,
    pub detection_boxes: BoxStats,
}

/// Full report: per-class counts at IoU 0.50, AP at every threshold, and
/// box statistics of ground truths and detections.
pub fn evaluate(images: &[EvalImage], opts: &EvalOptions) -> EvalReport {
    let m = map_range(images, opts);
    let at50 = average_precision(images, m.thresholds[0], opts);
    let classes: Vec<ClassReport> = at50
        .iter()
        .map(|(&class_id, s)| {
            let fn_ = s.ground_truths - s.tp;
            let (precision, recall) = precision_recall(s.tp, s.fp, fn_, opts.empty_ratio);
            let ap = m.per_class[&class_id].clone();
            ClassReport {
                class_id,
                ground_truths: s.ground_truths,
                detections: s.detections,
                tp: s.tp,
                fp: s.fp,
                fn_,
                precision,
                recall,
                ap50: ap[0],
                ap50_95: ap.iter().sum::<f64>() / ap.len() as f64,
                ap,
            }
        })
        .collect();
    // detections of classes absent from ground truth are all false positives
    let total_dets: usize = images.iter().map(|im| im.detections.len()).sum();
    let tp: usize = classes.iter().map(|c| c.tp).sum();
    let fn_: usize = classes.iter().map(|c| c.fn_).sum();
    let fp = total_dets - tp;
    let (precision, recall) = precision_recall(tp, fp, fn_, opts.empty_ratio);

    let gt_boxes: Vec<Bbox> = images.iter().flat_map(|im| im.ground_truths.iter().map(|g| g.bbox)).collect();
    let det_boxes: Vec<Bbox> = images
        .iter()
        .flat_map(|im| im.detections.iter().map(|d| d.unwrapped(im.width as f64)))
        .collect();
    EvalReport {
        images: images.len(),
        options: *opts,
        iou_thresholds: m.thresholds,
        classes,
        tp,
        fp,
        fn_,
        precision,
        recall,
        map: m.per_threshold,
        map50: m.map50,
        map50_95: m.map50_95,
        ground_truth_boxes: bbox_stats(&gt_boxes),
        detection_boxes: bbox_stats(&det_boxes),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "images {}  interpolation {:?}", self.images, self.options.interpolation);
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>7} {:>6} {:>6} {:>6} {:>9} {:>9} {:>8} {:>9}",
            "class", "gt", "det", "TP", "FP", "FN", "P", "R", "mAP50", "mAP50:95"
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:>5} {:>7} {:>7} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>8.4} {:>9.4}",
                c.class_id, c.ground_truths, c.detections, c.tp, c.fp, c.fn_, c.precision, c.recall, c.ap50, c.ap50_95
            );
        }
        let gt: usize = self.classes.iter().map(|c| c.ground_truths).sum();
        let _ = writeln!(
            out,
            "{:>5} {:>7} {:>7} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>8.4} {:>9.4}",
            "all",
            gt,
            self.tp + self.fp,
            self.tp,
            self.fp,
            self.fn_,
            self.precision,
            self.recall,
            self.map50,
            self.map50_95
        );
        for (name, s) in [("ground truth", &self.ground_truth_boxes), ("detections", &self.detection_boxes)] {
            let _ = writeln!(
                out,
                "{name} boxes: {}  w min/mean/max {:.2}/{:.2}/{:.2}  h min/mean/max {:.2}/{:.2}/{:.2}",
                s.count, s.width.min, s.width.mean, s.width.max, s.height.min, s.height.mean, s.height.max
            );
        }
        out
    }
}

fn report_key(report: &DetectionReport, file: &Path) -> String {
    let name = if report.image.is_empty() {
        file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        Path::new(&report.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    name
}

fn read_reports(file: &Path) -> Result<Vec<(String, DetectionReport)>> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let reports: Vec<DetectionReport> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(reports.into_iter().map(|r| (report_key(&r, file), r)).collect())
}

/// Detection JSON from a file (one report or an array of reports) or a
/// directory of such files, keyed by image stem.
pub fn load_detections(path: &Path) -> Result<BTreeMap<String, DetectionReport>> {
    let files = if path.is_dir() {
        let mut v: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = BTreeMap::new();
    for f in files {
        for (key, report) in read_reports(&f)? {
            if out.insert(key.clone(), report).is_some() {
                return Err(Error::InvalidInput(format!("duplicate detections for image {key:?}")));
            }
        }
    }
    Ok(out)
}

/// Joins a dataset with detections by image id. Images without detections
/// contribute only ground truth; detections for unknown images are an error.
pub fn pair(dataset: &Dataset, detections: &BTreeMap<String, DetectionReport>) -> Result<Vec<EvalImage>> {
    if let Some(id) = detections.keys().find(|id| dataset.get(id).is_none()) {
        return Err(Error::InvalidInput(format!("detections for image {id:?} not in the dataset")));
    }
    Ok(dataset
        .images
        .iter()
        .map(|im| EvalImage {
            id: im.id.clone(),
            width: im.width,
            ground_truths: im.boxes.clone(),
            detections: detections.get(&im.id).map(|r| r.detections.clone()).unwrap_or_default(),
        })
        .collect())
}
