//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use y4k_core::evalkit::{EvalImage, GroundTruthBox};
use y4k_core::infer::DetectionBox;
use y4k_core::tensor::{conv2d, ConvGeometry, ConvParams, Element, Padding, Shape, Tensor};

/// `[n, c, h, w]`
pub type Dims = [usize; 4];

pub struct ConvCase {
    pub x: Vec<f64>,
    pub xd: Dims,
    pub w: Vec<f64>,
    /// `[c_out, c_in / groups, kh, kw]`
    pub wd: Dims,
    pub bias: Option<Vec<f64>>,
    pub stride: (usize, usize),
    /// top, bottom, left, right
    pub pad: (usize, usize, usize, usize),
    pub groups: usize,
}

/// Direct seven-loop convolution with zero padding.
pub fn naive_conv2d(c: &ConvCase) -> (Vec<f64>, Dims) {
    let [n, ci, h, w] = c.xd;
    let [co, cig, kh, kw] = c.wd;
    let (pt, pb, pl, pr) = c.pad;
    let oh = (h + pt + pb - kh) / c.stride.0 + 1;
    let ow = (w + pl + pr - kw) / c.stride.1 + 1;
    let cog = co / c.groups;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            let g = o / cog;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = c.bias.as_ref().map_or(0.0, |bv| bv[o]);
                    for i in 0..cig {
                        let ic = g * cig + i;
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * c.stride.0 + dy) as isize - pt as isize;
                                let ix = (x * c.stride.1 + dx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = c.x[((b * ci + ic) * h + iy as usize) * w + ix as usize];
                                let wv = c.w[((o * cig + i) * kh + dy) * kw + dx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, [n, co, oh, ow])
}

/// Small random convolution: dense, depthwise or two-group, with
/// asymmetric padding and independent strides.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let groups_pick = rng.gen_range(0..3);
    let base = rng.gen_range(1..5);
    let (ci, co, groups) = match groups_pick {
        0 => (base, rng.gen_range(1..6), 1),
        1 => (base * 2, base * 2, base * 2),
        _ => (base * 2, 2 * rng.gen_range(1..4), 2),
    };
    let kh: usize = rng.gen_range(1..5);
    let kw: usize = rng.gen_range(1..5);
    let pad: (usize, usize, usize, usize) = (rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3));
    let h = rng.gen_range(kh.saturating_sub(pad.0 + pad.1).max(1)..10);
    let w = rng.gen_range(kw.saturating_sub(pad.2 + pad.3).max(1)..10);
    let n = rng.gen_range(1..3);
    let xd = [n, ci, h, w];
    let wd = [co, ci / groups, kh, kw];
    let mut fill = |len: usize| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let x = fill(xd.iter().product());
    let wv = fill(wd.iter().product());
    let bias = if rng.gen_bool(0.5) { Some((0..co).map(|_| rng.gen_range(-1.0..1.0)).collect()) } else { None };
    ConvCase {
        x,
        xd,
        w: wv,
        wd,
        bias,
        stride: (rng.gen_range(1..4), rng.gen_range(1..4)),
        pad,
        groups,
    }
}

pub fn tensor<T: Element>(d: [usize; 4], v: &[f64]) -> Tensor<T> {
    Tensor::new(Shape::new(d[0], d[1], d[2], d[3]), v.iter().map(|&x| T::lit(x)).collect()).unwrap()
}

pub fn run_conv<T: Element>(c: &ConvCase) -> (Vec<f64>, Shape) {
    let p = ConvParams {
        weight: tensor::<T>(c.wd, &c.w),
        bias: c.bias.as_ref().map(|b| tensor::<T>([b.len(), 1, 1, 1], b)),
        geometry: ConvGeometry {
            stride: c.stride,
            padding: Padding::new(c.pad.0, c.pad.1, c.pad.2, c.pad.3),
            groups: c.groups,
        },
    };
    let y = conv2d(&tensor::<T>(c.xd, &c.x), &p).unwrap();
    (y.data().iter().map(|v| v.as_f64()).collect(), y.shape())
}

/// Inputs rounded to single precision, so the reference sees what the
/// f32 kernel sees.
pub fn rounded(c: &ConvCase) -> ConvCase {
    let r = |v: &Vec<f64>| v.iter().map(|&x| x as f32 as f64).collect();
    ConvCase {
        x: r(&c.x),
        w: r(&c.w),
        bias: c.bias.as_ref().map(r),
        ..*c
    }
}

/// Max over each window; padded cells never win.
pub fn naive_maxpool(x: &[f64], d: Dims, k: usize, s: usize, p: usize) -> (Vec<f64>, Dims) {
    let [n, c, h, w] = d;
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (y * s + dy) as isize - p as isize;
                        let ix = (xo * s + dx) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            best = best.max(x[plane * h * w + iy as usize * w + ix as usize]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    (out, [n, c, oh, ow])
}

/// Largest elementwise difference over the largest reference magnitude.
pub fn normwise_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let diff = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn ref_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Exhaustive NMS: all pairwise IoUs up front, then a box survives iff no
/// earlier-ranked survivor of its class overlaps it by more than `thr`.
pub fn nms_reference(boxes: &[DetectionBox], thr: f64, max_det: usize) -> Vec<DetectionBox> {
    let n = boxes.len();
    let mut ious = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            ious[i][j] = ref_iou(&boxes[i].bbox, &boxes[j].bbox);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&boxes[i], &boxes[j]);
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.bbox[0].partial_cmp(&b.bbox[0]).unwrap())
            .then(a.bbox[1].partial_cmp(&b.bbox[1]).unwrap())
            .then(a.bbox[2].partial_cmp(&b.bbox[2]).unwrap())
            .then(a.bbox[3].partial_cmp(&b.bbox[3]).unwrap())
            .then(a.class_id.cmp(&b.class_id))
    });
    let mut alive = vec![false; n];
    for (pos, &i) in order.iter().enumerate() {
        alive[i] = order[..pos]
            .iter()
            .all(|&j| !alive[j] || boxes[j].class_id != boxes[i].class_id || ious[i][j] <= thr);
    }
    order.into_iter().filter(|&i| alive[i]).take(max_det).map(|i| boxes[i]).collect()
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64, max_side: f64) -> [f64; 4] {
    let w = rng.gen_range(1.0..max_side);
    let h = rng.gen_range(1.0..max_side);
    let x = rng.gen_range(0.0..extent - w);
    let y = rng.gen_range(0.0..extent - h);
    [x, y, x + w, y + h]
}

/// 200-box NMS scene; confidences are quantized so ties occur.
pub fn nms_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<DetectionBox> {
    (0..n)
        .map(|_| DetectionBox {
            class_id: rng.gen_range(0..3),
            confidence: (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0,
            bbox: random_box(rng, 200.0, 60.0),
            wrapped: false,
        })
        .collect()
}

/// A small evaluation scene: jittered true positives, duplicates and
/// clutter over a few images, with distinct confidences.
pub fn eval_scene(rng: &mut ChaCha8Rng, n_images: usize) -> Vec<EvalImage> {
    (0..n_images)
        .map(|i| {
            let id = format!("im{i}");
            let n_gt = rng.gen_range(0..6);
            let gts: Vec<GroundTruthBox> = (0..n_gt)
                .map(|_| GroundTruthBox {
                    image_id: id.clone(),
                    class_id: rng.gen_range(0..3),
                    bbox: random_box(rng, 100.0, 40.0),
                })
                .collect();
            let mut dets = Vec::new();
            for g in &gts {
                let copies = [rng.gen_bool(0.75), rng.gen_bool(0.2)];
                for keep in copies {
                    if !keep {
                        continue;
                    }
                    let j = rng.gen_range(0.0..4.0);
                    let mut b = g.bbox;
                    for v in b.iter_mut() {
                        *v += rng.gen_range(-j..=j);
                    }
                    if b[2] <= b[0] || b[3] <= b[1] {
                        continue;
                    }
                    let class_id = if rng.gen_bool(0.9) { g.class_id } else { rng.gen_range(0..3) };
                    dets.push(DetectionBox {
                        class_id,
                        confidence: rng.gen_range(0.0..1.0),
                        bbox: b,
                        wrapped: false,
                    });
                }
            }
            for _ in 0..rng.gen_range(0..4) {
                dets.push(DetectionBox {
                    class_id: rng.gen_range(0..3),
                    confidence: rng.gen_range(0.0..1.0),
                    bbox: random_box(rng, 100.0, 40.0),
                    wrapped: false,
                });
            }
            EvalImage {
                id,
                width: 100,
                ground_truths: gts,
                detections: dets,
            }
        })
        .collect()
}

pub const THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Per-image greedy matching: detections by descending confidence, each
/// claiming the best unclaimed same-class box at IoU ≥ `thr`. Returns
/// `(class, confidence, hit)` for every detection.
fn reference_hits(images: &[EvalImage], thr: f64) -> Vec<(usize, f64, bool)> {
    let mut out = Vec::new();
    for im in images {
        let mut dets: Vec<&DetectionBox> = im.detections.iter().collect();
        dets.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
        let mut claimed = vec![false; im.ground_truths.len()];
        for d in dets {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in im.ground_truths.iter().enumerate() {
                if claimed[g] || gt.class_id != d.class_id {
                    continue;
                }
                let v = ref_iou(&d.bbox, &gt.bbox);
                if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
            }
            out.push((d.class_id, d.confidence, best.is_some()));
        }
    }
    out
}

/// 101-point AP by brute force: at each recall level, the best precision of
/// any prefix of the ranked list reaching that recall.
pub fn ap_reference(images: &[EvalImage], thr: f64) -> BTreeMap<usize, f64> {
    let hits = reference_hits(images, thr);
    let mut n_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for im in images {
        for g in &im.ground_truths {
            *n_gt.entry(g.class_id).or_default() += 1;
        }
    }
    n_gt.into_iter()
        .map(|(class, total)| {
            let mut ranked: Vec<(f64, bool)> = hits.iter().filter(|h| h.0 == class).map(|h| (h.1, h.2)).collect();
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let curve: Vec<(f64, f64)> = (1..=ranked.len())
                .map(|k| {
                    let tp = ranked[..k].iter().filter(|r| r.1).count();
                    (tp as f64 / total as f64, tp as f64 / k as f64)
                })
                .collect();
            let mut sum = 0.0;
            for i in 0..=100 {
                let r = i as f64 / 100.0;
                sum += curve.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
            }
            (class, sum / 101.0)
        })
        .collect()
}

/// `(mAP@50, mAP@50:95)` from [`ap_reference`].
pub fn map_reference(images: &[EvalImage]) -> (f64, f64) {
    let per_t: Vec<BTreeMap<usize, f64>> = THRESHOLDS.iter().map(|&t| ap_reference(images, t)).collect();
    let classes: Vec<usize> = per_t[0].keys().copied().collect();
    if classes.is_empty() {
        return (0.0, 0.0);
    }
    let map50 = classes.iter().map(|c| per_t[0][c]).sum::<f64>() / classes.len() as f64;
    let map = classes
        .iter()
        .map(|c| per_t.iter().map(|m| m[c]).sum::<f64>() / THRESHOLDS.len() as f64)
        .sum::<f64>()
        / classes.len() as f64;
    (map50, map)
}
