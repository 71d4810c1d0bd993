use super::{DetectionBox, InferConfig, Letterbox};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Expected bin index of a discrete distribution given by `logits`.
pub fn distribution_expectation(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().enumerate().map(|(i, w)| i as f64 * w).sum::<f64>() / total
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Places a source-space box on the image: vertical extent clamped; the
/// horizontal extent is clamped too, or, with `wrap_seam`, moved so that
/// `x1 ∈ [0, W)` and marked as wrapped when it crosses the right edge.
/// Returns `None` for boxes left with no area.
pub fn place_box(mut b: [f64; 4], width: f64, height: f64, wrap_seam: bool) -> Option<([f64; 4], bool)> {
    b[1] = b[1].clamp(0.0, height);
    b[3] = b[3].clamp(0.0, height);
    if !(b[3] > b[1]) || !(b[2] > b[0]) {
        return None;
    }
    if !wrap_seam || b[2] - b[0] >= width {
        b[0] = b[0].clamp(0.0, width);
        b[2] = b[2].clamp(0.0, width);
        return (b[2] > b[0]).then_some((b, false));
    }
    let shift = (b[0] / width).floor() * width;
    b[0] -= shift;
    b[2] -= shift;
    if b[2] > width {
        b[2] -= width;
        Some((b, true))
    } else {
        Some((b, false))
    }
}

/// Turns raw per-scale head outputs (batch item 0) into source-image boxes
/// whose confidence reaches `cfg.conf_threshold`. Cells are visited scale by
/// scale in row-major order; each cell yields at most one box, labelled with
/// its highest-scoring class.
pub fn decode<T: Element>(
    raw: &[Tensor<T>],
    strides: &[usize],
    reg_max: usize,
    nc: usize,
    lb: &Letterbox,
    cfg: &InferConfig,
) -> Result<Vec<DetectionBox>> {
    if raw.len() != strides.len() {
        return Err(Error::InvalidInput(format!(
            "{} head outputs for {} strides",
            raw.len(),
            strides.len()
        )));
    }
    let width = lb.source_width as f64;
    let height = lb.source_height as f64;
    let mut out = Vec::new();
    let mut bins = vec![0.0f64; reg_max];
    for (t, &stride) in raw.iter().zip(strides) {
        let s = t.shape();
        if s.c != 4 * reg_max + nc {
            return Err(Error::ShapeMismatch {
                op: "decode",
                dim: "channels",
                expected: 4 * reg_max + nc,
                actual: s.c,
            });
        }
        let plane = s.plane();
        let data = &t.data()[..s.c * plane];
        let at = |c: usize, p: usize| data[c * plane + p].as_f64();
        for i in 0..s.h {
            for j in 0..s.w {
                let p = i * s.w + j;
                let (mut class_id, mut best) = (0, f64::NEG_INFINITY);
                for c in 0..nc {
                    let v = at(4 * reg_max + c, p);
                    if v > best {
                        best = v;
                        class_id = c;
                    }
                }
                let confidence = sigmoid(best);
                if !(confidence >= cfg.conf_threshold) {
                    continue;
                }
                let mut dist = [0.0f64; 4];
                for (side, d) in dist.iter_mut().enumerate() {
                    for (k, b) in bins.iter_mut().enumerate() {
                        *b = at(side * reg_max + k, p);
                    }
                    *d = distribution_expectation(&bins) * stride as f64;
                }
                let cx = (j as f64 + 0.5) * stride as f64;
                let cy = (i as f64 + 0.5) * stride as f64;
                let (x1, y1) = lb.to_source(cx - dist[0], cy - dist[1]);
                let (x2, y2) = lb.to_source(cx + dist[2], cy + dist[3]);
                if let Some((bbox, wrapped)) = place_box([x1, y1, x2, y2], width, height, cfg.wrap_seam) {
                    out.push(DetectionBox {
                        class_id,
                        confidence,
                        bbox,
                        wrapped,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn one_cell(bin: usize, logit: f32) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 65, 1, 1), |_, c, _, _| {
            if c == 64 {
                logit
            } else if c % 16 == bin {
                50.0
            } else {
                -50.0
            }
        })
    }

    #[test]
    fn expectation_cases() {
        assert_eq!(distribution_expectation(&[0.0; 16]), 7.5);
        let mut one_hot = [-1e9; 16];
        one_hot[3] = 0.0;
        assert_eq!(distribution_expectation(&one_hot), 3.0);
    }

    #[test]
    fn one_hot_bin_three_stride_eight() {
        let lb = Letterbox::new(1000, 1000, 1000, 1000).unwrap();
        let cfg = InferConfig::default();
        let boxes = decode(&[one_cell(3, 10.0)], &[8], 16, 1, &lb, &cfg).unwrap();
        assert_eq!(boxes.len(), 1);
        // (-20, -20, 28, 28) before clamping
        assert_eq!(boxes[0].bbox, [0.0, 0.0, 28.0, 28.0]);
    }

    #[test]
    fn negative_infinity_logits_yield_nothing() {
        let lb = Letterbox::new(64, 64, 64, 64).unwrap();
        let boxes = decode(&[one_cell(3, f32::NEG_INFINITY)], &[8], 16, 1, &lb, &InferConfig::default()).unwrap();
        assert!(boxes.is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let lb = Letterbox::new(64, 64, 64, 64).unwrap();
        let t = Tensor::<f32>::zeros(Shape::new(1, 66, 2, 2));
        assert!(decode(&[t], &[8], 16, 1, &lb, &InferConfig::default()).is_err());
    }

    #[test]
    fn seam_placement() {
        assert_eq!(place_box([90.0, 0.0, 110.0, 5.0], 100.0, 50.0, true), Some(([90.0, 0.0, 10.0, 5.0], true)));
        assert_eq!(place_box([-10.0, 0.0, 10.0, 5.0], 100.0, 50.0, true), Some(([90.0, 0.0, 10.0, 5.0], true)));
        assert_eq!(place_box([-10.0, 0.0, 10.0, 5.0], 100.0, 50.0, false), Some(([0.0, 0.0, 10.0, 5.0], false)));
        assert_eq!(place_box([0.0, 60.0, 10.0, 70.0], 100.0, 50.0, false), None);
    }
}
