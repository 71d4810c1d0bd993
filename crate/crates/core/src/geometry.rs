//! Axis-aligned boxes in pixel coordinates, `[x1, y1, x2, y2]`.

pub type Bbox = [f64; 4];

pub fn area(b: &Bbox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

fn plain_iou(a: &Bbox, b: &Bbox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Intersection over union. With `wrap_width`, `b` is also compared shifted
/// by `±wrap_width` horizontally and the maximum is returned.
pub fn iou(a: &Bbox, b: &Bbox, wrap_width: Option<f64>) -> f64 {
    let direct = plain_iou(a, b);
    match wrap_width {
        None => direct,
        Some(w) => [-w, w].iter().fold(direct, |best, &dx| {
            best.max(plain_iou(a, &[b[0] + dx, b[1], b[2] + dx, b[3]]))
        }),
    }
}
