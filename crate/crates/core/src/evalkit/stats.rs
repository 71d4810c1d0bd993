use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Bbox;

/// Summary of one box dimension. Quartiles interpolate linearly between
/// order statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DimStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoxStats {
    pub count: usize,
    pub width: DimStats,
    pub height: DimStats,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn dim_stats(mut v: Vec<f64>) -> DimStats {
    if v.is_empty() {
        return DimStats::default();
    }
    v.sort_by(f64::total_cmp);
    DimStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        max: v[v.len() - 1],
    }
}

/// Width/height statistics; all zeros for an empty input.
pub fn bbox_stats(boxes: &[Bbox]) -> BoxStats {
    BoxStats {
        count: boxes.len(),
        width: dim_stats(boxes.iter().map(|b| b[2] - b[0]).collect()),
        height: dim_stats(boxes.iter().map(|b| b[3] - b[1]).collect()),
    }
}

/// `width,height` rows, one per box, with a header.
pub fn write_size_csv<W: Write>(boxes: &[Bbox], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record(["width", "height"]).map_err(csv_err)?;
    for b in boxes {
        w.serialize((b[2] - b[0], b[3] - b[1])).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(())
}
