use std::io::Write;

use image::RgbImage;
use serde::Serialize;

use super::{load_graph, to_json_line, write_output, BenchArgs, Format, EXIT_OK};
use crate::error::{Error, Result};
use crate::infer::{detect_image, InferConfig, Timing};
use crate::weights::{random_init, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub min: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

/// Nearest-rank percentiles.
fn percentiles(mut v: Vec<f64>) -> Percentiles {
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
    Percentiles {
        min: v[0],
        p50: at(0.5),
        p90: at(0.9),
        max: v[v.len() - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub input_size: [usize; 2],
    pub threads: usize,
    pub repeat: usize,
    /// Detections per run; identical across runs.
    pub detections: usize,
    pub preprocess_ms: Percentiles,
    pub forward_ms: Percentiles,
    pub decode_ms: Percentiles,
    pub nms_ms: Percentiles,
    pub total_ms: Percentiles,
}

pub(super) fn run(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    if a.repeat == 0 {
        return Err(Error::Usage("--repeat must be at least 1".into()));
    }
    let graph = load_graph(&a.model)?;
    let store = random_init(&graph, a.seed)?;
    let input = graph.input_shape();
    let mut rng = SplitMix64::new(a.seed);
    let image = RgbImage::from_fn(input.w as u32, input.h as u32, |_, _| {
        let v = rng.next_u64();
        image::Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
    });
    let cfg = InferConfig::default();
    for _ in 0..a.warmup {
        detect_image(&graph, &store, &image, &cfg)?;
    }
    let mut timings: Vec<Timing> = Vec::with_capacity(a.repeat);
    let mut detections = None;
    for _ in 0..a.repeat {
        let r = detect_image(&graph, &store, &image, &cfg)?;
        match detections {
            None => detections = Some(r.detections.clone()),
            Some(ref d) if *d != r.detections => {
                return Err(Error::InvalidInput("detections differ between benchmark runs".into()))
            }
            Some(_) => {}
        }
        timings.push(r.timing_ms);
    }
    let stage = |f: fn(&Timing) -> f64| percentiles(timings.iter().map(f).collect());
    let report = BenchReport {
        model: graph.name().to_string(),
        input_size: [input.h, input.w],
        threads: rayon::current_num_threads(),
        repeat: a.repeat,
        detections: detections.map_or(0, |d| d.len()),
        preprocess_ms: stage(|t| t.preprocess),
        forward_ms: stage(|t| t.forward),
        decode_ms: stage(|t| t.decode),
        nms_ms: stage(|t| t.nms),
        total_ms: stage(Timing::total),
    };
    let text = match a.format {
        Format::Json => to_json_line(&report)?,
        Format::Table => {
            let mut t = format!(
                "{} {}x{}  threads {}  runs {}  detections {}\n{:>10} {:>10} {:>10} {:>10} {:>10}\n",
                report.model,
                input.h,
                input.w,
                report.threads,
                report.repeat,
                report.detections,
                "stage ms",
                "min",
                "p50",
                "p90",
                "max"
            );
            for (name, p) in [
                ("preprocess", report.preprocess_ms),
                ("forward", report.forward_ms),
                ("decode", report.decode_ms),
                ("nms", report.nms_ms),
                ("total", report.total_ms),
            ] {
                t.push_str(&format!("{name:>10} {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n", p.min, p.p50, p.p90, p.max));
            }
            t
        }
    };
    write_output(out, None, &text)?;
    Ok(EXIT_OK)
}
