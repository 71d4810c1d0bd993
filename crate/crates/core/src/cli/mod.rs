//! The `y4k` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
//! inputs), 3 internal error (including a failed gradient check). Every
//! failure prints one `error[<kind>]: <message>` line to stderr.
//!
//! `Y4K_THREADS` sets the worker count (unset or 0: one per core).

mod bench;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{analyze, compare_variants};
use crate::error::{Error, Result};
use crate::evalkit::{self, EmptyRatio, EvalOptions, Interpolation};
use crate::gradcheck;
use crate::graph::{build, builtin_variant, parse_config, ModelConfig, ModelGraph, VARIANT_NAMES};
use crate::infer::{self, InferConfig};
use crate::weights::{self, random_init, WeightStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const THREADS_ENV: &str = "Y4K_THREADS";

#[derive(Debug, Parser)]
#[command(name = "y4k", version, about = "Build, analyze, run and evaluate YOLO11-4K style detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter and FLOP report.
    Analyze(AnalyzeArgs),
    /// Run a model on one image and write detection JSON.
    Detect(DetectArgs),
    /// Score detections against YOLO labels.
    Eval(EvalArgs),
    /// Seeded k-fold split of a label directory.
    Splits(SplitsArgs),
    /// Bounding-box size statistics of a label directory.
    Stats(StatsArgs),
    /// Finite-difference check of a block's analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Per-stage timing of the detection pipeline.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Built-in variant name or path to a JSON model config [default: yolo11-4k, repo decision]
    #[arg(long, default_value = "yolo11-4k", hide_default_value = true)]
    pub model: String,
    /// Input size H or HxW; overrides the config [default: config's input_size, 3840x3840 for built-ins, published value]
    #[arg(long, value_parser = parse_imgsz)]
    pub imgsz: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output format (repo decision)
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Compare every built-in variant at 3840² and 640² instead of analyzing one model
    #[arg(long)]
    pub compare: bool,
    /// Also write the model config JSON to this path
    #[arg(long)]
    pub emit_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Y4KW weight container; without it weights are initialized from --seed
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for random weights when --weights is absent (repo decision)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input image (PNG or binary PPM)
    #[arg(long)]
    pub image: PathBuf,
    /// Confidence threshold (framework default)
    #[arg(long, default_value_t = infer::DEFAULT_CONF)]
    pub conf: f64,
    /// NMS IoU threshold (framework default)
    #[arg(long, default_value_t = infer::DEFAULT_IOU)]
    pub iou: f64,
    /// Keep at most this many detections (framework default)
    #[arg(long, default_value_t = infer::DEFAULT_MAX_DETECTIONS)]
    pub max_det: usize,
    /// Treat the left and right image edges as adjacent (panoramas; off by default, repo decision)
    #[arg(long)]
    pub wrap_seam: bool,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection JSON file, array of reports, or directory of JSON files
    #[arg(long)]
    pub detections: PathBuf,
    /// Directory of YOLO label files
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory of images (for pixel dimensions)
    #[arg(long)]
    pub images: PathBuf,
    /// Match across the horizontal seam with this period in pixels
    #[arg(long)]
    pub wrap_width: Option<f64>,
    /// Exact area under the precision envelope instead of 101-point sampling (101-point is the framework default)
    #[arg(long)]
    pub all_point: bool,
    /// Report P or R of 0/0 as 0 instead of 1 (1 is the repo decision)
    #[arg(long)]
    pub empty_as_zero: bool,
    /// Output format (repo decision)
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    /// Directory of YOLO label files; ids are the file stems
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of folds (published value)
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Shuffle seed (repo decision)
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory of YOLO label files
    #[arg(long)]
    pub labels: PathBuf,
    /// Image directory supplying per-image pixel sizes; without it --size is used
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Image size WxH for denormalizing labels when --images is absent (4K equirectangular frame, repo decision)
    #[arg(long, default_value = "3840x1920", value_parser = parse_wxh)]
    pub size: (usize, usize),
    /// Also write width,height per box to this CSV file
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Output format (repo decision)
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Block to check: GhostConv, C3k2 or SPPF
    #[arg(long)]
    pub block: String,
    /// Central-difference step (published protocol value)
    #[arg(long, default_value_t = gradcheck::DEFAULT_EPS)]
    pub eps: f64,
    /// Seed for weights, input and loss weighting (repo decision)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output format (repo decision)
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Timed runs (repo decision)
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    /// Untimed warm-up runs (repo decision)
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Seed for weights and the synthetic input image (repo decision)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output format (repo decision)
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn parse_dims(s: &str, sep: char) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("{v:?} is not a positive integer"))
    };
    match s.split_once(sep) {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

/// `H` or `HxW`.
fn parse_imgsz(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_dims(s, 'x')
}

/// `W` or `WxH`, returned as `(width, height)`.
fn parse_wxh(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_dims(s, 'x')
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownVariant { .. } | Error::Usage(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::Label { .. }
        | Error::Image(_)
        | Error::Json(_)
        | Error::Config { .. }
        | Error::ShapePropagation { .. }
        | Error::MissingWeight(_)
        | Error::WeightShape { .. }
        | Error::BadMagic(_)
        | Error::UnsupportedVersion(_)
        | Error::Truncated(_)
        | Error::Inconsistent(_)
        | Error::OrphanBatchNorm(_)
        | Error::InvalidInput(_) => EXIT_DATA,
        _ => EXIT_INTERNAL,
    }
}

fn kind_label(code: i32) -> &'static str {
    match code {
        EXIT_USAGE => "usage",
        EXIT_DATA => "data",
        _ => "internal",
    }
}

/// Loads a built-in variant or a JSON config file.
pub fn load_model_config(model: &str) -> Result<ModelConfig> {
    if VARIANT_NAMES.contains(&model) {
        return builtin_variant(model);
    }
    let path = Path::new(model);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_config(&text);
    }
    builtin_variant(model)
}

fn load_graph(args: &ModelArgs) -> Result<ModelGraph> {
    let mut config = load_model_config(&args.model)?;
    if let Some((h, w)) = args.imgsz {
        config = config.with_input_size(h, w);
    }
    build(&config)
}

fn load_weights(path: Option<&Path>, graph: &ModelGraph, seed: u64) -> Result<WeightStore> {
    match path {
        Some(p) => weights::load(p),
        None => random_init(graph, seed),
    }
}

fn write_output(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn to_json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Worker count from `Y4K_THREADS`; `None` means one per core.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Usage(format!("{THREADS_ENV}={v:?} is not a non-negative integer"))),
        },
    }
}

/// Runs `f` on a pool of `threads` workers (`None`: one per core).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn analyze_cmd(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    if a.compare {
        let cmp = compare_variants(&VARIANT_NAMES)?;
        let text = match a.format {
            Format::Table => cmp.to_table(),
            Format::Json => cmp.to_json(),
        };
        write_output(out, None, &text)?;
        return Ok(EXIT_OK);
    }
    let graph = load_graph(&a.model)?;
    if let Some(p) = &a.emit_config {
        fs::write(p, graph.config().to_json()).map_err(|e| Error::io(p, e))?;
    }
    let report = analyze(&graph);
    let text = match a.format {
        Format::Table => report.to_table(),
        Format::Json => report.to_json(),
    };
    write_output(out, None, &text)?;
    Ok(EXIT_OK)
}

fn detect_cmd(a: &DetectArgs, out: &mut dyn Write) -> Result<i32> {
    let graph = load_graph(&a.model)?;
    let store = load_weights(a.weights.as_deref(), &graph, a.seed)?;
    let image = infer::load_image(&a.image)?;
    let cfg = InferConfig {
        conf_threshold: a.conf,
        iou_threshold: a.iou,
        wrap_seam: a.wrap_seam,
        max_detections: a.max_det,
    };
    let mut report = infer::detect_image(&graph, &store, &image, &cfg)?;
    report.image = a.image.display().to_string();
    write_output(out, a.out.as_deref(), &to_json_line(&report)?)?;
    Ok(EXIT_OK)
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let dataset = evalkit::load_dataset(&a.images, &a.labels)?;
    let detections = evalkit::load_detections(&a.detections)?;
    let images = evalkit::pair(&dataset, &detections)?;
    let opts = EvalOptions {
        interpolation: if a.all_point {
            Interpolation::AllPoint
        } else {
            Interpolation::Point101
        },
        empty_ratio: if a.empty_as_zero { EmptyRatio::Zero } else { EmptyRatio::One },
        wrap_width: a.wrap_width,
    };
    let report = evalkit::evaluate(&images, &opts);
    let text = match a.format {
        Format::Table => report.to_table(),
        Format::Json => report.to_json(),
    };
    write_output(out, None, &text)?;
    Ok(EXIT_OK)
}

fn splits_cmd(a: &SplitsArgs, out: &mut dyn Write) -> Result<i32> {
    let ids = evalkit::label_ids(&a.labels)?;
    let split = evalkit::kfold_split(&ids, a.k, a.seed)?;
    write_output(out, a.out.as_deref(), &to_json_line(&split)?)?;
    Ok(EXIT_OK)
}

fn stats_cmd(a: &StatsArgs, out: &mut dyn Write) -> Result<i32> {
    let dataset = match &a.images {
        Some(images) => evalkit::load_dataset(images, &a.labels)?,
        None => evalkit::load_labels(&a.labels, a.size.0, a.size.1)?,
    };
    let boxes: Vec<_> = dataset.boxes().map(|b| b.bbox).collect();
    let stats = evalkit::bbox_stats(&boxes);
    if let Some(p) = &a.csv {
        let file = fs::File::create(p).map_err(|e| Error::io(p, e))?;
        evalkit::write_size_csv(&boxes, file)?;
    }
    let text = match a.format {
        Format::Json => to_json_line(&stats)?,
        Format::Table => {
            let mut t = format!("images {}  boxes {}\n", dataset.images.len(), stats.count);
            t.push_str(&format!("{:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "", "min", "q1", "median", "q3", "mean", "max"));
            for (name, d) in [("width", stats.width), ("height", stats.height)] {
                t.push_str(&format!(
                    "{name:>6} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2}\n",
                    d.min, d.q1, d.median, d.q3, d.mean, d.max
                ));
            }
            t
        }
    };
    write_output(out, None, &text)?;
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let report = gradcheck::check_named(&a.block, a.eps, a.seed)?;
    let text = match a.format {
        Format::Table => format!("{}\n", report.summary()),
        Format::Json => to_json_line(&report)?,
    };
    write_output(out, None, &text)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_INTERNAL })
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Analyze(a) => analyze_cmd(a, out),
        Command::Detect(a) => detect_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Splits(a) => splits_cmd(a, out),
        Command::Stats(a) => stats_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Bench(a) => bench::run(a, out),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error[usage]: {first}");
            return EXIT_USAGE;
        }
    };
    let result = threads_from_env().and_then(|threads| {
        let mut buf = Vec::new();
        let code = with_threads(threads, || dispatch(&cli, &mut buf))??;
        out.write_all(&buf).map_err(|e| Error::io("<stdout>", e))?;
        Ok(code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {msg}", kind_label(code));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imgsz_forms() {
        assert_eq!(parse_imgsz("640"), Ok((640, 640)));
        assert_eq!(parse_imgsz("1920x3840"), Ok((1920, 3840)));
        assert!(parse_imgsz("0").is_err());
        assert!(parse_imgsz("12xq").is_err());
    }

    #[test]
    fn error_taxonomy() {
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("gone"))), EXIT_DATA);
        assert_eq!(exit_code(&builtin_variant("nope").unwrap_err()), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Usage("--repeat 0".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Unsupported("attention")), EXIT_INTERNAL);
    }

    #[test]
    fn help_lists_provenance() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(["y4k", "detect", "--help"], &mut out, &mut err), EXIT_OK);
        let help = String::from_utf8(out).unwrap();
        assert!(help.contains("framework default"), "{help}");
        assert!(help.contains("0.25"));
    }
}
