use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use dune_detect::augment::{generate_variant, AugConfig, AugmentError};
use dune_detect::budget::{
    bench_latency, prune, reference_spec, BenchError, BudgetReport, ModelSpec, SpecExecutor,
    DEFAULT_BYTES_PER_PARAM, DEFAULT_SIZE_OVERHEAD_MB,
};
use dune_detect::dataset::{
    read_dataset, read_label_tree, split_dataset, write_dataset, DatasetDescriptor, SplitName,
    SplitRatio,
};
use dune_detect::eval::{
    confidence_sweep, evaluate, parse_predictions, sweep_csv, threshold_range, EvalConfig,
    Interpolation,
};
use dune_detect::report::{aggregate, aggregate_csv, comparison_csv, merged_row};
use dune_detect::sat::{
    history_csv, make_synthetic_shapes, save_checkpoint, train, NetLayout, SatConfig, SatError,
    SatMode, ToyDetector, ToySample, TrainConfig,
};

use crate::output::{sidecar_path, to_value, unflatten_csv, write_text};
use crate::{Classify, Failure, Outcome};

type CmdResult<T> = Result<T, Failure>;

fn input_err(msg: impl std::fmt::Display) -> Failure {
    Failure::Input(anyhow!("{msg}"))
}

// ---------------------------------------------------------------- ingest

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// Raw dataset (flat `images/` + `labels/`, or already split).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Destination of the split layout.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset descriptor; defaults to `<in>/dataset.json` or the built-in one.
    #[arg(long)]
    pub descriptor: Option<PathBuf>,
}

pub fn ingest(a: &IngestArgs, seed: Option<u64>) -> CmdResult<(u64, Outcome)> {
    let mut desc = match &a.descriptor {
        Some(p) => DatasetDescriptor::load(p),
        None => DatasetDescriptor::load_or_default(&a.input),
    }
    .input()?;
    let seed = seed.unwrap_or(desc.seed);
    desc.seed = seed;
    let loaded = read_dataset(&a.input, desc.class_count()).input()?;
    if loaded.images.is_empty() {
        return Err(input_err(format!("{}: no images found", a.input.display())));
    }
    for img in &loaded.images {
        img.validate(desc.class_count()).input()?;
    }
    let ids: Vec<String> = loaded.images.iter().map(|i| i.id.clone()).collect();
    let split = split_dataset(&ids, desc.splits, seed).input()?;
    let manifest = write_dataset(&a.out, &loaded.images, &split).runtime()?;
    desc.save(&a.out.join(DatasetDescriptor::FILE_NAME)).runtime()?;
    Ok((seed, Outcome::new(json!({ "classes": desc.classes, "manifest": manifest }))))
}

// ---------------------------------------------------------------- split

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "ids", "count"])))]
pub struct SplitArgs {
    /// Dataset directory whose image ids are split.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Text file with one id per line.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Split synthetic ids `img0000`, `img0001`, ….
    #[arg(long)]
    pub count: Option<usize>,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratio: String,
}

fn parse_ratio(s: &str) -> CmdResult<SplitRatio> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| input_err(format!("ratio `{s}`: expected three numbers")))?;
    let arr: [f64; 3] = parts
        .try_into()
        .map_err(|_| input_err(format!("ratio `{s}`: expected three numbers")))?;
    let r = SplitRatio(arr);
    r.validate().input()?;
    Ok(r)
}

pub fn split(a: &SplitArgs, seed: u64) -> CmdResult<Outcome> {
    let ratio = parse_ratio(&a.ratio)?;
    let ids: Vec<String> = if let Some(n) = a.count {
        (0..n).map(|i| format!("img{i:04}")).collect()
    } else if let Some(path) = &a.ids {
        fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .input()?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    } else {
        let dir = a.input.as_ref().expect("argument group guarantees a source");
        let desc = DatasetDescriptor::load_or_default(dir).input()?;
        read_dataset(dir, desc.class_count())
            .input()?
            .images
            .into_iter()
            .map(|i| i.id)
            .collect()
    };
    let split = split_dataset(&ids, ratio, seed).input()?;
    let [train, val, test] = split.sizes();
    Ok(Outcome::new(json!({
        "sizes": { "train": train, "val": val, "test": test },
        "split": split,
    })))
}

// ---------------------------------------------------------------- augment

#[derive(Args, Debug, Serialize)]
pub struct AugmentArgs {
    /// Raw dataset; every image is a source regardless of its layout.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_geom: Option<usize>,
    #[arg(long)]
    pub num_cutmix: Option<usize>,
    #[arg(long)]
    pub num_mosaic: Option<usize>,
    /// Directory of background-only images.
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    /// How many negatives to inject (default: all of them).
    #[arg(long, requires = "negatives")]
    pub negative_count: Option<usize>,
    /// Augment all images and split afterwards.
    #[arg(long)]
    pub paper_faithful_split: bool,
    /// JSON augmentation config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn augment(a: &AugmentArgs, seed: u64) -> CmdResult<Outcome> {
    let mut desc = DatasetDescriptor::load_or_default(&a.input).input()?;
    let mut cfg: AugConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .input()?;
            serde_json::from_str(&text)
                .with_context(|| format!("{}: invalid augmentation config", p.display()))
                .input()?
        }
        None => AugConfig {
            split_ratio: desc.splits,
            ..AugConfig::default()
        },
    };
    cfg.seed = seed;
    cfg.paper_faithful_split |= a.paper_faithful_split;
    if let Some(n) = a.num_geom {
        cfg.num_geom = n;
    }
    if let Some(n) = a.num_cutmix {
        cfg.num_cutmix = n;
    }
    if let Some(n) = a.num_mosaic {
        cfg.num_mosaic = n;
    }
    let raw = read_dataset(&a.input, desc.class_count()).input()?.images;
    let pool = match &a.negatives {
        Some(dir) => read_dataset(dir, desc.class_count()).input()?.images,
        None => Vec::new(),
    };
    cfg.negatives = a.negative_count.unwrap_or(pool.len());

    let variant = generate_variant(&raw, &pool, &cfg).map_err(|e| match e {
        AugmentError::Dataset(_) => Failure::Runtime(e.into()),
        _ => Failure::Input(e.into()),
    })?;
    write_dataset(&a.out, &variant.images, &variant.split).runtime()?;
    let manifest = to_value(&variant.manifest);
    write_text(&a.out.join("augment_manifest.json"), &crate::output::json_text(&manifest)).runtime()?;
    desc.seed = seed;
    desc.splits = cfg.split_ratio;
    desc.save(&a.out.join(DatasetDescriptor::FILE_NAME)).runtime()?;
    Ok(Outcome::new(manifest))
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpArg {
    Coco101,
    AllPoint,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Ground-truth dataset or label directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions file, one `image_id class score cx cy w h` per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Confidence cut for precision, recall and F1.
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    /// IoU thresholds as `lo:hi:step`, or a single value.
    #[arg(long, default_value = "0.5:0.95:0.05")]
    pub iou_range: String,
    #[arg(long, value_enum, default_value = "coco101")]
    pub interp: InterpArg,
    /// Class count; defaults to the descriptor next to the labels.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Write the precision/recall/F1 confidence sweep here.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Evenly spaced confidence thresholds in the sweep, 0 and 1 included.
    #[arg(long, default_value_t = 21)]
    pub sweep_points: usize,
}

fn to_pct(x: f64, what: &str) -> CmdResult<u32> {
    let p = x * 100.0;
    if !(0.0..=100.0).contains(&p) || (p - p.round()).abs() > 1e-6 {
        return Err(input_err(format!("{what} {x}: must be a multiple of 0.01 in [0, 1]")));
    }
    Ok(p.round() as u32)
}

fn parse_iou_range(s: &str) -> CmdResult<Vec<f64>> {
    let nums: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| input_err(format!("IoU range `{s}`: expected lo:hi:step")))?;
    match nums[..] {
        [t] => Ok(vec![to_pct(t, "IoU threshold")? as f64 / 100.0]),
        [lo, hi, step] => {
            let (lo, hi, step) = (to_pct(lo, "IoU")?, to_pct(hi, "IoU")?, to_pct(step, "IoU step")?);
            if step == 0 || lo > hi {
                return Err(input_err(format!("IoU range `{s}`: need lo ≤ hi and step > 0")));
            }
            Ok(threshold_range(lo, hi, step))
        }
        _ => Err(input_err(format!("IoU range `{s}`: expected lo:hi:step"))),
    }
}

pub fn eval(a: &EvalArgs) -> CmdResult<Outcome> {
    let class_count = match a.classes {
        Some(0) => return Err(input_err("--classes must be ≥ 1")),
        Some(n) => n,
        None => DatasetDescriptor::load_or_default(&a.gt).input()?.class_count(),
    };
    if a.sweep_points < 2 {
        return Err(input_err("--sweep-points must be ≥ 2"));
    }
    let gt = read_label_tree(&a.gt, class_count).input()?;
    let text = fs::read_to_string(&a.pred)
        .with_context(|| format!("reading {}", a.pred.display()))
        .input()?;
    let dets = parse_predictions(&text)
        .map_err(|e| anyhow!("{}: {e}", a.pred.display()))
        .input()?;
    let cfg = EvalConfig {
        class_count,
        conf_thr: a.conf,
        iou_thresholds: parse_iou_range(&a.iou_range)?,
        interpolation: match a.interp {
            InterpArg::Coco101 => Interpolation::Coco101,
            InterpArg::AllPoint => Interpolation::AllPoint,
        },
    };
    let report = evaluate(&gt, &dets, &cfg).input()?;
    if let Some(path) = &a.sweep {
        let n = a.sweep_points - 1;
        let thresholds: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let rows = confidence_sweep(&gt, &dets, class_count, &thresholds).input()?;
        write_text(path, &sweep_csv(&rows)).runtime()?;
    }
    Ok(Outcome::new(to_value(&report)))
}

// ---------------------------------------------------------------- budget / bench

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("model").required(true).args(["spec", "reference"])))]
pub struct SpecArgs {
    /// Model spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Use the built-in reference detector spec.
    #[arg(long)]
    pub reference: bool,
    /// Re-derive channel counts at this smaller width multiple.
    #[arg(long)]
    pub prune_width: Option<f64>,
}

impl SpecArgs {
    /// The spec to report on and, when pruned, the spec it came from.
    fn resolve(&self) -> CmdResult<(ModelSpec, Option<ModelSpec>)> {
        let base = match &self.spec {
            Some(p) => ModelSpec::load(p).input()?,
            None => reference_spec(),
        };
        match self.prune_width {
            Some(w) => Ok((prune(&base, w).input()?, Some(base))),
            None => Ok((base, None)),
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BudgetArgs {
    #[command(flatten)]
    pub model: SpecArgs,
    #[arg(long, default_value_t = DEFAULT_BYTES_PER_PARAM)]
    pub bytes_per_param: f64,
    #[arg(long, default_value_t = DEFAULT_SIZE_OVERHEAD_MB)]
    pub overhead_mb: f64,
}

pub fn budget(a: &BudgetArgs) -> CmdResult<Outcome> {
    if !(a.bytes_per_param > 0.0) || !(a.overhead_mb >= 0.0) {
        return Err(input_err("bytes per parameter must be > 0 and overhead ≥ 0"));
    }
    let (spec, base) = a.model.resolve()?;
    let report = BudgetReport::for_spec(&spec, a.bytes_per_param, a.overhead_mb).input()?;
    let mut result = to_value(&report);
    if let Some(base) = base {
        let unpruned = BudgetReport::for_spec(&base, a.bytes_per_param, a.overhead_mb).input()?;
        result["unpruned"] = to_value(&unpruned);
    }
    Ok(Outcome::new(result))
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: SpecArgs,
    /// Timed iterations.
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Untimed warm-up iterations.
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
}

pub fn bench(a: &BenchArgs, seed: u64) -> CmdResult<Outcome> {
    let (spec, _) = a.model.resolve()?;
    let report = BudgetReport::for_spec(&spec, DEFAULT_BYTES_PER_PARAM, DEFAULT_SIZE_OVERHEAD_MB).input()?;
    let exec = SpecExecutor::new(&spec, seed).input()?;
    let stats = bench_latency(
        || {
            std::hint::black_box(exec.run());
            Ok::<(), std::convert::Infallible>(())
        },
        a.warmup,
        a.iters,
    )
    .map_err(|e| match e {
        BenchError::TooFewIters(_) => Failure::Input(e.into()),
        _ => Failure::Runtime(e.into()),
    })?;
    let result = json!({ "budget": report, "warmup": a.warmup, "iters": a.iters });
    let mut outcome = Outcome::new(result);
    outcome.timing = Some(json!({
        "latency_ms": stats.median_ms,
        "stats": stats,
        "batch": 1,
        "threads": 1,
        "host_threads": std::thread::available_parallelism().map_or(1, |n| n.get()),
    }));
    Ok(outcome)
}

// ---------------------------------------------------------------- train-toy

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SatModeArg {
    SignAscent,
    ObjectnessHide,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainToyArgs {
    /// Dataset directory in the split layout, or `synthetic:N` for N generated
    /// training images (plus ceil(0.3·N) validation images).
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 15)]
    pub patience: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Per-pixel bound of the adversarial step, on the [0, 1] scale.
    #[arg(long, default_value_t = 0.03)]
    pub sat_eps: f64,
    /// Probability that a batch gets the adversarial step.
    #[arg(long, default_value_t = 0.5)]
    pub sat_prob: f64,
    #[arg(long, value_enum, default_value = "sign-ascent")]
    pub sat_mode: SatModeArg,
    /// Train without the adversarial step.
    #[arg(long)]
    pub no_sat: bool,
    /// Input side of the toy network.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    /// Classes of generated data (directories use their descriptor).
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Checkpoint path; the epoch history goes to `<stem>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn toy_data(a: &TrainToyArgs, seed: u64) -> CmdResult<(Vec<ToySample>, Vec<ToySample>, usize)> {
    if let Some(n) = a.data.strip_prefix("synthetic:") {
        let n: usize = n
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| input_err(format!("`{}`: expected synthetic:N with N ≥ 1", a.data)))?;
        let n_val = (3 * n).div_ceil(10);
        let tr = make_synthetic_shapes(n, a.side, a.classes, seed).input()?;
        let va = make_synthetic_shapes(n_val, a.side, a.classes, seed.wrapping_add(1000)).input()?;
        return Ok((
            ToySample::from_images(&tr, a.side),
            ToySample::from_images(&va, a.side),
            a.classes,
        ));
    }
    let dir = Path::new(&a.data);
    let desc = DatasetDescriptor::load_or_default(dir).input()?;
    let loaded = read_dataset(dir, desc.class_count()).input()?;
    if loaded.split.is_none() {
        return Err(input_err(format!("{}: training needs the split layout", dir.display())));
    }
    let tr = loaded.split_images(SplitName::Train);
    let va = loaded.split_images(SplitName::Val);
    Ok((
        ToySample::from_images(&tr, a.side),
        ToySample::from_images(&va, a.side),
        desc.class_count(),
    ))
}

pub fn train_toy(a: &TrainToyArgs, seed: u64) -> CmdResult<Outcome> {
    let (train_set, val_set, classes) = toy_data(a, seed)?;
    let det = ToyDetector::init(NetLayout::standard(a.side, classes), seed).input()?;
    let params = det.layout.param_count();
    let tcfg = TrainConfig {
        epochs: a.epochs,
        early_stop_patience: a.patience,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed,
        ..TrainConfig::default()
    };
    let scfg = SatConfig {
        epsilon: a.sat_eps,
        apply_prob: a.sat_prob,
        mode: match a.sat_mode {
            SatModeArg::SignAscent => SatMode::SignAscent,
            SatModeArg::ObjectnessHide => SatMode::ObjectnessHide,
        },
    };
    let history_path = sidecar_path(&a.out, "history.csv");
    let outcome = match train(&train_set, &val_set, det, &tcfg, (!a.no_sat).then_some(&scfg)) {
        Ok(o) => o,
        Err(SatError::Diverged {
            epoch,
            batch,
            checkpoint,
            history,
        }) => {
            save_checkpoint(&checkpoint, &a.out).runtime()?;
            write_text(&history_path, &history_csv(&history)).runtime()?;
            return Err(Failure::Runtime(anyhow!(
                "training diverged at epoch {epoch}, batch {batch}; last finite parameters saved to {}",
                a.out.display()
            )));
        }
        Err(e @ SatError::InvalidConfig(_)) => return Err(Failure::Input(e.into())),
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    save_checkpoint(&outcome.detector, &a.out).runtime()?;
    write_text(&history_path, &history_csv(&outcome.history)).runtime()?;
    Ok(Outcome::new(json!({
        "map50": outcome.best_val_map50,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "stopped_early": outcome.stopped_early,
        "sat": !a.no_sat,
        "params": params,
        "train_images": train_set.len(),
        "val_images": val_set.len(),
        "checkpoint": a.out,
        "history_csv": history_path,
        "history": outcome.history,
    })))
}

// ---------------------------------------------------------------- report

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// One row per report (the default).
    #[arg(long)]
    pub compare: bool,
    /// Mean ± sample standard deviation over the reports.
    #[arg(long)]
    pub aggregate: bool,
    /// Report files (JSON, or key,value CSV); join files with `+` to merge
    /// them into one row.
    #[arg(required = true)]
    pub files: Vec<String>,
}

fn load_report(path: &Path) -> CmdResult<Value> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .input()?;
    if path.extension().is_some_and(|e| e == "csv") {
        unflatten_csv(&text)
            .with_context(|| format!("{}: not a report CSV", path.display()))
            .input()
    } else {
        serde_json::from_str(&text)
            .with_context(|| format!("{}: invalid JSON", path.display()))
            .input()
    }
}

fn is_timing(p: &Path) -> bool {
    p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".timing.json"))
}

pub fn report(a: &ReportArgs) -> CmdResult<Outcome> {
    let mut rows = Vec::with_capacity(a.files.len());
    for spec in &a.files {
        let mut paths: Vec<PathBuf> = spec.split('+').map(PathBuf::from).collect();
        if paths.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(input_err(format!("`{spec}`: empty file name")));
        }
        let listed: BTreeSet<PathBuf> = paths.iter().cloned().collect();
        for p in paths.clone() {
            let side = sidecar_path(&p, "timing.json");
            if !is_timing(&p) && side.is_file() && !listed.contains(&side) {
                paths.push(side);
            }
        }
        let name = spec
            .split('+')
            .map(|p| Path::new(p).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("+");
        let parts = paths
            .iter()
            .map(|p| Ok((p.display().to_string(), load_report(p)?)))
            .collect::<CmdResult<Vec<_>>>()?;
        rows.push(merged_row(&name, &parts).input()?);
    }
    if a.aggregate {
        let agg = aggregate(&rows).input()?;
        let mut out = Outcome::new(json!({ "aggregate": agg, "rows": rows }));
        out.csv = Some(aggregate_csv(&agg));
        Ok(out)
    } else {
        let mut out = Outcome::new(json!({ "rows": rows }));
        out.csv = Some(comparison_csv(&rows));
        Ok(out)
    }
}
