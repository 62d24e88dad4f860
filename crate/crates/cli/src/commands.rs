use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsal_core::aggregate::{Aggregation, DEFAULT_PEAK_PERCENTILE};
use gsal_core::audit::{compare_reports, curve_csv, run_audit, AuditConfig, AuditReport, TargetClass};
use gsal_core::datasetops::{
    ablate, cooccurrence, ink_only_filter, prediction_invariance, unbiased_plan, AblationMode,
    DEFAULT_MIN_INK_PIXELS, DEFAULT_UNBIASED_RATIO,
};
use gsal_core::manifest::{load_manifest, DatasetManifest, Split};
use gsal_core::metrics::{LeveneCenter, DEFAULT_TICKS};
use gsal_core::par::with_threads;
use gsal_core::types::{load_mask, load_predictions};
use gsal_core::{load_tensor, Error, Parallelism, Result, SaliencyMethod};

use crate::output::{to_json, Outputs};

const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Parser, Debug)]
#[command(name = "gsal", version, about = "Global artefact saliency audits")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit one model and saliency method over a manifest.
    Audit(AuditArgs),
    /// Compare two audit reports.
    Compare(CompareArgs),
    /// Artefact/label co-occurrence table.
    Cooc(CoocArgs),
    /// Sampling plan that removes the artefact/label correlation.
    Plan(PlanArgs),
    /// Keep only images that carry the artefact.
    Filter(FilterArgs),
    /// Ink-only filter plus ablation of everything but the artefact.
    Ablate(AblateArgs),
    /// Prediction invariance between original and transformed images.
    Invariance(InvarianceArgs),
    /// Print the JSON schema of report.json.
    Schema,
}

#[derive(Args, Debug)]
struct ExecArgs {
    /// Worker threads for per-image work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Process images one at a time.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn run<R: Send>(&self, f: impl FnOnce(Parallelism) -> R + Send) -> R {
        let par = if self.sequential || !Parallelism::available() {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        };
        with_threads(self.threads, || f(par))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gradcam,
    Competitive,
    External,
}

impl From<MethodArg> for SaliencyMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gradcam => SaliencyMethod::GradCam,
            MethodArg::Competitive => SaliencyMethod::CompetitiveGradInput,
            MethodArg::External => SaliencyMethod::External,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggregationArg {
    Mean,
    Peak,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Predicted,
    True,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CenterArg {
    Mean,
    Median,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON-Lines prediction records.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_enum, default_value = "gradcam")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "mean")]
    aggregation: AggregationArg,
    /// Peak aggregation percentile, in (0, 100).
    #[arg(long, default_value_t = DEFAULT_PEAK_PERCENTILE)]
    percentile: f64,
    /// Response-rate curve ticks.
    #[arg(long, default_value_t = DEFAULT_TICKS)]
    ticks: usize,
    /// Images with at most this many artefact pixels are not aggregated.
    #[arg(long, default_value_t = DEFAULT_MIN_INK_PIXELS)]
    min_ink_pixels: usize,
    /// Comma-separated class names; adds subset and rest curves.
    #[arg(long, value_delimiter = ',')]
    subset_classes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    /// Class each composed map explains.
    #[arg(long, value_enum, default_value = "predicted")]
    target: TargetArg,
    /// Levene centring: mean (classic) or median (Brown-Forsythe).
    #[arg(long, value_enum, default_value = "mean")]
    levene_center: CenterArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    report_a: PathBuf,
    report_b: PathBuf,
    /// Directory for comparison.json; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InkArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_INK_PIXELS)]
    min_ink_pixels: usize,
    /// Restrict to one split before processing.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct CoocArgs {
    #[command(flatten)]
    ink: InkArgs,
    /// Row label in the CSV table.
    #[arg(long, default_value = "dataset")]
    label: String,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    ink: InkArgs,
    /// Uninked images drawn per inked image, per class.
    #[arg(long, default_value_t = DEFAULT_UNBIASED_RATIO)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[command(flatten)]
    ink: InkArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    ink: InkArgs,
}

#[derive(Args, Debug)]
struct InvarianceArgs {
    /// Predictions on the original images.
    #[arg(long)]
    original: PathBuf,
    /// Predictions on the transformed images.
    #[arg(long)]
    transformed: PathBuf,
    /// Manifest providing class names; classes are numbered otherwise.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Cooc(a) => cmd_cooc(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Invariance(a) => cmd_invariance(a),
        Command::Schema => {
            print!("{REPORT_SCHEMA}");
            Ok(())
        }
    }
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let predictions = load_predictions(&args.predictions)?;
    let config = AuditConfig {
        method: args.method.into(),
        aggregation: match args.aggregation {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Peak => Aggregation::Peak,
        },
        percentile: args.percentile,
        ticks: args.ticks,
        min_ink_pixels: args.min_ink_pixels,
        subset_classes: args.subset_classes.clone(),
        split: args.split.split(),
        target: match args.target {
            TargetArg::Predicted => TargetClass::Predicted,
            TargetArg::True => TargetClass::True,
        },
        levene_center: match args.levene_center {
            CenterArg::Mean => LeveneCenter::Mean,
            CenterArg::Median => LeveneCenter::Median,
        },
        seed: args.seed,
    };
    config.validate()?;
    let label = args.manifest.to_string_lossy().into_owned();
    let report = args
        .exec
        .run(|par| run_audit(&manifest, &label, &predictions, &config, par))?;

    let mut out = Outputs::new(&args.out);
    out.add("report.json", to_json(&report)?);
    out.add("per_image.csv", report.per_image_csv());
    for c in &report.curves {
        let name = match c.name.as_str() {
            "all" => "rra_curve.csv".to_string(),
            other => format!("rra_curve_{other}.csv"),
        };
        out.add(name, curve_csv(&c.curve));
    }
    out.commit()?;
    Ok(())
}

fn read_report(path: &Path) -> Result<AuditReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a = read_report(&args.report_a)?;
    let b = read_report(&args.report_b)?;
    let json = to_json(&compare_reports(&a, &b)?)?;
    match &args.out {
        Some(dir) => {
            let mut out = Outputs::new(dir);
            out.add("comparison.json", json);
            out.commit()?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

/// Loads the manifest restricted to the requested split, with the artefact
/// pixel count of every entry.
fn load_ink(args: &InkArgs) -> Result<(DatasetManifest, BTreeMap<String, usize>)> {
    let manifest = load_manifest(&args.manifest)?;
    let manifest = match args.split.split() {
        Some(s) => manifest.filtered(|e| e.split == s),
        None => manifest,
    };
    let counts = args.exec.run(|par| {
        par.try_map(&manifest.entries, |e| {
            let path = e
                .mask
                .as_ref()
                .ok_or_else(|| Error::MissingMask(e.image_id.clone()))?;
            let mask = load_mask(manifest.resolve(path), &e.image_id)
                .map_err(|err| err.for_image(&e.image_id))?;
            Ok::<_, Error>((e.image_id.clone(), mask.pixel_count()))
        })
    })?;
    Ok((manifest, counts.into_iter().collect()))
}

fn cmd_cooc(args: CoocArgs) -> Result<()> {
    let (manifest, ink) = load_ink(&args.ink)?;
    let table = cooccurrence(&manifest, &ink, args.ink.min_ink_pixels)?;
    let mut out = Outputs::new(&args.ink.out);
    out.add("cooccurrence.json", to_json(&table)?);
    out.add("cooccurrence.csv", table.to_csv(&args.label));
    out.commit()?;
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let (manifest, ink) = load_ink(&args.ink)?;
    let plan = unbiased_plan(&manifest, &ink, args.ratio, args.seed, args.ink.min_ink_pixels)?;
    let mut out = Outputs::new(&args.ink.out);
    out.add("plan.json", to_json(&plan)?);
    out.add("plan_manifest.jsonl", plan.apply(&manifest).to_jsonl());
    out.commit()?;
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let (manifest, ink) = load_ink(&args.ink)?;
    let kept = ink_only_filter(&manifest, &ink, args.ink.min_ink_pixels)?;
    let mut out = Outputs::new(&args.ink.out);
    out.add("ink_only_manifest.jsonl", kept.to_jsonl());
    out.commit()?;
    Ok(())
}

/// File-name-safe form of an image id.
fn file_stem(index: usize, image_id: &str) -> String {
    let safe: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{index:06}_{safe}")
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let (manifest, ink) = load_ink(&args.ink)?;
    let kept = ink_only_filter(&manifest, &ink, args.ink.min_ink_pixels)?;
    let out_dir = std::path::absolute(&args.ink.out).map_err(|e| Error::io(&args.ink.out, e))?;
    let indexed: Vec<(usize, &_)> = kept.entries.iter().enumerate().collect();
    let ablated = args.ink.exec.run(|par| {
        par.try_map(&indexed, |&(i, e)| {
            let inner = || {
                let image = e.image.as_ref().ok_or_else(|| Error::MissingField {
                    line: 0,
                    field: format!("image (for {})", e.image_id),
                })?;
                let mask_path = e.mask.as_ref().ok_or_else(|| Error::MissingMask(e.image_id.clone()))?;
                let mask = load_mask(kept.resolve(mask_path), &e.image_id)?;
                let tensor = load_tensor(kept.resolve(image))?;
                let bytes = ablate(&tensor, &mask, AblationMode::KeepArtefact)?.to_bytes();
                let rel = format!("images/{}.gst", file_stem(i, &e.image_id));
                let mut entry = e.clone();
                entry.image = Some(out_dir.join(&rel));
                entry.mask = Some(std::path::absolute(kept.resolve(mask_path)).map_err(|err| Error::io(mask_path, err))?);
                // Saliency and gradient exports describe the original pixels.
                entry.saliency.clear();
                entry.gradients = None;
                entry.activations = None;
                entry.layer_gradients = None;
                Ok::<_, Error>((rel, bytes, entry))
            };
            inner().map_err(|err| err.for_image(&e.image_id))
        })
    })?;

    let mut out = Outputs::new(&out_dir);
    let mut entries = Vec::with_capacity(ablated.len());
    for (rel, bytes, entry) in ablated {
        out.add(rel, bytes);
        entries.push(entry);
    }
    let ablated_manifest = DatasetManifest::new(kept.classes.clone(), entries, PathBuf::new())?;
    out.add("ablated_manifest.jsonl", ablated_manifest.to_jsonl());
    out.commit()?;
    Ok(())
}

fn cmd_invariance(args: InvarianceArgs) -> Result<()> {
    let original = load_predictions(&args.original)?;
    let transformed = load_predictions(&args.transformed)?;
    let classes: Vec<String> = match &args.manifest {
        Some(p) => load_manifest(p)?.classes,
        None => {
            let k = original.first().map(|r| r.num_classes()).unwrap_or(0);
            (0..k).map(|c| c.to_string()).collect()
        }
    };
    let report = prediction_invariance(&original, &transformed, &classes)?;
    let mut out = Outputs::new(&args.out);
    out.add("invariance.json", to_json(&report)?);
    out.commit()?;
    Ok(())
}
