//! End-to-end audit of one (model, saliency method, dataset) triple, and the
//! comparison of two such audits.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    self, image_stat, map_moments, per_class_report, Aggregation, GlobalSaliencyReport,
    ImageSaliencyStat, Normalization,
};
use crate::datasetops::DEFAULT_MIN_INK_PIXELS;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::metrics::{
    kendall_tau, levene_test, rra_curve, wilcoxon_signed_rank, LeveneCenter, RraCurve, TestResult,
    DEFAULT_TICKS,
};
use crate::numeric::Moments;
use crate::par::Parallelism;
use crate::saliency::{compose_competitive, compose_gradcam, completeness_residual, GradientBundle};
use crate::tensor::load_tensor;
use crate::types::{load_mask, PredictionRecord, SaliencyMap, SaliencyMethod};

pub const TOOL_NAME: &str = "gsal";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which class a composed map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    #[default]
    Predicted,
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub method: SaliencyMethod,
    pub aggregation: Aggregation,
    pub percentile: f64,
    pub ticks: usize,
    /// Images with at most this many artefact pixels are left out of the
    /// aggregates (always including those with empty masks).
    pub min_ink_pixels: usize,
    /// Class names for a subset/rest split of the response-rate curves.
    pub subset_classes: Vec<String>,
    /// Restrict to one split; `None` audits every entry.
    pub split: Option<Split>,
    pub target: TargetClass,
    pub levene_center: LeveneCenter,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            method: SaliencyMethod::GradCam,
            aggregation: Aggregation::Mean,
            percentile: aggregate::DEFAULT_PEAK_PERCENTILE,
            ticks: DEFAULT_TICKS,
            min_ink_pixels: DEFAULT_MIN_INK_PIXELS,
            subset_classes: Vec::new(),
            split: Some(Split::Val),
            target: TargetClass::Predicted,
            levene_center: LeveneCenter::Mean,
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::BadPercentile(self.percentile));
        }
        if self.ticks < 2 {
            return Err(Error::InvalidConfig(format!("ticks must be >= 2, got {}", self.ticks)));
        }
        Ok(())
    }
}

/// Result of a statistical test that may legitimately be unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Computed(TestResult),
    /// Every paired difference was zero.
    Identical,
    Unavailable { code: String, message: String },
}

impl From<Result<TestResult>> for TestOutcome {
    fn from(r: Result<TestResult>) -> Self {
        match r {
            Ok(t) => TestOutcome::Computed(t),
            Err(Error::TooFewNonzeroDiffs { got: 0, .. }) => TestOutcome::Identical,
            Err(e) => TestOutcome::Unavailable {
                code: e.code().to_string(),
                message: e.to_string(),
            },
        }
    }
}

impl TestOutcome {
    pub fn result(&self) -> Option<&TestResult> {
        match self {
            TestOutcome::Computed(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImage {
    pub image_id: String,
    pub true_class: String,
    pub predicted_class: String,
    pub correct: bool,
    pub artefact_pixels: usize,
    pub mean_artefact: f64,
    /// `mean_artefact` z-scored against the dataset pixel population.
    pub mean_artefact_z: Option<f64>,
    pub peak_fraction: f64,
    pub confidence: f64,
    pub completeness_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub name: String,
    pub classes: Vec<String>,
    pub curve: RraCurve,
    /// τ between threshold percentile and subset accuracy.
    pub kendall: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub audited: usize,
    pub included: usize,
    pub excluded_empty_mask: usize,
    pub excluded_below_min_ink: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool: ToolInfo,
    pub manifest: String,
    pub classes: Vec<String>,
    pub config: AuditConfig,
    pub counts: AuditCounts,
    pub global: GlobalSaliencyReport,
    /// Levene across classes on the per-image statistic.
    pub levene: TestOutcome,
    pub curves: Vec<NamedCurve>,
    pub per_image: Vec<PerImage>,
}

impl AuditReport {
    /// Per-image table for plotting.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from(
            "image_id,true_class,predicted_class,correct,artefact_pixels,mean_artefact,peak_fraction\n",
        );
        for r in &self.per_image {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&r.image_id),
                csv_field(&r.true_class),
                csv_field(&r.predicted_class),
                r.correct,
                r.artefact_pixels,
                r.mean_artefact,
                r.peak_fraction
            ));
        }
        out
    }
}

pub fn curve_csv(curve: &RraCurve) -> String {
    let mut out = String::from("threshold_percentile,n_images,accuracy\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold_percentile, p.n_images, p.accuracy));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct ImageOutcome {
    image_id: String,
    moments: Moments,
    stat: Option<ImageSaliencyStat>,
    empty_mask: bool,
    confidence: f64,
    residual: f64,
}

/// Loads or composes the saliency map for one entry.
///
/// A precomputed tensor under the method's key in the entry's `saliency`
/// object takes precedence; otherwise grad-CAM and competitive maps are
/// composed from the exported gradient tensors.
pub fn saliency_for_entry(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    method: SaliencyMethod,
    target_class: usize,
    height: usize,
    width: usize,
) -> Result<SaliencyMap> {
    if let Some(p) = entry.saliency.get(method.key()) {
        let map = SaliencyMap::new(
            entry.image_id.clone(),
            method,
            (method != SaliencyMethod::External).then_some(target_class),
            load_tensor(manifest.resolve(p))?,
        )?;
        return Ok(map);
    }
    let missing = || Error::MissingSaliency {
        image_id: entry.image_id.clone(),
        method: method.key().to_string(),
    };
    let resolve = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| manifest.resolve(p));
    match method {
        SaliencyMethod::GradCam => {
            let (acts, grads) = (resolve(&entry.activations), resolve(&entry.layer_gradients));
            if acts.is_none() || grads.is_none() {
                return Err(missing());
            }
            let b = GradientBundle::load(&entry.image_id, None, acts.as_deref(), grads.as_deref())?;
            b.check_classes(manifest.classes.len())?;
            compose_gradcam(&b, target_class, height, width)
        }
        SaliencyMethod::CompetitiveGradInput => {
            let gi = resolve(&entry.gradients).ok_or_else(missing)?;
            let b = GradientBundle::load(&entry.image_id, Some(&gi), None, None)?;
            b.check_classes(manifest.classes.len())?;
            compose_competitive(&b, target_class)
        }
        SaliencyMethod::External => Err(missing()),
    }
}

fn audit_entry(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    record: &PredictionRecord,
    config: &AuditConfig,
) -> Result<ImageOutcome> {
    let mask_path = entry
        .mask
        .as_ref()
        .ok_or_else(|| Error::MissingMask(entry.image_id.clone()))?;
    let mask = load_mask(manifest.resolve(mask_path), &entry.image_id)?;
    if record.num_classes() != manifest.classes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} confidences for {} classes",
            record.num_classes(),
            manifest.classes.len()
        )));
    }
    if let Some(t) = record.true_class {
        if t != entry.class {
            return Err(Error::IdMismatch(
                format!("true_class {t} in predictions"),
                format!("label {} in manifest", entry.class),
            ));
        }
    }
    let target = match config.target {
        TargetClass::Predicted => record.predicted_class(),
        TargetClass::True => entry.class,
    };
    let map = saliency_for_entry(manifest, entry, config.method, target, mask.height(), mask.width())?;
    map.check_same_shape(&mask)?;
    let residual = completeness_residual(&map, record)?;
    let included = mask.pixel_count() > 0 && mask.pixel_count() > config.min_ink_pixels;
    let stat = if included {
        Some(image_stat(
            &map,
            &mask,
            config.percentile,
            entry.class,
            record.predicted_class(),
        )?)
    } else {
        None
    };
    Ok(ImageOutcome {
        image_id: entry.image_id.clone(),
        moments: map_moments(&map),
        stat,
        empty_mask: mask.pixel_count() == 0,
        confidence: record.confidence(),
        residual,
    })
}

/// Runs the full audit. Per-image work is spread according to `par`; all
/// reductions happen afterwards in image-id order, so the report is
/// independent of scheduling.
pub fn run_audit(
    manifest: &DatasetManifest,
    manifest_label: &str,
    predictions: &[PredictionRecord],
    config: &AuditConfig,
    par: Parallelism,
) -> Result<AuditReport> {
    config.validate()?;
    let subset: Vec<usize> = config
        .subset_classes
        .iter()
        .map(|name| {
            manifest.class_index(name).ok_or_else(|| {
                Error::InvalidConfig(format!("subset class {name:?} is not in the manifest"))
            })
        })
        .collect::<Result<_>>()?;
    let by_id: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| config.split.is_none_or(|s| e.split == s))
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyInput("no manifest entries in the audited split".into()));
    }

    let mut outcomes = par.try_map(&entries, |entry| {
        let record = by_id
            .get(entry.image_id.as_str())
            .ok_or_else(|| Error::MissingPrediction(entry.image_id.clone()))
            .map_err(|e| e.for_image(&entry.image_id))?;
        audit_entry(manifest, entry, record, config).map_err(|e| e.for_image(&entry.image_id))
    })?;
    outcomes.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let normalization = Normalization::from_map_moments(
        outcomes.iter().map(|o| (o.image_id.clone(), o.moments)).collect(),
    );
    let normalization = match (normalization, config.aggregation) {
        (Ok(n), _) => Some(n),
        (Err(e), Aggregation::Mean) => return Err(e),
        (Err(_), Aggregation::Peak) => None,
    };

    let raw_stats: Vec<ImageSaliencyStat> = outcomes.iter().filter_map(|o| o.stat.clone()).collect();
    if raw_stats.is_empty() {
        return Err(Error::EmptyInput(
            "no image has enough artefact pixels to aggregate".into(),
        ));
    }
    let stats: Vec<ImageSaliencyStat> = match config.aggregation {
        Aggregation::Mean => {
            let n = normalization.expect("checked above");
            raw_stats
                .iter()
                .map(|s| ImageSaliencyStat {
                    mean_artefact: n.apply(s.mean_artefact),
                    ..s.clone()
                })
                .collect()
        }
        Aggregation::Peak => raw_stats.clone(),
    };

    let method_tag = config.method.key();
    let mut global = per_class_report(&stats, &manifest.classes, config.aggregation, method_tag)?;
    global.normalization = normalization;

    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); manifest.classes.len()];
    for s in &stats {
        groups[s.true_class].push(s.value(config.aggregation));
    }
    let groups: Vec<Vec<f64>> = groups.into_iter().filter(|g| g.len() >= 2).collect();
    let levene = levene_test(&groups, config.levene_center).into();

    let mut curves = vec![named_curve("all", &manifest.classes, &stats, config)?];
    if !subset.is_empty() {
        let names = |pred: &dyn Fn(usize) -> bool| -> Vec<String> {
            (0..manifest.classes.len())
                .filter(|&c| pred(c))
                .map(|c| manifest.classes[c].clone())
                .collect()
        };
        let inside: Vec<ImageSaliencyStat> =
            stats.iter().filter(|s| subset.contains(&s.true_class)).cloned().collect();
        let outside: Vec<ImageSaliencyStat> =
            stats.iter().filter(|s| !subset.contains(&s.true_class)).cloned().collect();
        for (name, part, classes) in [
            ("subset", inside, names(&|c| subset.contains(&c))),
            ("rest", outside, names(&|c| !subset.contains(&c))),
        ] {
            if !part.is_empty() {
                curves.push(named_curve(name, &classes, &part, config)?);
            }
        }
    }

    let z_by_id: HashMap<&str, f64> = stats
        .iter()
        .map(|s| (s.image_id.as_str(), s.mean_artefact))
        .collect();
    let per_image: Vec<PerImage> = outcomes
        .iter()
        .filter_map(|o| {
            let s = o.stat.as_ref()?;
            Some(PerImage {
                image_id: o.image_id.clone(),
                true_class: manifest.classes[s.true_class].clone(),
                predicted_class: manifest.classes[s.predicted_class].clone(),
                correct: s.correct,
                artefact_pixels: s.artefact_pixels,
                mean_artefact: s.mean_artefact,
                mean_artefact_z: match config.aggregation {
                    Aggregation::Mean => z_by_id.get(o.image_id.as_str()).copied(),
                    Aggregation::Peak => normalization.map(|n| n.apply(s.mean_artefact)),
                },
                peak_fraction: s.peak_fraction,
                confidence: o.confidence,
                completeness_residual: o.residual,
            })
        })
        .collect();

    let included = per_image.len();
    let empty = outcomes.iter().filter(|o| o.empty_mask).count();
    let correct = per_image.iter().filter(|p| p.correct).count();
    Ok(AuditReport {
        tool: ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        },
        manifest: manifest_label.to_string(),
        classes: manifest.classes.clone(),
        config: config.clone(),
        counts: AuditCounts {
            audited: outcomes.len(),
            included,
            excluded_empty_mask: empty,
            excluded_below_min_ink: outcomes.len() - included - empty,
            accuracy: correct as f64 / included as f64,
        },
        global,
        levene,
        curves,
        per_image,
    })
}

fn named_curve(
    name: &str,
    classes: &[String],
    stats: &[ImageSaliencyStat],
    config: &AuditConfig,
) -> Result<NamedCurve> {
    let curve = rra_curve(stats, config.aggregation, config.ticks)?;
    let x: Vec<f64> = curve.points.iter().map(|p| p.threshold_percentile).collect();
    let y: Vec<f64> = curve.points.iter().map(|p| p.accuracy).collect();
    Ok(NamedCurve {
        name: name.to_string(),
        classes: classes.to_vec(),
        kendall: kendall_tau(&x, &y).into(),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    /// `mean_b − mean_a` when both are present.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub aggregation: Aggregation,
    pub method_a: String,
    pub method_b: String,
    pub per_class: Vec<ClassDelta>,
    pub interclass_variance_a: f64,
    pub interclass_variance_b: f64,
    /// Levene on the two sets of per-class means.
    pub levene_class_means: TestOutcome,
    /// Levene on image-level statistics grouped by (report, class).
    pub levene_images: TestOutcome,
    pub paired_images: usize,
    /// Wilcoxon on paired raw image-level artefact saliency.
    pub wilcoxon_saliency: TestOutcome,
    /// Wilcoxon on paired model confidences.
    pub wilcoxon_confidence: TestOutcome,
}

/// Compares two audits of the same class list and aggregation mode.
pub fn compare_reports(a: &AuditReport, b: &AuditReport) -> Result<Comparison> {
    if a.classes != b.classes {
        return Err(Error::IncompatibleReports(format!(
            "class lists differ: {:?} vs {:?}",
            a.classes, b.classes
        )));
    }
    if a.config.aggregation != b.config.aggregation {
        return Err(Error::IncompatibleReports(format!(
            "aggregation differs: {:?} vs {:?}",
            a.config.aggregation, b.config.aggregation
        )));
    }
    let aggregation = a.config.aggregation;
    let mean_of = |r: &AuditReport, class: &str| {
        r.global
            .per_class
            .iter()
            .find(|c| c.class == class)
            .map(|c| c.mean)
    };
    let per_class = a
        .classes
        .iter()
        .map(|c| {
            let (ma, mb) = (mean_of(a, c), mean_of(b, c));
            ClassDelta {
                class: c.clone(),
                mean_a: ma,
                mean_b: mb,
                delta: ma.zip(mb).map(|(x, y)| y - x),
            }
        })
        .collect();

    let class_means = |r: &AuditReport| r.global.per_class.iter().map(|c| c.mean).collect::<Vec<_>>();
    let levene_class_means =
        levene_test(&[class_means(a), class_means(b)], a.config.levene_center).into();

    let value = |p: &PerImage| match aggregation {
        Aggregation::Mean => p.mean_artefact_z.unwrap_or(p.mean_artefact),
        Aggregation::Peak => p.peak_fraction,
    };
    let mut image_groups = Vec::new();
    for r in [a, b] {
        for c in &r.classes {
            let g: Vec<f64> = r.per_image.iter().filter(|p| &p.true_class == c).map(value).collect();
            if g.len() >= 2 {
                image_groups.push(g);
            }
        }
    }
    let levene_images = levene_test(&image_groups, a.config.levene_center).into();

    let b_by_id: HashMap<&str, &PerImage> =
        b.per_image.iter().map(|p| (p.image_id.as_str(), p)).collect();
    let raw = |p: &PerImage| match aggregation {
        Aggregation::Mean => p.mean_artefact,
        Aggregation::Peak => p.peak_fraction,
    };
    let mut sal = (Vec::new(), Vec::new());
    let mut conf = (Vec::new(), Vec::new());
    for pa in &a.per_image {
        if let Some(pb) = b_by_id.get(pa.image_id.as_str()) {
            sal.0.push(raw(pa));
            sal.1.push(raw(pb));
            conf.0.push(pa.confidence);
            conf.1.push(pb.confidence);
        }
    }
    Ok(Comparison {
        aggregation,
        method_a: a.global.method.clone(),
        method_b: b.global.method.clone(),
        per_class,
        interclass_variance_a: a.global.interclass_variance,
        interclass_variance_b: b.global.interclass_variance,
        levene_class_means,
        levene_images,
        paired_images: sal.0.len(),
        wilcoxon_saliency: wilcoxon_signed_rank(&sal.0, &sal.1).into(),
        wilcoxon_confidence: wilcoxon_signed_rank(&conf.0, &conf.1).into(),
    })
}
