//! Per-image artefact saliency statistics and their dataset-level summaries.
//!
//! Two per-image statistics are provided: the mean saliency over artefact
//! pixels, and the fraction of the image's most salient pixels that fall on
//! the artefact. The second is invariant to rescaling the map, so it can be
//! compared across models whose saliency scales differ.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::numeric::{self, Moments};
use crate::types::{ArtefactMask, SaliencyMap};

pub const DEFAULT_PEAK_PERCENTILE: f64 = 98.0;
const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Peak,
}

impl Aggregation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean" => Some(Aggregation::Mean),
            "peak" => Some(Aggregation::Peak),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSaliencyStat {
    pub image_id: String,
    pub mean_artefact: f64,
    pub peak_fraction: f64,
    pub artefact_pixels: usize,
    pub true_class: usize,
    pub predicted_class: usize,
    pub correct: bool,
}

impl ImageSaliencyStat {
    pub fn value(&self, aggregation: Aggregation) -> f64 {
        match aggregation {
            Aggregation::Mean => self.mean_artefact,
            Aggregation::Peak => self.peak_fraction,
        }
    }
}

/// Mean saliency over the pixels set in `mask`.
pub fn mean_artefact_saliency(map: &SaliencyMap, mask: &ArtefactMask) -> Result<f64> {
    map.check_same_shape(mask)?;
    if mask.pixel_count() == 0 {
        return Err(Error::EmptyMask(mask.image_id.clone()));
    }
    let sum: f64 = map
        .values()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v as f64)
        .sum();
    Ok(sum / mask.pixel_count() as f64)
}

/// Number of pixels in the top `(100 − percentile)`% of an image of
/// `total` pixels, rounded up.
pub fn peak_set_size(total: usize, percentile: f64) -> usize {
    // (100 - p) is exact for integral p, avoiding 1 - 0.98 style drift
    let size = ((100.0 - percentile) * total as f64 / 100.0).ceil() as usize;
    size.clamp(1, total)
}

/// Fraction of the most salient pixels that lie on the artefact.
///
/// The peak set holds the `⌈(1 − percentile/100)·H·W⌉` highest-valued pixels;
/// equal values are ranked by row-major index, lower index first.
pub fn peak_fraction(map: &SaliencyMap, mask: &ArtefactMask, percentile: f64) -> Result<f64> {
    map.check_same_shape(mask)?;
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::BadPercentile(percentile));
    }
    let values = map.values();
    let size = peak_set_size(values.len(), percentile);
    let mut order: Vec<usize> = (0..values.len()).collect();
    let rank = |a: &usize, b: &usize| -> Ordering {
        values[*b]
            .partial_cmp(&values[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if size < order.len() {
        order.select_nth_unstable_by(size - 1, rank);
    }
    let bits = mask.bits();
    let hits = order[..size].iter().filter(|&&i| bits[i]).count();
    Ok(hits as f64 / size as f64)
}

/// Both per-image statistics for one (map, mask) pair.
pub fn image_stat(
    map: &SaliencyMap,
    mask: &ArtefactMask,
    percentile: f64,
    true_class: usize,
    predicted_class: usize,
) -> Result<ImageSaliencyStat> {
    Ok(ImageSaliencyStat {
        image_id: map.image_id.clone(),
        mean_artefact: mean_artefact_saliency(map, mask)?,
        peak_fraction: peak_fraction(map, mask, percentile)?,
        artefact_pixels: mask.pixel_count(),
        true_class,
        predicted_class,
        correct: true_class == predicted_class,
    })
}

/// Pixel-population moments of one map.
pub fn map_moments(map: &SaliencyMap) -> Moments {
    Moments::from_values(map.values().iter().map(|&v| v as f64))
}

/// Mean and population standard deviation over every pixel of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mu: f64,
    pub sigma: f64,
}

impl Normalization {
    /// Combines per-map moments. Blocks are merged in order of `image_id`, so
    /// the result does not depend on input order.
    pub fn from_map_moments(mut blocks: Vec<(String, Moments)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::EmptyInput("no saliency maps to normalize".into()));
        }
        blocks.sort_by(|a, b| a.0.cmp(&b.0));
        let moments: Vec<Moments> = blocks.into_iter().map(|(_, m)| m).collect();
        let total = Moments::merge_all(&moments);
        let sigma = total.population_std();
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Normalization {
            mu: total.mean,
            sigma,
        })
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.mu) / self.sigma
    }
}

/// Z-scores every `mean_artefact` against the pixel population of `maps`.
pub fn zscore_normalize(
    stats: &[ImageSaliencyStat],
    maps: &[SaliencyMap],
) -> Result<(Vec<ImageSaliencyStat>, Normalization)> {
    let blocks = maps
        .iter()
        .map(|m| (m.image_id.clone(), map_moments(m)))
        .collect();
    let norm = Normalization::from_map_moments(blocks)?;
    let normalized = stats
        .iter()
        .map(|s| ImageSaliencyStat {
            mean_artefact: norm.apply(s.mean_artefact),
            ..s.clone()
        })
        .collect();
    Ok((normalized, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSaliencyReport {
    pub aggregation: Aggregation,
    pub method: String,
    /// Classes with at least one image, in class-list order.
    pub per_class: Vec<ClassSummary>,
    /// Population variance of the per-class means.
    pub interclass_variance: f64,
    pub normalization: Option<Normalization>,
}

/// Two-sided Student-t interval for the mean of `values`.
///
/// Collapses to the point value when fewer than two samples exist.
pub fn t_interval(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    let mean = numeric::mean(values).unwrap_or(f64::NAN);
    if n < 2 {
        return (mean, mean, mean);
    }
    let sample_var = numeric::population_variance(values).unwrap() * n as f64 / (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof");
    let t = dist.inverse_cdf(0.5 + CI_LEVEL / 2.0);
    let half = t * (sample_var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

/// Groups stats by true class and summarizes the chosen statistic.
pub fn per_class_report(
    stats: &[ImageSaliencyStat],
    classes: &[String],
    aggregation: Aggregation,
    method: &str,
) -> Result<GlobalSaliencyReport> {
    if stats.is_empty() {
        return Err(Error::EmptyInput("no image statistics".into()));
    }
    let mut sorted: Vec<&ImageSaliencyStat> = stats.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); classes.len()];
    for s in sorted {
        let g = groups.get_mut(s.true_class).ok_or(Error::ClassOutOfRange {
            class: s.true_class,
            classes: classes.len(),
        })?;
        g.push(s.value(aggregation));
    }
    let per_class: Vec<ClassSummary> = groups
        .iter()
        .zip(classes)
        .filter(|(g, _)| !g.is_empty())
        .map(|(g, name)| {
            let (mean, ci_low, ci_high) = t_interval(g);
            ClassSummary {
                class: name.clone(),
                n: g.len(),
                mean,
                ci_low,
                ci_high,
            }
        })
        .collect();
    let means: Vec<f64> = per_class.iter().map(|c| c.mean).collect();
    let interclass_variance = numeric::population_variance(&means).unwrap_or(0.0);
    Ok(GlobalSaliencyReport {
        aggregation,
        method: method.to_string(),
        per_class,
        interclass_variance,
        normalization: None,
    })
}
