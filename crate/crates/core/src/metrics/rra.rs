//! Response-rate accuracy curves.
//!
//! Images are admitted in order of increasing artefact saliency. Tick `k` of
//! `n` admits every image whose saliency is at most the `100·k/n`-th
//! percentile (linear interpolation between order statistics), and records the
//! accuracy of the admitted subset. A saliency method that flags confounded
//! images keeps accuracy high at low thresholds and lets it fall as more
//! salient images are admitted.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::aggregate::{Aggregation, ImageSaliencyStat};
use crate::error::{Error, Result};

/// Ten ticks, so the leftmost tick is the 10th percentile.
pub const DEFAULT_TICKS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RraPoint {
    pub threshold_percentile: f64,
    /// Saliency value at that percentile.
    pub threshold: f64,
    pub n_images: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RraCurve {
    pub points: Vec<RraPoint>,
    pub aurrac: f64,
}

/// Curve over the statistic chosen by `aggregation`.
pub fn rra_curve(
    stats: &[ImageSaliencyStat],
    aggregation: Aggregation,
    n_ticks: usize,
) -> Result<RraCurve> {
    let samples: Vec<(f64, bool)> = stats
        .iter()
        .map(|s| (s.value(aggregation), s.correct))
        .collect();
    rra_curve_values(&samples, n_ticks)
}

/// Curve over raw `(saliency, correct)` samples.
pub fn rra_curve_values(samples: &[(f64, bool)], n_ticks: usize) -> Result<RraCurve> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("response-rate curve needs images".into()));
    }
    if n_ticks < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 ticks, got {n_ticks}")));
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let values: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    let mut correct_prefix = Vec::with_capacity(sorted.len() + 1);
    correct_prefix.push(0usize);
    for s in &sorted {
        correct_prefix.push(correct_prefix.last().unwrap() + s.1 as usize);
    }

    let points: Vec<RraPoint> = (1..=n_ticks)
        .map(|k| {
            let pct = 100.0 * k as f64 / n_ticks as f64;
            let threshold = if k == n_ticks {
                *values.last().unwrap()
            } else {
                percentile_sorted(&values, pct)
            };
            let n_images = values.partition_point(|&v| v <= threshold);
            RraPoint {
                threshold_percentile: pct,
                threshold,
                n_images,
                accuracy: correct_prefix[n_images] as f64 / n_images as f64,
            }
        })
        .collect();
    let mut curve = RraCurve { points, aurrac: 0.0 };
    curve.aurrac = aurrac(&curve);
    Ok(curve)
}

/// Linear-interpolation percentile of an ascending slice.
pub(crate) fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * pct / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Trapezoidal area under accuracy against threshold percentile (scaled to
/// [0, 1]), divided by the width of the covered percentile range.
pub fn aurrac(curve: &RraCurve) -> f64 {
    let pts = &curve.points;
    match pts.len() {
        0 => 0.0,
        1 => pts[0].accuracy,
        _ => {
            let (area, width) = pts.windows(2).fold((0.0, 0.0), |(area, width), w| {
                let dx = (w[1].threshold_percentile - w[0].threshold_percentile) / 100.0;
                (area + dx * (w[0].accuracy + w[1].accuracy) / 2.0, width + dx)
            });
            area / width
        }
    }
}
