use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{TestKind, TestResult};
use crate::error::{Error, Result};

/// Center used for the absolute deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeveneCenter {
    /// Classic Levene.
    #[default]
    Mean,
    /// Brown–Forsythe.
    Median,
}

/// Levene's test for equal variances across groups.
///
/// `W = (N−k)/(k−1) · Σ nᵢ(Z̄ᵢ−Z̄)² / ΣΣ(Zᵢⱼ−Z̄ᵢ)²` with `Zᵢⱼ = |Yᵢⱼ − centerᵢ|`,
/// referred to F(k−1, N−k).
pub fn levene_test(groups: &[Vec<f64>], center: LeveneCenter) -> Result<TestResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::TooFewGroups(k));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::TooFewPoints(format!(
            "every Levene group needs >= 2 members, found {}",
            g.len()
        )));
    }
    let deviations: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => g.iter().sum::<f64>() / g.len() as f64,
                LeveneCenter::Median => median(g),
            };
            g.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let group_means: Vec<f64> = deviations
        .iter()
        .map(|z| z.iter().sum::<f64>() / z.len() as f64)
        .collect();
    let grand = deviations.iter().flatten().sum::<f64>() / n_total as f64;
    let between: f64 = deviations
        .iter()
        .zip(&group_means)
        .map(|(z, m)| z.len() as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = deviations
        .iter()
        .zip(&group_means)
        .map(|(z, m)| z.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df1 = (k - 1) as f64;
    let df2 = (n_total - k) as f64;
    if within == 0.0 {
        if between == 0.0 {
            return Ok(TestResult {
                test: kind(center),
                statistic: 0.0,
                p_value: 1.0,
                n: n_total,
            });
        }
        // spreads differ while each group's deviations are constant
        return Ok(TestResult {
            test: kind(center),
            statistic: f64::INFINITY,
            p_value: 0.0,
            n: n_total,
        });
    }
    let w = df2 / df1 * between / within;
    let f = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    Ok(TestResult {
        test: kind(center),
        statistic: w,
        p_value: f.sf(w).clamp(0.0, 1.0),
        n: n_total,
    })
}

fn kind(center: LeveneCenter) -> TestKind {
    match center {
        LeveneCenter::Mean => TestKind::Levene,
        LeveneCenter::Median => TestKind::BrownForsythe,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
