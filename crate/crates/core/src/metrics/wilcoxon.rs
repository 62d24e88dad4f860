use std::cmp::Ordering;

use super::{average_ranks_sorted, normal_two_sided, tie_groups, TestKind, TestResult};
use crate::error::{Error, Result};

/// Smallest number of nonzero differences accepted; below this the normal
/// approximation is not trusted.
pub const WILCOXON_MIN_NONZERO: usize = 10;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Differences are `b − a`; zeros are dropped and tied magnitudes share their
/// average rank. The statistic is `W⁺`, the rank sum of positive differences.
/// The p-value uses the normal approximation with tie-corrected variance
/// `n(n+1)(2n+1)/24 − Σ(t³−t)/48` and a 0.5 continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| y - x)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < WILCOXON_MIN_NONZERO {
        return Err(Error::TooFewNonzeroDiffs {
            got: n,
            min: WILCOXON_MIN_NONZERO,
        });
    }
    diffs.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap_or(Ordering::Equal));
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks_sorted(&magnitudes);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups(&magnitudes)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(TestResult {
        test: TestKind::WilcoxonSignedRank,
        statistic: w_plus,
        p_value: normal_two_sided(z),
        n,
    })
}
