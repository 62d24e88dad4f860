use std::cmp::Ordering;

use super::{normal_two_sided, tie_groups, TestKind, TestResult};
use crate::error::{Error, Result};

/// Kendall's τ-b with a normal-approximation two-sided p-value.
///
/// Runs in O(n log n): pairs are sorted by `(x, y)` and discordant pairs are
/// counted as the swaps a merge sort on `y` performs.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewPoints(format!("kendall tau needs >= 2 points, got {n}")));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    // pairs tied on x, and on both x and y
    let mut tied_x = 0u64;
    let mut tied_xy = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        tied_x += choose2(j - i);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && pairs[l].1 == pairs[k].1 {
                l += 1;
            }
            tied_xy += choose2(l - k);
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    // ys is now sorted
    let y_groups = tie_groups(&ys);
    let tied_y: u64 = y_groups.iter().map(|&t| choose2(t)).sum();

    let total = choose2(n);
    let s = total as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    let denom = ((total - tied_x) as f64 * (total - tied_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroVariance("kendall tau with a constant input".into()));
    }
    let tau = (s / denom).clamp(-1.0, 1.0);

    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(|a, b| cmp(*a, *b));
    let x_groups = tie_groups(&xs);
    let var = s_variance(n, &x_groups, &y_groups);
    let p_value = if var > 0.0 {
        normal_two_sided(s / var.sqrt())
    } else {
        1.0
    };
    Ok(TestResult {
        test: TestKind::KendallTau,
        statistic: tau,
        p_value,
        n,
    })
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

fn choose2(k: usize) -> u64 {
    (k as u64) * (k as u64).saturating_sub(1) / 2
}

/// Null variance of S = concordant − discordant under ties in both margins.
fn s_variance(n: usize, x_groups: &[usize], y_groups: &[usize]) -> f64 {
    let nf = n as f64;
    let sum = |g: &[usize], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(x_groups, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(y_groups, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let t1 = sum(x_groups, &|t| t * (t - 1.0));
    let u1 = sum(y_groups, &|t| t * (t - 1.0));
    let t2 = sum(x_groups, &|t| t * (t - 1.0) * (t - 2.0));
    let u2 = sum(y_groups, &|t| t * (t - 1.0) * (t - 2.0));
    let v1 = t1 * u1 / (2.0 * nf * (nf - 1.0));
    let v2 = if n > 2 {
        t2 * u2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
    } else {
        0.0
    };
    (v0 - vt - vu) / 18.0 + v1 + v2
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}
