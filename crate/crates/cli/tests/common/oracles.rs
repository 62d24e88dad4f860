//! Textbook reference implementations, written independently of the library
//! (brute force where possible, no shared numerics).

/// Standard normal upper tail `P(Z > z)` for `z ≥ 0`, by composite Simpson
/// integration of the density over `[0, z]`.
pub fn normal_upper_tail(z: f64) -> f64 {
    let z = z.abs();
    if z > 40.0 {
        return 0.0;
    }
    let n = 20_000;
    let h = z / n as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = phi(0.0) + phi(z);
    for i in 1..n {
        acc += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (0.5 - acc * h / 3.0).max(0.0)
}

/// `ln Γ(x)` by the Lanczos approximation (g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let aa = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(F > f)` for an F(d1, d2) variable.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Kendall's τ-b by enumerating all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tie_x += 1;
            }
            if dy == 0.0 {
                tie_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (concordant - discordant) as f64 / (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt()
}

/// Two-sided normal-approximation p-value for τ-b with the tie-corrected
/// variance of `S = C − D`.
pub fn kendall_p(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let ties = |v: &[f64]| -> Vec<f64> {
        let mut counts: Vec<f64> = Vec::new();
        let mut seen: Vec<f64> = Vec::new();
        for &a in v {
            if seen.contains(&a) {
                continue;
            }
            seen.push(a);
            counts.push(v.iter().filter(|&&b| b == a).count() as f64);
        }
        counts
    };
    let (tx, ty) = (ties(x), ties(y));
    let sum = |t: &[f64], f: &dyn Fn(f64) -> f64| t.iter().map(|&v| f(v)).sum::<f64>();
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&tx, &|t| t * (t - 1.0)) * sum(&ty, &|t| t * (t - 1.0)) / (2.0 * n * (n - 1.0));
    let v2 = sum(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&ty, &|t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * n * (n - 1.0) * (n - 2.0));
    let var_s = (v0 - vt - vu) / 18.0 + v1 + v2;
    let sign = |v: f64| (v > 0.0) as i32 - (v < 0.0) as i32;
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += (sign(x[i] - x[j]) * sign(y[i] - y[j])) as f64;
        }
    }
    2.0 * normal_upper_tail(s.abs() / var_s.sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Levene's W and its F-distribution p-value; `use_median` selects the
/// Brown–Forsythe variant.
pub fn levene(groups: &[Vec<f64>], use_median: bool) -> (f64, f64) {
    let k = groups.len() as f64;
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = if use_median {
                median(g)
            } else {
                g.iter().sum::<f64>() / g.len() as f64
            };
            g.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    let n: f64 = z.iter().map(|g| g.len() as f64).sum();
    let group_means: Vec<f64> = z.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let grand = z.iter().flatten().sum::<f64>() / n;
    let between: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&group_means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let w = (n - k) / (k - 1.0) * between / within;
    (w, f_upper_tail(w, k - 1.0, n - k))
}

/// Wilcoxon signed-rank: `W⁺` over nonzero differences `b − a` with
/// average ranks, and the two-sided continuity-corrected normal p-value with
/// the tie-corrected variance.
pub fn wilcoxon(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|v| *v != 0.0).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let rank = |v: f64| {
        let less = abs.iter().filter(|&&u| u < v).count() as f64;
        let equal = abs.iter().filter(|&&u| u == v).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let w_plus: f64 = d.iter().filter(|v| **v > 0.0).map(|v| rank(v.abs())).sum();
    let n = d.len() as f64;
    let mut tie_term = 0.0;
    let mut done: Vec<f64> = Vec::new();
    for &v in &abs {
        if !done.contains(&v) {
            done.push(v);
            let t = abs.iter().filter(|&&u| u == v).count() as f64;
            tie_term += t * t * t - t;
        }
    }
    let mu = n * (n + 1.0) / 4.0;
    let sigma = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0).sqrt();
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / sigma;
    (w_plus, (2.0 * normal_upper_tail(z)).min(1.0))
}

/// Naive mean over the masked pixels of a row-major grid.
pub fn masked_mean(map: &[f32], mask: &[bool], h: usize, w: usize) -> f64 {
    let (mut sum, mut count) = (0.0f64, 0usize);
    for r in 0..h {
        for c in 0..w {
            if mask[r * w + c] {
                sum += map[r * w + c] as f64;
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Accuracy weighted by percentile rank: an image at rank `r` (share of
/// images with saliency at or below its own) is counted in every admitted
/// subset from percentile `max(r, p₁)` up to 100, each subset weighted by the
/// inverse of its size. Integrating gives a weight of
/// `−ln(max(r, p₁)) / (1 − p₁)` on the image's 1/0 correctness.
pub fn weighted_correctness(samples: &[(f64, bool)], first_tick: f64) -> f64 {
    let n = samples.len() as f64;
    let mut total = 0.0;
    for &(s, correct) in samples {
        let rank = samples.iter().filter(|o| o.0 <= s).count() as f64 / n;
        if correct {
            total += -(rank.max(first_tick)).ln() / (1.0 - first_tick);
        }
    }
    total / n
}

/// Spot values of the numeric helpers.
pub fn self_check() {
    assert!((normal_upper_tail(1.959963984540054) - 0.025).abs() < 1e-12);
    assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
    // F(1, 12) upper tail at 1.04
    assert!((f_upper_tail(1.04, 1.0, 12.0) - 0.327_941_904_995_370_6).abs() < 1e-10);
}
