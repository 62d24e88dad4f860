//! Saliency-quality metrics and the nonparametric tests used to compare
//! global saliency across classes and models.

mod kendall;
mod levene;
mod rra;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use kendall::kendall_tau;
pub use levene::{levene_test, LeveneCenter};
pub use rra::{aurrac, rra_curve, rra_curve_values, RraCurve, RraPoint, DEFAULT_TICKS};
pub use wilcoxon::{wilcoxon_signed_rank, WILCOXON_MIN_NONZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    KendallTau,
    Levene,
    BrownForsythe,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    /// May be `+inf` (Levene with zero within-group spread); serialized as
    /// the string `"inf"` in that case.
    #[serde(with = "extended_float")]
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad statistic {other:?}"))),
            },
        }
    }
}

/// Two-sided p-value of a standard normal deviate.
pub(crate) fn normal_two_sided(z: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * std.sf(z.abs())).clamp(0.0, 1.0)
}

/// Ranks starting at 1, averaging over runs of equal values.
/// `sorted` must be ascending.
pub(crate) fn average_ranks_sorted(sorted: &[f64]) -> Vec<f64> {
    let mut ranks = vec![0.0; sorted.len()];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        ranks[i..j].iter_mut().for_each(|r| *r = avg);
        i = j;
    }
    ranks
}

/// Sizes of runs of equal values in an ascending slice.
pub(crate) fn tie_groups(sorted: &[f64]) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}
