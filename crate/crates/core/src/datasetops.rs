//! Dataset construction and artefact/label co-occurrence accounting.
//!
//! An image counts as *inked* when its artefact mask has strictly more than
//! `min_pixels` set pixels.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::tensor::Tensor;
use crate::types::{ArtefactMask, PredictionRecord};

pub const DEFAULT_MIN_INK_PIXELS: usize = 100;
pub const DEFAULT_UNBIASED_RATIO: f64 = 0.5;

/// Anything that can report the artefact pixel count of an image.
pub trait InkLookup {
    fn ink_pixels(&self, image_id: &str) -> Option<usize>;
}

impl InkLookup for HashMap<String, ArtefactMask> {
    fn ink_pixels(&self, image_id: &str) -> Option<usize> {
        self.get(image_id).map(ArtefactMask::pixel_count)
    }
}

impl InkLookup for HashMap<String, usize> {
    fn ink_pixels(&self, image_id: &str) -> Option<usize> {
        self.get(image_id).copied()
    }
}

impl InkLookup for BTreeMap<String, usize> {
    fn ink_pixels(&self, image_id: &str) -> Option<usize> {
        self.get(image_id).copied()
    }
}

fn is_inked(masks: &impl InkLookup, image_id: &str, min_pixels: usize) -> Result<bool> {
    masks
        .ink_pixels(image_id)
        .map(|n| n > min_pixels)
        .ok_or_else(|| Error::MissingMask(image_id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCooccurrence {
    pub class: String,
    pub inked: usize,
    pub uninked: usize,
    /// `None` for classes with no images.
    pub p_ink_given_class: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub min_pixels: usize,
    pub per_class: Vec<ClassCooccurrence>,
    pub overall_p_ink: f64,
}

impl CooccurrenceTable {
    /// One header row of class names and one row of percentages.
    pub fn to_csv(&self, row_label: &str) -> String {
        let mut header = vec!["train_set".to_string()];
        let mut row = vec![row_label.to_string()];
        for c in &self.per_class {
            header.push(c.class.clone());
            row.push(
                c.p_ink_given_class
                    .map(|p| format!("{:.1}", 100.0 * p))
                    .unwrap_or_default(),
            );
        }
        header.push("overall".into());
        row.push(format!("{:.1}", 100.0 * self.overall_p_ink));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

pub fn cooccurrence(
    manifest: &DatasetManifest,
    masks: &impl InkLookup,
    min_pixels: usize,
) -> Result<CooccurrenceTable> {
    let mut counts = vec![(0usize, 0usize); manifest.classes.len()];
    for e in &manifest.entries {
        let slot = &mut counts[e.class];
        if is_inked(masks, &e.image_id, min_pixels)? {
            slot.0 += 1;
        } else {
            slot.1 += 1;
        }
    }
    let total_inked: usize = counts.iter().map(|c| c.0).sum();
    let total = manifest.entries.len();
    Ok(CooccurrenceTable {
        min_pixels,
        per_class: manifest
            .classes
            .iter()
            .zip(&counts)
            .map(|(name, &(inked, uninked))| ClassCooccurrence {
                class: name.clone(),
                inked,
                uninked,
                p_ink_given_class: (inked + uninked > 0)
                    .then(|| inked as f64 / (inked + uninked) as f64),
            })
            .collect(),
        overall_p_ink: if total == 0 {
            0.0
        } else {
            total_inked as f64 / total as f64
        },
    })
}

/// SplitMix64.
///
/// ```text
/// state ← state + 0x9E3779B97F4A7C15          (wrapping)
/// z ← (state ⊕ (state ≫ 30)) · 0xBF58476D1CE4E5B9
/// z ← (z ⊕ (z ≫ 27)) · 0x94D049BB133111EB
/// output z ⊕ (z ≫ 31)
/// ```
///
/// Bounded draws in `[0, n)` reject outputs `≥ n·⌊(2⁶⁴−1)/n⌋` and return
/// the remainder modulo `n`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let limit = n * (u64::MAX / n);
        loop {
            let r = self.next_u64();
            if r < limit {
                return r % n;
            }
        }
    }

    /// Uniform sample of `k` items without replacement via a partial
    /// Fisher–Yates shuffle; returned in draw order.
    pub fn sample<T: Clone>(&mut self, pool: &[T], k: usize) -> Vec<T> {
        let mut items = pool.to_vec();
        let k = k.min(items.len());
        for i in 0..k {
            let j = i + self.below((items.len() - i) as u64) as usize;
            items.swap(i, j);
        }
        items.truncate(k);
        items
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanClassCounts {
    pub class: String,
    pub inked: usize,
    pub uninked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub seed: u64,
    pub ratio: f64,
    pub min_pixels: usize,
    /// In manifest order.
    pub selected_ids: Vec<String>,
    pub per_class_counts: Vec<PlanClassCounts>,
}

impl SamplingPlan {
    pub fn apply(&self, manifest: &DatasetManifest) -> DatasetManifest {
        let keep: HashSet<&str> = self.selected_ids.iter().map(String::as_str).collect();
        manifest.filtered(|e| keep.contains(e.image_id.as_str()))
    }
}

/// All inked images plus, per class, `⌊ratio·inked⌋` uninked images drawn
/// uniformly with [`SplitMix64`].
///
/// Classes are visited in class-list order with one generator stream; each
/// class's uninked pool is sorted by image id before drawing. With integral
/// `ratio·inked` every class ends up with `P(ink | class) = 1/(1+ratio)`, so
/// the class distribution is the same among inked and uninked images.
pub fn unbiased_plan(
    manifest: &DatasetManifest,
    masks: &impl InkLookup,
    ratio: f64,
    seed: u64,
    min_pixels: usize,
) -> Result<SamplingPlan> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::BadRatio(ratio));
    }
    let k = manifest.classes.len();
    let mut inked: Vec<Vec<&str>> = vec![Vec::new(); k];
    let mut uninked: Vec<Vec<&str>> = vec![Vec::new(); k];
    for e in &manifest.entries {
        if is_inked(masks, &e.image_id, min_pixels)? {
            inked[e.class].push(&e.image_id);
        } else {
            uninked[e.class].push(&e.image_id);
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut selected: HashSet<&str> = HashSet::new();
    let mut per_class_counts = Vec::with_capacity(k);
    for c in 0..k {
        let needed = (ratio * inked[c].len() as f64).floor() as usize;
        let pool = &mut uninked[c];
        if pool.len() < needed {
            return Err(Error::InsufficientUninked {
                class: manifest.classes[c].clone(),
                available: pool.len(),
                needed,
            });
        }
        pool.sort_unstable();
        selected.extend(inked[c].iter().copied());
        selected.extend(rng.sample(pool, needed));
        per_class_counts.push(PlanClassCounts {
            class: manifest.classes[c].clone(),
            inked: inked[c].len(),
            uninked: needed,
        });
    }
    let selected_ids = manifest
        .entries
        .iter()
        .filter(|e| selected.contains(e.image_id.as_str()))
        .map(|e| e.image_id.clone())
        .collect();
    Ok(SamplingPlan {
        seed,
        ratio,
        min_pixels,
        selected_ids,
        per_class_counts,
    })
}

/// Entries whose mask has more than `min_pixels` artefact pixels.
pub fn ink_only_filter(
    manifest: &DatasetManifest,
    masks: &impl InkLookup,
    min_pixels: usize,
) -> Result<DatasetManifest> {
    for e in &manifest.entries {
        is_inked(masks, &e.image_id, min_pixels)?;
    }
    Ok(manifest.filtered(|e| is_inked(masks, &e.image_id, min_pixels).unwrap_or(false)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AblationMode {
    /// Keep artefact pixels, replace everything else with the mean pixel.
    #[default]
    KeepArtefact,
}

/// Replaces pixels outside the artefact with the image's per-channel mean
/// pixel (computed over all pixels of the original image).
///
/// `image` is H×W×C or H×W.
pub fn ablate(image: &Tensor, mask: &ArtefactMask, mode: AblationMode) -> Result<Tensor> {
    let AblationMode::KeepArtefact = mode;
    let shape = image.shape();
    let (h, w, channels) = match *shape {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "image must be HxW or HxWxC, got {shape:?}"
            )))
        }
    };
    if (h, w) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "image {h}x{w} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    let data = image.data();
    let mut sums = vec![0.0f64; channels];
    for px in data.chunks_exact(channels) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let mean: Vec<f32> = sums.iter().map(|s| (s / (h * w) as f64) as f32).collect();
    let mut out = data.to_vec();
    for (px, &keep) in out.chunks_exact_mut(channels).zip(mask.bits()) {
        if !keep {
            px.copy_from_slice(&mean);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangedTo {
    pub class: String,
    pub count: usize,
    /// Share of all compared images.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub n_compared: usize,
    pub n_invariant: usize,
    pub invariant_fraction: f64,
    /// Images present in only one of the two files.
    pub n_unmatched: usize,
    /// Where changed predictions moved to, by new predicted class.
    pub changed_to: Vec<ChangedTo>,
}

/// Compares predictions on original and transformed (e.g. ablated) images,
/// joined by image id.
pub fn prediction_invariance(
    original: &[PredictionRecord],
    transformed: &[PredictionRecord],
    classes: &[String],
) -> Result<InvarianceReport> {
    let after: HashMap<&str, &PredictionRecord> =
        transformed.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut n_compared = 0;
    let mut n_invariant = 0;
    let mut changed = vec![0usize; classes.len()];
    for r in original {
        let Some(t) = after.get(r.image_id.as_str()) else {
            continue;
        };
        n_compared += 1;
        if t.predicted_class() == r.predicted_class() {
            n_invariant += 1;
        } else {
            let slot = changed.get_mut(t.predicted_class()).ok_or(Error::ClassOutOfRange {
                class: t.predicted_class(),
                classes: classes.len(),
            })?;
            *slot += 1;
        }
    }
    if n_compared == 0 {
        return Err(Error::EmptyInput("no image ids shared by the two prediction files".into()));
    }
    let frac = |k: usize| k as f64 / n_compared as f64;
    Ok(InvarianceReport {
        n_compared,
        n_invariant,
        invariant_fraction: frac(n_invariant),
        n_unmatched: original.len() + transformed.len() - 2 * n_compared,
        changed_to: classes
            .iter()
            .zip(&changed)
            .map(|(c, &count)| ChangedTo {
                class: c.clone(),
                count,
                fraction: frac(count),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ManifestEntry, Split};
    use std::path::PathBuf;

    fn manifest(classes: &[&str], entries: &[(&str, usize)]) -> DatasetManifest {
        DatasetManifest::new(
            classes.iter().map(|s| s.to_string()).collect(),
            entries
                .iter()
                .map(|&(id, class)| ManifestEntry {
                    image_id: id.into(),
                    class,
                    image: None,
                    mask: None,
                    saliency: BTreeMap::new(),
                    gradients: None,
                    activations: None,
                    layer_gradients: None,
                    split: Split::Train,
                })
                .collect(),
            PathBuf::new(),
        )
        .unwrap()
    }

    #[test]
    fn half_inked_class() {
        let m = manifest(&["A"], &[("a", 0), ("b", 0), ("c", 0), ("d", 0)]);
        let ink: HashMap<String, usize> =
            [("a", 500), ("b", 101), ("c", 3), ("d", 0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let t = cooccurrence(&m, &ink, 100).unwrap();
        assert_eq!(t.per_class[0].inked, 2);
        assert_eq!(t.per_class[0].p_ink_given_class, Some(0.5));
        assert_eq!(t.overall_p_ink, 0.5);
        assert_eq!(t.to_csv("baseline"), "train_set,A,overall\nbaseline,50.0,50.0\n");
    }

    #[test]
    fn boundary_is_strict() {
        let m = manifest(&["A"], &[("x99", 0), ("x100", 0), ("x101", 0)]);
        let ink: HashMap<String, usize> =
            [("x99", 99), ("x100", 100), ("x101", 101)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let t = cooccurrence(&m, &ink, 100).unwrap();
        assert_eq!((t.per_class[0].inked, t.per_class[0].uninked), (1, 2));
        let f = ink_only_filter(&m, &ink, 100).unwrap();
        assert_eq!(f.entries.len(), 1);
        assert_eq!(f.entries[0].image_id, "x101");
    }

    #[test]
    fn missing_mask() {
        let m = manifest(&["A"], &[("a", 0)]);
        let ink: HashMap<String, usize> = HashMap::new();
        assert!(matches!(cooccurrence(&m, &ink, 100), Err(Error::MissingMask(_))));
        assert!(matches!(ink_only_filter(&m, &ink, 100), Err(Error::MissingMask(_))));
        assert!(matches!(unbiased_plan(&m, &ink, 0.5, 1, 100), Err(Error::MissingMask(_))));
    }

    #[test]
    fn empty_filter_result() {
        let m = manifest(&["A", "B"], &[("a", 0), ("b", 1)]);
        let ink: HashMap<String, usize> = [("a", 0), ("b", 5)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert!(ink_only_filter(&m, &ink, 100).unwrap().is_empty());
    }

    fn pool_fixture() -> (DatasetManifest, HashMap<String, usize>) {
        let mut entries = Vec::new();
        let mut ink = HashMap::new();
        for i in 0..4 {
            entries.push((format!("in{i}"), 0));
            ink.insert(format!("in{i}"), 200);
        }
        for i in 0..10 {
            entries.push((format!("un{i:02}"), 0));
            ink.insert(format!("un{i:02}"), 0);
        }
        let refs: Vec<(&str, usize)> = entries.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        (manifest(&["A"], &refs), ink)
    }

    #[test]
    fn plan_takes_half_as_many_uninked() {
        let (m, ink) = pool_fixture();
        let p = unbiased_plan(&m, &ink, 0.5, 7, 100).unwrap();
        assert_eq!(p.per_class_counts[0].inked, 4);
        assert_eq!(p.per_class_counts[0].uninked, 2);
        assert_eq!(p.selected_ids.len(), 6);
        assert!(p.selected_ids[..4].iter().all(|id| id.starts_with("in")));
    }

    #[test]
    fn plan_determinism() {
        let (m, ink) = pool_fixture();
        let a = unbiased_plan(&m, &ink, 0.5, 7, 100).unwrap();
        let b = unbiased_plan(&m, &ink, 0.5, 7, 100).unwrap();
        assert_eq!(a, b);
        let others: Vec<SamplingPlan> =
            (0..20).map(|s| unbiased_plan(&m, &ink, 0.5, s, 100).unwrap()).collect();
        assert!(others.iter().all(|o| o.per_class_counts == a.per_class_counts));
        assert!(others.iter().any(|o| o.selected_ids != a.selected_ids));
    }

    #[test]
    fn plan_errors() {
        let (m, ink) = pool_fixture();
        assert!(matches!(unbiased_plan(&m, &ink, 0.0, 1, 100), Err(Error::BadRatio(_))));
        assert!(matches!(unbiased_plan(&m, &ink, f64::NAN, 1, 100), Err(Error::BadRatio(_))));
        assert!(matches!(
            unbiased_plan(&m, &ink, 3.0, 1, 100),
            Err(Error::InsufficientUninked { needed: 12, available: 10, .. })
        ));
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs for seed 0 from the reference implementation
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn bounded_draws_stay_in_range() {
        let mut r = SplitMix64::new(42);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[r.below(7) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| (850..1150).contains(&c)), "{seen:?}");
    }

    fn image(px: &[[f32; 3]]) -> Tensor {
        Tensor::new(vec![1, px.len(), 3], px.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn ablation_examples() {
        let img = image(&[[0., 0., 0.], [2., 2., 2.]]);
        let first = ArtefactMask::from_indices("i", 1, 2, &[0]).unwrap();
        let out = ablate(&img, &first, AblationMode::KeepArtefact).unwrap();
        assert_eq!(out.data(), &[0., 0., 0., 1., 1., 1.]);

        let all = ArtefactMask::from_indices("i", 1, 2, &[0, 1]).unwrap();
        assert_eq!(ablate(&img, &all, AblationMode::KeepArtefact).unwrap(), img);

        let none = ArtefactMask::from_indices("i", 1, 2, &[]).unwrap();
        assert_eq!(ablate(&img, &none, AblationMode::KeepArtefact).unwrap().data(), &[1.; 6]);

        let wrong = ArtefactMask::from_indices("i", 2, 1, &[]).unwrap();
        assert!(matches!(ablate(&img, &wrong, AblationMode::KeepArtefact), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ablation_idempotence_cases() {
        let img = image(&[[0., 4., 1.], [2., 2., 2.], [7., 0., 3.]]);
        for idx in [vec![0, 1, 2], vec![]] {
            let m = ArtefactMask::from_indices("i", 1, 3, &idx).unwrap();
            let once = ablate(&img, &m, AblationMode::KeepArtefact).unwrap();
            assert_eq!(ablate(&once, &m, AblationMode::KeepArtefact).unwrap(), once);
        }
        // keeping one pixel shifts the mean on the second pass
        let m = ArtefactMask::from_indices("i", 1, 3, &[2]).unwrap();
        let once = ablate(&img, &m, AblationMode::KeepArtefact).unwrap();
        assert_ne!(ablate(&once, &m, AblationMode::KeepArtefact).unwrap(), once);
    }

    #[test]
    fn invariance_fraction() {
        let classes = vec!["A".to_string(), "Other".to_string()];
        let rec = |id: &str, c: usize| {
            let mut conf = vec![0.1, 0.1];
            conf[c] = 0.9;
            PredictionRecord::new(id, None, conf).unwrap()
        };
        let before = vec![rec("a", 0), rec("b", 0), rec("c", 0), rec("d", 1), rec("z", 0)];
        let after = vec![rec("a", 0), rec("b", 1), rec("c", 1), rec("d", 1)];
        let r = prediction_invariance(&before, &after, &classes).unwrap();
        assert_eq!((r.n_compared, r.n_invariant, r.n_unmatched), (4, 2, 1));
        assert_eq!(r.invariant_fraction, 0.5);
        assert_eq!(r.changed_to[1].count, 2);
        assert_eq!(r.changed_to[1].fraction, 0.5);
        assert!(prediction_invariance(&before, &[], &classes).is_err());
    }
}
