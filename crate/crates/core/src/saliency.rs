//! Saliency map composition from exported model tensors, and checks of the
//! completeness property (map sums to the model's confidence).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{load_tensor, Tensor};
use crate::types::{ArtefactMask, PredictionRecord, SaliencyMap, SaliencyMethod};

/// Raw per-image tensors exported by a model harness.
///
/// Any of the three tensors may be absent; each composer needs only its own.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub image_id: String,
    /// Gradient⊙input for every class, K×H×W.
    pub per_class_grad_input: Option<Tensor>,
    /// Activations of one convolutional layer, C×h×w.
    pub layer_activations: Option<Tensor>,
    /// Gradient of each class score w.r.t. that layer, K×C×h×w.
    pub layer_gradients: Option<Tensor>,
}

impl GradientBundle {
    pub fn new(
        image_id: impl Into<String>,
        per_class_grad_input: Option<Tensor>,
        layer_activations: Option<Tensor>,
        layer_gradients: Option<Tensor>,
    ) -> Result<Self> {
        let b = GradientBundle {
            image_id: image_id.into(),
            per_class_grad_input,
            layer_activations,
            layer_gradients,
        };
        if let Some(g) = &b.per_class_grad_input {
            expect_rank(g, 3, "per-class grad⊙input")?;
        }
        if let Some(a) = &b.layer_activations {
            expect_rank(a, 3, "layer activations")?;
        }
        if let Some(lg) = &b.layer_gradients {
            expect_rank(lg, 4, "layer gradients")?;
            if let Some(a) = &b.layer_activations {
                if lg.shape()[1..] != a.shape()[..] {
                    return Err(Error::ShapeMismatch(format!(
                        "layer gradients {:?} disagree with activations {:?} on C,h,w",
                        lg.shape(),
                        a.shape()
                    )));
                }
            }
        }
        if let (Some(g), Some(lg)) = (&b.per_class_grad_input, &b.layer_gradients) {
            if g.shape()[0] != lg.shape()[0] {
                return Err(Error::ShapeMismatch(format!(
                    "grad⊙input has {} classes, layer gradients {}",
                    g.shape()[0],
                    lg.shape()[0]
                )));
            }
        }
        Ok(b)
    }

    /// Loads whichever tensors have a path.
    pub fn load(
        image_id: &str,
        grad_input: Option<&Path>,
        activations: Option<&Path>,
        layer_gradients: Option<&Path>,
    ) -> Result<Self> {
        let get = |p: Option<&Path>| p.map(load_tensor).transpose();
        Self::new(image_id, get(grad_input)?, get(activations)?, get(layer_gradients)?)
    }

    /// Number of classes K, from whichever per-class tensor is present.
    pub fn num_classes(&self) -> Option<usize> {
        self.per_class_grad_input
            .as_ref()
            .map(|g| g.shape()[0])
            .or_else(|| self.layer_gradients.as_ref().map(|g| g.shape()[0]))
    }

    /// Checks K against the class count of the manifest.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.num_classes() {
            Some(k) if k != classes => Err(Error::ShapeMismatch(format!(
                "bundle for {:?} has {k} classes, manifest has {classes}",
                self.image_id
            ))),
            _ => Ok(()),
        }
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::ShapeMismatch(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Grad-CAM: weight each filter of the layer by the spatial mean of its
/// gradient, sum, clamp negatives to zero, then upsample bilinearly
/// (corner-aligned) to `out_h`×`out_w`.
pub fn compose_gradcam(
    bundle: &GradientBundle,
    target_class: usize,
    out_h: usize,
    out_w: usize,
) -> Result<SaliencyMap> {
    let acts = bundle
        .layer_activations
        .as_ref()
        .ok_or(Error::EmptyActivation)?;
    let grads = bundle.layer_gradients.as_ref().ok_or_else(|| {
        Error::EmptyInput(format!("no layer gradients for {:?}", bundle.image_id))
    })?;
    let (k, c, h, w) = (grads.shape()[0], acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    if target_class >= k {
        return Err(Error::ClassOutOfRange {
            class: target_class,
            classes: k,
        });
    }
    if out_h < h || out_w < w {
        return Err(Error::ShapeMismatch(format!(
            "grad-CAM output {out_h}x{out_w} smaller than layer {h}x{w}"
        )));
    }
    let plane = h * w;
    let class_grads = &grads.data()[target_class * c * plane..(target_class + 1) * c * plane];

    let mut cam = vec![0.0f64; plane];
    for (filter, act) in acts.data().chunks_exact(plane).enumerate() {
        let g = &class_grads[filter * plane..(filter + 1) * plane];
        let weight = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        for (acc, &a) in cam.iter_mut().zip(act) {
            *acc += weight * a as f64;
        }
    }
    for v in &mut cam {
        *v = v.max(0.0);
    }
    let resized = resize_bilinear(&cam, h, w, out_h, out_w);
    let data = resized.into_iter().map(|v| v as f32).collect();
    SaliencyMap::new(
        bundle.image_id.clone(),
        SaliencyMethod::GradCam,
        Some(target_class),
        Tensor::new(vec![out_h, out_w], data)?,
    )
}

/// Bilinear resampling with corner-aligned sample positions: output pixel
/// `(y, x)` samples input position `(y·(h−1)/(out_h−1), x·(w−1)/(out_w−1))`.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                if n_out == 1 || n_in == 1 {
                    return (0, 0, 0.0);
                }
                let pos = (o * (n_in - 1)) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Competitive gradient⊙input: keep the target class's signed value at a
/// pixel only where its magnitude strictly exceeds every other class's.
pub fn compose_competitive(bundle: &GradientBundle, target_class: usize) -> Result<SaliencyMap> {
    let gi = bundle.per_class_grad_input.as_ref().ok_or_else(|| {
        Error::EmptyInput(format!("no per-class grad⊙input for {:?}", bundle.image_id))
    })?;
    let (k, h, w) = (gi.shape()[0], gi.shape()[1], gi.shape()[2]);
    if target_class >= k {
        return Err(Error::ClassOutOfRange {
            class: target_class,
            classes: k,
        });
    }
    let plane = h * w;
    let planes: Vec<&[f32]> = gi.data().chunks_exact(plane).collect();
    let target = planes[target_class];
    let data = (0..plane)
        .map(|p| {
            let v = target[p];
            let wins = planes
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != target_class)
                .all(|(_, other)| v.abs() > other[p].abs());
            if wins {
                v
            } else {
                0.0
            }
        })
        .collect();
    SaliencyMap::new(
        bundle.image_id.clone(),
        SaliencyMethod::CompetitiveGradInput,
        Some(target_class),
        Tensor::new(vec![h, w], data)?,
    )
}

fn check_ids(map: &SaliencyMap, record: &PredictionRecord) -> Result<()> {
    if map.image_id != record.image_id {
        return Err(Error::IdMismatch(map.image_id.clone(), record.image_id.clone()));
    }
    Ok(())
}

/// `Σ map − max(confidences)`; zero when the map is complete.
pub fn completeness_residual(map: &SaliencyMap, record: &PredictionRecord) -> Result<f64> {
    check_ids(map, record)?;
    let total: f64 = map.values().iter().map(|&v| v as f64).sum();
    Ok(total - record.confidence())
}

/// Both sides of the artefact/complement split of a complete map:
/// `(confidence − Σ_artefact, Σ_complement)`.
///
/// The two sides differ by exactly the negated completeness residual.
pub fn partition_sum_check(
    map: &SaliencyMap,
    mask: &ArtefactMask,
    record: &PredictionRecord,
) -> Result<(f64, f64)> {
    map.check_same_shape(mask)?;
    check_ids(map, record)?;
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    for (&v, &b) in map.values().iter().zip(mask.bits()) {
        if b {
            inside += v as f64;
        } else {
            outside += v as f64;
        }
    }
    Ok((record.confidence() - inside, outside))
}
