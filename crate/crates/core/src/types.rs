//! Per-image domain types: saliency maps, artefact masks and prediction records.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Tolerance on the sum of a softmax confidence vector.
pub const CONFIDENCE_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaliencyMethod {
    #[serde(rename = "gradcam")]
    GradCam,
    #[serde(rename = "competitive")]
    CompetitiveGradInput,
    #[serde(rename = "external")]
    External,
}

impl SaliencyMethod {
    /// Key used for this method in manifest `saliency` objects and CLI flags.
    pub fn key(self) -> &'static str {
        match self {
            SaliencyMethod::GradCam => "gradcam",
            SaliencyMethod::CompetitiveGradInput => "competitive",
            SaliencyMethod::External => "external",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "gradcam" => Some(SaliencyMethod::GradCam),
            "competitive" => Some(SaliencyMethod::CompetitiveGradInput),
            "external" => Some(SaliencyMethod::External),
            _ => None,
        }
    }
}

/// An H×W importance grid for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub image_id: String,
    pub method: SaliencyMethod,
    /// Class the map explains; `None` for externally produced maps.
    pub target_class: Option<usize>,
    values: Tensor,
}

impl SaliencyMap {
    /// Wraps a tensor as a map. Leading singleton axes are squeezed, so
    /// `[1, H, W]` is accepted as `[H, W]`.
    pub fn new(
        image_id: impl Into<String>,
        method: SaliencyMethod,
        target_class: Option<usize>,
        values: Tensor,
    ) -> Result<Self> {
        let values = squeeze_to_2d(values)?;
        Ok(SaliencyMap {
            image_id: image_id.into(),
            method,
            target_class,
            values,
        })
    }

    pub fn from_grid(
        image_id: impl Into<String>,
        method: SaliencyMethod,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::new(image_id, method, None, Tensor::new(vec![height, width], data)?)
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &[f32] {
        self.values.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    /// Same map with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let data = self.values().iter().map(|v| v * factor).collect();
        Ok(SaliencyMap {
            values: Tensor::new(self.values.shape().to_vec(), data)?,
            ..self.clone()
        })
    }

    pub fn check_same_shape(&self, mask: &ArtefactMask) -> Result<()> {
        if self.height() != mask.height() || self.width() != mask.width() {
            return Err(Error::ShapeMismatch(format!(
                "saliency {}x{} vs mask {}x{} for {:?}",
                self.height(),
                self.width(),
                mask.height(),
                mask.width(),
                self.image_id
            )));
        }
        Ok(())
    }
}

fn squeeze_to_2d(t: Tensor) -> Result<Tensor> {
    let shape = t.shape().to_vec();
    let rank = shape.len();
    if rank >= 2 && shape[..rank - 2].iter().all(|&d| d == 1) {
        return t.reshape(shape[rank - 2..].to_vec());
    }
    Err(Error::ShapeMismatch(format!(
        "saliency map must be HxW, got shape {shape:?}"
    )))
}

/// Boolean H×W grid marking artefact pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtefactMask {
    pub image_id: String,
    height: usize,
    width: usize,
    bits: Vec<bool>,
    pixel_count: usize,
}

impl ArtefactMask {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} with {} bits",
                height,
                width,
                bits.len()
            )));
        }
        let pixel_count = bits.iter().filter(|&&b| b).count();
        Ok(ArtefactMask {
            image_id: image_id.into(),
            height,
            width,
            bits,
            pixel_count,
        })
    }

    /// Mask with the given row-major pixel indices set.
    pub fn from_indices(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        indices: &[usize],
    ) -> Result<Self> {
        let mut bits = vec![false; height * width];
        for &i in indices {
            if i >= bits.len() {
                return Err(Error::ShapeMismatch(format!(
                    "pixel {i} outside {height}x{width} mask"
                )));
            }
            bits[i] = true;
        }
        Self::new(image_id, height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        tensor::encode_mask(&[self.height, self.width], &self.bits)
    }

    pub fn from_bytes(image_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let (shape, bits) = tensor::decode_mask(bytes)?;
        let rank = shape.len();
        if rank < 2 || shape[..rank - 2].iter().any(|&d| d != 1) {
            return Err(Error::ShapeMismatch(format!("mask must be HxW, got {shape:?}")));
        }
        Self::new(image_id, shape[rank - 2], shape[rank - 1], bits)
    }
}

pub fn load_mask(path: impl AsRef<Path>, image_id: &str) -> Result<ArtefactMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ArtefactMask::from_bytes(image_id, &bytes)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &ArtefactMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// One model prediction: softmax confidences plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    /// Ground truth, when known to the producer of the record.
    pub true_class: Option<usize>,
    predicted_class: usize,
    confidences: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(
        image_id: impl Into<String>,
        true_class: Option<usize>,
        confidences: Vec<f64>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if confidences.is_empty() || confidences.iter().any(|c| !c.is_finite()) {
            return Err(Error::BadConfidences {
                image_id,
                sum: f64::NAN,
            });
        }
        let sum: f64 = confidences.iter().sum();
        if (sum - 1.0).abs() > CONFIDENCE_SUM_TOLERANCE {
            return Err(Error::BadConfidences { image_id, sum });
        }
        let predicted_class = argmax(&confidences).expect("nonempty");
        if let Some(t) = true_class {
            if t >= confidences.len() {
                return Err(Error::ClassOutOfRange {
                    class: t,
                    classes: confidences.len(),
                });
            }
        }
        Ok(PredictionRecord {
            image_id,
            true_class,
            predicted_class,
            confidences,
        })
    }

    pub fn predicted_class(&self) -> usize {
        self.predicted_class
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn num_classes(&self) -> usize {
        self.confidences.len()
    }

    /// `max(f(X))`, the confidence of the predicted class.
    pub fn confidence(&self) -> f64 {
        self.confidences[self.predicted_class]
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted_class: Option<usize>,
    confidences: Vec<f64>,
}

/// Reads a predictions JSON-Lines file.
///
/// Each line is `{"image_id":..., "confidences":[...]}` with optional
/// `true_class` and `predicted_class` indices; a supplied `predicted_class`
/// must agree with the argmax of the confidences.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine =
            serde_json::from_str(&line).map_err(|e| Error::ManifestSyntax {
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(parsed.image_id.clone()) {
            return Err(Error::DuplicateImageId(parsed.image_id));
        }
        let rec = PredictionRecord::new(parsed.image_id, parsed.true_class, parsed.confidences)?;
        if let Some(p) = parsed.predicted_class {
            if p != rec.predicted_class {
                return Err(Error::ManifestSyntax {
                    line: i + 1,
                    message: format!(
                        "predicted_class {p} disagrees with argmax {}",
                        rec.predicted_class
                    ),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = PredictionLine {
            image_id: r.image_id.clone(),
            true_class: r.true_class,
            predicted_class: Some(r.predicted_class),
            confidences: r.confidences.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}
