//! Dataset manifests (JSON-Lines).
//!
//! The first line is a header `{"classes":[...]}`; each following line binds
//! one image to its tensors:
//!
//! ```text
//! {"image_id":"img0","label":"MEL","image":"img0.gst","mask":"img0_mask.gst",
//!  "saliency":{"gradcam":"img0_cam.gst"},"gradients":"img0_gi.gst",
//!  "activations":"img0_act.gst","layer_gradients":"img0_lg.gst","split":"val"}
//! ```
//!
//! `image_id`, `label` and `split` are required. Tensor paths may be null or
//! absent and are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Index into [`DatasetManifest::classes`].
    pub class: usize,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Precomputed saliency tensors keyed by method name.
    pub saliency: BTreeMap<String, PathBuf>,
    /// Per-class gradient⊙input, K×H×W.
    pub gradients: Option<PathBuf>,
    /// Activations of the explained layer, C×h×w.
    pub activations: Option<PathBuf>,
    /// Gradients of each class score w.r.t. that layer, K×C×h×w.
    pub layer_gradients: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(classes: Vec<String>, entries: Vec<ManifestEntry>, base_dir: PathBuf) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateImageId(e.image_id.clone()));
            }
            if e.class >= classes.len() {
                return Err(Error::ClassOutOfRange {
                    class: e.class,
                    classes: classes.len(),
                });
            }
        }
        Ok(DatasetManifest {
            classes,
            entries,
            base_dir,
        })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::MissingField {
            line: 1,
            field: "classes".into(),
        })?;
        let header = parse_object(hline + 1, header)?;
        let classes: Vec<String> = match header.get("classes") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_string).ok_or_else(|| Error::ManifestSyntax {
                        line: hline + 1,
                        message: "class names must be strings".into(),
                    })
                })
                .collect::<Result<_>>()?,
            _ => {
                return Err(Error::MissingField {
                    line: hline + 1,
                    field: "classes".into(),
                })
            }
        };
        let class_index: BTreeMap<&str, usize> =
            classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let obj = parse_object(lineno, line)?;
            let image_id = required_str(&obj, lineno, "image_id")?;
            let label = required_str(&obj, lineno, "label")?;
            let split_raw = required_str(&obj, lineno, "split")?;
            let split = Split::parse(&split_raw).ok_or_else(|| Error::ManifestSyntax {
                line: lineno,
                message: format!("split must be \"train\" or \"val\", got {split_raw:?}"),
            })?;
            let class = *class_index
                .get(label.as_str())
                .ok_or_else(|| Error::UnknownClassLabel {
                    image_id: image_id.clone(),
                    label: label.clone(),
                })?;
            if !seen.insert(image_id.clone()) {
                return Err(Error::DuplicateImageId(image_id));
            }
            let saliency = match obj.get("saliency") {
                None | Some(Value::Null) => BTreeMap::new(),
                Some(Value::Object(m)) => m
                    .iter()
                    .map(|(k, v)| {
                        v.as_str()
                            .map(|p| (k.clone(), PathBuf::from(p)))
                            .ok_or_else(|| Error::ManifestSyntax {
                                line: lineno,
                                message: format!("saliency path for {k:?} must be a string"),
                            })
                    })
                    .collect::<Result<_>>()?,
                Some(_) => {
                    return Err(Error::ManifestSyntax {
                        line: lineno,
                        message: "saliency must be an object".into(),
                    })
                }
            };
            entries.push(ManifestEntry {
                image_id,
                class,
                image: optional_path(&obj, lineno, "image")?,
                mask: optional_path(&obj, lineno, "mask")?,
                saliency,
                gradients: optional_path(&obj, lineno, "gradients")?,
                activations: optional_path(&obj, lineno, "activations")?,
                layer_gradients: optional_path(&obj, lineno, "layer_gradients")?,
                split,
            });
        }
        DatasetManifest::new(classes, entries, base_dir.into())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.classes[class]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same manifest restricted to entries for which `keep` holds, order preserved.
    pub fn filtered(&self, mut keep: impl FnMut(&ManifestEntry) -> bool) -> DatasetManifest {
        DatasetManifest {
            classes: self.classes.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Serializes back to JSON-Lines with every path made absolute, so the
    /// output stays valid wherever it is written.
    pub fn to_jsonl(&self) -> String {
        let abs = |p: &PathBuf| -> Value {
            let r = self.resolve(p);
            let r = std::path::absolute(&r).unwrap_or(r);
            Value::String(r.to_string_lossy().into_owned())
        };
        let opt = |p: &Option<PathBuf>| p.as_ref().map(abs).unwrap_or(Value::Null);
        let mut out = serde_json::to_string(&serde_json::json!({ "classes": self.classes }))
            .expect("serializable");
        out.push('\n');
        for e in &self.entries {
            let saliency: serde_json::Map<String, Value> =
                e.saliency.iter().map(|(k, p)| (k.clone(), abs(p))).collect();
            let line = serde_json::json!({
                "image_id": e.image_id,
                "label": self.classes[e.class],
                "image": opt(&e.image),
                "mask": opt(&e.mask),
                "saliency": saliency,
                "gradients": opt(&e.gradients),
                "activations": opt(&e.activations),
                "layer_gradients": opt(&e.layer_gradients),
                "split": e.split.as_str(),
            });
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn parse_object(line: usize, text: &str) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::ManifestSyntax {
            line,
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::ManifestSyntax {
            line,
            message: e.to_string(),
        }),
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, line: usize, field: &str) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::ManifestSyntax {
            line,
            message: format!("{field} must be a string"),
        }),
        None => Err(Error::MissingField {
            line,
            field: field.to_string(),
        }),
    }
}

fn optional_path(
    obj: &serde_json::Map<String, Value>,
    line: usize,
    field: &str,
) -> Result<Option<PathBuf>> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(_) => Err(Error::ManifestSyntax {
            line,
            message: format!("{field} must be a path string or null"),
        }),
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, base)
}
