//! Global saliency: aggregate per-image saliency maps over artefact
//! segmentation masks to quantify how much a classifier relies on an
//! artefact across a whole dataset, and score saliency methods by how well
//! that aggregate tracks dataset bias and predicts model failure.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`types`], [`manifest`]: the `.gst` tensor container,
//!   per-image domain types and JSON-Lines dataset manifests.
//! * [`saliency`]: grad-CAM and competitive gradient⊙input composition from
//!   exported model tensors, plus completeness checks.
//! * [`aggregate`]: mean and peak artefact saliency per image, dataset
//!   z-scoring, per-class summaries.
//! * [`metrics`]: response-rate accuracy curves, AURRAC, Kendall's τ-b,
//!   Levene and Wilcoxon signed-rank tests.
//! * [`datasetops`]: co-occurrence tables, unbiased sampling plans, ink-only
//!   filtering, ablation.
//! * [`audit`]: the full pipeline behind the `gsal` command line tool.

pub mod aggregate;
pub mod audit;
pub mod datasetops;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod numeric;
pub mod par;
pub mod saliency;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use par::Parallelism;
pub use tensor::{load_tensor, save_tensor, Tensor};
pub use types::{ArtefactMask, PredictionRecord, SaliencyMap, SaliencyMethod};
