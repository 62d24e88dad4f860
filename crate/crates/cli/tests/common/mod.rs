//! Shared helpers: a synthetic artefact-biased dataset written in the
//! interchange formats, a runner for the `gsal` binary and a small JSON
//! schema validator.

#![allow(dead_code)]

pub mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gsal_core::types::{predictions_to_jsonl, save_mask};
use gsal_core::{save_tensor, ArtefactMask, PredictionRecord, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

pub const SIDE: usize = 24;
const LAYER_SIDE: usize = 6;
const CHANNELS: usize = 3;

/// Parameters of a synthetic dataset.
///
/// Each image belongs to class `i % classes.len()`, carries a 12×12 artefact
/// blob with probability `ink_prob[class]` (otherwise a 3×3 speck, below the
/// default ink threshold) and has gradients in which class 0 responds to the
/// artefact with weight `artefact_weight`. `ink_logit` pushes inked images
/// towards class 0.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_images: usize,
    pub classes: Vec<String>,
    pub ink_prob: Vec<f64>,
    pub artefact_weight: f32,
    pub ink_logit: f64,
    pub seed: u64,
    /// Every `train_every`-th image goes to the train split.
    pub train_every: usize,
}

impl SynthSpec {
    pub fn small(n_images: usize, seed: u64) -> Self {
        SynthSpec {
            n_images,
            classes: vec!["circle".into(), "cross".into()],
            ink_prob: vec![0.8, 0.8],
            artefact_weight: 0.5,
            ink_logit: 1.0,
            seed,
            train_every: 0,
        }
    }

    pub fn biased(n_images: usize, seed: u64) -> Self {
        SynthSpec {
            n_images,
            classes: vec!["circle".into(), "cross".into(), "stripes".into()],
            ink_prob: vec![0.9, 0.1, 0.1],
            artefact_weight: 1.0,
            ink_logit: 3.0,
            seed,
            train_every: 0,
        }
    }

    pub fn unbiased(n_images: usize, seed: u64) -> Self {
        SynthSpec {
            ink_prob: vec![0.5, 0.5, 0.5],
            artefact_weight: 0.05,
            ink_logit: 0.0,
            ..SynthSpec::biased(n_images, seed)
        }
    }
}

pub struct Synth {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub predictions: PathBuf,
    pub image_ids: Vec<String>,
}

fn rect_bits(r0: usize, c0: usize, size: usize) -> Vec<bool> {
    let mut bits = vec![false; SIDE * SIDE];
    for r in r0..r0 + size {
        for c in c0..c0 + size {
            bits[r * SIDE + c] = true;
        }
    }
    bits
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Writes the dataset under `dir` with manifest paths relative to `dir`.
pub fn build(dir: &Path, spec: &SynthSpec) -> Synth {
    fs::create_dir_all(dir.join("t")).unwrap();
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let k = spec.classes.len();
    let mut lines = vec![json!({ "classes": spec.classes }).to_string()];
    let mut records = Vec::new();
    let mut ids = Vec::new();

    for i in 0..spec.n_images {
        let class = i % k;
        let id = format!("img{i:04}");
        let inked = rng.random_bool(spec.ink_prob[class]);
        let (r0, c0) = (rng.random_range(0..SIDE - 12), rng.random_range(0..SIDE - 12));
        let bits = if inked {
            rect_bits(r0, c0, 12)
        } else {
            rect_bits(r0, c0, 3)
        };
        let mask = ArtefactMask::new(id.clone(), SIDE, SIDE, bits.clone()).unwrap();

        let mut z: Vec<f64> = (0..k)
            .map(|c| if c == class { 2.0 } else { 0.0 } + rng.random_range(-0.8..0.8))
            .collect();
        if inked {
            z[0] += spec.ink_logit;
        }
        let conf = softmax(&z);

        // Class signal sits in the centre block, the artefact wherever the mask is.
        let mut gi = vec![0f32; k * SIDE * SIDE];
        for c in 0..k {
            let weight = if c == 0 { spec.artefact_weight } else { 0.05 };
            for p in 0..SIDE * SIDE {
                let (r, col) = (p / SIDE, p % SIDE);
                let mut v = rng.random_range(-0.02f32..0.02);
                if (8..16).contains(&r) && (8..16).contains(&col) && c == class {
                    v += 0.3;
                }
                if bits[p] && inked {
                    v += weight;
                }
                gi[c * SIDE * SIDE + p] = v;
            }
        }
        let scale = SIDE / LAYER_SIDE;
        let mut acts = vec![0f32; CHANNELS * LAYER_SIDE * LAYER_SIDE];
        for r in 0..LAYER_SIDE {
            for col in 0..LAYER_SIDE {
                let mut ink = 0.0;
                for dr in 0..scale {
                    for dc in 0..scale {
                        ink += bits[(r * scale + dr) * SIDE + col * scale + dc] as u8 as f32;
                    }
                }
                let cell = r * LAYER_SIDE + col;
                acts[cell] = if inked { ink / (scale * scale) as f32 } else { 0.0 };
                acts[LAYER_SIDE * LAYER_SIDE + cell] =
                    if (2..4).contains(&r) && (2..4).contains(&col) { 1.0 } else { 0.0 };
                acts[2 * LAYER_SIDE * LAYER_SIDE + cell] = rng.random_range(0.0f32..0.1);
            }
        }
        let mut lg = vec![0f32; k * CHANNELS * LAYER_SIDE * LAYER_SIDE];
        for c in 0..k {
            let w = [
                if c == 0 { spec.artefact_weight } else { 0.05 },
                if c == class { 0.5 } else { 0.1 },
                0.05,
            ];
            for ch in 0..CHANNELS {
                for cell in 0..LAYER_SIDE * LAYER_SIDE {
                    lg[(c * CHANNELS + ch) * LAYER_SIDE * LAYER_SIDE + cell] =
                        w[ch] + rng.random_range(-0.01f32..0.01);
                }
            }
        }
        let image: Vec<f32> = (0..SIDE * SIDE * 3)
            .map(|j| if bits[j / 3] { 1.0 } else { rng.random_range(0.0f32..0.6) })
            .collect();
        let predicted = gsal_core::types::argmax(&conf).unwrap();
        let external: Vec<f32> = gi[predicted * SIDE * SIDE..(predicted + 1) * SIDE * SIDE].to_vec();

        let t = |name: &str| format!("t/{id}_{name}.gst");
        save_mask(dir.join(t("mask")), &mask).unwrap();
        save_tensor(dir.join(t("gi")), &Tensor::new(vec![k, SIDE, SIDE], gi).unwrap()).unwrap();
        let act_shape = vec![CHANNELS, LAYER_SIDE, LAYER_SIDE];
        save_tensor(dir.join(t("acts")), &Tensor::new(act_shape, acts).unwrap()).unwrap();
        let lg_shape = vec![k, CHANNELS, LAYER_SIDE, LAYER_SIDE];
        save_tensor(dir.join(t("lg")), &Tensor::new(lg_shape, lg).unwrap()).unwrap();
        save_tensor(dir.join(t("img")), &Tensor::new(vec![SIDE, SIDE, 3], image).unwrap()).unwrap();
        save_tensor(dir.join(t("ext")), &Tensor::new(vec![SIDE, SIDE], external).unwrap()).unwrap();

        let split = if spec.train_every > 0 && i % spec.train_every == 0 {
            "train"
        } else {
            "val"
        };
        lines.push(
            json!({
                "image_id": id,
                "label": spec.classes[class],
                "image": t("img"),
                "mask": t("mask"),
                "saliency": { "external": t("ext") },
                "gradients": t("gi"),
                "activations": t("acts"),
                "layer_gradients": t("lg"),
                "split": split,
            })
            .to_string(),
        );
        records.push(PredictionRecord::new(id.clone(), Some(class), conf).unwrap());
        ids.push(id);
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    let predictions = dir.join("predictions.jsonl");
    fs::write(&predictions, predictions_to_jsonl(&records)).unwrap();
    Synth {
        dir: dir.to_path_buf(),
        manifest,
        predictions,
        image_ids: ids,
    }
}

pub fn gsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsal"))
        .args(args)
        .output()
        .expect("run gsal")
}

/// Parsed structured error from stderr.
pub fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str::<Value>(line).expect("structured error")["error"].clone()
}

pub fn audit(synth: &Synth, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "audit",
        "--manifest",
        synth.manifest.to_str().unwrap(),
        "--predictions",
        synth.predictions.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    gsal(&args)
}

pub fn report_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Validates `value` against `schema`, returning the failing JSON pointers.
///
/// Covers the keywords used by the report schema: `type`, `const`, `enum`,
/// `required`, `properties`, `additionalProperties: false`, `items`,
/// `minItems`, numeric bounds, `oneOf` and local `$ref`s.
pub fn validate(schema: &Value, value: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(schema, schema, value, "", &mut errors);
    errors
}

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type {other}"),
    }
}

fn check(root: &Value, s: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let target = root
            .pointer(r.trim_start_matches('#'))
            .unwrap_or_else(|| panic!("unresolved $ref {r}"));
        return check(root, target, v, at, errors);
    }
    let mut fail = |why: &str| errors.push(format!("{at}: {why}"));
    match s.get("type") {
        Some(Value::String(t)) if !type_matches(t, v) => return fail(&format!("not {t}")),
        Some(Value::Array(ts)) if !ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)) => {
            return fail("type not allowed")
        }
        _ => {}
    }
    if let Some(c) = s.get("const") {
        if c != v {
            fail(&format!("expected {c}"));
        }
    }
    if let Some(Value::Array(options)) = s.get("enum") {
        if !options.contains(v) {
            fail(&format!("{v} not in enum"));
        }
    }
    if let Some(x) = v.as_f64() {
        let bound = |k: &str| s.get(k).and_then(Value::as_f64);
        if bound("minimum").is_some_and(|b| x < b)
            || bound("maximum").is_some_and(|b| x > b)
            || bound("exclusiveMinimum").is_some_and(|b| x <= b)
            || bound("exclusiveMaximum").is_some_and(|b| x >= b)
        {
            fail(&format!("{x} out of range"));
        }
    }
    if let Some(Value::Array(options)) = s.get("oneOf") {
        let matching = options
            .iter()
            .filter(|o| {
                let mut sub = Vec::new();
                check(root, o, v, at, &mut sub);
                sub.is_empty()
            })
            .count();
        if matching != 1 {
            fail(&format!("{matching} oneOf branches match"));
        }
    }
    if let Value::Object(obj) = v {
        if let Some(Value::Array(req)) = s.get("required") {
            for r in req {
                if !obj.contains_key(r.as_str().unwrap()) {
                    errors.push(format!("{at}: missing {r}"));
                }
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (key, child) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(ps) => check(root, ps, child, &format!("{at}/{key}"), errors),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errors.push(format!("{at}: unexpected property {key}"))
                }
                None => {}
            }
        }
    }
    if let Value::Array(items) = v {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                errors.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(is) = s.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(root, is, item, &format!("{at}/{i}"), errors);
            }
        }
    }
}
