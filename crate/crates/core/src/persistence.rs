//! On-disk archives.
//!
//! ```text
//! models/<name>/model.json      manifest: layers and tensor byte ranges
//! models/<name>/weights.bin     little-endian f32, tensors back to back in manifest order
//! datasets/<name>/data.json     manifest: name, shape [N, ...], num_classes, class_names
//! datasets/<name>/samples.bin   little-endian f32, row-major [N, ...]
//! datasets/<name>/labels.bin    one u8 per sample
//! sessions/<id>/session.json    steps with settings, edits, reports and packed masks
//! ```
//!
//! Masks are packed in flat-index order, bit `i` at `byte[i / 8] >> (i % 8)`,
//! zero-padded, then base64 encoded.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mask::{MaskSet, PruneMask};
use crate::metrics::EvalReport;
use crate::model::{Dataset, LayerSpec, Model};
use crate::prune::{MaskEdit, PruneSettings};
use crate::session::{PruneStep, Session};
use crate::tensor::{numel, Tensor};

pub const MODEL_FORMAT: &str = "vinnpruner-model/1";
pub const DATASET_FORMAT: &str = "vinnpruner-dataset/1";
pub const SESSION_FORMAT: &str = "vinnpruner-session/1";

pub const MODEL_MANIFEST: &str = "model.json";
pub const MODEL_BLOB: &str = "weights.bin";
pub const DATASET_MANIFEST: &str = "data.json";
pub const DATASET_SAMPLES: &str = "samples.bin";
pub const DATASET_LABELS: &str = "labels.bin";
pub const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length, always `4 * numel(shape)`.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Dense {
        weight: TensorEntry,
        bias: TensorEntry,
    },
    Conv2d {
        weight: TensorEntry,
        bias: TensorEntry,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub name: String,
    /// `[N, ...sample shape]`
    pub shape: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Accepts either an archive directory or the manifest file inside it.
fn archive_dir(path: &Path, manifest: &str) -> PathBuf {
    if path.file_name().is_some_and(|n| n == manifest) {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

fn f32_bytes(values: &[f32], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn f32s_from(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes `model.json` and `weights.bin` into `dir`.
pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut push = |t: &Tensor| {
        let entry = TensorEntry {
            shape: t.shape().to_vec(),
            offset: blob.len(),
            length: t.len() * 4,
        };
        f32_bytes(t.data(), &mut blob);
        entry
    };
    let layers = model
        .layers
        .iter()
        .map(|layer| match layer {
            LayerSpec::Dense { weight, bias } => LayerEntry::Dense {
                weight: push(weight),
                bias: push(bias),
            },
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => LayerEntry::Conv2d {
                weight: push(weight),
                bias: push(bias),
                stride: *stride,
                padding: *padding,
            },
            LayerSpec::Relu => LayerEntry::Relu,
            LayerSpec::Maxpool2d { window, stride } => LayerEntry::Maxpool2d {
                window: *window,
                stride: *stride,
            },
            LayerSpec::Flatten => LayerEntry::Flatten,
        })
        .collect();
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        layers,
    };
    write_json(&dir.join(MODEL_MANIFEST), &manifest)?;
    write(&dir.join(MODEL_BLOB), &blob)
}

/// Loads and validates a model archive: manifest well-formedness, tensor byte
/// ranges (ascending, non-overlapping, covering the blob exactly), finite
/// weights and shape chaining.
pub fn load_model(path: &Path) -> Result<Model> {
    let dir = archive_dir(path, MODEL_MANIFEST);
    let manifest_path = dir.join(MODEL_MANIFEST);
    let raw: Value = read_json(&manifest_path)?;
    let bad = |message: String| Error::archive(&manifest_path, message);
    let format = raw.get("format").and_then(Value::as_str).unwrap_or_default();
    if format != MODEL_FORMAT {
        return Err(bad(format!("unsupported format '{format}', expected '{MODEL_FORMAT}'")));
    }
    let name = raw
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing name".into()))?
        .to_string();
    let input_shape: Vec<usize> = raw
        .get("input_shape")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| bad("missing or malformed input_shape".into()))?;
    let raw_layers = raw
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing layers".into()))?;
    let mut entries = Vec::with_capacity(raw_layers.len());
    for (i, layer) in raw_layers.iter().enumerate() {
        let entry: LayerEntry = serde_json::from_value(layer.clone()).map_err(|e| {
            let kind = layer.get("kind").and_then(Value::as_str).unwrap_or("?");
            bad(format!("layer {i} (kind '{kind}'): {e}"))
        })?;
        entries.push(entry);
    }

    let blob_path = dir.join(MODEL_BLOB);
    let blob = read(&blob_path)?;
    let mut cursor = 0usize;
    let mut take = |layer: usize, role: &str, t: &TensorEntry| -> Result<Tensor> {
        let label = format!("layers[{layer}].{role}");
        let want = numel(&t.shape) * 4;
        if t.length != want {
            return Err(Error::archive(
                &manifest_path,
                format!("{label}: length {} does not match shape {:?} ({want} bytes)", t.length, t.shape),
            ));
        }
        if t.offset != cursor {
            return Err(Error::archive(
                &manifest_path,
                format!("{label}: offset {} but the previous tensor ends at {cursor}", t.offset),
            ));
        }
        let end = t.offset + t.length;
        if end > blob.len() {
            return Err(Error::archive(
                &blob_path,
                format!(
                    "length mismatch: {label} needs bytes {}..{end} but {} has {} bytes",
                    t.offset,
                    MODEL_BLOB,
                    blob.len()
                ),
            ));
        }
        cursor = end;
        let tensor = Tensor::new(t.shape.clone(), f32s_from(&blob[t.offset..end]))?;
        tensor
            .check_finite()
            .map_err(|e| Error::archive(&blob_path, format!("{label}: {e}")))?;
        Ok(tensor)
    };
    let mut layers = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        layers.push(match entry {
            LayerEntry::Dense { weight, bias } => LayerSpec::Dense {
                weight: take(i, "weight", weight)?,
                bias: take(i, "bias", bias)?,
            },
            LayerEntry::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => LayerSpec::Conv2d {
                weight: take(i, "weight", weight)?,
                bias: take(i, "bias", bias)?,
                stride: *stride,
                padding: *padding,
            },
            LayerEntry::Relu => LayerSpec::Relu,
            LayerEntry::Maxpool2d { window, stride } => LayerSpec::Maxpool2d {
                window: *window,
                stride: *stride,
            },
            LayerEntry::Flatten => LayerSpec::Flatten,
        });
    }
    if cursor != blob.len() {
        return Err(Error::archive(
            &blob_path,
            format!("length mismatch: tensors cover {cursor} bytes, blob has {}", blob.len()),
        ));
    }
    Model::new(name, input_shape, layers).map_err(|e| Error::archive(&manifest_path, e.to_string()))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        name: dataset.name.clone(),
        shape: dataset.samples.shape().to_vec(),
        num_classes: dataset.num_classes(),
        class_names: dataset.class_names.clone(),
    };
    let labels = dataset
        .labels
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::InvalidDataset(format!("label {l} does not fit in a byte")))
        })
        .collect::<Result<Vec<u8>>>()?;
    let mut samples = Vec::with_capacity(dataset.samples.len() * 4);
    f32_bytes(dataset.samples.data(), &mut samples);
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    write(&dir.join(DATASET_SAMPLES), &samples)?;
    write(&dir.join(DATASET_LABELS), &labels)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let dir = archive_dir(path, DATASET_MANIFEST);
    let manifest_path = dir.join(DATASET_MANIFEST);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let bad = |p: &Path, message: String| Error::archive(p, message);
    if manifest.format != DATASET_FORMAT {
        return Err(bad(
            &manifest_path,
            format!("unsupported format '{}', expected '{DATASET_FORMAT}'", manifest.format),
        ));
    }
    if manifest.class_names.len() != manifest.num_classes {
        return Err(bad(
            &manifest_path,
            format!(
                "{} class names for num_classes {}",
                manifest.class_names.len(),
                manifest.num_classes
            ),
        ));
    }
    if manifest.shape.len() < 2 {
        return Err(bad(&manifest_path, format!("shape {:?} has no sample axis", manifest.shape)));
    }
    let n = manifest.shape[0];
    let samples_path = dir.join(DATASET_SAMPLES);
    let samples = read(&samples_path)?;
    let want = numel(&manifest.shape) * 4;
    if samples.len() != want {
        return Err(bad(
            &samples_path,
            format!("length mismatch: shape {:?} needs {want} bytes, found {}", manifest.shape, samples.len()),
        ));
    }
    let labels_path = dir.join(DATASET_LABELS);
    let labels = read(&labels_path)?;
    if labels.len() != n {
        return Err(bad(
            &labels_path,
            format!("length mismatch: {n} samples but {} labels", labels.len()),
        ));
    }
    let tensor = Tensor::new(manifest.shape.clone(), f32s_from(&samples))?;
    tensor
        .check_finite()
        .map_err(|e| bad(&samples_path, e.to_string()))?;
    Dataset::new(
        manifest.name,
        tensor,
        labels.into_iter().map(usize::from).collect(),
        manifest.class_names,
    )
    .map_err(|e| bad(&manifest_path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub layer_index: usize,
    pub shape: Vec<usize>,
    /// Base64 of the packed bits.
    pub bits: String,
}

impl MaskRecord {
    pub fn from_mask(mask: &PruneMask) -> Self {
        Self {
            layer_index: mask.layer_index,
            shape: mask.shape().to_vec(),
            bits: B64.encode(mask.pack()),
        }
    }

    pub fn to_mask(&self) -> Result<PruneMask> {
        let bytes = B64
            .decode(&self.bits)
            .map_err(|e| Error::InvalidMask(format!("layer {}: {e}", self.layer_index)))?;
        PruneMask::unpack(self.layer_index, self.shape.clone(), &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: u64,
    pub parent_id: Option<u64>,
    pub created_at: u64,
    pub settings: PruneSettings,
    pub manual_edits: Vec<MaskEdit>,
    pub report: EvalReport,
    pub masks: Vec<MaskRecord>,
}

/// Serialized form of a [`Session`]; refers to its model and dataset by archive name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionArchive {
    pub format: String,
    pub session_id: String,
    pub model: String,
    pub dataset: String,
    pub current_step: u64,
    pub next_step_id: u64,
    pub steps: Vec<StepRecord>,
}

impl SessionArchive {
    pub fn from_session(session_id: &str, model: &str, dataset: &str, session: &Session) -> Self {
        let steps = session
            .steps()
            .iter()
            .map(|s| StepRecord {
                step_id: s.step_id,
                parent_id: s.parent_id,
                created_at: s.created_at,
                settings: s.settings.clone(),
                manual_edits: s.manual_edits.clone(),
                report: s.report.clone(),
                masks: s.masks.iter().map(MaskRecord::from_mask).collect(),
            })
            .collect();
        Self {
            format: SESSION_FORMAT.into(),
            session_id: session_id.into(),
            model: model.into(),
            dataset: dataset.into(),
            current_step: session.current_id(),
            next_step_id: session.next_id(),
            steps,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(SESSION_FILE) } else { path.to_path_buf() };
        let archive: Self = read_json(&file)?;
        if archive.format != SESSION_FORMAT {
            return Err(Error::archive(
                &file,
                format!("unsupported format '{}', expected '{SESSION_FORMAT}'", archive.format),
            ));
        }
        Ok(archive)
    }

    /// Writes `session.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SESSION_FILE), self)
    }

    pub fn step(&self, id: u64) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    pub fn into_session(self, model: Arc<Model>, dataset: Arc<Dataset>) -> Result<Session> {
        let steps = self
            .steps
            .into_iter()
            .map(|r| {
                let masks = r.masks.iter().map(MaskRecord::to_mask).collect::<Result<Vec<_>>>()?;
                Ok(PruneStep {
                    step_id: r.step_id,
                    parent_id: r.parent_id,
                    settings: r.settings,
                    masks: MaskSet::new(&model, masks)?,
                    manual_edits: r.manual_edits,
                    report: r.report,
                    created_at: r.created_at,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Session::from_parts(model, dataset, steps, self.current_step, self.next_step_id)
    }
}

pub fn save_session(session: &Session, session_id: &str, model: &str, dataset: &str, dir: &Path) -> Result<()> {
    SessionArchive::from_session(session_id, model, dataset, session).write(dir)
}

/// Loads a session, resolving its model and dataset by name under the given roots.
pub fn load_session(path: &Path, models_dir: &Path, datasets_dir: &Path) -> Result<(SessionArchive, Session)> {
    let archive = SessionArchive::read(path)?;
    let model = Arc::new(load_model(&models_dir.join(&archive.model))?);
    let dataset = Arc::new(load_dataset(&datasets_dir.join(&archive.dataset))?);
    let session = archive.clone().into_session(model, dataset)?;
    Ok((archive, session))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveStatus {
    Ok,
    Invalid,
}

/// One directory found under a models or datasets root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    /// Directory name; used to refer to the archive.
    pub id: String,
    pub status: ArchiveStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<crate::model::LayerKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl ArchiveSummary {
    fn invalid(id: String, reason: String) -> Self {
        Self {
            id,
            status: ArchiveStatus::Invalid,
            reason: Some(reason),
            name: None,
            input_shape: None,
            layers: None,
            parameters: None,
            samples: None,
            class_names: None,
        }
    }
}

fn subdirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn scan_models(root: &Path) -> Result<Vec<ArchiveSummary>> {
    Ok(subdirs(root)?
        .into_iter()
        .map(|(id, path)| match load_model(&path) {
            Ok(model) => ArchiveSummary {
                id,
                status: ArchiveStatus::Ok,
                reason: None,
                name: Some(model.name.clone()),
                input_shape: Some(model.input_shape.clone()),
                layers: Some(model.layers.iter().map(LayerSpec::kind).collect()),
                parameters: Some(model.parameter_count()),
                samples: None,
                class_names: None,
            },
            Err(e) => ArchiveSummary::invalid(id, e.to_string()),
        })
        .collect())
}

pub fn scan_datasets(root: &Path) -> Result<Vec<ArchiveSummary>> {
    Ok(subdirs(root)?
        .into_iter()
        .map(|(id, path)| match load_dataset(&path) {
            Ok(ds) => ArchiveSummary {
                id,
                status: ArchiveStatus::Ok,
                reason: None,
                name: Some(ds.name.clone()),
                input_shape: Some(ds.sample_shape().to_vec()),
                layers: None,
                parameters: None,
                samples: Some(ds.len()),
                class_names: Some(ds.class_names.clone()),
            },
            Err(e) => ArchiveSummary::invalid(id, e.to_string()),
        })
        .collect())
}
