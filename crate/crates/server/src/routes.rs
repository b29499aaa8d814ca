use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use vinnpruner_core::featuremaps::{feature_maps, mark_channel_from_feature_map, FeatureMaps, MaskVariant};
use vinnpruner_core::mask::RunLengths;
use vinnpruner_core::metrics::{compare_reports, ReportDelta};
use vinnpruner_core::persistence::{load_dataset, load_model, scan_datasets, scan_models, ArchiveSummary};
use vinnpruner_core::prune::MaskLayout;
use vinnpruner_core::{
    EvalReport, LayerKind, MaskEdit, MaskSet, PruneSettings, Session, StepSummary,
};

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, SessionEntry};

type AppRef = State<Arc<AppState>>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ApiError::Unprocessable {
            message: e.body_text(),
            fields: Vec::new(),
        }),
        Err(e) => Err(ApiError::BadRequest(e.body_text())),
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::Unprocessable {
        message: e.body_text(),
        fields: Vec::new(),
    })
}

/// Archive names are single directory names.
fn archive_name(field: &str, name: &str) -> ApiResult<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::field(field, format!("'{name}' is not a valid archive name")))
    }
}

pub async fn list_models(State(app): AppRef) -> ApiResult<Json<Vec<ArchiveSummary>>> {
    let dir = app.config.models_dir.clone();
    blocking(move || Ok(scan_models(&dir)?)).await.map(Json)
}

pub async fn list_datasets(State(app): AppRef) -> ApiResult<Json<Vec<ArchiveSummary>>> {
    let dir = app.config.datasets_dir.clone();
    blocking(move || Ok(scan_datasets(&dir)?)).await.map(Json)
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> ApiResult<R> + Send + 'static) -> ApiResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker task failed: {e}")))?
}

#[derive(Debug, Serialize)]
pub struct SettingsDefaults {
    pub label: &'static str,
    pub settings: PruneSettings,
    pub algorithms: Vec<&'static str>,
}

pub async fn settings_defaults() -> Json<SettingsDefaults> {
    use vinnpruner_core::Algorithm::*;
    Json(SettingsDefaults {
        label: "suggested",
        settings: PruneSettings::suggested(),
        algorithms: [Map, Lap, LapForward, LapBackward].iter().map(|a| a.as_str()).collect(),
    })
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub model: String,
    pub dataset: String,
}

#[derive(Debug, Serialize)]
pub struct LayerInfo {
    pub index: usize,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_shape: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub model: String,
    pub dataset: String,
    pub input_shape: Vec<usize>,
    pub class_names: Vec<String>,
    pub num_samples: usize,
    pub layers: Vec<LayerInfo>,
    pub current_step: u64,
    pub baseline: StepSummary,
}

fn session_info(entry: &SessionEntry) -> SessionInfo {
    entry.read(|s| {
        let model = s.model();
        let shapes = model.layer_shapes().unwrap_or_default();
        SessionInfo {
            session_id: entry.id.clone(),
            model: entry.model.clone(),
            dataset: entry.dataset.clone(),
            input_shape: model.input_shape.clone(),
            class_names: s.dataset().class_names.clone(),
            num_samples: s.dataset().len(),
            layers: model
                .layers
                .iter()
                .enumerate()
                .map(|(index, l)| LayerInfo {
                    index,
                    kind: l.kind(),
                    output_shape: shapes.get(index).cloned().unwrap_or_default(),
                    weight_shape: l.weight().map(|w| w.shape().to_vec()),
                })
                .collect(),
            current_step: s.current_id(),
            baseline: s.baseline().into(),
        }
    })
}

pub async fn create_session(
    State(app): AppRef,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let req = body(payload)?;
    archive_name("model", &req.model)?;
    archive_name("dataset", &req.dataset)?;
    let model_dir = app.config.models_dir.join(&req.model);
    let dataset_dir = app.config.datasets_dir.join(&req.dataset);
    if !model_dir.is_dir() {
        return Err(ApiError::NotFound(format!("unknown model '{}'", req.model)));
    }
    if !dataset_dir.is_dir() {
        return Err(ApiError::NotFound(format!("unknown dataset '{}'", req.dataset)));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let sessions_dir = app.config.sessions_dir.clone();
    let entry = blocking(move || {
        let model = load_model(&model_dir)?;
        let dataset = load_dataset(&dataset_dir)?;
        let session = Session::new(Arc::new(model), Arc::new(dataset))?;
        let entry = SessionEntry::new(id, req.model, req.dataset, session);
        entry.read(|s| entry.persist(s, sessions_dir.as_deref()))?;
        Ok(entry)
    })
    .await?;
    let entry = app.insert(entry);
    Ok((StatusCode::CREATED, Json(session_info(&entry))))
}

#[derive(Debug, Serialize)]
pub struct SessionListing {
    pub session_id: String,
    pub model: String,
    pub dataset: String,
    pub current_step: u64,
    pub steps: usize,
}

pub async fn list_sessions(State(app): AppRef) -> Json<Vec<SessionListing>> {
    Json(
        app.sessions()
            .iter()
            .map(|e| {
                e.read(|s| SessionListing {
                    session_id: e.id.clone(),
                    model: e.model.clone(),
                    dataset: e.dataset.clone(),
                    current_step: s.current_id(),
                    steps: s.steps().len(),
                })
            })
            .collect(),
    )
}

pub async fn get_session(State(app): AppRef, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let entry = app.session(&id)?;
    Ok(Json(session_info(&entry)))
}

#[derive(Debug, Serialize)]
pub struct StepList {
    pub current_step: u64,
    pub steps: Vec<StepSummary>,
}

pub async fn list_steps(State(app): AppRef, Path(id): Path<String>) -> ApiResult<Json<StepList>> {
    let entry = app.session(&id)?;
    Ok(Json(entry.read(|s| StepList {
        current_step: s.current_id(),
        steps: s.list_steps(),
    })))
}

#[derive(Debug, Serialize)]
pub struct StepResponse {
    pub current_step: u64,
    pub step: StepSummary,
}

#[derive(Debug, Deserialize)]
pub struct PruneRequest {
    pub settings: PruneSettings,
}

fn sessions_dir(app: &AppState) -> Option<PathBuf> {
    app.config.sessions_dir.clone()
}

pub async fn prune(
    State(app): AppRef,
    Path(id): Path<String>,
    payload: Result<Json<PruneRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<StepResponse>)> {
    let entry = app.session(&id)?;
    let req = body(payload)?;
    let step = entry
        .mutate(sessions_dir(&app), move |s| {
            let step = StepSummary::from(s.run_prune_step(req.settings)?);
            Ok(StepResponse {
                current_step: s.current_id(),
                step,
            })
        })
        .await?;
    Ok((StatusCode::CREATED, Json(step)))
}

#[derive(Debug, Deserialize)]
pub struct EditsRequest {
    pub edits: Vec<MaskEdit>,
}

/// Mask cells whose bit differs between two steps, per layer.
#[derive(Debug, Serialize)]
pub struct ChangedCells {
    pub layer_index: usize,
    pub flat: Vec<usize>,
    /// `[row, col]` in the mask-view grid.
    pub cells: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize)]
pub struct EditsResponse {
    pub current_step: u64,
    pub step: StepSummary,
    pub changed: Vec<ChangedCells>,
}

fn changed_cells(before: &MaskSet, after: &MaskSet) -> ApiResult<Vec<ChangedCells>> {
    let mut out = Vec::new();
    for (a, b) in before.iter().zip(after.iter()) {
        let flat: Vec<usize> = (0..a.len()).filter(|&k| a.is_kept(k) != b.is_kept(k)).collect();
        if flat.is_empty() {
            continue;
        }
        let layout = MaskLayout::for_shape(a.shape())?;
        out.push(ChangedCells {
            layer_index: a.layer_index,
            cells: flat
                .iter()
                .map(|&k| {
                    let (r, c) = layout.cell_of(k);
                    [r, c]
                })
                .collect(),
            flat,
        });
    }
    Ok(out)
}

pub async fn apply_edits(
    State(app): AppRef,
    Path(id): Path<String>,
    payload: Result<Json<EditsRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<EditsResponse>)> {
    let entry = app.session(&id)?;
    let req = body(payload)?;
    let response = entry
        .mutate(sessions_dir(&app), move |s| {
            let before = s.masks().clone();
            let step = StepSummary::from(s.apply_manual_edits(req.edits)?);
            Ok(EditsResponse {
                current_step: s.current_id(),
                changed: changed_cells(&before, s.masks())?,
                step,
            })
        })
        .await?;
    Ok((StatusCode::CREATED, Json(response)))
}

#[derive(Debug, Deserialize)]
pub struct RevertRequest {
    pub step_id: u64,
}

pub async fn revert(
    State(app): AppRef,
    Path(id): Path<String>,
    payload: Result<Json<RevertRequest>, JsonRejection>,
) -> ApiResult<Json<StepResponse>> {
    let entry = app.session(&id)?;
    let req = body(payload)?;
    entry
        .mutate(sessions_dir(&app), move |s| {
            let step = StepSummary::from(s.revert_to(req.step_id)?);
            Ok(StepResponse {
                current_step: s.current_id(),
                step,
            })
        })
        .await
        .map(Json)
}

#[derive(Debug, Serialize)]
pub struct RemoveResponse {
    pub current_step: u64,
    pub removed: Vec<u64>,
}

pub async fn remove_step(
    State(app): AppRef,
    Path((id, step_id)): Path<(String, u64)>,
) -> ApiResult<Json<RemoveResponse>> {
    let entry = app.session(&id)?;
    entry
        .mutate(sessions_dir(&app), move |s| {
            let removed = s.remove_step(step_id).map_err(|e| match e {
                vinnpruner_core::Error::RemoveBaseline => ApiError::field("step_id", e.to_string()),
                e => e.into(),
            })?;
            Ok(RemoveResponse {
                current_step: s.current_id(),
                removed,
            })
        })
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct MaskQuery {
    pub format: Option<String>,
    pub step: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct MaskResponse {
    pub layer_index: usize,
    pub step_id: u64,
    pub format: &'static str,
    pub shape: Vec<usize>,
    pub pruned: usize,
    pub total: usize,
    /// Base64 of the packed bits (little-endian bit order, flat-index order).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rle: Option<RunLengths>,
    pub layout: MaskLayout,
}

fn step_or_current(s: &Session, step: Option<u64>) -> ApiResult<u64> {
    let id = step.unwrap_or_else(|| s.current_id());
    s.step(id)?;
    Ok(id)
}

pub async fn get_mask(
    State(app): AppRef,
    Path((id, layer)): Path<(String, usize)>,
    q: Result<Query<MaskQuery>, QueryRejection>,
) -> ApiResult<Json<MaskResponse>> {
    let entry = app.session(&id)?;
    let q = query(q)?;
    let format = match q.format.as_deref().unwrap_or("bits") {
        "bits" => "bits",
        "rle" => "rle",
        other => return Err(ApiError::field("format", format!("expected bits or rle, got '{other}'"))),
    };
    entry
        .read(|s| {
            let step_id = step_or_current(s, q.step)?;
            let layers = s.model().layers.len();
            if layer >= layers {
                return Err(ApiError::NotFound(format!("layer {layer} does not exist ({layers} layers)")));
            }
            let mask = s
                .step(step_id)?
                .masks
                .get(layer)
                .ok_or_else(|| ApiError::field("layer", format!("layer {layer} has no weights")))?;
            Ok(MaskResponse {
                layer_index: layer,
                step_id,
                format,
                shape: mask.shape().to_vec(),
                pruned: mask.pruned_count(),
                total: mask.len(),
                bits: (format == "bits").then(|| BASE64.encode(mask.pack())),
                rle: (format == "rle").then(|| mask.run_lengths()),
                layout: MaskLayout::for_shape(mask.shape())?,
            })
        })
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    pub step: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct MetricsResponse {
    pub step_id: u64,
    pub report: EvalReport,
}

pub async fn get_metrics(
    State(app): AppRef,
    Path(id): Path<String>,
    q: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<Json<MetricsResponse>> {
    let entry = app.session(&id)?;
    let q = query(q)?;
    entry
        .read(|s| {
            let step_id = step_or_current(s, q.step)?;
            Ok(MetricsResponse {
                step_id,
                report: s.step(step_id)?.report.clone(),
            })
        })
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    pub a: u64,
    pub b: u64,
}

#[derive(Debug, Serialize)]
pub struct CompareResponse {
    pub a: u64,
    pub b: u64,
    pub delta: ReportDelta,
}

pub async fn compare(
    State(app): AppRef,
    Path(id): Path<String>,
    q: Result<Query<CompareQuery>, QueryRejection>,
) -> ApiResult<Json<CompareResponse>> {
    let entry = app.session(&id)?;
    let q = query(q)?;
    entry
        .read(|s| {
            let delta = compare_reports(&s.step(q.a)?.report, &s.step(q.b)?.report)?;
            Ok(CompareResponse { a: q.a, b: q.b, delta })
        })
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct FeatureMapQuery {
    pub sample: Option<usize>,
    pub layer: Option<usize>,
    pub variant: Option<String>,
}

pub async fn get_feature_maps(
    State(app): AppRef,
    Path(id): Path<String>,
    q: Result<Query<FeatureMapQuery>, QueryRejection>,
) -> ApiResult<Json<FeatureMaps>> {
    let entry = app.session(&id)?;
    let q = query(q)?;
    let layer = q.layer.ok_or_else(|| ApiError::field("layer", "required"))?;
    let variant: MaskVariant = q
        .variant
        .as_deref()
        .unwrap_or("current")
        .parse()
        .map_err(|e: String| ApiError::field("variant", e))?;
    let sample = q.sample.unwrap_or(0);
    let maps = entry.read(|s| {
        let layers = s.model().layers.len();
        if layer >= layers {
            return Err(ApiError::NotFound(format!("layer {layer} does not exist ({layers} layers)")));
        }
        if sample >= s.dataset().len() {
            return Err(ApiError::field(
                "sample",
                format!("sample {sample} out of range ({} samples)", s.dataset().len()),
            ));
        }
        Ok(feature_maps(s, sample, layer, variant)?)
    })?;
    Ok(Json(maps))
}

#[derive(Debug, Deserialize)]
pub struct MarkRequest {
    pub layer: usize,
    pub channel: usize,
}

#[derive(Debug, Serialize)]
pub struct PendingResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit: Option<MaskEdit>,
    pub pending: Vec<MaskEdit>,
}

pub async fn mark_channel(
    State(app): AppRef,
    Path(id): Path<String>,
    payload: Result<Json<MarkRequest>, JsonRejection>,
) -> ApiResult<Json<PendingResponse>> {
    let entry = app.session(&id)?;
    let req = body(payload)?;
    // pending marks are not part of the archive, so nothing to write through
    entry
        .mutate(None, move |s| {
            let edit = mark_channel_from_feature_map(s, req.layer, req.channel)?;
            Ok(PendingResponse {
                edit: Some(edit),
                pending: s.pending_edits(),
            })
        })
        .await
        .map(Json)
}

pub async fn pending(State(app): AppRef, Path(id): Path<String>) -> ApiResult<Json<PendingResponse>> {
    let entry = app.session(&id)?;
    Ok(Json(PendingResponse {
        edit: None,
        pending: entry.read(Session::pending_edits),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vinnpruner_core::{LayerSpec, Model, Tensor};

    #[test]
    fn archive_names() {
        assert!(archive_name("model", "mlp-blobs").is_ok());
        assert!(archive_name("model", "v1.2_final").is_ok());
        for bad in ["", "..", ".hidden", "a/b", "a\\b"] {
            assert!(archive_name("model", bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn changed_cells_follow_layout() {
        let model = Model::new(
            "m",
            vec![1, 2, 2],
            vec![
                LayerSpec::Conv2d {
                    weight: Tensor::filled(vec![2, 1, 2, 2], 1.0),
                    bias: Tensor::zeros(vec![2]),
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Flatten,
            ],
        )
        .unwrap();
        let before = MaskSet::all_ones(&model);
        let mut after = before.clone();
        after.get_mut(0).unwrap().set(5, false);
        let changed = changed_cells(&before, &after).unwrap();
        assert_eq!(changed.len(), 1);
        assert_eq!(changed[0].flat, vec![5]);
        assert_eq!(changed[0].cells, vec![[1, 1]]);
        assert!(changed_cells(&before, &before).unwrap().is_empty());
    }
}
