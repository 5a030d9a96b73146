use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{FromRequest, FromRequestParts, Multipart, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use futures::channel::mpsc;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use whatif_core::counterfactual::{attach_distance_feature, DistanceNorm};
use whatif_core::dataset::{ingest, BinningSpec, DataPoint, DeclaredFeature, Format, SortKey, Value};
use whatif_core::model::{score_delta, ModelHandle, ModelInfo, ModelSlot, ModelSource, TaskKind};
use whatif_core::pdp::PdpSpec;
use whatif_core::performance::{CostRatio, FairnessStrategy, GroundTruthBinding, SliceSort, SliceSpec, Thresholds, DEFAULT_EPSILON};
use whatif_core::report::{self, EditReport, ModelDelta, ThresholdChoice, Versioned};

use crate::error::ApiError;
use crate::state::{AppState, HistoryEntry, Session, Settings, Snapshot, SESSION_HEADER};
use crate::json_response;

type Shared = Arc<AppState>;
type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: &T) -> ApiResult {
    Ok(json_response(StatusCode::OK, value))
}

/// Runs CPU-bound analysis work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

/// The session a request addresses: the default one unless multi-session
/// mode is on and the session header names another.
pub struct SessionRef(pub Arc<Session>);

impl FromRequestParts<Shared> for SessionRef {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, Self::Rejection> {
        let requested = parts.headers.get(SESSION_HEADER).and_then(|v| v.to_str().ok());
        match requested {
            Some(id) if state.config.multi_session => state
                .session(id)
                .map(SessionRef)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}"))),
            _ => Ok(SessionRef(state.default_session())),
        }
    }
}

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct Query<T>(pub T);

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct JsonBody<T>(pub T);

fn parse<T: std::str::FromStr<Err = whatif_core::Error>>(s: Option<&str>) -> Result<Option<T>, ApiError> {
    s.map(|s| s.parse::<T>().map_err(ApiError::from)).transpose()
}

fn list(s: &Option<String>) -> Vec<String> {
    s.as_deref()
        .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

fn first_model(snapshot: &Snapshot, slot: Option<ModelSlot>) -> Result<Arc<ModelHandle>, ApiError> {
    match slot {
        Some(s) => Ok(snapshot.models.get(s)?.clone()),
        None => ModelSlot::ALL
            .iter()
            .find_map(|s| snapshot.models.get(*s).ok().cloned())
            .ok_or_else(|| whatif_core::Error::NoModel(ModelSlot::Model1).into()),
    }
}

fn selected_models(snapshot: &Snapshot, slot: Option<ModelSlot>) -> Result<Vec<Arc<ModelHandle>>, ApiError> {
    let chosen = report::select_models(&snapshot.models, slot)?;
    Ok(chosen
        .iter()
        .map(|m| snapshot.models.get(m.slot()).expect("selected from registry").clone())
        .collect())
}

fn refs(models: &[Arc<ModelHandle>]) -> Vec<&ModelHandle> {
    models.iter().map(|m| m.as_ref()).collect()
}

pub(crate) fn binding_for(
    label: Option<String>,
    positive: Option<String>,
    classes: Vec<String>,
    settings: &Settings,
    task: Option<TaskKind>,
) -> Result<GroundTruthBinding, ApiError> {
    let feature = label
        .or_else(|| settings.label.clone())
        .ok_or_else(|| ApiError::bad_request("a ground-truth label feature is required"))?;
    let classes = if classes.is_empty() { settings.classes.clone() } else { Some(classes) };
    let positive = positive.or_else(|| settings.positive.clone());
    let positive = match task {
        Some(TaskKind::BinaryClassification) | None => Some(positive.unwrap_or_else(|| "1".to_string())),
        _ => positive,
    };
    Ok(GroundTruthBinding {
        feature,
        positive,
        classes,
    })
}

// ---- session ----

#[derive(Serialize)]
struct DatasetSummary {
    id: String,
    name: Option<String>,
    snapshot_version: u64,
    point_count: usize,
    features: Vec<whatif_core::dataset::Feature>,
}

#[derive(Serialize)]
struct SessionBody {
    session_id: String,
    multi_session: bool,
    dataset: Option<DatasetSummary>,
    models: Vec<ModelInfo>,
    comparison: bool,
    settings: Settings,
}

fn session_body(session: &Session, state: &AppState) -> SessionBody {
    let snap = session.snapshot();
    SessionBody {
        session_id: session.id.clone(),
        multi_session: state.config.multi_session,
        dataset: snap.dataset.map(|d| DatasetSummary {
            id: d.id,
            name: d.name,
            snapshot_version: d.data.version(),
            point_count: d.data.len(),
            features: d.data.features().to_vec(),
        }),
        models: snap.models.models().iter().map(|m| m.info()).collect(),
        comparison: snap.models.is_comparison(),
        settings: snap.settings,
    }
}

pub async fn get_session(State(state): State<Shared>, SessionRef(session): SessionRef) -> ApiResult {
    ok(&session_body(&session, &state))
}

pub async fn update_settings(
    State(state): State<Shared>,
    SessionRef(session): SessionRef,
    JsonBody(patch): JsonBody<Map<String, Json>>,
) -> ApiResult {
    {
        let mut guard = session.write();
        let mut merged = serde_json::to_value(&guard.settings).expect("settings serialize");
        for (k, v) in patch {
            if merged.get(&k).is_none() {
                return Err(ApiError::bad_request(format!("unknown setting {k:?}")));
            }
            merged[k] = v;
        }
        let settings: Settings =
            serde_json::from_value(merged).map_err(|e| ApiError::bad_request(e.to_string()))?;
        if !(settings.cost_ratio.is_finite() && settings.cost_ratio > 0.0) || settings.bin_count == 0 {
            return Err(ApiError::bad_request("cost_ratio and bin_count must be positive"));
        }
        guard.settings = settings;
    }
    ok(&session_body(&session, &state))
}

pub async fn create_session(State(state): State<Shared>) -> ApiResult {
    if !state.config.multi_session {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "single_session",
            "multi-session mode is disabled",
        ));
    }
    let session = state.create_session();
    Ok(json_response(StatusCode::CREATED, &session_body(&session, &state)))
}

pub async fn delete_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    if state.remove_session(&id) {
        ok(&serde_json::json!({ "deleted": id }))
    } else {
        Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no removable session {id:?}")))
    }
}

// ---- datasets ----

#[derive(Deserialize, Default)]
pub struct UploadParams {
    format: Option<String>,
    name: Option<String>,
}

#[derive(Serialize)]
struct UploadBody {
    dataset_id: String,
    snapshot_version: u64,
    point_count: usize,
    schema: Vec<whatif_core::dataset::FeatureSchema>,
}

fn format_of(explicit: Option<&str>, filename: Option<&str>, content_type: Option<&str>) -> Result<Format, ApiError> {
    if let Some(f) = explicit {
        return Ok(f.parse()?);
    }
    match content_type {
        Some(ct) if ct.contains("ndjson") || ct.contains("jsonl") || ct.contains("json") => Ok(Format::Jsonl),
        _ => Ok(filename.map(Format::from_path).unwrap_or(Format::Csv)),
    }
}

pub async fn upload_dataset(
    State(state): State<Shared>,
    SessionRef(session): SessionRef,
    Query(params): Query<UploadParams>,
    request: Request,
) -> ApiResult {
    let content_type = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(String::from);
    let mut schema: Option<Vec<DeclaredFeature>> = None;
    let (bytes, format, name) = if content_type.as_deref().is_some_and(|c| c.starts_with("multipart/form-data")) {
        let mut multipart = Multipart::from_request(request, &state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut file: Option<(Bytes, Option<String>)> = None;
        while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            match field.name() {
                Some("schema") => {
                    let text = field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                    schema = Some(serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("schema: {e}")))?);
                }
                _ if file.is_none() => {
                    let filename = field.file_name().map(String::from);
                    let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
                    file = Some((data, filename));
                }
                _ => {}
            }
        }
        let (data, filename) = file.ok_or_else(|| ApiError::bad_request("multipart upload has no file field"))?;
        let format = format_of(params.format.as_deref(), filename.as_deref(), None)?;
        (data, format, params.name.or(filename))
    } else {
        let data = Bytes::from_request(request, &state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let format = format_of(params.format.as_deref(), params.name.as_deref(), content_type.as_deref())?;
        (data, format, params.name)
    };

    let dataset = blocking(move || Ok(ingest(&bytes, format, schema.as_deref())?)).await?;
    let body = UploadBody {
        dataset_id: String::new(),
        snapshot_version: dataset.version(),
        point_count: dataset.len(),
        schema: dataset.schema(),
    };
    let id = session.write().load(dataset, name);
    Ok(json_response(StatusCode::CREATED, &UploadBody { dataset_id: id, ..body }))
}

#[derive(Deserialize, Default)]
pub struct StatsParams {
    sort: Option<String>,
    version: Option<u64>,
}

pub async fn dataset_stats(
    SessionRef(session): SessionRef,
    Path(d): Path<String>,
    Query(params): Query<StatsParams>,
) -> ApiResult {
    let ds = session.snapshot().dataset(Some(&d), params.version)?;
    let sort = parse::<SortKey>(params.sort.as_deref())?.unwrap_or(SortKey::NonUniformity);
    let body = blocking(move || Ok(report::stats_report(&ds, sort)?)).await?;
    ok(&body)
}

#[derive(Deserialize, Default)]
pub struct PageParams {
    offset: Option<usize>,
    limit: Option<usize>,
    version: Option<u64>,
}

pub async fn dataset_points(
    SessionRef(session): SessionRef,
    Path(d): Path<String>,
    Query(params): Query<PageParams>,
) -> ApiResult {
    let ds = session.snapshot().dataset(Some(&d), params.version)?;
    ok(&report::points_page(&ds, params.offset.unwrap_or(0), params.limit))
}

fn check_dataset(state: &crate::state::SessionState, d: &str) -> Result<(), ApiError> {
    match &state.dataset {
        None => Err(ApiError::no_dataset()),
        Some(l) if l.id != d => Err(ApiError::unknown_dataset(d)),
        Some(_) => Ok(()),
    }
}

pub async fn edit_point(
    SessionRef(session): SessionRef,
    Path((d, id)): Path<(String, u64)>,
    JsonBody(changes): JsonBody<Map<String, Json>>,
) -> ApiResult {
    let changes: Vec<(String, Value)> = changes
        .into_iter()
        .map(|(k, v)| {
            serde_json::from_value::<Value>(v)
                .map(|v| (k.clone(), v))
                .map_err(|e| ApiError::bad_request(format!("{k}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if changes.is_empty() {
        return Err(ApiError::bad_request("no changes given"));
    }

    // single writer: the write lock covers validation and the mutation only
    let (before_values, point, features, version, models) = {
        let mut guard = session.write();
        check_dataset(&guard, &d)?;
        let loaded = guard.dataset.as_mut().expect("checked above");
        let before = loaded.data.point(id)?.values.clone();
        let ds = Arc::make_mut(&mut loaded.data);
        let point = ds.edit_datapoint(id, &changes)?.clone();
        (before, point, ds.feature_names(), ds.version(), guard.models.clone())
    };

    let handles: Vec<Arc<ModelHandle>> = models
        .models()
        .iter()
        .map(|m| models.get(m.slot()).expect("registered").clone())
        .collect();
    let after_values = point.values.clone();
    let scores = blocking(move || {
        let mut out = Vec::new();
        for m in &handles {
            let before = m.predict_batch(&features, &[before_values.as_slice()])?.remove(0);
            let after = m.predict_batch(&features, &[after_values.as_slice()])?.remove(0);
            let change = score_delta(&before, &after)?;
            out.push(ModelDelta {
                model: m.slot(),
                before,
                after,
                change,
            });
        }
        Ok(out)
    })
    .await?;

    {
        let mut guard = session.write();
        let entries = guard.history.entry(id).or_default();
        for s in &scores {
            entries.push(HistoryEntry {
                snapshot_version: version,
                model: s.model,
                output: s.after.clone(),
            });
        }
    }
    ok(&Versioned {
        snapshot_version: version,
        body: EditReport { point, scores },
    })
}

#[derive(Serialize)]
struct PointBody {
    point: DataPoint,
}

pub async fn duplicate_point(SessionRef(session): SessionRef, Path((d, id)): Path<(String, u64)>) -> ApiResult {
    let (point, version) = {
        let mut guard = session.write();
        check_dataset(&guard, &d)?;
        let ds = Arc::make_mut(&mut guard.dataset.as_mut().expect("checked above").data);
        let point = ds.duplicate_datapoint(id)?.clone();
        (point, ds.version())
    };
    Ok(json_response(
        StatusCode::CREATED,
        &Versioned {
            snapshot_version: version,
            body: PointBody { point },
        },
    ))
}

#[derive(Serialize)]
struct DeletedBody {
    deleted: u64,
}

pub async fn delete_point(SessionRef(session): SessionRef, Path((d, id)): Path<(String, u64)>) -> ApiResult {
    let version = {
        let mut guard = session.write();
        check_dataset(&guard, &d)?;
        let ds = Arc::make_mut(&mut guard.dataset.as_mut().expect("checked above").data);
        ds.delete_datapoint(id)?;
        let v = ds.version();
        guard.history.remove(&id);
        v
    };
    ok(&Versioned {
        snapshot_version: version,
        body: DeletedBody { deleted: id },
    })
}

#[derive(Serialize)]
struct HistoryBody<'a> {
    id: u64,
    entries: &'a [HistoryEntry],
}

pub async fn point_history(SessionRef(session): SessionRef, Path((d, id)): Path<(String, u64)>) -> ApiResult {
    let guard = session.state.read().expect("session lock");
    check_dataset(&guard, &d)?;
    let ds = &guard.dataset.as_ref().expect("checked above").data;
    ds.point(id)?;
    ok(&Versioned {
        snapshot_version: ds.version(),
        body: HistoryBody {
            id,
            entries: guard.history.get(&id).map(Vec::as_slice).unwrap_or_default(),
        },
    })
}

// ---- models ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterModel {
    slot: ModelSlot,
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    spec: Option<whatif_core::model::BuiltinModelSpec>,
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    task: Option<TaskKind>,
    /// Replace a model already in the slot.
    #[serde(default)]
    replace: bool,
}

#[derive(Serialize)]
struct ModelBody {
    #[serde(flatten)]
    info: ModelInfo,
    comparison: bool,
}

pub async fn register_model(
    State(state): State<Shared>,
    SessionRef(session): SessionRef,
    JsonBody(req): JsonBody<RegisterModel>,
) -> ApiResult {
    let source = match (req.spec, req.url) {
        (Some(spec), None) => ModelSource::Builtin(spec),
        (None, Some(url)) => ModelSource::Remote {
            url,
            task: req
                .task
                .ok_or_else(|| ApiError::bad_request("remote models need a task"))?,
        },
        _ => return Err(ApiError::bad_request("give exactly one of spec or url")),
    };
    let handle = ModelHandle::from_source(req.slot, source, req.display_name, &state.config.remote)?;
    let mut guard = session.write();
    let mut models = guard.models.clone();
    if req.replace {
        models.remove(req.slot);
    }
    let info = models.register(handle)?.info();
    guard.models = models;
    let body = ModelBody {
        info,
        comparison: guard.models.is_comparison(),
    };
    Ok(json_response(StatusCode::CREATED, &body))
}

pub async fn remove_model(SessionRef(session): SessionRef, Path(slot): Path<String>) -> ApiResult {
    let slot: ModelSlot = slot.parse()?;
    let removed = session.write().models.remove(slot);
    match removed {
        Some(h) => ok(&h.info()),
        None => Err(whatif_core::Error::NoModel(slot).into()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    model: Option<ModelSlot>,
    #[serde(default)]
    ids: Vec<u64>,
    #[serde(default)]
    points: Vec<Map<String, Json>>,
    #[serde(default)]
    version: Option<u64>,
}

pub async fn predict(SessionRef(session): SessionRef, JsonBody(req): JsonBody<PredictRequest>) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, req.version)?;
    let models = selected_models(&snap, req.model)?;
    let body = blocking(move || {
        let inline = req
            .points
            .iter()
            .map(|p| report::row_from_object(&ds, p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(report::predict_report(&ds, &refs(&models), &req.ids, &inline)?)
    })
    .await?;
    ok(&body)
}

// ---- analyses ----

#[derive(Deserialize, Default)]
pub struct BinsParams {
    x: Option<String>,
    y: Option<String>,
    color: Option<String>,
    bins: Option<usize>,
    label: Option<String>,
    positive: Option<String>,
    classes: Option<String>,
    version: Option<u64>,
}

pub async fn analysis_bins(SessionRef(session): SessionRef, Query(p): Query<BinsParams>) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, p.version)?;
    let models = if snap.models.is_empty() { Vec::new() } else { selected_models(&snap, None)? };
    let spec = BinningSpec {
        x_feature: p.x.clone(),
        y_feature: p.y.clone(),
        numeric_bin_count: p.bins.unwrap_or(snap.settings.bin_count),
        color_feature: p.color.clone(),
    };
    let has_label = p.label.is_some() || snap.settings.label.is_some();
    let binding = if has_label {
        Some(binding_for(p.label, p.positive, list(&p.classes), &snap.settings, snap.models.task())?)
    } else {
        None
    };
    let body = blocking(move || Ok(report::bins_report(&ds, &refs(&models), &spec, binding.as_ref())?)).await?;
    ok(&body)
}

#[derive(Deserialize, Default)]
pub struct CounterfactualParams {
    point: u64,
    norm: Option<String>,
    model: Option<String>,
    version: Option<u64>,
}

pub async fn analysis_counterfactual(
    SessionRef(session): SessionRef,
    Query(p): Query<CounterfactualParams>,
) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, p.version)?;
    let norm = parse::<DistanceNorm>(p.norm.as_deref())?.unwrap_or(snap.settings.norm);
    let model = first_model(&snap, parse(p.model.as_deref())?)?;
    let body = blocking(move || Ok(report::counterfactual_report(&ds, &model, p.point, norm)?)).await?;
    ok(&body)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceFeatureRequest {
    point: u64,
    #[serde(default)]
    norm: Option<DistanceNorm>,
}

#[derive(Serialize)]
struct DistanceFeatureBody {
    feature: String,
    point: u64,
    norm: DistanceNorm,
}

pub async fn analysis_distance_feature(
    SessionRef(session): SessionRef,
    JsonBody(req): JsonBody<DistanceFeatureRequest>,
) -> ApiResult {
    let mut guard = session.write();
    let norm = req.norm.unwrap_or(guard.settings.norm);
    let loaded = guard.dataset.as_mut().ok_or_else(ApiError::no_dataset)?;
    let ds = Arc::make_mut(&mut loaded.data);
    let feature = attach_distance_feature(ds, req.point, norm)?;
    Ok(json_response(
        StatusCode::CREATED,
        &Versioned::new(
            ds,
            DistanceFeatureBody {
                feature,
                point: req.point,
                norm,
            },
        ),
    ))
}

#[derive(Deserialize, Default)]
pub struct PdpParams {
    feature: String,
    point: Option<u64>,
    #[serde(default)]
    global: bool,
    range: Option<String>,
    points: Option<usize>,
    values: Option<String>,
    top_n: Option<usize>,
    model: Option<String>,
    #[serde(default)]
    stream: bool,
    version: Option<u64>,
}

pub fn parse_range(s: &str) -> Result<(f64, f64), whatif_core::Error> {
    let bad = || whatif_core::Error::InvalidArgument(format!("range {s:?} is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

#[derive(Serialize)]
struct Progress {
    done: usize,
    total: usize,
}

pub async fn analysis_pdp(SessionRef(session): SessionRef, Query(p): Query<PdpParams>) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, p.version)?;
    let models = selected_models(&snap, parse(p.model.as_deref())?)?;
    let point = match (p.point, p.global) {
        (Some(_), true) => return Err(ApiError::bad_request("give either point or global=true, not both")),
        (None, false) => return Err(ApiError::bad_request("give point=<id> or global=true")),
        (point, _) => point,
    };
    let mut spec = PdpSpec::new(p.feature.clone());
    spec.range = p.range.as_deref().map(parse_range).transpose()?;
    if let Some(n) = p.points {
        spec.num_points = n;
    }
    if let Some(n) = p.top_n {
        spec.top_n = n;
    }
    let values = list(&p.values);
    if !values.is_empty() {
        spec.categorical_values = Some(values);
    }

    if !(p.stream && point.is_none()) {
        let body = blocking(move || Ok(report::pdp_report(&ds, &refs(&models), point, &spec, None)?)).await?;
        return ok(&body);
    }

    // newline-delimited progress records, then the curve or an error
    let (tx, rx) = mpsc::unbounded::<String>();
    tokio::task::spawn_blocking(move || {
        let progress_tx = tx.clone();
        let mut progress = |done: usize, total: usize| {
            let line = serde_json::json!({ "progress": Progress { done, total } });
            progress_tx.unbounded_send(format!("{line}\n")).ok();
        };
        let last = match report::pdp_report(&ds, &refs(&models), None, &spec, Some(&mut progress)) {
            Ok(curve) => serde_json::json!({ "result": curve }),
            Err(e) => serde_json::json!({ "error": ApiError::from(e) }),
        };
        tx.unbounded_send(format!("{last}\n")).ok();
    });
    let stream = rx.map(|line| Ok::<_, Infallible>(Bytes::from(line)));
    Ok(Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("valid response"))
}

#[derive(Deserialize, Default)]
pub struct PerformanceParams {
    label: Option<String>,
    positive: Option<String>,
    classes: Option<String>,
    slice_by: Option<String>,
    bins: Option<usize>,
    threshold: Option<f64>,
    /// JSON object of slice key to threshold.
    thresholds: Option<String>,
    cost_ratio: Option<f64>,
    sort: Option<String>,
    model: Option<String>,
    version: Option<u64>,
}

pub async fn analysis_performance(SessionRef(session): SessionRef, Query(p): Query<PerformanceParams>) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, p.version)?;
    let models = selected_models(&snap, parse(p.model.as_deref())?)?;
    let binding = binding_for(p.label, p.positive, list(&p.classes), &snap.settings, snap.models.task())?;
    let mut slices = SliceSpec::by(&[]);
    slices.features = list(&p.slice_by);
    slices.numeric_bin_count = p.bins.unwrap_or(snap.settings.bin_count);
    let choice = match (&p.thresholds, p.threshold, p.cost_ratio) {
        (Some(json), default, _) => {
            let thresholds: BTreeMap<String, f64> =
                serde_json::from_str(json).map_err(|e| ApiError::bad_request(format!("thresholds: {e}")))?;
            ThresholdChoice::Fixed(Thresholds::PerSlice {
                thresholds,
                default: default.unwrap_or(0.5),
            })
        }
        (None, Some(t), _) => ThresholdChoice::Fixed(Thresholds::Global(t)),
        (None, None, Some(r)) => ThresholdChoice::Optimize(CostRatio::new(r)?),
        (None, None, None) => ThresholdChoice::Fixed(Thresholds::default()),
    };
    let sort = p.sort.as_deref().map(str::parse::<SliceSort>).transpose()?.unwrap_or_default();
    let body = blocking(move || {
        Ok(report::performance_report(&ds, &refs(&models), &binding, &slices, &choice, sort)?)
    })
    .await?;
    ok(&body)
}

#[derive(Deserialize)]
#[serde(untagged)]
pub enum FeatureList {
    List(Vec<String>),
    Csv(String),
}

impl FeatureList {
    fn into_vec(self) -> Vec<String> {
        match self {
            FeatureList::List(v) => v,
            FeatureList::Csv(s) => list(&Some(s)),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessRequest {
    strategy: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    positive: Option<String>,
    #[serde(default)]
    slice_by: Option<FeatureList>,
    #[serde(default)]
    bins: Option<usize>,
    #[serde(default)]
    cost_ratio: Option<f64>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    model: Option<ModelSlot>,
    #[serde(default)]
    version: Option<u64>,
}

pub async fn analysis_fairness(SessionRef(session): SessionRef, JsonBody(req): JsonBody<FairnessRequest>) -> ApiResult {
    let snap = session.snapshot();
    let ds = snap.dataset(None, req.version)?;
    let models = selected_models(&snap, req.model)?;
    let strategy: FairnessStrategy = req.strategy.parse()?;
    let binding = binding_for(req.label, req.positive, Vec::new(), &snap.settings, snap.models.task())?;
    let mut slices = SliceSpec::by(&[]);
    slices.features = req.slice_by.map(FeatureList::into_vec).unwrap_or_default();
    slices.numeric_bin_count = req.bins.unwrap_or(snap.settings.bin_count);
    let ratio = CostRatio::new(req.cost_ratio.unwrap_or(snap.settings.cost_ratio))?;
    let epsilon = req.epsilon.unwrap_or(DEFAULT_EPSILON);
    let body = blocking(move || {
        Ok(report::fairness_report(&ds, &refs(&models), &binding, &slices, strategy, ratio, epsilon)?)
    })
    .await?;
    ok(&body)
}

pub async fn health() -> impl IntoResponse {
    json_response(StatusCode::OK, &serde_json::json!({ "status": "ok" }))
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}
