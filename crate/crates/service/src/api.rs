use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, RawQuery, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use atlas_core::artifacts::SearchField;
use atlas_core::hash::hash_u64s;
use atlas_core::images::{encode_png, PngColor, render_and_store, sniff_mime, ImageBackend, MockImageBackend, RemoteImageBackend};
use atlas_core::layout::{render_density_tile, Bounds, TILE_SIZE};
use atlas_core::store::{FileKv, KvStore, MemKv};

use crate::config::{ImageBackendKind, ServiceConfig};
use crate::error::{ApiError, VERSION_HEADER};
use crate::history::History;
use crate::snapshot::{Snapshot, SnapshotData, SnapshotStore};

pub const DEFAULT_SEARCH_K: usize = 200;
pub const MAX_SEARCH_K: usize = 1000;
pub const SESSION_HEADER: &str = "x-session-token";
const DEFAULT_SESSION: &str = "anonymous";

pub struct AppState {
    pub config: ServiceConfig,
    pub snapshots: SnapshotStore,
    pub history: History,
    pub images: Arc<dyn ImageBackend>,
    pub generated: Arc<dyn KvStore>,
    generation_slots: Semaphore,
}

impl AppState {
    pub fn new(
        config: ServiceConfig,
        data: SnapshotData,
        images: Arc<dyn ImageBackend>,
        generated: Arc<dyn KvStore>,
    ) -> Self {
        Self {
            history: History::new(config.history_cap),
            generation_slots: Semaphore::new(config.generation_concurrency.max(1)),
            snapshots: SnapshotStore::new(data),
            images,
            generated,
            config,
        }
    }

    /// Loads `config.artifact_dir` and wires the configured backends.
    pub fn from_config(config: ServiceConfig) -> atlas_core::Result<Self> {
        config.validate()?;
        let data = SnapshotData::load(&config.artifact_dir)?;
        let images: Arc<dyn ImageBackend> = match config.image_backend {
            ImageBackendKind::Mock => Arc::new(MockImageBackend::default()),
            ImageBackendKind::Remote => Arc::new(RemoteImageBackend::new(
                config.remote_images.clone().unwrap_or_default(),
            )?),
        };
        let kv_dir = config.kv_dir.clone().unwrap_or_else(|| config.artifact_dir.join("kv"));
        let generated: Arc<dyn KvStore> = Arc::new(FileKv::open(kv_dir)?);
        Ok(Self::new(config, data, images, generated))
    }

    pub fn in_memory(config: ServiceConfig, data: SnapshotData) -> Self {
        Self::new(config, data, Arc::new(MockImageBackend::default()), Arc::new(MemKv::new()))
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/viewport", get(viewport))
        .route("/api/search", post(search))
        .route("/api/point/{id}", get(point))
        .route("/api/tile/{z}/{x}/{y}", get(tile))
        .route("/api/labels", get(labels))
        .route("/api/generate", post(generate))
        .route("/api/history", get(history_list))
        .route("/api/history/{id}", delete(history_delete))
        .route("/api/image/{key}", get(image))
        .route("/api/admin/swap", post(swap))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(state.clone(), stamp_version))
        .with_state(state)
}

/// Adds the version header to responses that did not set one (router
/// fallbacks, method mismatches).
async fn stamp_version(State(state): State<SharedState>, req: Request, next: Next) -> Response {
    let mut resp = next.run(req).await;
    if !resp.headers().contains_key(VERSION_HEADER) {
        let v = state.snapshots.current().version;
        resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(v));
    }
    resp
}

fn reply(version: u64, mut body: Value) -> Response {
    body["snapshot_version"] = json!(version);
    let mut resp = Json(body).into_response();
    resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(version));
    resp
}

type ApiResult = Result<Response, ApiError>;

fn parse_query<T: DeserializeOwned>(raw: Option<String>, version: u64) -> Result<T, ApiError> {
    serde_urlencoded::from_str(raw.as_deref().unwrap_or(""))
        .map_err(|e| ApiError::bad_request(format!("bad query string: {e}"), version))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes, version: u64) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("bad request body: {e}"), version))
}

fn parse_id(s: &str, version: u64) -> Result<u64, ApiError> {
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("`{s}` is not a valid id"), version))
}

fn session(headers: &HeaderMap) -> String {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_SESSION)
        .to_owned()
}

async fn blocking<T, F>(version: u64, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> atlas_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), version))?
        .map_err(|e| ApiError::from_core(e, version))
}

async fn fallback(State(state): State<SharedState>) -> ApiError {
    ApiError::not_found("no such endpoint", state.snapshots.current().version)
}

async fn status(State(state): State<SharedState>) -> ApiResult {
    let snap = state.snapshots.current();
    let fields: Vec<Value> = SearchField::ALL
        .iter()
        .filter_map(|f| snap.fields.get(f).map(|s| json!({"field": f, "indexed": s.index.is_some()})))
        .collect();
    Ok(reply(
        snap.version,
        json!({
            "records": snap.records.len(),
            "fields": fields,
            "layout": snap.map.as_ref().map(|m| json!({"bounds": m.bounds(), "world": m.world})),
            "zoom": snap.zoom,
            "max_points": state.config.max_points,
        }),
    ))
}

#[derive(Debug, Deserialize)]
struct ViewportQuery {
    minx: f64,
    miny: f64,
    maxx: f64,
    maxy: f64,
    zoom: f64,
}

#[derive(Debug, Serialize)]
struct ViewportPoint {
    id: u64,
    x: f32,
    y: f32,
    preview: bool,
}

fn check_zoom(snap: &Snapshot, zoom: f64) -> Result<(), ApiError> {
    if !(zoom.is_finite() && zoom >= 0.0 && zoom <= snap.zoom.max_zoom) {
        return Err(ApiError::bad_request(
            format!("zoom must be within [0, {}]", snap.zoom.max_zoom),
            snap.version,
        ));
    }
    Ok(())
}

async fn viewport(State(state): State<SharedState>, RawQuery(raw): RawQuery) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    let q: ViewportQuery = parse_query(raw, v)?;
    if ![q.minx, q.miny, q.maxx, q.maxy].iter().all(|c| c.is_finite()) || q.minx > q.maxx || q.miny > q.maxy {
        return Err(ApiError::bad_request("bbox needs finite minx <= maxx and miny <= maxy", v));
    }
    check_zoom(&snap, q.zoom)?;
    let map = snap
        .map
        .as_ref()
        .ok_or_else(|| ApiError::not_found("snapshot has no layout", v))?;
    let bbox = Bounds {
        min_x: q.minx,
        min_y: q.miny,
        max_x: q.maxx,
        max_y: q.maxy,
    };

    let mut points: Vec<(u64, ViewportPoint)> = map
        .positions
        .iter()
        .enumerate()
        .filter(|&(i, p)| map.lod.visible(i, q.zoom) && bbox.contains(p[0] as f64, p[1] as f64))
        .map(|(i, p)| {
            let id = map.ids[i];
            (
                hash_u64s(0x7a11, &[id]),
                ViewportPoint {
                    id,
                    x: p[0],
                    y: p[1],
                    preview: map.lod.preview[i],
                },
            )
        })
        .collect();
    let total = points.len();
    let cap = state.config.max_points;
    if total > cap {
        points.sort_unstable_by_key(|(h, p)| (*h, p.id));
        points.truncate(cap);
    }
    points.sort_unstable_by_key(|(_, p)| p.id);
    let points: Vec<ViewportPoint> = points.into_iter().map(|(_, p)| p).collect();

    let labels: Vec<_> = map
        .anchors
        .iter()
        .filter(|a| a.min_zoom as f64 <= q.zoom && bbox.contains(a.position[0] as f64, a.position[1] as f64))
        .collect();

    let opacity = snap.zoom.density_opacity(q.zoom);
    let density = (opacity > 0.0 && bbox.intersects(&map.world.bounds())).then(|| {
        let z = q.zoom.floor() as u32;
        let (x0, y0) = snap.zoom.tile_of(&map.world, z, [q.minx as f32, q.miny as f32]);
        let (x1, y1) = snap.zoom.tile_of(&map.world, z, [q.maxx as f32, q.maxy as f32]);
        json!({
            "opacity": opacity,
            "z": z,
            "x_min": x0, "x_max": x1, "y_min": y0, "y_max": y1,
            "url_template": "/api/tile/{z}/{x}/{y}.png",
        })
    });

    Ok(reply(
        v,
        json!({
            "zoom": q.zoom,
            "bbox": bbox,
            "points": points,
            "total_points": total,
            "truncated": total > cap,
            "labels": labels,
            "density": density,
        }),
    ))
}

#[derive(Debug, Deserialize)]
struct SearchRequest {
    query: String,
    #[serde(default = "default_field")]
    field: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    exact: bool,
}

fn default_field() -> String {
    "prompt".into()
}

async fn search(State(state): State<SharedState>, body: Bytes) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    let req: SearchRequest = parse_body(&body, v)?;
    let field = SearchField::parse(&req.field).map_err(|e| ApiError::from_core(e, v))?;
    let k = req.k.unwrap_or(DEFAULT_SEARCH_K);
    if k == 0 || k > MAX_SEARCH_K {
        return Err(ApiError::bad_request(format!("k must be within 1..={MAX_SEARCH_K}"), v));
    }
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query must be non-empty", v));
    }
    if !snap.fields.contains_key(&field) {
        return Err(ApiError::not_found(format!("field `{field}` is not indexed in this snapshot"), v));
    }
    let s = snap.clone();
    let query = req.query.clone();
    let exact = req.exact;
    let hits = blocking(v, move || {
        let q = s.embed_query(&query)?;
        s.fields[&field].search(&q, k, exact)
    })
    .await?;
    let hits: Vec<Value> = hits
        .iter()
        .enumerate()
        .map(|(rank, h)| {
            let pos = snap
                .map
                .as_ref()
                .and_then(|m| m.rows.get(&h.id).map(|&r| m.positions[r]));
            json!({
                "rank": rank + 1,
                "id": h.id,
                "score": h.score,
                "position": pos,
                "highlight": true,
            })
        })
        .collect();
    Ok(reply(
        v,
        json!({"field": field, "k": k, "exact": exact, "hits": hits}),
    ))
}

async fn point(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    let id = parse_id(&id, v)?;
    let record = snap
        .record(id)
        .ok_or_else(|| ApiError::not_found(format!("no record with id {id}"), v))?;
    let mut record = record.clone();
    if let Some(map) = &snap.map {
        if let Some(&row) = map.rows.get(&id) {
            record.embedding_row = Some(row as u64);
            record.position = Some(map.positions[row]);
        }
    }
    let image_url = record.image_ref.as_ref().map(|k| format!("/api/image/{k}"));
    Ok(reply(v, json!({"record": record, "image_url": image_url})))
}

async fn tile(State(state): State<SharedState>, Path((z, x, y)): Path<(String, String, String)>) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    let y = y
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::not_found("tiles are served as .png", v))?;
    let parse = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| ApiError::bad_request(format!("`{s}` is not a tile coordinate"), v))
    };
    let (z, x, y) = (parse(&z)?, parse(&x)?, parse(y)?);
    let map = snap
        .map
        .as_ref()
        .ok_or_else(|| ApiError::not_found("snapshot has no layout", v))?;
    let rect = snap
        .zoom
        .tile_rect(&map.world, z, x, y)
        .map_err(|e| ApiError::not_found(e.to_string(), v))?;
    let pixels = render_density_tile(&map.grid, &map.prefix, &rect, TILE_SIZE);
    let png = encode_png(TILE_SIZE as u32, TILE_SIZE as u32, PngColor::Grayscale, &pixels)
        .map_err(|e| ApiError::from_core(e, v))?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::HeaderName::from_static(VERSION_HEADER), HeaderValue::from(v)),
        ],
        Body::from(png),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct LabelsQuery {
    zoom: Option<f64>,
}

async fn labels(State(state): State<SharedState>, RawQuery(raw): RawQuery) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    let q: LabelsQuery = parse_query(raw, v)?;
    let zoom = q.zoom.unwrap_or(snap.zoom.max_zoom);
    check_zoom(&snap, zoom)?;
    let labels: Vec<_> = snap
        .map
        .as_ref()
        .map(|m| m.anchors.iter().filter(|a| a.min_zoom as f64 <= zoom).collect())
        .unwrap_or_default();
    Ok(reply(v, json!({"zoom": zoom, "labels": labels})))
}

#[derive(Debug, Deserialize)]
struct GenerateRequest {
    prompt: String,
    #[serde(default)]
    seed: u64,
}

async fn generate(State(state): State<SharedState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let v = state.snapshots.current().version;
    let req: GenerateRequest = parse_body(&body, v)?;
    if req.prompt.trim().is_empty() {
        return Err(ApiError::bad_request("prompt must be non-empty", v));
    }
    let _slot = state
        .generation_slots
        .acquire()
        .await
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "internal", e.to_string(), v))?;
    let (images, kv) = (state.images.clone(), state.generated.clone());
    let (prompt, seed) = (req.prompt.clone(), req.seed);
    let key = blocking(v, move || render_and_store(images.as_ref(), kv.as_ref(), &prompt, seed)).await?;
    let entry = state.history.push(&session(&headers), req.prompt, req.seed, key);
    Ok(reply(v, json!({"entry": entry})))
}

async fn history_list(State(state): State<SharedState>, headers: HeaderMap) -> ApiResult {
    let v = state.snapshots.current().version;
    Ok(reply(v, json!({"entries": state.history.list(&session(&headers))})))
}

async fn history_delete(State(state): State<SharedState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let v = state.snapshots.current().version;
    let id = parse_id(&id, v)?;
    if !state.history.remove(&session(&headers), id) {
        return Err(ApiError::not_found(format!("no history entry {id}"), v));
    }
    Ok(reply(v, json!({"deleted": id})))
}

async fn image(State(state): State<SharedState>, Path(key): Path<String>) -> ApiResult {
    let snap = state.snapshots.current();
    let v = snap.version;
    if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(ApiError::bad_request("image keys are 64 lowercase hex digits", v));
    }
    let (kv, generated) = (snap.kv.clone(), state.generated.clone());
    let lookup_key = key.clone();
    let bytes = blocking(v, move || match kv.get(&lookup_key)? {
        Some(b) => Ok(Some(b)),
        None => generated.get(&lookup_key),
    })
    .await?
    .ok_or_else(|| ApiError::not_found(format!("no image {key}"), v))?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(sniff_mime(&bytes))),
            (header::HeaderName::from_static(VERSION_HEADER), HeaderValue::from(v)),
        ],
        Body::from(bytes),
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct SwapRequest {
    dir: Option<std::path::PathBuf>,
}

async fn swap(State(state): State<SharedState>, body: Bytes) -> ApiResult {
    let current = state.snapshots.current();
    let v = current.version;
    let req: SwapRequest = if body.is_empty() {
        SwapRequest { dir: None }
    } else {
        parse_body(&body, v)?
    };
    let dir = req
        .dir
        .or_else(|| current.root.clone())
        .ok_or_else(|| ApiError::bad_request("no artifact directory given", v))?;
    drop(current);
    let data = blocking(v, move || SnapshotData::load(&dir)).await?;
    let new_version = state.snapshots.swap(data);
    tracing::info!(previous = v, version = new_version, "snapshot swapped");
    Ok(reply(new_version, json!({"previous_version": v})))
}
