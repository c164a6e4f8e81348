//! HTTP API over a run directory: target, chains, projections and
//! on-demand renders.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use matinfer_core::materials::{ModelSpec, ParamVector, RandomInputs};
use matinfer_core::render::CameraRig;
use matinfer_core::sampler::ChainSample;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::chain::{check_chain_id, list_chains, read_chain, RunManifest};
use crate::config::RunConfig;
use crate::image_io::{encode_png, quantize_f32};
use crate::run::{render_image, Setup};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    reason: String,
}

impl ApiError {
    fn bad_request(reason: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, reason: reason.into() }
    }

    fn not_found(reason: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, reason: reason.into() }
    }

    fn internal(reason: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, reason: reason.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let error = match self.status {
            StatusCode::BAD_REQUEST => "bad_request",
            StatusCode::NOT_FOUND => "not_found",
            _ => "internal",
        };
        (self.status, Json(json!({ "error": error, "reason": self.reason }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Insertion-ordered cache of rendered PNGs keyed by parameter hash.
struct RenderCache {
    capacity: usize,
    entries: HashMap<String, Arc<Vec<u8>>>,
    order: VecDeque<String>,
}

impl RenderCache {
    fn get(&self, key: &str) -> Option<Arc<Vec<u8>>> {
        self.entries.get(key).cloned()
    }

    fn insert(&mut self, key: String, png: Arc<Vec<u8>>) {
        if self.capacity == 0 || self.entries.contains_key(&key) {
            return;
        }
        while self.entries.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.entries.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key.clone());
        self.entries.insert(key, png);
    }
}

pub struct AppState {
    out: PathBuf,
    spec: ModelSpec,
    rig: CameraRig,
    z: Arc<RandomInputs>,
    default_burn_in: usize,
    target_png: Option<Vec<u8>>,
    cache: Mutex<RenderCache>,
    workers: Semaphore,
    renders: Mutex<usize>,
}

impl AppState {
    pub fn new(cfg: &RunConfig) -> anyhow::Result<Self> {
        let setup = Setup::new(cfg)?;
        let target_png = match setup.target_path().exists() {
            true => Some(encode_png(&setup.load_target()?)?),
            false => None,
        };
        if cfg.serve.workers == 0 {
            anyhow::bail!("serve.workers must be at least 1");
        }
        Ok(Self {
            out: cfg.out.clone(),
            spec: setup.spec,
            rig: setup.rig,
            z: setup.z,
            default_burn_in: cfg.sampler.burn_in,
            target_png,
            cache: Mutex::new(RenderCache { capacity: cfg.serve.cache_entries, entries: HashMap::new(), order: VecDeque::new() }),
            workers: Semaphore::new(cfg.serve.workers),
            renders: Mutex::new(0),
        })
    }

    /// Renders evaluated so far (cache misses).
    pub fn render_count(&self) -> usize {
        *self.renders.lock().unwrap()
    }

    fn burn_in(&self, id: &str) -> usize {
        RunManifest::read(&RunManifest::path(&self.out, id)).map(|m| m.burn_in).unwrap_or(self.default_burn_in)
    }

    fn chain(&self, id: &str) -> ApiResult<Vec<ChainSample>> {
        check_chain_id(id).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let path = RunManifest::chain_path(&self.out, id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("no chain `{id}`")));
        }
        read_chain(&path).map_err(|e| ApiError::internal(format!("{e:#}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/target", get(target))
        .route("/api/chains", get(chains))
        .route("/api/chains/{id}/samples", get(samples))
        .route("/api/chains/{id}/projection", get(projection))
        .route("/api/render", post(render))
        .route("/api/manifest", get(manifest))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn target(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    s.target_png.clone().map(png).ok_or_else(|| ApiError::not_found("no target image"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainInfo {
    pub id: String,
    pub samples: usize,
    pub burn_in: usize,
    pub manifest: Option<RunManifest>,
}

async fn chains(State(s): State<Arc<AppState>>) -> ApiResult<Json<Vec<ChainInfo>>> {
    let ids = list_chains(&s.out).map_err(|e| ApiError::internal(format!("{e:#}")))?;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let samples = s.chain(&id)?.len();
        let manifest = RunManifest::read(&RunManifest::path(&s.out, &id)).ok();
        out.push(ChainInfo { burn_in: s.burn_in(&id), id, samples, manifest });
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleQuery {
    #[serde(default)]
    skip_burnin: bool,
    stride: Option<usize>,
}

fn select(s: &AppState, id: &str, samples: Vec<ChainSample>, skip_burnin: bool, stride: Option<usize>) -> ApiResult<Vec<ChainSample>> {
    let stride = stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::bad_request("stride must be at least 1"));
    }
    let skip = if skip_burnin { s.burn_in(id).min(samples.len()) } else { 0 };
    Ok(samples.into_iter().skip(skip).step_by(stride).collect())
}

async fn samples(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<SampleQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<ChainSample>>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let all = s.chain(&id)?;
    Ok(Json(select(&s, &id, all, q.skip_burnin, q.stride)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionQuery {
    x: String,
    y: String,
    #[serde(default)]
    skip_burnin: bool,
    stride: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub nlp: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Projection {
    pub x: String,
    pub y: String,
    pub points: Vec<ProjectionPoint>,
}

/// Accessor for a continuous or discrete parameter by name.
fn coordinate(spec: &ModelSpec, name: &str) -> ApiResult<Box<dyn Fn(&ChainSample) -> f64 + Send>> {
    if let Some(i) = spec.index_of(name) {
        return Ok(Box::new(move |s| s.theta_c[i]));
    }
    if let Some(i) = spec.discrete_index_of(name) {
        return Ok(Box::new(move |s| s.theta_d[i] as f64));
    }
    Err(ApiError::bad_request(format!("unknown parameter `{name}`")))
}

async fn projection(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<ProjectionQuery>, QueryRejection>,
) -> ApiResult<Json<Projection>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let fx = coordinate(&s.spec, &q.x)?;
    let fy = coordinate(&s.spec, &q.y)?;
    let all = s.chain(&id)?;
    let points = select(&s, &id, all, q.skip_burnin, q.stride)?
        .iter()
        .map(|c| ProjectionPoint { t: c.t, x: fx(c), y: fy(c), nlp: c.nlp })
        .collect();
    Ok(Json(Projection { x: q.x, y: q.y, points }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    theta_c: Vec<f64>,
    theta_d: Vec<usize>,
}

fn theta_key(theta: &ParamVector) -> String {
    let mut h = Sha256::new();
    for v in &theta.theta_c {
        h.update(v.to_le_bytes());
    }
    h.update([0xff]);
    for d in &theta.theta_d {
        h.update((*d as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

async fn render(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: RenderRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))?;
    let theta = ParamVector { theta_c: req.theta_c, theta_d: req.theta_d };
    s.spec.validate(&theta).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let key = theta_key(&theta);
    if let Some(hit) = s.cache.lock().unwrap().get(&key) {
        return Ok(png(hit.to_vec()));
    }
    let _permit = s.workers.acquire().await.map_err(|e| ApiError::internal(e.to_string()))?;
    // another request may have rendered it while this one queued
    if let Some(hit) = s.cache.lock().unwrap().get(&key) {
        return Ok(png(hit.to_vec()));
    }
    let job = s.clone();
    let bytes = tokio::task::spawn_blocking(move || -> anyhow::Result<Vec<u8>> {
        let img = render_image(&job.spec, &job.z, &job.rig, &theta)?;
        Ok(encode_png(&quantize_f32(&img))?)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::bad_request(format!("{e:#}")))?;
    *s.renders.lock().unwrap() += 1;
    let bytes = Arc::new(bytes);
    s.cache.lock().unwrap().insert(key, bytes.clone());
    Ok(png(bytes.to_vec()))
}

async fn manifest(State(s): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], s.spec.manifest_json()).into_response()
}

/// Serve the run directory until the process is stopped.
pub fn serve(cfg: &RunConfig) -> anyhow::Result<()> {
    if list_chains(&cfg.out)?.is_empty() {
        anyhow::bail!("no chains under {}; run `sample` first", cfg.out.display());
    }
    let state = Arc::new(AppState::new(cfg)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.serve.address).await?;
        log::info!("serving {} on http://{}", cfg.out.display(), listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
