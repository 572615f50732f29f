//! Batch scoring over HTTP and offline over files.
//!
//! `POST /v1/score` takes a [`ScoreRequest`] and returns a [`ScoreResponse`];
//! `GET /v1/health` returns the engine version and a digest of the active
//! configuration. Bodies are JSON. Responses carry no timestamps, so equal
//! requests produce byte-identical bodies.

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use crate::dataset::DatasetSample;
use crate::location::GridSpec;
use crate::parser::{PatternKind, Violation};
use crate::reward::{
    resolve_ground_truth, score_rollout, Gating, GroundTruthSpec, RewardBreakdown, RewardEngine, RewardMode,
};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_MAX_BATCH: usize = 1024;
pub const DEFAULT_MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub engine: RewardEngine,
    pub max_batch: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            engine: RewardEngine::default(),
            max_batch: DEFAULT_MAX_BATCH,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

impl ServiceConfig {
    /// SHA-256 over the grid, mode, gating, batch limit and taxonomy.
    pub fn digest(&self) -> String {
        let e = &self.engine;
        let mut h = Sha256::new();
        h.update(format!(
            "grid={}\nmode={:?}\ngating={:?}\nfuzzy={}\nmax_batch={}\n",
            e.grid.k(),
            e.mode,
            e.gating,
            e.taxonomy.fuzzy_threshold(),
            self.max_batch
        ));
        h.update(e.taxonomy.canonical_text());
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreItem {
    pub id: String,
    pub raw_output: String,
    pub ground_truth: GroundTruthSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RewardMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating: Option<Gating>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub grid: u32,
    pub mode: RewardMode,
    pub gating: Gating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseStatus {
    Structured { pattern: PatternKind },
    Malformed { violation: Violation, byte_offset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub id: String,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
    pub parse: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub engine_version: String,
    pub config: ConfigEcho,
    pub results: Vec<ScoreResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("{field}: {message}")]
    BadRequest { field: String, message: String },
    #[error("batch of {count} items exceeds the limit of {limit}")]
    TooLarge { count: usize, limit: usize },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn bad(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::BadRequest { field: field.into(), message: message.into() }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ServiceError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if let ServiceError::Internal(msg) = &self {
            tracing::error!(error = %msg, "scoring failed");
        }
        let field = match &self {
            ServiceError::BadRequest { field, .. } => Some(field.clone()),
            _ => None,
        };
        (self.status(), Json(ErrorBody { error: self.to_string(), field })).into_response()
    }
}

/// Decodes a request body, naming the first offending field on failure.
pub fn parse_request(body: &[u8]) -> Result<ScoreRequest, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." || path == "?" { "body".to_owned() } else { path };
        ServiceError::bad(field, e.into_inner().to_string())
    })
}

fn parse_status(parse: &Result<PatternKind, crate::parser::MalformedReport>) -> ParseStatus {
    match parse {
        Ok(pattern) => ParseStatus::Structured { pattern: *pattern },
        Err(m) => ParseStatus::Malformed { violation: m.first_violation, byte_offset: m.byte_offset },
    }
}

/// Scores a request exactly as the HTTP endpoint does.
pub fn score_request(
    base: &RewardEngine,
    max_batch: usize,
    req: &ScoreRequest,
) -> Result<ScoreResponse, ServiceError> {
    if req.items.len() > max_batch {
        return Err(ServiceError::TooLarge { count: req.items.len(), limit: max_batch });
    }
    if req.items.is_empty() {
        return Err(ServiceError::bad("items", "must not be empty"));
    }
    let o = req.config.unwrap_or_default();
    let grid = o.grid.unwrap_or(base.grid);
    let mode = o.mode.unwrap_or(base.mode);
    let gating = o.gating.unwrap_or(base.gating);

    let mut seen = HashSet::with_capacity(req.items.len());
    let mut results = Vec::with_capacity(req.items.len());
    for (i, item) in req.items.iter().enumerate() {
        if !seen.insert(item.id.as_str()) {
            return Err(ServiceError::bad(format!("items[{i}].id"), format!("duplicate id '{}'", item.id)));
        }
        let gt = resolve_ground_truth(&item.ground_truth, grid, &base.taxonomy)
            .map_err(|e| ServiceError::bad(format!("items[{i}].ground_truth"), e.to_string()))?;
        let scored = score_rollout(&item.raw_output, &gt, grid, &base.taxonomy, mode, gating)
            .map_err(|e| ServiceError::Internal(format!("item '{}': {e}", item.id)))?;
        results.push(ScoreResult {
            id: item.id.clone(),
            breakdown: scored.breakdown,
            parse: parse_status(&scored.parse),
        });
    }
    Ok(ScoreResponse {
        engine_version: ENGINE_VERSION.to_owned(),
        config: ConfigEcho { grid: grid.k(), mode, gating },
        results,
    })
}

struct AppState {
    config: ServiceConfig,
    digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub config_digest: String,
    pub config: ConfigEcho,
    pub max_batch: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let e = &state.config.engine;
    Json(Health {
        status: "ok".into(),
        version: ENGINE_VERSION.into(),
        config_digest: state.digest.clone(),
        config: ConfigEcho { grid: e.grid.k(), mode: e.mode, gating: e.gating },
        max_batch: state.config.max_batch,
    })
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ScoreResponse>, ServiceError> {
    let req = parse_request(&body)?;
    let worker = Arc::clone(&state);
    tokio::task::spawn_blocking(move || score_request(&worker.config.engine, worker.config.max_batch, &req))
        .await
        .map_err(|e| ServiceError::Internal(format!("scoring task failed: {e}")))?
        .map(Json)
}

pub fn router(config: ServiceConfig) -> Router {
    let limit = config.max_body_bytes;
    let digest = config.digest();
    let state = Arc::new(AppState { config, digest });
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/score", post(score))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(bind: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, digest = %config.digest(), "listening");
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ScoreFileSummary {
    pub lines: usize,
    pub malformed: usize,
    /// Component-wise sums over all lines.
    pub sum: RewardBreakdown,
    pub mean_total: f64,
}

/// Turns one input line into a score item. Lines are either score items
/// (`id`, `raw_output`, `ground_truth`) or dataset samples, whose `target`
/// is scored under the id `line-<n>`.
fn line_item(line_no: usize, line: &str) -> Result<ScoreItem, ScoreFileError> {
    let err = |message: String| ScoreFileError::Line { line: line_no, message };
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    if value.get("raw_output").is_some() {
        serde_json::from_value(value).map_err(|e| err(e.to_string()))
    } else if value.get("target").is_some() {
        let sample: DatasetSample = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        Ok(ScoreItem {
            id: format!("line-{line_no}"),
            raw_output: sample.target,
            ground_truth: sample.ground_truth,
        })
    } else {
        Err(err("expected a score item with raw_output or a dataset sample with target".into()))
    }
}

/// Scores every line of `input` and writes one result line per input line to
/// `output`.
pub fn score_file(input: &Path, output: &Path, engine: &RewardEngine) -> Result<ScoreFileSummary, ScoreFileError> {
    let read_err = |source| ScoreFileError::Read { path: input.display().to_string(), source };
    let file = std::fs::File::open(input).map_err(read_err)?;
    let mut results = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(read_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ScoreFileError::Line { line: line_no, message };
        let item = line_item(line_no, &line)?;
        if !seen.insert(item.id.clone()) {
            return Err(err(format!("duplicate id '{}'", item.id)));
        }
        let gt = engine.resolve(&item.ground_truth).map_err(|e| err(format!("ground_truth: {e}")))?;
        let scored = engine.score_detailed(&item.raw_output, &gt).map_err(|e| err(e.to_string()))?;
        results.push(ScoreResult { id: item.id, breakdown: scored.breakdown, parse: parse_status(&scored.parse) });
    }

    let write_err = |source| ScoreFileError::Write { path: output.display().to_string(), source };
    let mut out = BufWriter::new(std::fs::File::create(output).map_err(write_err)?);
    let mut summary = ScoreFileSummary::default();
    for r in &results {
        serde_json::to_writer(&mut out, r).map_err(|e| write_err(e.into()))?;
        out.write_all(b"\n").map_err(write_err)?;
        summary.lines += 1;
        summary.malformed += matches!(r.parse, ParseStatus::Malformed { .. }) as usize;
        let b = &r.breakdown;
        summary.sum.r_con += b.r_con;
        summary.sum.r_acc += b.r_acc;
        summary.sum.r_loc += b.r_loc;
        summary.sum.r_type += b.r_type;
        summary.sum.total += b.total;
    }
    out.flush().map_err(write_err)?;
    if summary.lines > 0 {
        summary.mean_total = summary.sum.total / summary.lines as f64;
    }
    Ok(summary)
}
