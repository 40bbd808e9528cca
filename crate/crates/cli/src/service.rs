//! Local HTTP service. Every response is a JSON object carrying
//! `schema_version`; errors add `{"error": {"kind", "message"}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{ConnectInfo, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ruva_core::extract::{Modality, SourceRecord};
use ruva_core::model::{Label, Timestamp};
use ruva_core::portable::PORTABLE_FORMAT;

use crate::app::{parse_node_id, App, AppError, AppResult, QueryRequest};

pub const SCHEMA_VERSION: u32 = 1;

type Shared = Arc<App>;

fn envelope(v: impl Serialize) -> Value {
    let mut v = serde_json::to_value(v).unwrap_or_else(|e| json!({ "serialization_error": e.to_string() }));
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("schema_version".into(), json!(SCHEMA_VERSION));
            v
        }
        None => json!({ "schema_version": SCHEMA_VERSION, "data": v }),
    }
}

fn error_body(status: StatusCode, kind: &str, message: String) -> Response {
    let body = json!({ "schema_version": SCHEMA_VERSION, "error": { "kind": kind, "message": message } });
    (status, Json(body)).into_response()
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            AppError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            AppError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            AppError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            AppError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        error_body(status, kind, self.to_string())
    }
}

/// Runs store work off the async executor; the remote model clients block.
async fn blocking<T, F>(app: Shared, f: F) -> Result<Json<Value>, AppError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&App) -> AppResult<T> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| AppError::Internal(format!("worker failed: {e}")))??;
    Ok(Json(envelope(out)))
}

async fn loopback_only(
    State(app): State<Shared>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    req: Request,
    next: Next,
) -> Response {
    if !peer.ip().is_loopback() && !app.config.unsafe_bind {
        return error_body(StatusCode::FORBIDDEN, "forbidden", format!("{} is not a loopback peer", peer.ip()));
    }
    next.run(req).await
}

async fn not_found() -> Response {
    error_body(StatusCode::NOT_FOUND, "not_found", "no such endpoint".into())
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/stats", get(stats))
        .route("/graph", get(graph))
        .route("/node/{id}", get(node).delete(forget))
        .route("/ingest", post(ingest))
        .route("/query", post(query))
        .route("/communities", get(communities))
        .route("/export", post(export))
        .route("/import", post(import))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(app.clone(), loopback_only))
        .with_state(app)
}

async fn stats(State(app): State<Shared>) -> Result<Json<Value>, AppError> {
    blocking(app, |a| Ok(a.stats())).await
}

#[derive(Debug, Deserialize)]
struct GraphParams {
    label: Option<String>,
}

async fn graph(State(app): State<Shared>, params: Result<Query<GraphParams>, QueryRejection>) -> Result<Json<Value>, AppError> {
    let Query(p) = params.map_err(|e| AppError::BadRequest(e.body_text()))?;
    let labels = match p.label.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
        None => None,
        Some(list) => Some(
            list.split(',')
                .map(|l| l.trim().parse::<Label>().map_err(|e| AppError::BadRequest(e.to_string())))
                .collect::<AppResult<BTreeSet<Label>>>()?,
        ),
    };
    blocking(app, move |a| Ok(a.graph(labels.as_ref()))).await
}

async fn node(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, AppError> {
    let id = parse_node_id(&id)?;
    blocking(app, move |a| a.inspect(id)).await
}

async fn forget(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, AppError> {
    let id = parse_node_id(&id)?;
    blocking(app, move |a| a.forget(id)).await
}

#[derive(Debug, Deserialize)]
struct RecordBody {
    modality: Modality,
    text: String,
    #[serde(default)]
    start: Option<Timestamp>,
    #[serde(default)]
    end: Option<Timestamp>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    #[serde(default)]
    origin: Option<String>,
}

/// JSON bodies carry one record; multipart bodies carry files (and their
/// caption / meta sidecars) as the directory loader would read them.
async fn ingest(State(app): State<Shared>, req: Request) -> Result<Json<Value>, AppError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if is_multipart {
        let mut form = Multipart::from_request(req, &()).await.map_err(|e| AppError::BadRequest(e.to_string()))?;
        let dir = tempfile::tempdir()?;
        let mut files = 0;
        while let Some(field) = form.next_field().await.map_err(|e| AppError::BadRequest(e.to_string()))? {
            let Some(name) = field.file_name().map(str::to_string) else {
                continue;
            };
            let name = std::path::Path::new(&name)
                .file_name()
                .and_then(|n| n.to_str())
                .filter(|n| !n.starts_with('.'))
                .ok_or_else(|| AppError::BadRequest(format!("bad file name {name:?}")))?
                .to_string();
            let bytes = field.bytes().await.map_err(|e| AppError::BadRequest(e.to_string()))?;
            std::fs::write(dir.path().join(name), bytes)?;
            files += 1;
        }
        if files == 0 {
            return Err(AppError::BadRequest("multipart body has no files".into()));
        }
        return blocking(app, move |a| {
            let out = a.ingest_dir(dir.path());
            drop(dir);
            out
        })
        .await;
    }
    let Json(body) = Json::<RecordBody>::from_request(req, &())
        .await
        .map_err(|e| AppError::BadRequest(e.body_text()))?;
    let record = SourceRecord::new(body.modality, body.text, body.start, body.end, body.metadata)
        .map_err(|e| AppError::BadRequest(e.to_string()))?;
    blocking(app, move |a| {
        let report = a.ingest_record(&record, body.origin)?;
        Ok(json!({ "reports": [report], "failures": [] }))
    })
    .await
}

async fn query(State(app): State<Shared>, body: Result<Json<QueryRequest>, JsonRejection>) -> Result<Json<Value>, AppError> {
    let Json(req) = body.map_err(|e| AppError::BadRequest(e.body_text()))?;
    blocking(app, move |a| a.query(&req)).await
}

#[derive(Debug, Deserialize)]
struct LevelParams {
    level: Option<usize>,
}

async fn communities(
    State(app): State<Shared>,
    params: Result<Query<LevelParams>, QueryRejection>,
) -> Result<Json<Value>, AppError> {
    let Query(p) = params.map_err(|e| AppError::BadRequest(e.body_text()))?;
    blocking(app, move |a| a.communities(p.level)).await
}

async fn export(State(app): State<Shared>) -> Result<Json<Value>, AppError> {
    blocking(app, |a| {
        let mut buf = Vec::new();
        a.export(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| AppError::Internal(e.to_string()))?;
        Ok(json!({ "format": PORTABLE_FORMAT, "lines": text.lines().count(), "ndjson": text }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ImportBody {
    ndjson: String,
}

async fn import(State(app): State<Shared>, body: Result<Json<ImportBody>, JsonRejection>) -> Result<Json<Value>, AppError> {
    let Json(b) = body.map_err(|e| AppError::BadRequest(e.body_text()))?;
    blocking(app, move |a| a.import(b.ndjson.as_bytes())).await
}

/// Binds and serves until Ctrl-C.
pub async fn serve(app: App) -> anyhow::Result<()> {
    app.config.check_bind()?;
    let addr = app.config.bind_address;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, store = %app.config.store_path.display(), "serving");
    let service = router(Arc::new(app)).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, service)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
