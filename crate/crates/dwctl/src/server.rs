//! HTTP/JSON service.
//!
//! A single writer (the workspace behind a mutex) and lock-free readers:
//! every committed mutation publishes an immutable [`Snapshot`] that read
//! endpoints clone out of an `RwLock` without waiting for the writer.

use std::convert::Infallible;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use tokio::sync::Mutex;
use tokio_stream::wrappers::UnboundedReceiverStream;

use dw_core::mart::{Detection, DimensionSource, MartDef, MartOp};
use dw_core::project::Resolved;
use dw_core::schema::AttributeType;
use dw_core::temporal::ExtractionRun;
use dw_core::warehouse::WarehouseOp;
use dw_core::{Error, Timestamp};

use crate::engine::{self, Workspace};

/// Read-only view of the workspace at one version.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub source: JsonValue,
    pub resolved: Resolved,
    pub runs: Vec<ExtractionRun>,
    pub detection: Detection,
}

impl Snapshot {
    fn of(ws: &Workspace) -> Self {
        Snapshot {
            version: ws.project.version(),
            source: engine::schema_json(&ws.project.source),
            resolved: ws.project.resolved.clone(),
            runs: ws.store.runs().to_vec(),
            detection: ws.detection(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
    pub writer: Arc<Mutex<Workspace>>,
}

impl AppState {
    pub fn new(ws: Workspace) -> Self {
        AppState {
            snapshot: Arc::new(RwLock::new(Arc::new(Snapshot::of(&ws)))),
            writer: Arc::new(Mutex::new(ws)),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, ws: &Workspace) {
        let next = Arc::new(Snapshot::of(ws));
        *self.snapshot.write().expect("snapshot lock") = next;
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/schema/source", get(source_schema))
        .route("/warehouse", get(warehouse))
        .route("/warehouse/project", post(project_class))
        .route("/warehouse/selection", post(warehouse_selection))
        .route("/warehouse/attributes", post(warehouse_attributes))
        .route("/warehouse/historize", post(historize))
        .route("/warehouse/environments", post(environments))
        .route("/marts/{name}", get(mart))
        .route("/marts/{name}/dependencies", get(dependencies))
        .route("/marts/{name}/fact", post(mart_fact))
        .route("/marts/{name}/dimensions", post(mart_dimensions))
        .route("/marts/{name}/hierarchy", post(mart_hierarchy))
        .route("/marts/{name}/measures", post(mart_measures))
        .route("/marts/{name}/selection", post(mart_selection))
        .route("/runs", get(runs))
        .route("/runs/refresh", post(refresh))
        .with_state(state)
}

pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError(StatusCode, Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            "stale-version" | "writer-busy" => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1.diagnostic())).into_response()
    }
}

type ApiResult = Result<Json<JsonValue>, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        ApiError::from(Error::Parse {
            what: "request body".into(),
            message: e.to_string(),
        })
    })
}

/// Run `f` as the single writer, then publish the new snapshot. A second
/// writer arriving meanwhile is turned away rather than queued.
fn mutate<R>(state: &AppState, f: impl FnOnce(&mut Workspace) -> dw_core::Result<R>) -> Result<R, ApiError> {
    let mut ws = state.writer.try_lock().map_err(|_| Error::WriterBusy)?;
    let r = f(&mut ws)?;
    state.publish(&ws);
    Ok(r)
}

fn apply_warehouse(state: &AppState, version: Option<u64>, op: WarehouseOp) -> ApiResult {
    mutate(state, |ws| {
        let outcome = ws.project.apply_warehouse(op, version)?;
        Ok(Json(json!({
            "version": ws.project.version(),
            "outcome": outcome,
            "warehouse": ws.project.resolved.warehouse,
        })))
    })
}

fn apply_mart(state: &AppState, name: &str, version: Option<u64>, op: MartOp) -> ApiResult {
    mutate(state, |ws| mart_op(ws, name, version, op))
}

fn mart_op(ws: &mut Workspace, name: &str, version: Option<u64>, op: MartOp) -> dw_core::Result<Json<JsonValue>> {
    let outcome = ws.project.apply_mart(name, op, version)?;
    Ok(Json(json!({
        "version": ws.project.version(),
        "outcome": outcome,
        "mart": ws.project.mart(name)?,
    })))
}

async fn source_schema(State(state): State<AppState>) -> Json<JsonValue> {
    Json(state.snapshot().source.clone())
}

async fn warehouse(State(state): State<AppState>) -> Json<JsonValue> {
    let snap = state.snapshot();
    let w = &snap.resolved.warehouse;
    Json(json!({
        "version": snap.version,
        "warehouse": w,
        "schema": engine::schema_json(&w.schema()),
    }))
}

fn find_mart<'a>(snap: &'a Snapshot, name: &str) -> Result<&'a MartDef, ApiError> {
    snap.resolved
        .marts
        .get(name)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, Error::UnknownMart(name.to_string())))
}

async fn mart(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult {
    let snap = state.snapshot();
    let m = find_mart(&snap, &name)?;
    Ok(Json(json!({
        "version": snap.version,
        "mart": m,
        "schema": engine::schema_json(&m.schema()),
    })))
}

#[derive(Deserialize)]
struct DependencyQuery {
    from: Option<String>,
}

async fn dependencies(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<DependencyQuery>,
) -> ApiResult {
    let snap = state.snapshot();
    let from = match q.from {
        Some(c) => c,
        None => find_mart(&snap, &name)?
            .fact
            .as_ref()
            .map(|f| f.class.clone())
            .ok_or(Error::NoFact)?,
    };
    let candidates = engine::dependencies(&snap.resolved.warehouse.schema(), &from)?;
    Ok(Json(json!({ "from": from, "dependencies": candidates })))
}

async fn runs(State(state): State<AppState>) -> Json<JsonValue> {
    let snap = state.snapshot();
    Json(json!({
        "version": snap.version,
        "runs": snap.runs,
        "representatives": snap.detection,
    }))
}

#[derive(Deserialize)]
struct ProjectBody {
    version: Option<u64>,
    class: String,
}

async fn project_class(State(state): State<AppState>, b: Bytes) -> ApiResult {
    let b: ProjectBody = body(&b)?;
    apply_warehouse(&state, b.version, WarehouseOp::ProjectClass { class: b.class })
}

#[derive(Deserialize)]
struct SelectionBody {
    version: Option<u64>,
    class: String,
    predicate: String,
}

async fn warehouse_selection(State(state): State<AppState>, b: Bytes) -> ApiResult {
    let b: SelectionBody = body(&b)?;
    apply_warehouse(
        &state,
        b.version,
        WarehouseOp::SetSelection {
            class: b.class,
            predicate: b.predicate,
        },
    )
}

/// A specific attribute carries a type, a calculated one a formula.
#[derive(Deserialize)]
struct AttributeBody {
    version: Option<u64>,
    class: String,
    name: String,
    #[serde(rename = "type")]
    ty: Option<AttributeType>,
    default: Option<JsonValue>,
    formula: Option<String>,
}

async fn warehouse_attributes(State(state): State<AppState>, b: Bytes) -> ApiResult {
    let b: AttributeBody = body(&b)?;
    let op = match (b.formula, b.ty) {
        (Some(formula), None) => WarehouseOp::AddCalculatedAttribute {
            class: b.class,
            name: b.name,
            formula,
        },
        (None, Some(ty)) => WarehouseOp::AddSpecificAttribute {
            class: b.class,
            name: b.name,
            ty,
            default: b.default,
        },
        _ => {
            return Err(Error::Parse {
                what: "request body".into(),
                message: "exactly one of 'type' and 'formula' is required".into(),
            }
            .into())
        }
    };
    apply_warehouse(&state, b.version, op)
}

#[derive(Deserialize)]
struct HistorizeBody {
    version: Option<u64>,
    class: String,
    attribute: Option<String>,
}

async fn historize(State(state): State<AppState>, b: Bytes) -> ApiResult {
    let b: HistorizeBody = body(&b)?;
    let op = match b.attribute {
        Some(attribute) => WarehouseOp::MarkAttributeHistorized {
            class: b.class,
            attribute,
        },
        None => WarehouseOp::MarkClassHistorized { class: b.class },
    };
    apply_warehouse(&state, b.version, op)
}

#[derive(Deserialize)]
struct EnvironmentBody {
    version: Option<u64>,
    name: String,
    #[serde(default)]
    classes: Vec<String>,
    #[serde(default)]
    links: Vec<String>,
    #[serde(default)]
    delete: bool,
}

async fn environments(State(state): State<AppState>, b: Bytes) -> ApiResult {
    let b: EnvironmentBody = body(&b)?;
    let op = if b.delete {
        WarehouseOp::DeleteEnvironment { name: b.name }
    } else {
        WarehouseOp::CreateEnvironment {
            name: b.name,
            classes: b.classes,
            links: b.links,
        }
    };
    apply_warehouse(&state, b.version, op)
}

/// Without a name the class is only flagged as representative.
#[derive(Deserialize)]
struct FactBody {
    version: Option<u64>,
    class: String,
    name: Option<String>,
}

async fn mart_fact(State(state): State<AppState>, Path(mart): Path<String>, b: Bytes) -> ApiResult {
    let b: FactBody = body(&b)?;
    let op = match b.name {
        Some(name) => MartOp::ProjectFact { class: b.class, name },
        None => MartOp::FlagRepresentative { class: b.class },
    };
    apply_mart(&state, &mart, b.version, op)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DimensionRequest {
    Specialize {
        parent: String,
        name: String,
        class: Option<String>,
        #[serde(default)]
        parameters: Vec<String>,
        membership: Option<String>,
    },
    Project {
        source: DimensionSource,
        name: Option<String>,
    },
}

#[derive(Deserialize)]
struct DimensionBody {
    version: Option<u64>,
    #[serde(flatten)]
    request: DimensionRequest,
}

async fn mart_dimensions(State(state): State<AppState>, Path(mart): Path<String>, b: Bytes) -> ApiResult {
    let b: DimensionBody = body(&b)?;
    let op = match b.request {
        DimensionRequest::Specialize {
            parent,
            name,
            class,
            parameters,
            membership,
        } => MartOp::SpecializeDimension {
            parent,
            name,
            class,
            parameters,
            membership,
        },
        DimensionRequest::Project { source, name } => MartOp::ProjectDimension { source, name },
    };
    apply_mart(&state, &mart, b.version, op)
}

/// Exactly one of `edges`, `add`, `remove` or `infer`.
#[derive(Deserialize)]
struct HierarchyBody {
    version: Option<u64>,
    dimension: String,
    edges: Option<Vec<(String, String)>>,
    add: Option<(String, String)>,
    remove: Option<(String, String)>,
    #[serde(default)]
    infer: bool,
}

async fn mart_hierarchy(State(state): State<AppState>, Path(mart): Path<String>, b: Bytes) -> ApiResult {
    let b: HierarchyBody = body(&b)?;
    let dimension = b.dimension;
    mutate(&state, |ws| {
        let op = match (b.edges, b.add, b.remove, b.infer) {
            (Some(edges), None, None, false) => MartOp::SetHierarchy { dimension, edges },
            (None, Some((from, to)), None, false) => MartOp::AddHierarchyEdge { dimension, from, to },
            (None, None, Some((from, to)), false) => MartOp::RemoveHierarchyEdge { dimension, from, to },
            (None, None, None, true) => {
                let edges = ws.infer_edges(&mart, &dimension)?;
                MartOp::SetHierarchy { dimension, edges }
            }
            _ => {
                return Err(Error::Parse {
                    what: "request body".into(),
                    message: "exactly one of 'edges', 'add', 'remove' and 'infer' is required".into(),
                })
            }
        };
        mart_op(ws, &mart, b.version, op)
    })
}

/// With a dimension the formula defines a parameter, otherwise a measure.
#[derive(Deserialize)]
struct MeasureBody {
    version: Option<u64>,
    name: String,
    formula: String,
    dimension: Option<String>,
}

async fn mart_measures(State(state): State<AppState>, Path(mart): Path<String>, b: Bytes) -> ApiResult {
    let b: MeasureBody = body(&b)?;
    let op = match b.dimension {
        Some(dimension) => MartOp::AddParameter {
            dimension,
            name: b.name,
            formula: b.formula,
        },
        None => MartOp::AddMeasure {
            name: b.name,
            formula: b.formula,
        },
    };
    apply_mart(&state, &mart, b.version, op)
}

#[derive(Deserialize)]
struct MartSelectionBody {
    version: Option<u64>,
    target: String,
    predicate: String,
}

async fn mart_selection(State(state): State<AppState>, Path(mart): Path<String>, b: Bytes) -> ApiResult {
    let b: MartSelectionBody = body(&b)?;
    apply_mart(
        &state,
        &mart,
        b.version,
        MartOp::SelectObjects {
            target: b.target,
            predicate: b.predicate,
        },
    )
}

#[derive(Deserialize)]
struct RefreshBody {
    version: Option<u64>,
    date: Timestamp,
    objects: JsonValue,
}

fn check_version(ws: &Workspace, expected: Option<u64>) -> dw_core::Result<()> {
    match expected {
        Some(v) if v != ws.project.version() => Err(Error::StaleVersion {
            expected: v,
            actual: ws.project.version(),
        }),
        _ => Ok(()),
    }
}

fn wants_events(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

/// Load a batch. With `Accept: text/event-stream` the response is an
/// event stream of `progress` events ending with `done` or `error`.
async fn refresh(State(state): State<AppState>, headers: HeaderMap, b: Bytes) -> Result<Response, ApiError> {
    let b: RefreshBody = body(&b)?;
    let document = engine::instance_document(b.objects);
    let mut ws = state.writer.clone().try_lock_owned().map_err(|_| Error::WriterBusy)?;
    check_version(&ws, b.version)?;

    if !wants_events(&headers) {
        let run = tokio::task::spawn_blocking(move || {
            let run = ws.refresh(&document, b.date, |_, _| {});
            if run.is_ok() {
                state.publish(&ws);
            }
            run
        })
        .await
        .expect("refresh task")?;
        return Ok(Json(json!({ "run": run })).into_response());
    }

    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<Event>();
    tokio::task::spawn_blocking(move || {
        let step = |total: usize| (total / 100).max(1);
        let result = ws.refresh(&document, b.date, |done, total| {
            if done % step(total) == 0 || done == total {
                let data = json!({ "done": done, "total": total }).to_string();
                let _ = tx.send(Event::default().event("progress").data(data));
            }
        });
        let event = match result {
            Ok(run) => {
                state.publish(&ws);
                Event::default().event("done").data(json!({ "run": run }).to_string())
            }
            Err(e) => Event::default()
                .event("error")
                .data(serde_json::to_string(&e.diagnostic()).expect("diagnostic serializes")),
        };
        let _ = tx.send(event);
    });
    let stream = UnboundedReceiverStream::new(rx).map(Ok::<_, Infallible>);
    Ok(Sse::new(stream).into_response())
}
