use std::fs;
use std::path::PathBuf;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use dw_core::project::Project;
use dwctl::engine::Workspace;
use dwctl::server::{router, AppState};

const SOURCE: &str = include_str!("../../../fixtures/health/source.json");
const RUNS: [&str; 5] = [
    include_str!("../../../fixtures/health/run1.json"),
    include_str!("../../../fixtures/health/run2.json"),
    include_str!("../../../fixtures/health/run3.json"),
    include_str!("../../../fixtures/health/run4.json"),
    include_str!("../../../fixtures/health/run5.json"),
];

struct Fixture {
    _dir: tempfile::TempDir,
    path: PathBuf,
    state: AppState,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("source.json"), SOURCE).unwrap();
        let path = dir.path().join("assurance.dwproj");
        Project::create(&path, "source.json").unwrap();
        let state = AppState::new(Workspace::open(&path).unwrap());
        Fixture { _dir: dir, path, state }
    }

    fn app(&self) -> Router {
        router(self.state.clone())
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        send(self.app(), Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        send(self.app(), post_request(uri, body)).await
    }

    /// POST carrying the current version; panics unless it succeeds.
    async fn ok(&self, uri: &str, mut body: Value) -> Value {
        body["version"] = json!(self.state.snapshot().version);
        let (status, v) = self.post(uri, body).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {v}");
        v
    }

    async fn refresh(&self, run: usize) -> Value {
        let doc: Value = serde_json::from_str(RUNS[run - 1]).unwrap();
        let body = json!({ "date": format!("2024-01-0{run}"), "objects": doc["objects"] });
        self.ok("/runs/refresh", body).await
    }

    async fn warehouse(&self) {
        for class in ["Actes", "Praticiens", "Beneficiaires", "Cabinets", "Pharmacies"] {
            self.ok("/warehouse/project", json!({ "class": class })).await;
        }
    }
}

fn post_request(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn class_names(schema: &Value) -> Vec<String> {
    schema["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn source_schema_is_served_as_a_schema_document() {
    let f = Fixture::new();
    let (status, v) = f.get("/schema/source").await;
    assert_eq!(status, StatusCode::OK);
    let names = class_names(&v);
    for c in ["Personnes", "Praticiens", "Actes", "Cabinets", "Pharmacies"] {
        assert!(names.contains(&c.to_string()), "{c}");
    }
    assert!(v["links"].as_array().unwrap().iter().any(|l| l["name"] == "Prescrit_par"));
}

#[tokio::test]
async fn projection_returns_the_resolved_warehouse_with_closure() {
    let f = Fixture::new();
    let v = f.ok("/warehouse/project", json!({ "class": "Praticiens" })).await;
    assert_eq!(v["version"], 1);
    assert_eq!(v["outcome"]["added"], json!(["Praticiens", "Personnes"]));
    let (_, w) = f.get("/warehouse").await;
    assert_eq!(w["version"], 1);
    let names = class_names(&w["schema"]);
    assert!(names.contains(&"Personnes".to_string()));
    assert!(w["schema"]["links"]
        .as_array()
        .unwrap()
        .iter()
        .any(|l| l["name"] == "Praticiens_isa_Personnes"));
}

#[tokio::test]
async fn dependencies_from_actes_carry_witness_chains() {
    let f = Fixture::new();
    f.warehouse().await;
    let (status, v) = f.get("/marts/Assurance/dependencies?from=Actes").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let deps = v["dependencies"].as_array().unwrap();
    let find = |c: &str| deps.iter().find(|d| d["class"] == c).unwrap_or_else(|| panic!("{c} in {v}"));
    let p = find("Praticiens");
    assert_eq!(p["witness"], "association-card-1");
    assert_eq!(p["links"], json!(["Prescrit_par"]));
    let c = find("Cabinets");
    assert_eq!(c["witness"], "transitive-chain");
    assert_eq!(c["links"], json!(["Prescrit_par", "Exerce"]));
    assert!(deps.iter().all(|d| d["class"] != "Actes"));
}

#[tokio::test]
async fn overlapping_environment_is_a_bad_request() {
    let f = Fixture::new();
    f.warehouse().await;
    f.ok(
        "/warehouse/environments",
        json!({ "name": "Soins", "classes": ["Actes", "Beneficiaires"], "links": ["Concerne"] }),
    )
    .await;
    let version = f.state.snapshot().version;
    let (status, v) = f
        .post(
            "/warehouse/environments",
            json!({ "version": version, "name": "Autre", "classes": ["Beneficiaires"] }),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "disjointness-violation");
    assert!(v["message"].as_str().unwrap().contains("disjointness violation"));
    assert_eq!(f.state.snapshot().version, version);
}

#[tokio::test]
async fn environment_link_leaving_the_class_set_is_rejected() {
    let f = Fixture::new();
    f.warehouse().await;
    let (status, v) = f
        .post(
            "/warehouse/environments",
            json!({ "name": "Soins", "classes": ["Actes"], "links": ["Concerne"] }),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "endpoint-violation");
}

#[tokio::test]
async fn stale_version_conflicts() {
    let f = Fixture::new();
    f.ok("/warehouse/project", json!({ "class": "Actes" })).await;
    let (status, v) = f
        .post("/warehouse/project", json!({ "version": 0, "class": "Cabinets" }))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["kind"], "stale-version");
}

#[tokio::test]
async fn busy_writer_conflicts_and_reads_proceed() {
    let f = Fixture::new();
    let guard = f.state.writer.lock().await;
    let (status, v) = f.post("/warehouse/project", json!({ "class": "Actes" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["kind"], "writer-busy");
    let (status, _) = f.get("/warehouse").await;
    assert_eq!(status, StatusCode::OK);
    drop(guard);
    f.ok("/warehouse/project", json!({ "class": "Actes" })).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn simultaneous_mutations_one_wins() {
    let f = Fixture::new();
    let a = send(f.app(), post_request("/warehouse/project", json!({ "version": 0, "class": "Actes" })));
    let b = send(f.app(), post_request("/warehouse/project", json!({ "version": 0, "class": "Cabinets" })));
    let ((sa, _), (sb, _)) = tokio::join!(a, b);
    let mut statuses = [sa, sb];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    assert_eq!(f.state.snapshot().version, 1);
}

#[tokio::test]
async fn malformed_bodies_and_unknown_marts() {
    let f = Fixture::new();
    let req = Request::post("/warehouse/project").body(Body::from("{")).unwrap();
    let (status, v) = send(f.app(), req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "parse-error");
    let (status, v) = f.get("/marts/Nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["kind"], "unknown-mart");
    let (status, v) = f.post("/warehouse/project", json!({ "class": "Nope" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "unknown-class");
}

#[tokio::test]
async fn mart_is_built_end_to_end_over_http() {
    let f = Fixture::new();
    f.warehouse().await;
    f.ok("/warehouse/historize", json!({ "class": "Cabinets" })).await;
    f.ok(
        "/warehouse/historize",
        json!({ "class": "Praticiens", "attribute": "D_specialite_prat" }),
    )
    .await;
    for run in 1..=5 {
        let v = f.refresh(run).await;
        assert_eq!(v["run"]["sequence"], run);
    }
    let (_, runs) = f.get("/runs").await;
    assert_eq!(runs["runs"].as_array().unwrap().len(), 5);
    assert_eq!(runs["representatives"]["recommended"][0], "Actes");

    let m = "/marts/Assurance";
    f.ok(&format!("{m}/fact"), json!({ "class": "Actes" })).await;
    let v = f
        .ok(&format!("{m}/fact"), json!({ "class": "Actes", "name": "Prestations" }))
        .await;
    assert_eq!(v["mart"]["fact"]["name"], "Prestations");
    f.ok(
        &format!("{m}/dimensions"),
        json!({ "source": { "from": "attribute", "class": "Actes", "attribute": "Date_exec" }, "name": "Execution" }),
    )
    .await;
    f.ok(
        &format!("{m}/dimensions"),
        json!({ "source": { "from": "class", "class": "Cabinets" } }),
    )
    .await;
    let v = f
        .ok(&format!("{m}/hierarchy"), json!({ "dimension": "Cabinets", "infer": true }))
        .await;
    let cab = v["mart"]["dimensions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["name"] == "Cabinets")
        .unwrap();
    assert!(cab["hierarchy"]["edges"]
        .as_array()
        .unwrap()
        .contains(&json!(["Ville", "Departement"])));
    let version = f.state.snapshot().version;
    let (status, v) = f
        .post(
            &format!("{m}/hierarchy"),
            json!({ "version": version, "dimension": "Cabinets", "add": ["Departement", "Ville"] }),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "hierarchy-cycle");
    f.ok(
        &format!("{m}/dimensions"),
        json!({ "parent": "Cabinets", "name": "Pharmacie", "class": "Pharmacies", "parameters": ["Num_officine"] }),
    )
    .await;
    f.ok(
        &format!("{m}/measures"),
        json!({ "name": "Montant_remb", "formula": r#""Actes.Quantité" * "Actes.Prix Unitaire" * "Actes.Taux Remb""# }),
    )
    .await;
    f.ok(
        &format!("{m}/selection"),
        json!({ "target": "Cabinets", "predicate": r#""Cabinets.Ville" = 'Toulouse'"# }),
    )
    .await;

    let (status, v) = f.get(m).await;
    assert_eq!(status, StatusCode::OK);
    let names = class_names(&v["schema"]);
    for c in ["Prestations", "Execution", "Cabinets", "Pharmacie"] {
        assert!(names.contains(&c.to_string()), "{c}");
    }
    let (_, deps) = f.get(&format!("{m}/dependencies")).await;
    assert_eq!(deps["from"], "Actes");

    // The service appended to the same operation log the CLI reads.
    let back = Project::open(&f.path).unwrap();
    assert_eq!(back.version(), f.state.snapshot().version);
    assert_eq!(back.resolved, f.state.snapshot().resolved);
}

async fn event_stream(f: &Fixture, body: Value) -> String {
    let req = Request::post("/runs/refresh")
        .header(header::ACCEPT, "text/event-stream")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = f.app().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    String::from_utf8(bytes.to_vec()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn refresh_streams_progress_events() {
    let f = Fixture::new();
    f.warehouse().await;
    let doc: Value = serde_json::from_str(RUNS[0]).unwrap();
    let text = event_stream(&f, json!({ "date": "2024-01-01", "objects": doc["objects"] })).await;
    assert!(text.contains("event: progress"), "{text}");
    let done = text.find("event: done").expect("done event");
    assert!(text.rfind("event: progress").unwrap() < done);
    assert_eq!(f.state.snapshot().runs.len(), 1);

    let text = event_stream(&f, json!({ "date": "2023-12-31", "objects": doc["objects"] })).await;
    assert!(text.contains("event: error"), "{text}");
    assert!(text.contains("out-of-order-run"));
    assert_eq!(f.state.snapshot().runs.len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn out_of_order_refresh_is_a_bad_request() {
    let f = Fixture::new();
    f.warehouse().await;
    f.refresh(2).await;
    let doc: Value = serde_json::from_str(RUNS[0]).unwrap();
    let (status, v) = f
        .post("/runs/refresh", json!({ "date": "2024-01-01", "objects": doc["objects"] }))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["kind"], "out-of-order-run");
}
