use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use chartext_core::config::Config;
use chartext_core::table::AnnotatedTable;
use chartext_core::testkit::Case;

fn app(data: &std::path::Path, case: &Case, max_document_bytes: usize) -> Router {
    let mut config = Config::default();
    config.service.data_dir = data.to_path_buf();
    config.service.max_document_bytes = max_document_bytes;
    config.backend.fixtures = Some(case.pack_dir());
    chartext_service::start(config).unwrap()
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut request = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            request = request.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = app.clone().oneshot(request.body(body).unwrap()).await.unwrap();
    let status = response.status();
    let content_type = response
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, content_type)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn upload(app: &Router, text: &str) -> String {
    let (status, body, _) = send(app, "POST", "/documents", Some(json!({ "text": text, "title": "t" }))).await;
    assert!(status == StatusCode::CREATED || status == StatusCode::OK, "{status}");
    json_of(&body)["id"].as_str().unwrap().to_string()
}

async fn wait(app: &Router, run: &str) -> Value {
    for _ in 0..600 {
        let (status, body, _) = send(app, "GET", &format!("/runs/{run}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let record = json_of(&body);
        if matches!(record["status"].as_str(), Some("done" | "failed")) {
            return record;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("run {run} never finished");
}

fn gdp() -> Case {
    Case::by_name("gdp").unwrap()
}

#[tokio::test]
async fn uploads_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &gdp(), 1 << 20);
    let (first, a, _) = send(&app, "POST", "/documents", Some(json!({ "text": "Output rose 3%." }))).await;
    let (second, b, _) = send(&app, "POST", "/documents", Some(json!({ "body": "Output rose 3%." }))).await;
    assert_eq!(first, StatusCode::CREATED);
    assert_eq!(second, StatusCode::OK);
    assert_eq!(json_of(&a)["id"], json_of(&b)["id"]);

    let covid = Case::by_name("covid").unwrap().document();
    let id = upload(&app, &covid).await;
    assert_eq!(id.len(), 64);
    assert_eq!(upload(&app, &covid).await, id);
}

#[tokio::test]
async fn bad_uploads_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &gdp(), 64);
    let (status, body, _) = send(&app, "POST", "/documents", Some(json!({ "text": "  \n" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json_of(&body)["error"].is_string());
    let big = "x".repeat(65);
    let (status, _, _) = send(&app, "POST", "/documents", Some(json!({ "text": big }))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let (status, _, _) = send(&app, "POST", "/documents", Some(json!({ "title": "no text" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn run_requests_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &gdp(), 1 << 20);
    let missing = "0".repeat(64);
    let (status, _, _) =
        send(&app, "POST", &format!("/documents/{missing}/runs"), Some(json!({ "statement_text": "x" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let id = upload(&app, "Prices fell 5% in Zürich.").await;
    let uri = format!("/documents/{id}/runs");
    for body in [
        json!({}),
        json!({ "statement_text": "x", "statement_span": { "offset": 0, "length": 1 } }),
        json!({ "statement_text": "   " }),
        json!({ "statement_span": { "offset": 20, "length": 40 } }),
        // Splits the two-byte "ü".
        json!({ "statement_span": { "offset": 0, "length": 20 } }),
    ] {
        let (status, _, _) = send(&app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }

    let (status, _, _) = send(&app, "GET", "/runs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = send(&app, "GET", "/runs/nope/charts/0.svg", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn missing_fixtures_fail_at_submission() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.service.data_dir = dir.path().to_path_buf();
    config.backend.fixtures = Some(dir.path().join("absent"));
    let app = chartext_service::start(config).unwrap();
    let id = upload(&app, "Output rose 3%.").await;
    let (status, body, _) = send(
        &app,
        "POST",
        &format!("/documents/{id}/runs"),
        Some(json!({ "statement_text": "Output rose 3%." })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(json_of(&body)["error"].as_str().unwrap().contains("backend"));
}

#[tokio::test]
async fn span_run_produces_charts_and_tables() {
    let case = gdp();
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &case, 1 << 20);
    let id = upload(&app, &case.document()).await;
    let (offset, length) = case.span();
    let (status, body, _) = send(
        &app,
        "POST",
        &format!("/documents/{id}/runs"),
        Some(json!({
            "statement_span": { "offset": offset, "length": length },
            "options": { "granularity": "both" }
        })),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let run = json_of(&body)["run_id"].as_str().unwrap().to_string();

    let record = wait(&app, &run).await;
    assert_eq!(record["status"], "done", "{record:#}");
    assert_eq!(record["document_id"], id.as_str());
    let outputs = &record["outputs"];
    let tables = outputs["tables"].as_array().unwrap();
    assert!(!tables.is_empty());
    assert!(!outputs["trace"]["entries"].as_array().unwrap().is_empty());
    let levels: std::collections::BTreeSet<&str> = tables.iter().map(|t| t["granularity"].as_str().unwrap()).collect();
    assert_eq!(levels.len(), 2);

    let mut charts = 0;
    for (k, table) in tables.iter().enumerate() {
        assert_eq!(table["k"], k);
        let (status, bytes, content_type) = send(&app, "GET", table["url"].as_str().unwrap(), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(content_type.as_deref(), Some("application/json"));
        let parsed = AnnotatedTable::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(parsed.to_json().as_bytes(), bytes.as_slice());

        if let Some(url) = outputs["svgs"][k].as_str() {
            charts += 1;
            assert!(outputs["chart_specs"][k].is_object());
            let (status, svg, content_type) = send(&app, "GET", url, None).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(content_type.as_deref(), Some("image/svg+xml"));
            let svg = String::from_utf8(svg).unwrap();
            assert!(svg.starts_with("<svg") && svg.contains("data-encoding="));
            let (_, again, _) = send(&app, "GET", url, None).await;
            assert_eq!(svg.as_bytes(), again.as_slice());
        } else {
            assert!(outputs["chart_specs"][k].is_null());
        }
    }
    assert!(charts > 0);
    let (status, _, _) = send(&app, "GET", &format!("/runs/{run}/charts/{}.svg", tables.len()), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unrecorded_statements_fail_with_a_trace() {
    let case = gdp();
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &case, 1 << 20);
    let id = upload(&app, &case.document()).await;
    let (_, body, _) = send(
        &app,
        "POST",
        &format!("/documents/{id}/runs"),
        Some(json!({ "statement_text": "A statement nobody recorded." })),
    )
    .await;
    let run = json_of(&body)["run_id"].as_str().unwrap().to_string();
    let record = wait(&app, &run).await;
    assert_eq!(record["status"], "failed");
    let failure = &record["failure"];
    assert_eq!(failure["error"]["kind"]["kind"], "backend_failure");
    assert!(!failure["trace"]["entries"].as_array().unwrap().is_empty());
    let (status, _, _) = send(&app, "GET", &format!("/runs/{run}/tables/0.json"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn pending_runs_have_no_artifacts() {
    let case = gdp();
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.service.data_dir = dir.path().to_path_buf();
    config.backend.fixtures = Some(case.pack_dir());
    let app = chartext_service::start(config).unwrap();
    let id = upload(&app, &case.document()).await;
    let (_, body, _) = send(
        &app,
        "POST",
        &format!("/documents/{id}/runs"),
        Some(json!({ "statement_text": case.statement() })),
    )
    .await;
    let run = json_of(&body)["run_id"].as_str().unwrap().to_string();
    let (status, body, _) = send(&app, "GET", &format!("/runs/{run}/charts/0.svg"), None).await;
    // The worker may already have finished; anything else must be a conflict.
    let record = json_of(&send(&app, "GET", &format!("/runs/{run}"), None).await.1);
    if status != StatusCode::OK {
        assert_eq!(status, StatusCode::CONFLICT, "{}", String::from_utf8_lossy(&body));
    } else {
        assert_eq!(record["status"], "done");
    }
    wait(&app, &run).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_runs_are_isolated() {
    let case = gdp();
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), &case, 1 << 20);
    let id = upload(&app, &case.document()).await;
    let mut runs = Vec::new();
    for _ in 0..6 {
        let (status, body, _) = send(
            &app,
            "POST",
            &format!("/documents/{id}/runs"),
            Some(json!({ "statement_text": case.statement(), "options": { "backend": "mock" } })),
        )
        .await;
        assert_eq!(status, StatusCode::ACCEPTED);
        runs.push(json_of(&body)["run_id"].as_str().unwrap().to_string());
    }
    let mut reference: Option<Vec<Vec<u8>>> = None;
    for run in &runs {
        let record = wait(&app, run).await;
        assert_eq!(record["status"], "done");
        let mut artifacts = Vec::new();
        for table in record["outputs"]["tables"].as_array().unwrap() {
            assert!(table["url"].as_str().unwrap().starts_with(&format!("/runs/{run}/")));
            artifacts.push(send(&app, "GET", table["url"].as_str().unwrap(), None).await.1);
        }
        match &reference {
            None => reference = Some(artifacts),
            Some(r) => assert_eq!(r, &artifacts),
        }
    }
}

#[tokio::test]
async fn interrupted_runs_resume_after_restart() {
    let case = gdp();
    let dir = tempfile::tempdir().unwrap();
    let store = chartext_service::store::Store::open(dir.path()).unwrap();
    let (document, _) = store.put_document("gdp", &case.document()).unwrap();
    let now = chrono::Utc::now();
    let run = chartext_service::store::RunRecord {
        id: "0123abcd-0000-4000-8000-000000000000".into(),
        document_id: document.id,
        statement: chartext_service::store::StatementRef::StatementText(case.statement()),
        options: Default::default(),
        status: chartext_service::store::RunStatus::Running,
        created_at: now,
        updated_at: now,
        outputs: None,
        failure: None,
    };
    store.put_run(&run).unwrap();
    drop(store);

    let app = app(dir.path(), &case, 1 << 20);
    let record = wait(&app, &run.id).await;
    assert_eq!(record["status"], "done");
}
