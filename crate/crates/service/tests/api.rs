use std::io::Write;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use carbon_tables::fixtures::{hollow_fiber, synthetic_corpus, HOLLOW_FIBER_DOCUMENT};
use carbon_tables::{ConsolidationOptions, MaterialBase, PipelineOutput};
use carbon_tables_service::{spawn_server, AppState, JobHooks, ServiceConfig};
use reqwest::multipart::{Form, Part};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

struct TestServer {
    base: String,
    http: Client,
    state: AppState,
    _dir: Option<TempDir>,
}

fn config(data_dir: &std::path::Path, max_jobs: usize) -> ServiceConfig {
    ServiceConfig {
        listen_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        data_dir: data_dir.to_path_buf(),
        max_concurrent_jobs: max_jobs,
        ..ServiceConfig::default()
    }
}

async fn serve(config: ServiceConfig, hooks: JobHooks, dir: Option<TempDir>) -> TestServer {
    let (addr, state) = spawn_server(config, hooks).await.unwrap();
    TestServer {
        base: format!("http://{addr}"),
        http: Client::new(),
        state,
        _dir: dir,
    }
}

async fn server(max_jobs: usize, hooks: JobHooks) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    serve(config(dir.path(), max_jobs), hooks, Some(dir)).await
}

fn slow_hook(delay: Duration) -> JobHooks {
    JobHooks {
        before_run: Some(Arc::new(move |_| std::thread::sleep(delay))),
    }
}

impl TestServer {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn upload(&self, name: &str, bytes: Vec<u8>, overwrite: bool) -> (StatusCode, Value) {
        let form = Form::new().part("file", Part::bytes(bytes).file_name(name.to_string()));
        let response = self
            .http
            .post(self.url(&format!("/documents?overwrite={overwrite}")))
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }

    async fn submit(&self, body: Value) -> (StatusCode, Value) {
        let response = self.http.post(self.url("/jobs")).json(&body).send().await.unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }

    async fn get_json(&self, path: &str) -> (StatusCode, Value) {
        let response = self.http.get(self.url(path)).send().await.unwrap();
        let status = response.status();
        (status, response.json().await.unwrap_or(Value::Null))
    }

    async fn get_bytes(&self, path: &str) -> (StatusCode, Vec<u8>) {
        let response = self.http.get(self.url(path)).send().await.unwrap();
        (response.status(), response.bytes().await.unwrap().to_vec())
    }

    async fn wait(&self, job_id: &str) -> Value {
        for _ in 0..2000 {
            let (_, job) = self.get_json(&format!("/jobs/{job_id}")).await;
            if job["state"] == "succeeded" || job["state"] == "failed" {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("job {job_id} did not finish");
    }

    async fn run_job(&self, ids: Value) -> String {
        let (status, job) = self.submit(json!({ "document_ids": ids })).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{job}");
        let id = job["job_id"].as_str().unwrap().to_string();
        assert_eq!(self.wait(&id).await["state"], "succeeded");
        id
    }
}

fn zip_of(members: &[(&str, &[u8])]) -> Vec<u8> {
    let mut writer = zip::ZipWriter::new(std::io::Cursor::new(Vec::new()));
    for (name, data) in members {
        writer
            .start_file(*name, zip::write::SimpleFileOptions::default())
            .unwrap();
        writer.write_all(data).unwrap();
    }
    writer.finish().unwrap().into_inner()
}

fn offline_graph(documents: &[carbon_tables::AnnotatedDocument]) -> Vec<u8> {
    PipelineOutput::build(documents, &MaterialBase::shipped(), ConsolidationOptions::default())
        .graph
        .to_json_bytes()
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_hollow_fiber_then_duplicate() {
    let s = server(2, JobHooks::default()).await;
    let (status, report) = s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["accepted"], json!(["hollow-fiber"]));
    assert_eq!(report["rejected"], json!([]));

    let (status, body) = s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "DuplicateDocId");
    let (status, _) = s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), true).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s.get_json("/documents").await.1, json!(["hollow-fiber"]));
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_errors() {
    let s = server(2, JobHooks::default()).await;
    let (status, body) = s.upload("broken.json", b"{\"tables\": [".to_vec(), false).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "MalformedJson");

    let (status, body) = s.upload("empty.zip", zip_of(&[]), false).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "EmptyArchive");

    let (status, body) = s.upload("article.pdf", b"%PDF-1.7".to_vec(), false).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "UnsupportedFormat");

    let response = s
        .http
        .post(s.url("/documents"))
        .header("content-type", "multipart/form-data; boundary=x")
        .body("garbage")
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn oversized_upload_is_413() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 1);
    cfg.max_upload_bytes = 1024;
    let s = serve(cfg, JobHooks::default(), Some(dir)).await;
    let (status, body) = s.upload("big.json", vec![b' '; 64 * 1024], false).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn zip_with_mixed_members_reports_each() {
    let s = server(2, JobHooks::default()).await;
    let archive = zip_of(&[
        ("a/hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.as_bytes()),
        ("b/corrupt.json", b"{not json"),
    ]);
    let (status, report) = s.upload("corpus.zip", archive, false).await;
    assert!(status.is_success(), "{status}");
    assert_eq!(status, StatusCode::MULTI_STATUS);
    assert_eq!(report["accepted"], json!(["hollow-fiber"]));
    assert_eq!(report["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(report["rejected"][0]["filename"], "b/corrupt.json");

    // A second archive repeating the stored doc_id reports it, not 409.
    let again = zip_of(&[("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.as_bytes())]);
    let (status, report) = s.upload("again.zip", again, false).await;
    assert_eq!(status, StatusCode::MULTI_STATUS);
    assert_eq!(report["accepted"], json!([]));
}

#[tokio::test(flavor = "multi_thread")]
async fn job_submission_validation() {
    let s = server(2, JobHooks::default()).await;
    s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    let cases = [
        (json!({ "document_ids": [] }), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({ "document_ids": ["nope"] }), StatusCode::NOT_FOUND),
        (json!({ "document_ids": "some" }), StatusCode::UNPROCESSABLE_ENTITY),
        (
            json!({ "document_ids": "all", "options": { "process_known_materials": "yes" } }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "document_ids": "all", "options": { "fuzzy": true } }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (json!({}), StatusCode::UNPROCESSABLE_ENTITY),
    ];
    for (body, expected) in cases {
        assert_eq!(s.submit(body.clone()).await.0, expected, "{body}");
    }
    let response = s
        .http
        .post(s.url("/jobs"))
        .header("content-type", "application/json")
        .body("{")
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::BAD_REQUEST);
    assert!(s.state.jobs.list().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn hollow_fiber_job_end_to_end() {
    let s = server(2, slow_hook(Duration::from_millis(300))).await;
    s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    let (status, job) = s.submit(json!({ "document_ids": ["hollow-fiber"] })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["state"], "pending");
    let id = job["job_id"].as_str().unwrap().to_string();

    let (status, early) = s.get_json(&format!("/jobs/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(early["state"] == "pending" || early["state"] == "running");
    let (status, body) = s.get_json(&format!("/jobs/{id}/result")).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");

    let done = s.wait(&id).await;
    assert_eq!(done["state"], "succeeded");
    assert_eq!(done["result_ref"], format!("results/{id}"));
    assert!(done.get("error").is_none());
    assert!(done["finished_at"].as_str().unwrap() >= done["submitted_at"].as_str().unwrap());

    let response = s.http.get(s.url(&format!("/jobs/{id}/result"))).send().await.unwrap();
    assert_eq!(response.headers()["content-type"], "application/json");
    let first = response.bytes().await.unwrap().to_vec();
    let (_, second) = s.get_bytes(&format!("/jobs/{id}/result")).await;
    assert_eq!(sha(&first), sha(&second));
    assert_eq!(first, offline_graph(&[hollow_fiber()]));
    let graph: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(graph["measurements"].as_array().unwrap().len(), 4);

    let response = s.http.get(s.url(&format!("/jobs/{id}/features"))).send().await.unwrap();
    assert_eq!(response.headers()["content-type"], "text/csv");
    let csv = response.text().await.unwrap();
    assert_eq!(csv.lines().count(), 3);
    let (status, features) = s.get_json(&format!("/jobs/{id}/features?format=json")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(features["vectors"].as_array().unwrap().len(), 2);
    assert_eq!(
        s.get_json(&format!("/jobs/{id}/features?format=xml")).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_jobs_are_404() {
    let s = server(1, JobHooks::default()).await;
    for path in [
        "/jobs/not-a-uuid",
        "/jobs/7c9e6679-7425-40de-944b-e07fc1f90ae7",
        "/jobs/7c9e6679-7425-40de-944b-e07fc1f90ae7/result",
        "/jobs/7c9e6679-7425-40de-944b-e07fc1f90ae7/features",
    ] {
        let (status, body) = s.get_json(path).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(body["error"], "NotFound");
    }
}

fn rank(state: &str) -> u8 {
    match state {
        "pending" => 0,
        "running" => 1,
        "succeeded" | "failed" => 2,
        other => panic!("unknown state {other}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn ten_jobs_two_workers() {
    let s = server(2, slow_hook(Duration::from_millis(60))).await;
    s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    let mut ids = Vec::new();
    for _ in 0..10 {
        let (status, job) = s.submit(json!({ "document_ids": "all" })).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        ids.push(job["job_id"].as_str().unwrap().to_string());
    }
    let mut last: std::collections::HashMap<String, String> = Default::default();
    let mut max_running = 0;
    loop {
        let (_, jobs) = s.get_json("/jobs").await;
        let jobs = jobs.as_array().unwrap();
        let running = jobs.iter().filter(|j| j["state"] == "running").count();
        max_running = max_running.max(running);
        for job in jobs {
            let id = job["job_id"].as_str().unwrap().to_string();
            let state = job["state"].as_str().unwrap().to_string();
            if let Some(prev) = last.get(&id) {
                assert!(rank(prev) <= rank(&state), "{id}: {prev} -> {state}");
                if rank(prev) == 2 {
                    assert_eq!(prev, &state, "terminal states are absorbing");
                }
            }
            last.insert(id, state);
        }
        if jobs.iter().all(|j| j["state"] == "succeeded") && jobs.len() == 10 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert!(max_running <= 2, "observed {max_running} running");
    assert!(s.state.jobs.peak_running() <= 2);
    assert_eq!(s.state.jobs.peak_running(), 2, "pool should be saturated");
}

#[tokio::test(flavor = "multi_thread")]
async fn deleted_storage_fails_job() {
    let dir = tempfile::tempdir().unwrap();
    let documents = dir.path().join("documents");
    let armed = Arc::new(AtomicBool::new(true));
    let hooks = JobHooks {
        before_run: Some(Arc::new({
            let armed = armed.clone();
            move |_| {
                if armed.load(Ordering::SeqCst) {
                    for entry in std::fs::read_dir(&documents).unwrap() {
                        std::fs::remove_file(entry.unwrap().path()).unwrap();
                    }
                }
            }
        })),
    };
    let s = serve(config(dir.path(), 1), hooks, Some(dir)).await;
    s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    let (_, job) = s.submit(json!({ "document_ids": ["hollow-fiber"] })).await;
    let id = job["job_id"].as_str().unwrap();
    let done = s.wait(id).await;
    assert_eq!(done["state"], "failed");
    assert!(done["error"].as_str().unwrap().contains("missing"), "{done}");
    assert!(done.get("result_ref").is_none());
    assert_eq!(s.get_json(&format!("/jobs/{id}/result")).await.0, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn knowledge_queries() {
    let s = server(2, JobHooks::default()).await;
    let (status, empty) = s.get_json("/knowledge").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty, json!([]));

    s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
    s.run_job(json!("all")).await;
    // The same corpus twice must not double-count.
    s.run_job(json!(["hollow-fiber"])).await;

    let count = |v: &Value| v.as_array().unwrap().len();
    assert_eq!(count(&s.get_json("/knowledge").await.1), 4);
    assert_eq!(count(&s.get_json("/knowledge?category=Membrane").await.1), 4);
    assert_eq!(count(&s.get_json("/knowledge?category=Hydrate").await.1), 0);
    let (_, hits) = s.get_json("/knowledge?material=MMHFM&min_value=32").await;
    assert_eq!(count(&hits), 1);
    assert_eq!(hits[0]["value"], 35.7);
    assert_eq!(hits[0]["fom"], "co2_n2_selectivity");
    assert_eq!(
        count(&s.get_json("/knowledge?fom=co2_permeance_gpu&category=").await.1),
        2
    );

    let response = s.http.get(s.url("/knowledge?limit=1&offset=1")).send().await.unwrap();
    assert_eq!(response.headers()["x-total-count"], "4");
    let page: Value = response.json().await.unwrap();
    assert_eq!(count(&page), 1);
    assert_eq!(page[0]["value"], 0.5);

    let (status, body) = s.get_json("/knowledge?colour=blue").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "UnknownFilterField");
    assert_eq!(s.get_json("/knowledge?min_value=lots").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        s.get_json("/knowledge?category=Plasma").await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (job_id, graph) = {
        let s = serve(config(dir.path(), 2), JobHooks::default(), None).await;
        s.upload("hollow-fiber.json", HOLLOW_FIBER_DOCUMENT.into(), false).await;
        let id = s.run_job(json!("all")).await;
        let (_, graph) = s.get_bytes(&format!("/jobs/{id}/result")).await;
        (id, graph)
    };
    // A job journaled as pending but never run, as if the service died first.
    let pending = {
        let store = Arc::new(carbon_tables_service::DocumentStore::open(dir.path().join("documents")).unwrap());
        let (jobs, _) = carbon_tables_service::JobManager::open(dir.path(), store, 1, JobHooks::default()).unwrap();
        jobs.create(vec!["hollow-fiber".into()], Default::default())
            .unwrap()
            .job_id
    };

    let s = serve(config(dir.path(), 2), JobHooks::default(), Some(dir)).await;
    assert_eq!(s.get_json("/documents").await.1, json!(["hollow-fiber"]));
    assert_eq!(s.get_json(&format!("/jobs/{job_id}")).await.1["state"], "succeeded");
    assert_eq!(s.get_bytes(&format!("/jobs/{job_id}/result")).await.1, graph);
    assert_eq!(s.get_json("/knowledge").await.1.as_array().unwrap().len(), 4);
    let requeued = s.wait(&pending.to_string()).await;
    assert_eq!(requeued["state"], "succeeded");
    assert_eq!(s.get_bytes(&format!("/jobs/{pending}/result")).await.1, graph);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_jobs_match_serial_results() {
    let corpus = synthetic_corpus(12, 3);
    let (left, right) = corpus.split_at(6);
    let s = server(2, JobHooks::default()).await;
    for doc in &corpus {
        let (status, _) = s
            .upload(&format!("{}.json", doc.doc_id), doc.to_json().into_bytes(), false)
            .await;
        assert_eq!(status, StatusCode::OK);
    }
    let ids = |docs: &[carbon_tables::AnnotatedDocument]| json!(docs.iter().map(|d| &d.doc_id).collect::<Vec<_>>());
    let (_, a) = s.submit(json!({ "document_ids": ids(left) })).await;
    let (_, b) = s.submit(json!({ "document_ids": ids(right) })).await;
    for (job, docs) in [(a, left), (b, right)] {
        let id = job["job_id"].as_str().unwrap();
        assert_eq!(s.wait(id).await["state"], "succeeded");
        let (_, bytes) = s.get_bytes(&format!("/jobs/{id}/result")).await;
        assert_eq!(sha(&bytes), sha(&offline_graph(docs)));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn reload_swaps_material_base() {
    let dir = tempfile::tempdir().unwrap();
    let mb_path = dir.path().join("mb.json");
    std::fs::write(&mb_path, carbon_tables::catalog::SHIPPED_MATERIAL_BASE).unwrap();
    let mut cfg = config(&dir.path().join("data"), 1);
    cfg.mb_path = Some(mb_path.clone());
    let s = serve(cfg, JobHooks::default(), Some(dir)).await;
    let response = s.http.post(s.url("/admin/reload")).send().await.unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let summary: Value = response.json().await.unwrap();
    assert_eq!(summary["materials"], MaterialBase::shipped().materials().len());

    std::fs::write(&mb_path, "{").unwrap();
    let response = s.http.post(s.url("/admin/reload")).send().await.unwrap();
    assert_eq!(response.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(s.get_bytes("/health").await.0, StatusCode::OK);
}
