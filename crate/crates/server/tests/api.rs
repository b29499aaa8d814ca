use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use http_body_util::BodyExt;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;
use vinnpruner_core::fixtures::Golden;
use vinnpruner_server::{router, AppState, ServerConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Harness {
    app: Router,
    state: Arc<AppState>,
    sessions: tempfile::TempDir,
}

fn harness() -> Harness {
    let sessions = tempfile::tempdir().unwrap();
    let mut config = ServerConfig::new(fixtures().join("models"), fixtures().join("datasets"));
    config.sessions_dir = Some(sessions.path().to_path_buf());
    let state = Arc::new(AppState::new(config));
    Harness {
        app: router(Arc::clone(&state)),
        state,
        sessions,
    }
}

async fn raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, body).await;
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

async fn session(app: &Router, model: &str, dataset: &str) -> String {
    let (status, v) = post(app, "/api/sessions", json!({"model": model, "dataset": dataset})).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn step_count(app: &Router, id: &str) -> usize {
    get(app, &format!("/api/sessions/{id}/steps")).await.1["steps"].as_array().unwrap().len()
}

#[tokio::test]
async fn lists_fixture_archives() {
    let h = harness();
    let (status, models) = get(&h.app, "/api/models").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = models.as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["cnn-shapes", "mlp-blobs"]);
    assert!(models.as_array().unwrap().iter().all(|m| m["status"] == "ok"));
    let (_, datasets) = get(&h.app, "/api/datasets").await;
    assert_eq!(datasets.as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn empty_and_malformed_archive_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(ServerConfig::new(dir.path().join("m"), dir.path().join("d"))));
    let app = router(state);
    assert_eq!(get(&app, "/api/models").await, (StatusCode::OK, json!([])));
    assert_eq!(get(&app, "/api/datasets").await, (StatusCode::OK, json!([])));

    std::fs::create_dir_all(dir.path().join("m/broken")).unwrap();
    std::fs::write(dir.path().join("m/broken/model.json"), "{not json").unwrap();
    let (_, models) = get(&app, "/api/models").await;
    assert_eq!(models[0]["id"], "broken");
    assert_eq!(models[0]["status"], "invalid");
    assert!(models[0]["reason"].as_str().unwrap().len() > 3);
}

#[tokio::test]
async fn create_session_reports_baseline() {
    let h = harness();
    let (status, v) = post(&h.app, "/api/sessions", json!({"model": "mlp-blobs", "dataset": "blobs-test"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let golden = Golden::read(&fixtures()).unwrap();
    assert_eq!(v["baseline"]["report"]["accuracy"].as_f64().unwrap(), golden.mlp.baseline.accuracy);
    assert_eq!(v["current_step"], 0);
    assert_eq!(v["layers"].as_array().unwrap().len(), 5);
    let id = v["session_id"].as_str().unwrap();
    assert!(h.sessions.path().join(id).join("session.json").is_file());
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let h = harness();
    let (status, v) = post(&h.app, "/api/sessions", json!({"model": "nope", "dataset": "blobs-test"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
    assert_eq!(get(&h.app, "/api/sessions/missing/steps").await.0, StatusCode::NOT_FOUND);
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/metrics?step=9")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&h.app, &format!("/api/sessions/{id}/revert"), json!({"step_id": 5})).await.0, StatusCode::NOT_FOUND);
    let (status, _) = call(&h.app, Method::DELETE, &format!("/api/sessions/{id}/steps/3"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/layers/9/mask")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn path_like_archive_names_are_rejected() {
    let h = harness();
    let (status, v) = post(&h.app, "/api/sessions", json!({"model": "../models/mlp-blobs", "dataset": "blobs-test"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"][0]["field"], "model");
}

#[tokio::test]
async fn prune_ratio_zero_keeps_sparsity() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let (status, v) = post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "map", "global_ratio": 0.0}})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["step"]["report"]["sparsity"]["pruned"], 0);
    assert_eq!(v["current_step"], 1);
}

#[tokio::test]
async fn prune_half_matches_golden() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let (_, v) = post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "map", "global_ratio": 0.5}})).await;
    let golden = Golden::read(&fixtures()).unwrap();
    assert_eq!(v["step"]["report"]["accuracy"].as_f64().unwrap(), golden.mlp.map_step.accuracy);
    let pruned: Vec<u64> = v["step"]["report"]["sparsity"]["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["pruned"].as_u64().unwrap())
        .collect();
    assert_eq!(pruned, [256, 512, 64]);
}

#[tokio::test]
async fn invalid_settings_are_422_with_fields() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let uri = format!("/api/sessions/{id}/prune");
    let (status, v) = post(&h.app, &uri, json!({"settings": {"algorithm": "lap", "global_ratio": 1.5, "per_layer_ratio": {"1": 0.2}}})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&str> = v["error"]["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, ["global_ratio", "per_layer_ratio.1"]);
    let (status, _) = post(&h.app, &uri, json!({"settings": {"algorithm": "magic", "global_ratio": 0.5}})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&h.app, Method::POST, &uri, None).await;
    assert!(status.is_client_error());
    assert_eq!(step_count(&h.app, &id).await, 1);
}

#[tokio::test]
async fn out_of_bounds_edit_creates_no_step() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let edits = json!({"edits": [
        {"layer_index": 0, "kind": "prune_indices", "indices": [0, 1]},
        {"layer_index": 0, "kind": "prune_indices", "indices": [512]}
    ]});
    let (status, v) = post(&h.app, &format!("/api/sessions/{id}/edits"), edits).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"][0]["field"], "edits[1]");
    assert_eq!(step_count(&h.app, &id).await, 1);
    let (_, mask) = get(&h.app, &format!("/api/sessions/{id}/layers/0/mask?format=rle")).await;
    assert_eq!(mask["pruned"], 0);
}

#[tokio::test]
async fn rect_edit_reports_exactly_the_rect_cells() {
    let h = harness();
    let id = session(&h.app, "cnn-shapes", "shapes-test").await;
    let (status, v) = post(
        &h.app,
        &format!("/api/sessions/{id}/edits"),
        json!({"edits": [{"layer_index": 3, "kind": "prune_rect", "rect": [1, 2, 2, 20]}]}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let changed = &v["changed"][0];
    assert_eq!(changed["layer_index"], 3);
    let cells: Vec<(u64, u64)> = changed["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c[0].as_u64().unwrap(), c[1].as_u64().unwrap()))
        .collect();
    let expected: Vec<(u64, u64)> = (1..=2).flat_map(|r| (2..=20).map(move |c| (r, c))).collect();
    assert_eq!(cells, expected);
    let flat: Vec<u64> = changed["flat"].as_array().unwrap().iter().map(|f| f.as_u64().unwrap()).collect();
    assert!(flat.iter().zip(&cells).all(|(f, (r, c))| *f == r * 36 + c));

    // restoring the same rect changes the same cells back
    let (_, v) = post(
        &h.app,
        &format!("/api/sessions/{id}/edits"),
        json!({"edits": [{"layer_index": 3, "kind": "restore_rect", "rect": [1, 2, 2, 20]}]}),
    )
    .await;
    assert_eq!(v["changed"][0]["cells"].as_array().unwrap().len(), expected.len());
    assert_eq!(v["step"]["report"]["sparsity"]["pruned"], 0);
}

#[tokio::test]
async fn revert_and_remove() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let prune = json!({"settings": {"algorithm": "lap", "global_ratio": 0.3}});
    post(&h.app, &format!("/api/sessions/{id}/prune"), prune.clone()).await;
    post(&h.app, &format!("/api/sessions/{id}/prune"), prune.clone()).await;
    let (status, v) = post(&h.app, &format!("/api/sessions/{id}/revert"), json!({"step_id": 0})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["step"]["report"]["sparsity"]["global_ratio"], 0.0);
    let (_, steps) = get(&h.app, &format!("/api/sessions/{id}/steps")).await;
    assert_eq!(steps["current_step"], 0);

    // branch from 0, then delete step 1 and its child 2
    let (_, v) = post(&h.app, &format!("/api/sessions/{id}/prune"), prune).await;
    assert_eq!(v["step"]["step_id"], 3);
    assert_eq!(v["step"]["parent_id"], 0);
    let (status, v) = call(&h.app, Method::DELETE, &format!("/api/sessions/{id}/steps/1"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["removed"], json!([1, 2]));
    assert_eq!(v["current_step"], 3);
    let (status, v) = call(&h.app, Method::DELETE, &format!("/api/sessions/{id}/steps/0"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"][0]["field"], "step_id");
    assert_eq!(step_count(&h.app, &id).await, 2);
}

#[tokio::test]
async fn mask_formats_and_geometry() {
    let h = harness();
    let id = session(&h.app, "cnn-shapes", "shapes-test").await;
    let (status, rle) = get(&h.app, &format!("/api/sessions/{id}/layers/3/mask?format=rle")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rle["rle"], json!({"first": 1, "runs": [288]}));
    assert_eq!(rle["layout"]["rows"], 8);
    assert_eq!(rle["layout"]["cols"], 36);
    assert_eq!(rle["layout"]["channel_pixel_rows"][1], json!([3, 5]));
    assert!(rle.get("bits").is_none());

    let (_, bits) = get(&h.app, &format!("/api/sessions/{id}/layers/6/mask")).await;
    assert_eq!(bits["format"], "bits");
    assert_eq!(bits["layout"]["rows"], 4);
    assert_eq!(bits["layout"]["cols"], 8);
    assert_eq!(BASE64.decode(bits["bits"].as_str().unwrap()).unwrap(), vec![0xff; 4]);

    let (status, v) = get(&h.app, &format!("/api/sessions/{id}/layers/1/mask")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["fields"][0]["field"], "layer");
    let (status, _) = get(&h.app, &format!("/api/sessions/{id}/layers/3/mask?format=png")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = get(&h.app, &format!("/api/sessions/{id}/layers/3/mask?step=abc")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn dense_geometry() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let (_, v) = get(&h.app, &format!("/api/sessions/{id}/layers/0/mask")).await;
    assert_eq!((v["layout"]["rows"].as_u64(), v["layout"]["cols"].as_u64()), (Some(32), Some(16)));
}

#[tokio::test]
async fn pruned_channel_feature_map_is_dead() {
    let h = harness();
    let id = session(&h.app, "cnn-shapes", "shapes-test").await;
    let (_, before) = get(&h.app, &format!("/api/sessions/{id}/featuremaps?sample=3&layer=1")).await;
    assert_eq!(before["maps"][2]["stats"]["is_dead"], false);
    post(
        &h.app,
        &format!("/api/sessions/{id}/edits"),
        json!({"edits": [{"layer_index": 0, "kind": "prune_channel", "channel": 2}]}),
    )
    .await;
    let (status, after) = get(&h.app, &format!("/api/sessions/{id}/featuremaps?sample=3&layer=1")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after["maps"][2]["stats"]["is_dead"], true);
    assert!(after["maps"][2]["values"].as_array().unwrap().iter().all(|v| v == 0.0));
    let (_, base) = get(&h.app, &format!("/api/sessions/{id}/featuremaps?sample=3&layer=1&variant=baseline")).await;
    assert_eq!(base["maps"][2], before["maps"][2]);

    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/featuremaps?sample=3")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/featuremaps?layer=1&variant=x")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/featuremaps?layer=1&sample=999")).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn channel_marks_toggle() {
    let h = harness();
    let id = session(&h.app, "cnn-shapes", "shapes-test").await;
    let uri = format!("/api/sessions/{id}/featuremaps/mark");
    // a relu map maps back to the conv that produced it
    let (status, v) = post(&h.app, &uri, json!({"layer": 4, "channel": 6})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["edit"], json!({"layer_index": 3, "kind": "prune_channel", "channel": 6}));
    assert_eq!(v["pending"].as_array().unwrap().len(), 1);
    let (_, v) = post(&h.app, &uri, json!({"layer": 4, "channel": 6})).await;
    assert_eq!(v["pending"], json!([]));
    post(&h.app, &uri, json!({"layer": 3, "channel": 7})).await;
    let (_, pending) = get(&h.app, &format!("/api/sessions/{id}/pending")).await;
    let (status, v) = post(&h.app, &format!("/api/sessions/{id}/edits"), json!({"edits": pending["pending"]})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["step"]["report"]["sparsity"]["pruned"], 36);
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/pending")).await.1["pending"], json!([]));
    assert_eq!(post(&h.app, &uri, json!({"layer": 5, "channel": 0})).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_mutation_is_409() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    let entry = h.state.session(&id).unwrap();
    let guard = entry.try_lock_writer().unwrap();
    let (status, v) = post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "map", "global_ratio": 0.5}})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "conflict");
    // reads are not blocked by a writer
    assert_eq!(get(&h.app, &format!("/api/sessions/{id}/steps")).await.0, StatusCode::OK);
    drop(guard);
    let (status, _) = post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "map", "global_ratio": 0.5}})).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let h = harness();
    let id = session(&h.app, "mlp-blobs", "blobs-test").await;
    post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "lap", "global_ratio": 0.4}})).await;
    let (_, before) = get(&h.app, &format!("/api/sessions/{id}/steps")).await;

    let mut config = ServerConfig::new(fixtures().join("models"), fixtures().join("datasets"));
    config.sessions_dir = Some(h.sessions.path().to_path_buf());
    let state = Arc::new(AppState::new(config));
    assert!(state.restore_sessions().is_empty());
    let app = router(state);
    let (status, after) = get(&app, &format!("/api/sessions/{id}/steps")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn identical_state_gives_identical_bytes() {
    let h = harness();
    let id = session(&h.app, "cnn-shapes", "shapes-test").await;
    post(&h.app, &format!("/api/sessions/{id}/prune"), json!({"settings": {"algorithm": "lap", "global_ratio": 0.7}})).await;
    for uri in [
        format!("/api/sessions/{id}/steps"),
        format!("/api/sessions/{id}/metrics"),
        format!("/api/sessions/{id}/layers/3/mask?format=rle"),
        format!("/api/sessions/{id}/featuremaps?layer=4&sample=1"),
        format!("/api/sessions/{id}/compare?a=0&b=1"),
    ] {
        let a = raw(&h.app, Method::GET, &uri, None).await;
        let b = raw(&h.app, Method::GET, &uri, None).await;
        assert_eq!(a.0, StatusCode::OK, "{uri}");
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn defaults_and_fallback_page() {
    let h = harness();
    let (_, v) = get(&h.app, "/api/settings/defaults").await;
    assert_eq!(v["label"], "suggested");
    assert_eq!(v["settings"]["algorithm"], "lap");
    assert_eq!(v["settings"]["global_ratio"], 0.5);
    let (status, body) = raw(&h.app, Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api"));
}

#[tokio::test]
async fn serves_static_ui() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<p>ui</p>").unwrap();
    let mut config = ServerConfig::new(fixtures().join("models"), fixtures().join("datasets"));
    config.static_dir = Some(ui.path().to_path_buf());
    let app = router(Arc::new(AppState::new(config)));
    let (status, body) = raw(&app, Method::GET, "/", None).await;
    assert_eq!((status, body), (StatusCode::OK, b"<p>ui</p>".to_vec()));
    assert_eq!(get(&app, "/api/models").await.0, StatusCode::OK);
}

/// One request of the randomized interleaving: valid and invalid mutations mixed.
fn mutation() -> impl Strategy<Value = (Method, String, Option<Value>)> {
    let algos = prop_oneof![Just("map"), Just("lap"), Just("lap_forward"), Just("manual"), Just("bogus")];
    prop_oneof![
        (algos, -2i32..12).prop_map(|(a, r)| (
            Method::POST,
            "prune".to_string(),
            Some(json!({"settings": {"algorithm": a, "global_ratio": f64::from(r) / 10.0}}))
        )),
        (0usize..8, 0usize..10, any::<bool>()).prop_map(|(l, c, p)| (
            Method::POST,
            "edits".to_string(),
            Some(json!({"edits": [{"layer_index": l, "kind": if p { "prune_channel" } else { "restore_channel" }, "channel": c}]}))
        )),
        (0usize..40, 0usize..40).prop_map(|(r, c)| (
            Method::POST,
            "edits".to_string(),
            Some(json!({"edits": [{"layer_index": 3, "kind": "prune_rect", "rect": [r / 4, c, r / 4 + 1, c + 3]}]}))
        )),
        (0u64..8).prop_map(|s| (Method::POST, "revert".to_string(), Some(json!({"step_id": s})))),
        (0u64..8).prop_map(|s| (Method::DELETE, format!("steps/{s}"), None)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interleaved_mutations_stay_consistent(ops in proptest::collection::vec(mutation(), 1..12)) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            let h = harness();
            let id = session(&h.app, "cnn-shapes", "shapes-test").await;
            for (method, path, body) in ops {
                let (_, before) = get(&h.app, &format!("/api/sessions/{id}/steps")).await;
                let (status, _) = call(&h.app, method, &format!("/api/sessions/{id}/{path}"), body).await;
                let (_, after) = get(&h.app, &format!("/api/sessions/{id}/steps")).await;
                if !status.is_success() {
                    assert_eq!(before, after, "{path} failed with {status} but changed the session");
                }
                let entry = h.state.session(&id).unwrap();
                entry.read(|s| {
                    for step in s.steps() {
                        s.verify_step(step.step_id, 1e-6).unwrap();
                    }
                });
            }
        });
    }
}
