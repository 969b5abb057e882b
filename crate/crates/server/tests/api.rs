use std::io::{Read, Write};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use riskmap_core::fixture;
use riskmap_core::miner::{pattern_id, Constraint};
use riskmap_core::patternstore::PatternSet;
use riskmap_core::{CountyKey, DataMatrix, Direction, MiningConfig, Pattern};
use riskmap_server::{router, AppState, ServerOptions, ServerPaths, StartupError, GEOJSON_MEDIA_TYPE};
use serde_json::Value;
use tower::ServiceExt;

fn fixture_app() -> Router {
    let state = AppState::new(
        fixture::matrix(),
        fixture::pattern_set(),
        Some(fixture::timeseries()),
        Some(fixture::geojson().into_bytes()),
    );
    router(Arc::new(state), ServerOptions::default())
}

async fn raw(app: &Router, uri: &str, gzip: bool) -> (StatusCode, HeaderMap, Vec<u8>) {
    let mut req = Request::get(uri);
    if gzip {
        req = req.header(header::ACCEPT_ENCODING, "gzip");
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, _, bytes) = raw(app, uri, false).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn data(app: &Router, uri: &str) -> Value {
    let (status, body) = get(app, uri).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {body}");
    assert_eq!(body["status"], "ok");
    assert!(body.get("error").is_none());
    body["data"].clone()
}

async fn assert_404(app: &Router, uri: &str) {
    let (status, body) = get(app, uri).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    assert_eq!(body["status"], "error");
    assert_eq!(body["error"]["code"], "not_found");
    assert!(body["error"]["message"].is_string());
    assert!(body.get("data").is_none());
}

fn tiny_matrix(n: usize) -> DataMatrix {
    let counties = (0..n)
        .map(|i| CountyKey {
            fips: format!("{:05}", 1001 + i),
            name: format!("County {i}"),
            state: "AA".into(),
        })
        .collect();
    let values = (0..n).map(|i| Some(i as f64)).collect();
    let target = (0..n).map(|i| if i == 0 { None } else { Some(i as f64) }).collect();
    DataMatrix::new(counties, vec!["x".into()], values, target, "rate").unwrap()
}

fn with_means(matrix: &DataMatrix, means: &[(f64, f64, f64)]) -> PatternSet {
    let patterns = means
        .iter()
        .map(|&(mean, lo, hi)| {
            let constraints = vec![Constraint {
                feature: "x".into(),
                lo,
                hi,
            }];
            Pattern {
                id: pattern_id(&constraints),
                constraints,
                members: vec!["01002".into()],
                mean_target: mean,
                p_value: 0.001,
                p_adjusted: 0.002,
                direction: Direction::High,
                contributions: vec![1.0],
            }
        })
        .collect();
    let mut set = PatternSet::new(patterns, matrix, MiningConfig::default());
    riskmap_core::miner::sort_patterns(&mut set.patterns);
    set
}

fn app_for(matrix: DataMatrix, set: PatternSet) -> Router {
    router(
        Arc::new(AppState::new(matrix, set, None, None)),
        ServerOptions::default(),
    )
}

#[tokio::test]
async fn meta_reflects_store() {
    let app = fixture_app();
    let meta = data(&app, "/api/meta").await;
    let set = fixture::pattern_set();
    assert_eq!(meta["pattern_count"], 12);
    assert_eq!(meta["target_name"], fixture::TARGET);
    assert_eq!(meta["dataset_fingerprint"], set.dataset_fingerprint.as_str());
    assert_eq!(meta["global_target_mean"].as_f64().unwrap(), set.global_target_mean);
    assert_eq!(meta["date_axis"].as_array().unwrap().len(), 4);

    let m = tiny_matrix(5);
    let empty = app_for(m.clone(), PatternSet::new(Vec::new(), &m, MiningConfig::default()));
    assert_eq!(data(&empty, "/api/meta").await["pattern_count"], 0);
    assert_eq!(data(&empty, "/api/patterns").await, Value::Array(Vec::new()));
}

#[tokio::test]
async fn county_list() {
    let m = tiny_matrix(5);
    let app = app_for(m.clone(), PatternSet::new(Vec::new(), &m, MiningConfig::default()));
    let list = data(&app, "/api/counties").await;
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 5);
    assert_eq!(list[0]["target_value"], Value::Null);
    assert_eq!(list[1]["target_value"], 1.0);
    assert_eq!(list[1]["fips"], "01002");

    let app = fixture_app();
    let list = data(&app, "/api/counties").await;
    let missing = list
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["fips"] == fixture::MISSING_TARGET)
        .unwrap();
    assert_eq!(missing["target_value"], Value::Null);
}

#[tokio::test]
async fn county_profiles() {
    let app = fixture_app();
    let p = data(&app, &format!("/api/counties/{}", fixture::MCKINLEY)).await;
    let gpa = p["top_risk_factors"]
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f["feature"] == fixture::GPA)
        .expect("GPA factor")
        .clone();
    assert_eq!(gpa["county_value"], 2.9);
    assert_eq!(gpa["state_range"], serde_json::json!([2.4, 3.7]));
    assert_eq!(gpa["us_range"], serde_json::json!([0.0, 4.0]));
    assert!(gpa["us_mean"].as_f64().unwrap() > 2.9);
    assert_eq!(p["target_series"]["values"].as_array().unwrap().len(), 4);

    let none = data(&app, &format!("/api/counties/{}", fixture::NO_PATTERN)).await;
    assert_eq!(none["pattern_ids"], Value::Array(Vec::new()));
    assert_eq!(none["top_risk_factors"], Value::Array(Vec::new()));
    assert_404(&app, "/api/counties/99999").await;
}

#[tokio::test]
async fn pattern_list_order() {
    let m = tiny_matrix(5);
    let app = app_for(
        m.clone(),
        with_means(&m, &[(0.5, 1.0, 2.0), (0.9, 1.0, 3.0), (0.8, 2.0, 3.0)]),
    );
    let list = data(&app, "/api/patterns").await;
    let got: Vec<(u64, f64)> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["rank"].as_u64().unwrap(), p["mean_target"].as_f64().unwrap()))
        .collect();
    assert_eq!(got, vec![(1, 0.9), (2, 0.8), (3, 0.5)]);

    let app = app_for(
        m.clone(),
        with_means(&m, &[(0.7, 1.0, 2.0), (0.7, 1.0, 3.0), (0.7, 2.0, 3.0)]),
    );
    let ids: Vec<String> = data(&app, "/api/patterns")
        .await
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["pattern_id"].as_str().unwrap().to_string())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[tokio::test]
async fn pattern_detail() {
    let app = fixture_app();
    let id = fixture::minority_pattern_id();
    let d = data(&app, &format!("/api/patterns/{id}")).await;
    let row = d["constraints"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["feature"] == fixture::MINORITY)
        .unwrap()
        .clone();
    assert_eq!(row["pattern_range"], serde_json::json!([37.6, 99.2]));
    assert_eq!(row["us_range"], serde_json::json!([0.0, 99.2]));
    let set = fixture::pattern_set();
    let stored = set.patterns.iter().find(|p| p.id == id).unwrap();
    assert_eq!(d["members"].as_array().unwrap().len(), stored.members.len());
    assert_eq!(d["p_adjusted"].as_f64().unwrap(), stored.p_adjusted);
    assert_404(&app, "/api/patterns/nope").await;
}

#[tokio::test]
async fn timeseries_endpoint() {
    let app = fixture_app();
    let s = data(&app, &format!("/api/timeseries/{}", fixture::HARTFORD)).await;
    assert_eq!(s["values"], serde_json::json!([0.0, 5.0, 5.0, 12.0]));
    assert_eq!(s["dates"], data(&app, "/api/meta").await["date_axis"]);
    assert_404(&app, "/api/timeseries/99999").await;
    let m = tiny_matrix(5);
    let no_series = app_for(m.clone(), PatternSet::new(Vec::new(), &m, MiningConfig::default()));
    assert_404(&no_series, "/api/timeseries/01002").await;
}

#[tokio::test]
async fn geojson_served_verbatim() {
    let app = fixture_app();
    let (status, headers, bytes) = raw(&app, "/geo/counties.geojson", false).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, fixture::geojson().into_bytes());
    assert_eq!(headers[header::CONTENT_TYPE], GEOJSON_MEDIA_TYPE);
    assert!(headers[header::CACHE_CONTROL].to_str().unwrap().contains("max-age"));
    assert!(headers.get(header::CONTENT_ENCODING).is_none());

    let (status, headers, gz) = raw(&app, "/geo/counties.geojson", true).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_ENCODING], "gzip");
    assert!(gz.len() < bytes.len());

    let m = tiny_matrix(5);
    let app = app_for(m.clone(), PatternSet::new(Vec::new(), &m, MiningConfig::default()));
    assert_404(&app, "/geo/counties.geojson").await;
}

#[tokio::test]
async fn every_listed_resource_resolves() {
    let app = fixture_app();
    for c in data(&app, "/api/counties").await.as_array().unwrap() {
        let (status, _) = get(&app, &format!("/api/counties/{}", c["fips"].as_str().unwrap())).await;
        assert_eq!(status, StatusCode::OK);
    }
    let list = data(&app, "/api/patterns").await;
    let mut last = f64::INFINITY;
    for p in list.as_array().unwrap() {
        let mean = p["mean_target"].as_f64().unwrap();
        assert!(mean <= last);
        last = mean;
        let (status, _) = get(&app, &format!("/api/patterns/{}", p["pattern_id"].as_str().unwrap())).await;
        assert_eq!(status, StatusCode::OK);
    }
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let app = fixture_app();
    let uris = [
        "/api/meta",
        "/api/counties",
        "/api/patterns",
        "/api/counties/09003",
        "/api/timeseries/09003",
    ];
    let first: Vec<_> = futures_all(&app, &uris).await;
    let second: Vec<_> = futures_all(&app, &uris).await;
    assert_eq!(first, second);
}

async fn futures_all(app: &Router, uris: &[&str]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for u in uris {
        out.push(raw(app, u, false).await.2);
    }
    out
}

#[tokio::test]
async fn unknown_route_and_cors() {
    let app = fixture_app();
    assert_404(&app, "/api/nothing").await;
    let req = Request::get("/api/meta")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");

    let closed = router(
        Arc::new(AppState::new(fixture::matrix(), fixture::pattern_set(), None, None)),
        ServerOptions { cors: false },
    );
    let req = Request::get("/api/meta")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = closed.oneshot(req).await.unwrap();
    assert!(resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[test]
fn startup_fails_fast_on_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let paths = fixture::write_all(dir.path()).unwrap();
    let good = ServerPaths::in_dir(dir.path());
    assert_eq!(AppState::load(&good).unwrap().meta().pattern_count, 12);

    let no_geo = ServerPaths {
        geojson: Some(dir.path().join("missing.geojson")),
        ..good.clone()
    };
    assert!(matches!(AppState::load(&no_geo), Err(StartupError::Geo { .. })));

    std::fs::write(&paths.store, "{\"schema_version\": 1, \"patt").unwrap();
    let err = AppState::load(&good).unwrap_err();
    assert!(err.to_string().contains("corrupt pattern store"), "{err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_over_tcp_and_shuts_down() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(riskmap_server::serve(listener, fixture_app(), async {
        let _ = rx.await;
    }));
    let body = tokio::task::spawn_blocking(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        s.write_all(b"GET /api/meta HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"pattern_count\":12"));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
