//! Read-only JSON API over a pattern store, its data matrix, the target time
//! series and the county geometry.
//!
//! Every JSON response is wrapped as `{"status": "ok", "data": ...}` or
//! `{"status": "error", "error": {"code", "message"}}`.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::NaiveDate;
use riskmap_core::dataset::{global_stats, load_matrix, load_timeseries, GlobalStats};
use riskmap_core::patternstore::{self, PatternSet, PatternStore, StoreError};
use riskmap_core::{DataMatrix, DatasetError, SchemaConfig, TargetTimeSeries};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tower_http::compression::CompressionLayer;
use tower_http::cors::CorsLayer;
use tracing::warn;

pub const GEOJSON_MEDIA_TYPE: &str = "application/geo+json";
pub const GEOJSON_CACHE_CONTROL: &str = "public, max-age=86400";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot read geometry file {path}: {source}")]
    Geo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub target_name: String,
    pub global_target_mean: f64,
    pub pattern_count: usize,
    pub dataset_fingerprint: String,
    pub date_axis: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountyEntry {
    pub fips: String,
    pub name: String,
    pub state: String,
    pub target_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesBody {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// Everything the handlers read. Built once, never mutated.
#[derive(Debug)]
pub struct AppState {
    matrix: DataMatrix,
    stats: GlobalStats,
    store: PatternStore,
    series: Option<TargetTimeSeries>,
    geojson: Option<Vec<u8>>,
    meta: Meta,
}

impl AppState {
    pub fn new(
        matrix: DataMatrix,
        set: PatternSet,
        series: Option<TargetTimeSeries>,
        geojson: Option<Vec<u8>>,
    ) -> Self {
        if let Some(w) = set.fingerprint_mismatch(&matrix) {
            warn!("{w}");
        }
        let meta = Meta {
            target_name: matrix.target_name().to_string(),
            global_target_mean: set.global_target_mean,
            pattern_count: set.patterns.len(),
            dataset_fingerprint: set.dataset_fingerprint.clone(),
            date_axis: series.as_ref().map(|s| s.dates.clone()).unwrap_or_default(),
        };
        AppState {
            stats: global_stats(&matrix),
            store: PatternStore::new(set),
            matrix,
            series,
            geojson,
            meta,
        }
    }

    /// Loads every input up front so a bad file stops startup rather than
    /// surfacing as a runtime 404.
    pub fn load(paths: &ServerPaths) -> Result<Self, StartupError> {
        let schema = SchemaConfig::from_file(&paths.schema)?;
        let matrix = load_matrix(&paths.matrix, &schema)?;
        let set = patternstore::load(&paths.store)?;
        let series = match &paths.timeseries {
            Some(p) => {
                let loaded = load_timeseries(p)?;
                for (fips, n) in &loaded.clamps {
                    warn!(fips, clamped = n, "non-monotone series clamped to running maximum");
                }
                Some(loaded.series)
            }
            None => None,
        };
        let geojson = paths
            .geojson
            .as_deref()
            .map(|p| {
                std::fs::read(p).map_err(|source| StartupError::Geo {
                    path: p.display().to_string(),
                    source,
                })
            })
            .transpose()?;
        Ok(AppState::new(matrix, set, series, geojson))
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }
}

#[derive(Debug, Clone)]
pub struct ServerPaths {
    pub matrix: PathBuf,
    pub schema: PathBuf,
    pub store: PathBuf,
    pub timeseries: Option<PathBuf>,
    pub geojson: Option<PathBuf>,
}

impl ServerPaths {
    /// The file layout written by the demo fixture.
    pub fn in_dir(dir: &Path) -> Self {
        ServerPaths {
            matrix: dir.join("matrix.csv"),
            schema: dir.join("schema.conf"),
            store: dir.join("store.json"),
            timeseries: Some(dir.join("timeseries.csv")),
            geojson: Some(dir.join("counties.geojson")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServerOptions {
    /// Permissive cross-origin headers for a dashboard served elsewhere.
    pub cors: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { cors: true }
    }
}

fn ok<T: Serialize>(data: T) -> Response {
    Json(json!({ "status": "ok", "data": data })).into_response()
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = json!({ "status": "error", "error": { "code": code, "message": message.into() } });
    (status, Json(body)).into_response()
}

fn not_found(message: impl Into<String>) -> Response {
    error(StatusCode::NOT_FOUND, "not_found", message)
}

type Shared = State<Arc<AppState>>;

async fn meta(State(s): Shared) -> Response {
    ok(&s.meta)
}

async fn counties(State(s): Shared) -> Response {
    let list: Vec<CountyEntry> = s
        .matrix
        .counties()
        .iter()
        .enumerate()
        .map(|(row, c)| CountyEntry {
            fips: c.fips.clone(),
            name: c.name.clone(),
            state: c.state.clone(),
            target_value: s.matrix.target(row),
        })
        .collect();
    ok(list)
}

async fn county(State(s): Shared, UrlPath(fips): UrlPath<String>) -> Response {
    match s.store.county_profile(&s.matrix, &s.stats, s.series.as_ref(), &fips) {
        Ok(profile) => ok(profile),
        Err(e) => not_found(e.to_string()),
    }
}

async fn patterns(State(s): Shared) -> Response {
    ok(s.store.summaries())
}

async fn pattern(State(s): Shared, UrlPath(id): UrlPath<String>) -> Response {
    match s.store.pattern_display(&s.matrix, &s.stats, &id) {
        Ok(d) => ok(d),
        Err(e) => not_found(e.to_string()),
    }
}

async fn timeseries(State(s): Shared, UrlPath(fips): UrlPath<String>) -> Response {
    let Some(ts) = s.series.as_ref() else {
        return not_found("no time series configured");
    };
    match ts.get(&fips) {
        Some(values) => ok(SeriesBody {
            dates: ts.dates.clone(),
            values: values.to_vec(),
        }),
        None => not_found(format!("no time series for county {fips}")),
    }
}

async fn geojson(State(s): Shared) -> Response {
    match &s.geojson {
        Some(bytes) => (
            [
                (header::CONTENT_TYPE, HeaderValue::from_static(GEOJSON_MEDIA_TYPE)),
                (header::CACHE_CONTROL, HeaderValue::from_static(GEOJSON_CACHE_CONTROL)),
            ],
            bytes.clone(),
        )
            .into_response(),
        None => not_found("no county geometry configured"),
    }
}

async fn fallback() -> Response {
    not_found("no such endpoint")
}

pub fn router(state: Arc<AppState>, options: ServerOptions) -> Router {
    let app = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/counties", get(counties))
        .route("/api/counties/{fips}", get(county))
        .route("/api/patterns", get(patterns))
        .route("/api/patterns/{id}", get(pattern))
        .route("/api/timeseries/{fips}", get(timeseries))
        .route("/geo/counties.geojson", get(geojson))
        .fallback(fallback)
        .with_state(state)
        .layer(CompressionLayer::new());
    if options.cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
