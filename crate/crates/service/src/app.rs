use std::sync::{Arc, OnceLock};

use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use cabcompare_core::fare_query::{uber_quote, yellow_quote, FareQuote};
use cabcompare_core::{Cents, Cheaper, GeoPoint, MeshIndex, MeshSpec, PricingProvider, QueryError};
use serde::{Deserialize, Serialize};
use tower::limit::ConcurrencyLimitLayer;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServiceConfig;
use crate::error::{ApiError, ServiceError};
use crate::geocode::{GeocodeError, Geocoder};

pub const WARN_LARGE_GAP: &str = "large-dest-gap";
pub const WARN_PROVIDER_DOWN: &str = "provider-down";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub max_ring: u32,
    pub large_gap_warning_m: f64,
    pub degrade_on_provider_failure: bool,
    pub max_query_len: usize,
}

impl Settings {
    pub fn from_config(c: &ServiceConfig) -> Self {
        Settings {
            max_ring: c.max_ring,
            large_gap_warning_m: c.large_gap_warning_m,
            degrade_on_provider_failure: c.degrade_on_provider_failure,
            max_query_len: c.limits.max_query_len,
        }
    }
}

struct Inner {
    index: OnceLock<Arc<MeshIndex>>,
    expected_mesh: Option<MeshSpec>,
    provider: Box<dyn PricingProvider>,
    geocoder: Box<dyn Geocoder>,
    settings: Settings,
}

/// Shared, read-only request state. The index slot is filled once, after
/// which every request sees the same immutable index.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(provider: Box<dyn PricingProvider>, geocoder: Box<dyn Geocoder>, settings: Settings) -> Self {
        AppState(Arc::new(Inner { index: OnceLock::new(), expected_mesh: None, provider, geocoder, settings }))
    }

    /// Builds the provider and geocoder; the index is installed separately.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let provider = config.provider.build()?;
        let geocoder = config.geocoder.build().map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(AppState(Arc::new(Inner {
            index: OnceLock::new(),
            expected_mesh: config.mesh,
            provider,
            geocoder,
            settings: Settings::from_config(config),
        })))
    }

    pub fn install_index(&self, index: MeshIndex) -> Result<(), ServiceError> {
        if let Some(m) = &self.0.expected_mesh {
            if m != index.spec() {
                return Err(ServiceError::Config("index was built with a different mesh than configured".into()));
            }
        }
        self.0
            .index
            .set(Arc::new(index))
            .map_err(|_| ServiceError::Config("index already installed".into()))
    }

    pub fn index(&self) -> Option<&Arc<MeshIndex>> {
        self.0.index.get()
    }

    pub fn settings(&self) -> &Settings {
        &self.0.settings
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedTrip {
    pub trip_id: u64,
    pub pickup: GeoPoint,
    pub dropoff: GeoPoint,
    pub dest_gap_m: f64,
    pub ring_used: u32,
}

/// `uber`, `cheaper` and `delta_usd` are absent in degraded responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub yellow: FareQuote,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uber: Option<FareQuote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheaper: Option<Cheaper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_usd: Option<Cents>,
    pub matched_trip: MatchedTrip,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_trips: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<i64>,
}

#[derive(Debug, Deserialize)]
pub struct CompareParams {
    olat: Option<String>,
    olon: Option<String>,
    dlat: Option<String>,
    dlon: Option<String>,
}

fn coord(name: &str, v: &Option<String>) -> Result<f64, ApiError> {
    let s = v.as_deref().ok_or_else(|| ApiError::bad_request(format!("missing parameter {name}")))?;
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ApiError::bad_request(format!("{name} is not a finite number")))
}

fn point(lat: f64, lon: f64, which: &str) -> Result<GeoPoint, ApiError> {
    GeoPoint::new(lat, lon).map_err(|e| ApiError::bad_request(format!("{which}: {e}")))
}

/// The full comparison for one request; blocking (the provider may do I/O).
pub fn estimate(state: &AppState, origin: &GeoPoint, dest: &GeoPoint) -> Result<EstimateResponse, ApiError> {
    let index = state.index().ok_or_else(ApiError::loading)?;
    let s = state.settings();
    let yellow = yellow_quote(index, origin, dest, s.max_ring).map_err(|e| match e {
        QueryError::OutOfBounds(g) => ApiError::new(StatusCode::BAD_REQUEST, "out-of-bounds", g.to_string()),
        QueryError::NoTripsFound { .. } => ApiError::new(StatusCode::NOT_FOUND, "no-trips-found", e.to_string()),
        QueryError::InvalidRing => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    })?;
    let ordinal = yellow.matched_trip.expect("historical quotes carry a match");
    let trip = &index.trips()[ordinal as usize];
    let matched_trip = MatchedTrip {
        trip_id: trip.trip_id,
        pickup: trip.pickup,
        dropoff: trip.dropoff,
        dest_gap_m: yellow.dest_gap_m.unwrap_or_default(),
        ring_used: yellow.origin_ring.unwrap_or_default(),
    };
    let mut warnings = Vec::new();
    if matched_trip.dest_gap_m > s.large_gap_warning_m {
        warnings.push(WARN_LARGE_GAP.to_string());
    }
    let (uber, cheaper, delta_usd) = match uber_quote(state.0.provider.as_ref(), origin, dest) {
        Ok(uber) => {
            let delta = uber.amount_usd - yellow.amount_usd;
            (Some(uber), Some(Cheaper::from_delta(delta)), Some(delta))
        }
        Err(e) if s.degrade_on_provider_failure => {
            tracing::warn!(error = %e, "pricing provider failed, answering yellow-only");
            warnings.push(WARN_PROVIDER_DOWN.to_string());
            (None, None, None)
        }
        Err(e) => return Err(ApiError::new(StatusCode::BAD_GATEWAY, "provider-unavailable", e.to_string())),
    };
    Ok(EstimateResponse { yellow, uber, cheaper, delta_usd, matched_trip, warnings })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())))
}

async fn compare(
    State(state): State<AppState>,
    params: Result<Query<CompareParams>, QueryRejection>,
) -> Result<Json<EstimateResponse>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let origin = point(coord("olat", &p.olat)?, coord("olon", &p.olon)?, "origin")?;
    let dest = point(coord("dlat", &p.dlat)?, coord("dlon", &p.dlon)?, "destination")?;
    if state.index().is_none() {
        return Err(ApiError::loading());
    }
    blocking(move || estimate(&state, &origin, &dest)).await.map(Json)
}

#[derive(Debug, Deserialize)]
pub struct GeocodeParams {
    q: Option<String>,
}

async fn geocode(
    State(state): State<AppState>,
    params: Result<Query<GeocodeParams>, QueryRejection>,
) -> Response {
    let q = match params {
        Ok(Query(GeocodeParams { q: Some(q) })) if !q.trim().is_empty() => q,
        Ok(_) => return ApiError::bad_request("missing or empty parameter q").into_response(),
        Err(e) => return ApiError::bad_request(e.body_text()).into_response(),
    };
    if q.len() > state.settings().max_query_len {
        return ApiError::bad_request("query too long").into_response();
    }
    let result = blocking(move || {
        state.0.geocoder.geocode(&q).map_err(|e| match e {
            GeocodeError::Unavailable(m) | GeocodeError::Config(m) => {
                ApiError::new(StatusCode::BAD_GATEWAY, "geocoder-unavailable", m)
            }
        })
    })
    .await;
    match result {
        Ok(Some(hit)) => Json(hit).into_response(),
        Ok(None) => ApiError::new(StatusCode::NOT_FOUND, "no-match", "no place matches the query").into_response(),
        Err(e) => e.into_response(),
    }
}

async fn healthz(State(state): State<AppState>) -> (StatusCode, Json<Health>) {
    match state.index() {
        Some(idx) => (
            StatusCode::OK,
            Json(Health { status: "ok".into(), index_trips: Some(idx.len() as u64), built_at: Some(idx.built_at()) }),
        ),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health { status: "loading".into(), index_trips: None, built_at: None }),
        ),
    }
}

/// Routes plus the concurrency cap and CORS. Without a configured origin any
/// origin may call the API.
pub fn router(state: AppState, cors_origin: Option<&str>, max_concurrent_requests: usize) -> Result<Router, ServiceError> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|_| ServiceError::Config(format!("bad cors_origin {o:?}")))?,
        ),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods([Method::GET]);
    Ok(Router::new()
        .route("/v1/compare", get(compare))
        .route("/v1/geocode", get(geocode))
        .route("/healthz", get(healthz))
        .with_state(state)
        .layer(ConcurrencyLimitLayer::new(max_concurrent_requests.max(1)))
        .layer(cors))
}
