//! HTTP facade over a loaded [`MeshIndex`](cabcompare_core::MeshIndex):
//!
//! - `GET /v1/compare?olat&olon&dlat&dlon`: yellow vs ride-hailing quote;
//! - `GET /v1/geocode?q=`: address lookup;
//! - `GET /healthz`: 503 until the index has loaded.
//!
//! The JSON bodies are described in `openapi.yaml` next to this crate.

pub mod app;
pub mod config;
pub mod error;
pub mod geocode;
pub mod loadtest;
pub mod server;

pub use app::{estimate, router, AppState, EstimateResponse, Health, MatchedTrip, Settings};
pub use config::{Limits, ServiceConfig};
pub use error::{ApiError, ServiceError};
pub use geocode::{GeocodeHit, Geocoder, GeocoderConfig, StubGeocoder};
pub use server::{serve, ServerHandle};
