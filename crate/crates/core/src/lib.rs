pub mod analytics;
pub mod binfmt;
pub mod fare_query;
pub mod geo;
pub mod ingest;
pub mod mesh_index;
pub mod money;
pub mod pricing;
pub mod scalar;
pub mod synth;

pub use analytics::{run_stats, Histogram, MedianCurve, Sampling, StatsBundle, StatsConfig, Verdict};
pub use fare_query::{compare, find_comparable_trip, Cheaper, ComparisonResult, FareError, FareQuote};
pub use geo::{haversine, haversine_miles, BoundingBox, CellId, GeoError, GeoPoint, MeshSpec};
pub use ingest::{IngestReport, RejectReason, TripRecord};
pub use mesh_index::{MeshIndex, QueryError};
pub use money::Cents;
pub use pricing::{PriceRange, PricingError, PricingProvider, ProviderConfig, RateCard, RateCardEmulator};
pub use scalar::Scalar;

pub type GeoPointF64 = GeoPoint<f64>;
pub type GeoPointF32 = GeoPoint<f32>;
pub type BoundingBoxF64 = BoundingBox<f64>;
pub type BoundingBoxF32 = BoundingBox<f32>;
pub type MeshSpecF64 = MeshSpec<f64>;
pub type MeshSpecF32 = MeshSpec<f32>;
pub type HistogramF64 = Histogram<f64>;
pub type HistogramF32 = Histogram<f32>;
