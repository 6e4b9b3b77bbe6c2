//! Seeded synthetic trip corpora for tests, benchmarks and demos.
//!
//! Pickups cluster around a handful of busy areas with a uniform background;
//! dropoffs land a few kilometres away. Fares follow a metered tariff with
//! noise and a tip. Everything is quantized like ingested data, so a corpus
//! survives a round trip through CSV or the records file unchanged.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::{haversine_miles, BoundingBox, GeoPoint};
use crate::ingest::TripRecord;
use crate::money::Cents;

const HOTSPOTS: [(f64, f64); 6] = [
    (40.7580, -73.9855),
    (40.7484, -73.9857),
    (40.7128, -74.0060),
    (40.7794, -73.9632),
    (40.6413, -73.7781),
    (40.7769, -73.8740),
];

/// 2013-01-01T00:00:00Z
const EPOCH_2013: i64 = 1_356_998_400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub bbox: BoundingBox,
    /// Share of pickups drawn around a hotspot instead of uniformly.
    pub hotspot_share: f64,
    pub hotspot_radius_deg: f64,
    pub max_trip_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { bbox: BoundingBox::nyc(), hotspot_share: 0.7, hotspot_radius_deg: 0.02, max_trip_deg: 0.05 }
    }
}

fn clamp_into(bbox: &BoundingBox, lat: f64, lon: f64) -> GeoPoint {
    GeoPoint {
        lat: lat.clamp(bbox.south_west.lat, bbox.north_east.lat),
        lon: lon.clamp(bbox.south_west.lon, bbox.north_east.lon),
    }
}

pub fn generate(n: usize, seed: u64, config: &SynthConfig) -> Vec<TripRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &config.bbox;
    (0..n)
        .map(|i| {
            let pickup = if rng.random::<f64>() < config.hotspot_share {
                let (lat, lon) = HOTSPOTS[rng.random_range(0..HOTSPOTS.len())];
                let r = config.hotspot_radius_deg;
                clamp_into(b, lat + rng.random_range(-r..=r), lon + rng.random_range(-r..=r))
            } else {
                GeoPoint {
                    lat: rng.random_range(b.south_west.lat..=b.north_east.lat),
                    lon: rng.random_range(b.south_west.lon..=b.north_east.lon),
                }
            };
            let m = config.max_trip_deg;
            let dropoff = clamp_into(b, pickup.lat + rng.random_range(-m..=m), pickup.lon + rng.random_range(-m..=m));

            let miles = haversine_miles(&pickup, &dropoff);
            let road_miles = miles * rng.random_range(1.1..1.5);
            let metered = 2.50 + 2.50 * road_miles + rng.random_range(0.0..3.0);
            let tip = if rng.random_bool(0.5) { metered * 0.2 } else { 0.0 };
            let total_fare = Cents::from_dollars(metered + tip + 0.5).expect("finite fare");

            let pickup_time = EPOCH_2013 + rng.random_range(0..365 * 86_400);
            let duration = (road_miles / 12.0 * 3600.0) as i64 + rng.random_range(60..600);
            TripRecord {
                trip_id: i as u64,
                pickup,
                dropoff,
                pickup_time: Some(pickup_time),
                dropoff_time: Some(pickup_time + duration),
                total_fare,
                trip_distance_mi: Some(road_miles),
            }
            .quantized()
        })
        .collect()
}

fn fmt_time(t: Option<i64>) -> String {
    t.and_then(|s| chrono::DateTime::from_timestamp(s, 0))
        .map(|d| d.format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_default()
}

/// Writes `trips` with the default (combined trip + fare) column names.
pub fn write_csv<W: Write>(out: W, trips: &[TripRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "medallion",
        "hack_license",
        "pickup_datetime",
        "dropoff_datetime",
        "trip_distance",
        "pickup_longitude",
        "pickup_latitude",
        "dropoff_longitude",
        "dropoff_latitude",
        "total_amount",
    ])?;
    for t in trips {
        w.write_record([
            format!("M{:06}", t.trip_id % 13_000),
            format!("H{:06}", t.trip_id % 40_000),
            fmt_time(t.pickup_time),
            fmt_time(t.dropoff_time),
            t.trip_distance_mi.map(|d| format!("{d:.2}")).unwrap_or_default(),
            format!("{:.6}", t.pickup.lon),
            format!("{:.6}", t.pickup.lat),
            format!("{:.6}", t.dropoff.lon),
            format!("{:.6}", t.dropoff.lat),
            t.total_fare.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
