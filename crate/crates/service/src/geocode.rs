//! Address lookup: a fixed fixture table for offline use, or an HTTP geocoder.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeHit {
    pub lat: f64,
    pub lon: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeocodeError {
    #[error("geocoder unavailable: {0}")]
    Unavailable(String),
    #[error("geocoder configuration: {0}")]
    Config(String),
}

pub trait Geocoder: Send + Sync {
    /// `Ok(None)` when the query matches nothing.
    fn geocode(&self, query: &str) -> Result<Option<GeocodeHit>, GeocodeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeocoderKind {
    #[default]
    Stub,
    Http,
}

fn default_timeout_ms() -> u64 {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeocoderConfig {
    #[serde(default)]
    pub kind: GeocoderKind,
    /// Search endpoint for `http`; called as `GET <url>?q=<query>`.
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra stub entries: a CSV file with `query,lat,lon,label` rows.
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
}

impl Default for GeocoderConfig {
    fn default() -> Self {
        GeocoderConfig { kind: GeocoderKind::Stub, url: None, timeout_ms: default_timeout_ms(), fixture_path: None }
    }
}

impl GeocoderConfig {
    pub fn build(&self) -> Result<Box<dyn Geocoder>, GeocodeError> {
        match self.kind {
            GeocoderKind::Stub => {
                let mut stub = StubGeocoder::bundled();
                if let Some(p) = &self.fixture_path {
                    stub.load_csv(p)?;
                }
                Ok(Box::new(stub))
            }
            GeocoderKind::Http => {
                let url = self.url.clone().ok_or_else(|| GeocodeError::Config("http geocoder needs a url".into()))?;
                if self.timeout_ms == 0 {
                    return Err(GeocodeError::Config("timeout_ms must be positive".into()));
                }
                Ok(Box::new(HttpGeocoder::new(url, Duration::from_millis(self.timeout_ms))))
            }
        }
    }
}

const BUNDLED: &[(&str, f64, f64, &str)] = &[
    ("times square", 40.7580, -73.9855, "Times Square, Manhattan"),
    ("empire state building", 40.7484, -73.9857, "Empire State Building, Manhattan"),
    ("grand central", 40.7527, -73.9772, "Grand Central Terminal, Manhattan"),
    ("penn station", 40.7506, -73.9935, "Penn Station, Manhattan"),
    ("union square", 40.7359, -73.9911, "Union Square, Manhattan"),
    ("wall street", 40.7060, -74.0088, "Wall Street, Manhattan"),
    ("central park", 40.7829, -73.9654, "Central Park, Manhattan"),
    ("brooklyn bridge", 40.7061, -73.9969, "Brooklyn Bridge"),
    ("jfk airport", 40.6413, -73.7781, "John F. Kennedy International Airport, Queens"),
    ("laguardia airport", 40.7769, -73.8740, "LaGuardia Airport, Queens"),
    ("williamsburg", 40.7081, -73.9571, "Williamsburg, Brooklyn"),
    ("yankee stadium", 40.8296, -73.9262, "Yankee Stadium, Bronx"),
];

/// Lower-cases and collapses runs of whitespace.
pub fn normalize_query(q: &str) -> String {
    q.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct StubGeocoder {
    table: HashMap<String, GeocodeHit>,
}

impl StubGeocoder {
    pub fn bundled() -> Self {
        let table = BUNDLED
            .iter()
            .map(|&(q, lat, lon, label)| (q.to_string(), GeocodeHit { lat, lon, label: label.to_string() }))
            .collect();
        StubGeocoder { table }
    }

    pub fn insert(&mut self, query: &str, hit: GeocodeHit) {
        self.table.insert(normalize_query(query), hit);
    }

    pub fn load_csv(&mut self, path: &Path) -> Result<(), GeocodeError> {
        #[derive(Deserialize)]
        struct Row {
            query: String,
            lat: f64,
            lon: f64,
            label: String,
        }
        let err = |e: csv::Error| GeocodeError::Config(format!("{}: {e}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(err)?;
        for row in reader.deserialize::<Row>() {
            let r = row.map_err(err)?;
            self.insert(&r.query, GeocodeHit { lat: r.lat, lon: r.lon, label: r.label });
        }
        Ok(())
    }
}

impl Geocoder for StubGeocoder {
    fn geocode(&self, query: &str) -> Result<Option<GeocodeHit>, GeocodeError> {
        Ok(self.table.get(&normalize_query(query)).cloned())
    }
}

/// Accepts `{"lat", "lon", "label"}`, or a search-style array whose first
/// element has `lat`/`lon` (numbers or strings) and `display_name`.
pub struct HttpGeocoder {
    agent: ureq::Agent,
    url: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Coord {
    Num(f64),
    Text(String),
}

impl Coord {
    fn value(&self) -> Option<f64> {
        match self {
            Coord::Num(v) => Some(*v),
            Coord::Text(s) => s.trim().parse().ok(),
        }
    }
}

#[derive(Deserialize)]
struct Place {
    lat: Coord,
    lon: Coord,
    #[serde(alias = "display_name")]
    label: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Body {
    One(Place),
    Many(Vec<Place>),
}

pub fn parse_geocode_body(body: &str, query: &str) -> Result<Option<GeocodeHit>, GeocodeError> {
    let parsed: Body = serde_json::from_str(body).map_err(|e| GeocodeError::Unavailable(format!("bad response: {e}")))?;
    let place = match parsed {
        Body::One(p) => p,
        Body::Many(list) => match list.into_iter().next() {
            Some(p) => p,
            None => return Ok(None),
        },
    };
    match (place.lat.value(), place.lon.value()) {
        (Some(lat), Some(lon)) if lat.is_finite() && lon.is_finite() => {
            Ok(Some(GeocodeHit { lat, lon, label: place.label.unwrap_or_else(|| query.to_string()) }))
        }
        _ => Err(GeocodeError::Unavailable("bad coordinates in response".into())),
    }
}

impl HttpGeocoder {
    pub fn new(url: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpGeocoder { agent, url }
    }
}

impl Geocoder for HttpGeocoder {
    fn geocode(&self, query: &str) -> Result<Option<GeocodeHit>, GeocodeError> {
        let mut resp = self
            .agent
            .get(&self.url)
            .query("q", query)
            .header("Accept", "application/json")
            .call()
            .map_err(|e| GeocodeError::Unavailable(e.to_string()))?;
        match resp.status().as_u16() {
            404 => return Ok(None),
            s if !(200..300).contains(&s) => return Err(GeocodeError::Unavailable(format!("HTTP {s}"))),
            _ => {}
        }
        let body = resp.body_mut().read_to_string().map_err(|e| GeocodeError::Unavailable(e.to_string()))?;
        parse_geocode_body(&body, query)
    }
}
