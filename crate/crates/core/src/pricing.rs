//! External ride-hailing price sources.
//!
//! A [`PricingProvider`] answers "what would this trip cost" with a
//! [`PriceRange`] (minimum and maximum estimate). Two implementations ship:
//! [`HttpProvider`], which queries an estimates endpoint, and
//! [`RateCardEmulator`], which prices straight-line distance with a
//! [`RateCard`] for offline use and tests.
//!
//! Wire format expected from the HTTP endpoint:
//!
//! ```json
//! {"low_estimate": 11.0, "high_estimate": 14.0, "currency_code": "USD"}
//! ```
//!
//! A body of the form `{"prices": [{"display_name": "uberX", ...}, ...]}` is
//! also accepted; the `uberX` entry is used.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_miles, GeoPoint};
use crate::money::Cents;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PricingError {
    #[error("pricing provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid price range ({min}, {max})")]
    InvalidRange { min: f64, max: f64 },
    #[error("invalid rate card: {0}")]
    InvalidRateCard(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceRange {
    pub min_usd: Cents,
    pub max_usd: Cents,
    pub currency: String,
}

impl PriceRange {
    pub fn new(min_usd: Cents, max_usd: Cents) -> Result<Self, PricingError> {
        if min_usd.is_positive() && min_usd <= max_usd {
            Ok(PriceRange { min_usd, max_usd, currency: "USD".into() })
        } else {
            Err(PricingError::InvalidRange { min: min_usd.dollars(), max: max_usd.dollars() })
        }
    }

    pub fn from_dollars(min: f64, max: f64) -> Result<Self, PricingError> {
        let invalid = || PricingError::InvalidRange { min, max };
        let lo = Cents::from_dollars(min).ok_or_else(invalid)?;
        let hi = Cents::from_dollars(max).ok_or_else(invalid)?;
        if !(min > 0.0 && min <= max) {
            return Err(invalid());
        }
        Self::new(lo, hi)
    }

    /// Midpoint of the range, rounded half up to the cent.
    pub fn mean(&self) -> Cents {
        self.min_usd.midpoint(self.max_usd)
    }
}

/// Parameters of the offline fare emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCard {
    pub base_usd: f64,
    pub per_mile_usd: f64,
    pub per_min_usd: f64,
    pub min_fare_usd: f64,
    pub booking_fee_usd: f64,
    pub avg_speed_mph: f64,
    /// Half-width of the emitted range as a fraction of the point fare.
    pub range_spread: f64,
}

impl RateCard {
    /// ILLUSTRATIVE values for demos only. They are not a published tariff.
    pub fn illustrative() -> Self {
        RateCard {
            base_usd: 2.55,
            per_mile_usd: 1.75,
            per_min_usd: 0.35,
            min_fare_usd: 8.00,
            booking_fee_usd: 2.10,
            avg_speed_mph: 12.0,
            range_spread: 0.10,
        }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        let money = [
            ("base_usd", self.base_usd),
            ("per_mile_usd", self.per_mile_usd),
            ("per_min_usd", self.per_min_usd),
            ("min_fare_usd", self.min_fare_usd),
            ("booking_fee_usd", self.booking_fee_usd),
        ];
        for (name, v) in money {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PricingError::InvalidRateCard(format!("{name} must be ≥ 0")));
            }
        }
        if !(self.avg_speed_mph.is_finite() && self.avg_speed_mph > 0.0) {
            return Err(PricingError::InvalidRateCard("avg_speed_mph must be > 0".into()));
        }
        if !(self.range_spread >= 0.0 && self.range_spread < 1.0) {
            return Err(PricingError::InvalidRateCard("range_spread must lie in [0, 1)".into()));
        }
        // Keeps the low end of the shortest trip at one cent or more.
        if (self.min_fare_usd.max(self.base_usd) + self.booking_fee_usd) * (1.0 - self.range_spread) < 0.01 {
            return Err(PricingError::InvalidRateCard(
                "min_fare_usd + booking_fee_usd must keep every estimate above zero".into(),
            ));
        }
        Ok(())
    }

    /// Point fare in dollars for a straight-line distance in miles.
    pub fn point_fare(&self, miles: f64) -> f64 {
        let minutes = miles / self.avg_speed_mph * 60.0;
        let metered = self.base_usd + self.per_mile_usd * miles + self.per_min_usd * minutes;
        metered.max(self.min_fare_usd) + self.booking_fee_usd
    }

    pub fn range_for_distance(&self, miles: f64) -> PriceRange {
        let point = self.point_fare(miles);
        let round = |v: f64| Cents::from_dollars(v).expect("finite fare");
        let min = round(point * (1.0 - self.range_spread));
        let max = round(point * (1.0 + self.range_spread));
        PriceRange { min_usd: min, max_usd: max, currency: "USD".into() }
    }
}

/// Emulated estimate range for the straight-line trip `origin → dest`.
/// `card` must have passed [`RateCard::validate`].
pub fn emulate_range(card: &RateCard, origin: &GeoPoint, dest: &GeoPoint) -> PriceRange {
    card.range_for_distance(haversine_miles(origin, dest))
}

pub trait PricingProvider: Send + Sync {
    fn estimate(&self, origin: &GeoPoint, dest: &GeoPoint) -> Result<PriceRange, PricingError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct RateCardEmulator {
    card: RateCard,
}

impl RateCardEmulator {
    pub fn new(card: RateCard) -> Result<Self, PricingError> {
        card.validate()?;
        Ok(RateCardEmulator { card })
    }

    pub fn card(&self) -> &RateCard {
        &self.card
    }
}

impl PricingProvider for RateCardEmulator {
    fn estimate(&self, origin: &GeoPoint, dest: &GeoPoint) -> Result<PriceRange, PricingError> {
        Ok(emulate_range(&self.card, origin, dest))
    }

    fn name(&self) -> &str {
        "emulator"
    }
}

fn default_timeout_ms() -> u64 {
    2_000
}

fn default_max_in_flight() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub url: String,
    /// Name of the environment variable holding the API token, if any.
    #[serde(default)]
    pub token_env_var: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Http(HttpProviderConfig),
    Emulator { rate_card: RateCard },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Emulator { rate_card: RateCard::illustrative() }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn PricingProvider>, PricingError> {
        Ok(match self {
            ProviderConfig::Http(c) => Box::new(HttpProvider::new(c.clone())?),
            ProviderConfig::Emulator { rate_card } => Box::new(RateCardEmulator::new(rate_card.clone())?),
        })
    }

    /// Reads a provider block from a TOML file.
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self, PricingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PricingError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PricingError::Config(format!("{}: {e}", path.display())))
    }
}

/// Counting gate on concurrent requests.
#[derive(Debug)]
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        InFlight { used: Mutex::new(0), freed: Condvar::new(), max }
    }

    fn acquire(&self, wait: Duration) -> Option<Permit<'_>> {
        let deadline = Instant::now() + wait;
        let mut used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        while *used >= self.max {
            let left = deadline.checked_duration_since(Instant::now())?;
            used = self.freed.wait_timeout(used, left).unwrap_or_else(|p| p.into_inner()).0;
        }
        *used += 1;
        Some(Permit(self))
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|p| p.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct EstimateBody {
    low_estimate: Option<f64>,
    high_estimate: Option<f64>,
    currency_code: Option<String>,
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    prices: Option<Vec<EstimateBody>>,
}

/// Parses an estimates response body into a validated range.
pub fn parse_estimate_body(body: &str) -> Result<PriceRange, PricingError> {
    let parsed: EstimateBody =
        serde_json::from_str(body).map_err(|e| PricingError::MalformedResponse(e.to_string()))?;
    let entry = match parsed.prices {
        Some(list) => list
            .into_iter()
            .find(|p| p.display_name.as_deref().is_some_and(|n| n.eq_ignore_ascii_case("uberx")))
            .ok_or_else(|| PricingError::MalformedResponse("no uberX entry in prices".into()))?,
        None => parsed,
    };
    let (Some(low), Some(high)) = (entry.low_estimate, entry.high_estimate) else {
        return Err(PricingError::MalformedResponse("missing low_estimate/high_estimate".into()));
    };
    if let Some(code) = entry.currency_code.as_deref() {
        if !code.eq_ignore_ascii_case("USD") {
            return Err(PricingError::MalformedResponse(format!("unsupported currency {code}")));
        }
    }
    PriceRange::from_dollars(low, high)
}

pub struct HttpProvider {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    timeout: Duration,
    gate: InFlight,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, PricingError> {
        if config.timeout_ms == 0 || config.max_in_flight == 0 {
            return Err(PricingError::Config("timeout_ms and max_in_flight must be positive".into()));
        }
        let token = match &config.token_env_var {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| PricingError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let timeout = Duration::from_millis(config.timeout_ms);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider { agent, url: config.url, token, timeout, gate: InFlight::new(config.max_in_flight) })
    }
}

impl PricingProvider for HttpProvider {
    fn estimate(&self, origin: &GeoPoint, dest: &GeoPoint) -> Result<PriceRange, PricingError> {
        let _permit = self
            .gate
            .acquire(self.timeout)
            .ok_or_else(|| PricingError::ProviderUnavailable("too many requests in flight".into()))?;
        let mut req = self
            .agent
            .get(&self.url)
            .query("start_latitude", origin.lat.to_string())
            .query("start_longitude", origin.lon.to_string())
            .query("end_latitude", dest.lat.to_string())
            .query("end_longitude", dest.lon.to_string())
            .header("Accept", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Token {token}"));
        }
        let mut resp = req.call().map_err(|e| PricingError::ProviderUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(PricingError::ProviderUnavailable(format!("HTTP {}", status.as_u16())));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PricingError::MalformedResponse(e.to_string()))?;
        parse_estimate_body(&body)
    }

    fn name(&self) -> &str {
        "http"
    }
}
