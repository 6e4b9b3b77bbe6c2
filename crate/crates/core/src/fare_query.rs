//! Yellow cab vs. ride-hailing quotes for an arbitrary origin/destination pair.
//!
//! The yellow estimate is the recorded fare of one historical trip: among trips
//! picked up in the Chebyshev neighbourhood of the origin cell, the one whose
//! dropoff lies closest (haversine) to the requested destination. Equal gaps
//! resolve to the lower trip ordinal. The fare is passed through unadjusted;
//! `dest_gap_m` tells the caller how far the matched dropoff is from the
//! requested destination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine, GeoPoint};
use crate::mesh_index::{MeshIndex, QueryError};
use crate::money::Cents;
use crate::pricing::{PricingError, PricingProvider};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FareError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Service {
    Yellow,
    UberX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Basis {
    HistoricalTrip,
    RangeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FareQuote {
    pub service: Service,
    pub amount_usd: Cents,
    pub basis: Basis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_trip: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_ring: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dest_gap_m: Option<f64>,
}

impl FareQuote {
    pub fn historical(amount_usd: Cents, matched: &ComparableTrip) -> Self {
        FareQuote {
            service: Service::Yellow,
            amount_usd,
            basis: Basis::HistoricalTrip,
            matched_trip: Some(matched.ordinal),
            origin_ring: Some(matched.ring_used),
            dest_gap_m: Some(matched.dest_gap_m),
        }
    }

    pub fn range_mean(amount_usd: Cents) -> Self {
        FareQuote {
            service: Service::UberX,
            amount_usd,
            basis: Basis::RangeMean,
            matched_trip: None,
            origin_ring: None,
            dest_gap_m: None,
        }
    }

    /// Positive amount, and match details present exactly for historical quotes.
    pub fn is_consistent(&self) -> bool {
        let has_match = self.matched_trip.is_some() && self.origin_ring.is_some() && self.dest_gap_m.is_some();
        let has_none = self.matched_trip.is_none() && self.origin_ring.is_none() && self.dest_gap_m.is_none();
        self.amount_usd.is_positive()
            && match self.basis {
                Basis::HistoricalTrip => has_match,
                Basis::RangeMean => has_none,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cheaper {
    Yellow,
    Uber,
    Tie,
}

impl Cheaper {
    /// Amounts are whole cents, so "within half a cent" means equal.
    pub fn from_delta(delta_usd: Cents) -> Self {
        match delta_usd.0 {
            d if d > 0 => Cheaper::Yellow,
            d if d < 0 => Cheaper::Uber,
            _ => Cheaper::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub yellow: FareQuote,
    pub uber: FareQuote,
    pub cheaper: Cheaper,
    /// `uber − yellow`.
    pub delta_usd: Cents,
}

impl ComparisonResult {
    pub fn new(yellow: FareQuote, uber: FareQuote) -> Self {
        let delta_usd = uber.amount_usd - yellow.amount_usd;
        ComparisonResult { yellow, uber, cheaper: Cheaper::from_delta(delta_usd), delta_usd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparableTrip {
    pub ordinal: u32,
    pub ring_used: u32,
    pub dest_gap_m: f64,
}

pub fn find_comparable_trip(
    index: &MeshIndex,
    origin: &GeoPoint,
    dest: &GeoPoint,
    max_ring: u32,
) -> Result<ComparableTrip, QueryError> {
    index.spec().project(dest)?;
    let (ring_used, rect) = index.locate_ring(origin, max_ring)?;
    let trips = index.trips();
    let mut best: Option<(f64, u32)> = None;
    for &ordinal in index.rect_slices(&rect).flatten() {
        let gap = haversine(&trips[ordinal as usize].dropoff, dest);
        let better = match best {
            None => true,
            Some((g, o)) => gap < g || (gap == g && ordinal < o),
        };
        if better {
            best = Some((gap, ordinal));
        }
    }
    let (dest_gap_m, ordinal) = best.ok_or(QueryError::NoTripsFound { max_ring })?;
    Ok(ComparableTrip { ordinal, ring_used, dest_gap_m })
}

pub fn yellow_quote(
    index: &MeshIndex,
    origin: &GeoPoint,
    dest: &GeoPoint,
    max_ring: u32,
) -> Result<FareQuote, QueryError> {
    let matched = find_comparable_trip(index, origin, dest, max_ring)?;
    let fare = index.trips()[matched.ordinal as usize].total_fare;
    Ok(FareQuote::historical(fare, &matched))
}

pub fn uber_quote(
    provider: &dyn PricingProvider,
    origin: &GeoPoint,
    dest: &GeoPoint,
) -> Result<FareQuote, PricingError> {
    let range = provider.estimate(origin, dest)?;
    if !(range.min_usd.is_positive() && range.min_usd <= range.max_usd) {
        return Err(PricingError::InvalidRange { min: range.min_usd.dollars(), max: range.max_usd.dollars() });
    }
    Ok(FareQuote::range_mean(range.mean()))
}

/// Both quotes; the provider is not consulted when no historical trip matches.
pub fn compare(
    index: &MeshIndex,
    provider: &dyn PricingProvider,
    origin: &GeoPoint,
    dest: &GeoPoint,
    max_ring: u32,
) -> Result<ComparisonResult, FareError> {
    let yellow = yellow_quote(index, origin, dest, max_ring)?;
    let uber = uber_quote(provider, origin, dest)?;
    Ok(ComparisonResult::new(yellow, uber))
}
