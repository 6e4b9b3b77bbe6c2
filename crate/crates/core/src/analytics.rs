//! Batch statistics over an indexed corpus: paired yellow/ride-hailing prices,
//! price and distance distributions, the median-price curve with its crossover
//! point, the per-area majority raster and trace-point export.
//!
//! Conventions:
//! - medians are lower medians (element `(n − 1) / 2` of the sorted values) over
//!   integer cents;
//! - histogram bins are half-open `[e_i, e_{i+1})`; values below the first edge
//!   or at/above the last one are counted in `underflow` / `overflow`;
//! - a raster cell is BLACK only with a strict ride-hailing majority; a tied
//!   cell with votes is YELLOW, a cell without votes is NODATA;
//! - sampling is a seeded ChaCha8 Bernoulli draw per trip, in corpus order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fare_query::uber_quote;
use crate::geo::{haversine_miles, CellId, GeoPoint, MeshSpec};
use crate::ingest::TripRecord;
use crate::money::Cents;
use crate::pricing::{PricingError, PricingProvider};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no input to summarize")]
    EmptyInput,
    #[error("sample fraction must lie in (0, 1], got {0}")]
    InvalidSample(f64),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("bin width must be positive")]
    InvalidBinWidth,
    #[error("raster: {0}")]
    Raster(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub fraction: f64,
    pub seed: u64,
}

impl Sampling {
    pub fn new(fraction: f64, seed: u64) -> Result<Self, AnalyticsError> {
        if fraction > 0.0 && fraction <= 1.0 {
            Ok(Sampling { fraction, seed })
        } else {
            Err(AnalyticsError::InvalidSample(fraction))
        }
    }

    pub fn all() -> Self {
        Sampling { fraction: 1.0, seed: 0 }
    }

    /// Ascending positions of the selected items out of `n`.
    pub fn select(&self, n: usize) -> Vec<usize> {
        if self.fraction >= 1.0 {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..n).filter(|_| rng.random::<f64>() < self.fraction).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePair {
    /// Position in the corpus.
    pub ordinal: u32,
    pub trip_id: u64,
    pub pickup: GeoPoint,
    pub yellow: Cents,
    pub uber: Cents,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub corpus_size: u64,
    pub sampled: u64,
    pub paired: u64,
    pub provider_failed: u64,
    pub failures_by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub pairs: Vec<PricePair>,
    pub report: RunReport,
}

fn failure_kind(e: &PricingError) -> &'static str {
    match e {
        PricingError::ProviderUnavailable(_) => "provider-unavailable",
        PricingError::MalformedResponse(_) => "malformed-response",
        PricingError::InvalidRange { .. } => "invalid-range",
        PricingError::InvalidRateCard(_) | PricingError::Config(_) => "config",
    }
}

/// Pairs each sampled trip's recorded fare with the provider's range mean for
/// the same endpoints. Provider failures skip the trip and are counted.
pub fn run_experiment(
    corpus: &[TripRecord],
    provider: &dyn PricingProvider,
    sampling: &Sampling,
) -> ExperimentRun {
    let selected = sampling.select(corpus.len());
    let quoted: Vec<Result<PricePair, PricingError>> = selected
        .par_iter()
        .map(|&i| {
            let t = &corpus[i];
            uber_quote(provider, &t.pickup, &t.dropoff).map(|q| PricePair {
                ordinal: i as u32,
                trip_id: t.trip_id,
                pickup: t.pickup,
                yellow: t.total_fare,
                uber: q.amount_usd,
            })
        })
        .collect();

    let mut report = RunReport {
        corpus_size: corpus.len() as u64,
        sampled: selected.len() as u64,
        ..RunReport::default()
    };
    let mut pairs = Vec::with_capacity(quoted.len());
    for q in quoted {
        match q {
            Ok(p) => pairs.push(p),
            Err(e) => {
                report.provider_failed += 1;
                *report.failures_by_kind.entry(failure_kind(&e).to_string()).or_default() += 1;
            }
        }
    }
    report.paired = pairs.len() as u64;
    ExperimentRun { pairs, report }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub width: f64,
    pub bins: usize,
}

impl HistogramSpec {
    /// $1 bins over $0–100.
    pub fn prices() -> Self {
        HistogramSpec { lo: 0.0, width: 1.0, bins: 100 }
    }

    /// Quarter-mile bins over 0–30 mi.
    pub fn distances() -> Self {
        HistogramSpec { lo: 0.0, width: 0.25, bins: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram<T = f64> {
    pub bin_edges: Vec<T>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub total: u64,
}

impl<T: Scalar> Histogram<T> {
    pub fn with_edges(bin_edges: Vec<T>) -> Result<Self, AnalyticsError> {
        if bin_edges.len() < 2 {
            return Err(AnalyticsError::InvalidHistogram("need at least two edges".into()));
        }
        if !bin_edges.windows(2).all(|w| w[0] < w[1]) || !bin_edges.iter().all(|e| e.is_finite()) {
            return Err(AnalyticsError::InvalidHistogram("edges must be finite and strictly ascending".into()));
        }
        let bins = bin_edges.len() - 1;
        Ok(Histogram { bin_edges, counts: vec![0; bins], underflow: 0, overflow: 0, total: 0 })
    }

    pub fn uniform(lo: T, width: T, bins: usize) -> Result<Self, AnalyticsError> {
        if bins == 0 || !(width > T::zero()) {
            return Err(AnalyticsError::InvalidHistogram("need positive width and bins".into()));
        }
        let edges = (0..=bins).map(|k| lo + width * T::from_usize(k).unwrap()).collect();
        Self::with_edges(edges)
    }

    /// Non-finite values land in `overflow`.
    pub fn add(&mut self, v: T) {
        self.total += 1;
        if !v.is_finite() || v >= *self.bin_edges.last().unwrap() {
            self.overflow += 1;
        } else if v < self.bin_edges[0] {
            self.underflow += 1;
        } else {
            let i = self.bin_edges.partition_point(|e| *e <= v) - 1;
            self.counts[i] += 1;
        }
    }

    /// Σ counts (overflow bins included) = total, edges strictly ascending.
    pub fn is_consistent(&self) -> bool {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow == self.total
            && self.counts.len() + 1 == self.bin_edges.len()
            && self.bin_edges.windows(2).all(|w| w[0] < w[1])
    }
}

fn price_histogram(spec: &HistogramSpec, values: impl Iterator<Item = Cents>) -> Result<Histogram, AnalyticsError> {
    // Edges on whole cents so bin membership matches integer arithmetic.
    let lo = Cents::from_dollars(spec.lo).ok_or_else(|| AnalyticsError::InvalidHistogram("lo".into()))?;
    let width = Cents::from_dollars(spec.width).ok_or_else(|| AnalyticsError::InvalidHistogram("width".into()))?;
    if width.0 <= 0 || spec.bins == 0 {
        return Err(AnalyticsError::InvalidHistogram("need positive width and bins".into()));
    }
    let edges = (0..=spec.bins as i64).map(|k| Cents(lo.0 + k * width.0).dollars()).collect();
    let mut h = Histogram::with_edges(edges)?;
    values.for_each(|v| h.add(v.dollars()));
    Ok(h)
}

/// Lower median: element `(n − 1) / 2` in ascending order.
pub fn lower_median(values: &mut [i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    Some(*values.select_nth_unstable(mid).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDistributions {
    pub yellow: Histogram,
    pub uber: Histogram,
    pub median_yellow: Cents,
    pub median_uber: Cents,
    /// `median(uber) − median(yellow)`.
    pub median_gap: Cents,
}

pub fn price_distributions(pairs: &[PricePair], bins: &HistogramSpec) -> Result<PriceDistributions, AnalyticsError> {
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let yellow = price_histogram(bins, pairs.iter().map(|p| p.yellow))?;
    let uber = price_histogram(bins, pairs.iter().map(|p| p.uber))?;
    let mut ys: Vec<i64> = pairs.iter().map(|p| p.yellow.0).collect();
    let mut us: Vec<i64> = pairs.iter().map(|p| p.uber.0).collect();
    let median_yellow = Cents(lower_median(&mut ys).unwrap());
    let median_uber = Cents(lower_median(&mut us).unwrap());
    Ok(PriceDistributions { yellow, uber, median_yellow, median_uber, median_gap: median_uber - median_yellow })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    /// Yellow price bin `[lo, hi)`.
    pub lo: Cents,
    pub hi: Cents,
    pub support: u64,
    /// Absent when `support` is below the configured minimum.
    pub median_uber: Option<Cents>,
}

impl CurveBin {
    /// `median ≤ (lo + hi) / 2`, evaluated exactly in half-cents.
    fn uber_not_above_midpoint(&self) -> Option<bool> {
        self.median_uber.map(|m| 2 * m.0 <= self.lo.0 + self.hi.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianCurve {
    pub bin_width: Cents,
    pub min_support: u64,
    /// Occupied bins, ascending.
    pub bins: Vec<CurveBin>,
    /// Lower edge of the first supported bin from which the median ride-hailing
    /// price stays at or below the bin midpoint for every later supported bin.
    pub crossover: Option<Cents>,
}

pub fn median_curve(pairs: &[PricePair], bin_width: Cents, min_support: u64) -> Result<MedianCurve, AnalyticsError> {
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    if bin_width.0 <= 0 {
        return Err(AnalyticsError::InvalidBinWidth);
    }
    let mut groups: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.yellow.0.div_euclid(bin_width.0)).or_default().push(p.uber.0);
    }
    let bins: Vec<CurveBin> = groups
        .into_iter()
        .map(|(k, mut ubers)| {
            let support = ubers.len() as u64;
            let median_uber = (support >= min_support.max(1)).then(|| Cents(lower_median(&mut ubers).unwrap()));
            CurveBin { lo: Cents(k * bin_width.0), hi: Cents((k + 1) * bin_width.0), support, median_uber }
        })
        .collect();

    let mut crossover = None;
    for b in bins.iter().rev() {
        match b.uber_not_above_midpoint() {
            None => continue,
            Some(true) => crossover = Some(b.lo),
            Some(false) => break,
        }
    }
    Ok(MedianCurve { bin_width, min_support, bins, crossover })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    /// Straight-line pickup→dropoff distance, miles.
    pub histogram: Histogram,
    pub mean_mi: f64,
    /// Mean of the meter-reported distance over trips that carry one.
    pub meter_mean_mi: Option<f64>,
    pub count: u64,
}

pub fn distance_distribution(corpus: &[TripRecord], bins: &HistogramSpec) -> Result<DistanceStats, AnalyticsError> {
    if corpus.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut histogram = Histogram::uniform(bins.lo, bins.width, bins.bins)?;
    let mut sum = 0.0;
    let (mut meter_sum, mut meter_n) = (0.0, 0u64);
    for t in corpus {
        let d = haversine_miles(&t.pickup, &t.dropoff);
        histogram.add(d);
        sum += d;
        if let Some(m) = t.trip_distance_mi {
            meter_sum += m;
            meter_n += 1;
        }
    }
    let count = corpus.len() as u64;
    Ok(DistanceStats {
        histogram,
        mean_mi: sum / count as f64,
        meter_mean_mi: (meter_n > 0).then(|| meter_sum / meter_n as f64),
        count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Black,
    Yellow,
    Nodata,
}

impl Verdict {
    pub fn from_votes(uber_cheaper: u64, yellow_cheaper: u64) -> Self {
        if uber_cheaper == 0 && yellow_cheaper == 0 {
            Verdict::Nodata
        } else if uber_cheaper > yellow_cheaper {
            Verdict::Black
        } else {
            Verdict::Yellow
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Black => "BLACK",
            Verdict::Yellow => "YELLOW",
            Verdict::Nodata => "NODATA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterCell {
    pub uber_cheaper_count: u64,
    pub yellow_cheaper_count: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityRaster {
    pub spec: MeshSpec,
    /// Cells that received at least one pair, row-major.
    pub cells: BTreeMap<CellId, RasterCell>,
}

impl MajorityRaster {
    pub fn verdict_at(&self, cell: &CellId) -> Verdict {
        self.cells.get(cell).map_or(Verdict::Nodata, |c| c.verdict)
    }
}

/// Every pair votes in the raster cell of its pickup; equal prices abstain.
pub fn majority_raster(pairs: &[PricePair], raster: &MeshSpec) -> Result<MajorityRaster, AnalyticsError> {
    if pairs.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut votes: BTreeMap<CellId, (u64, u64)> = BTreeMap::new();
    for p in pairs {
        let cell = raster.cell_of(&p.pickup).map_err(|e| AnalyticsError::Raster(e.to_string()))?;
        let v = votes.entry(cell).or_default();
        if p.uber < p.yellow {
            v.0 += 1;
        } else if p.uber > p.yellow {
            v.1 += 1;
        }
    }
    let cells = votes
        .into_iter()
        .map(|(cell, (u, y))| {
            (cell, RasterCell { uber_cheaper_count: u, yellow_cheaper_count: y, verdict: Verdict::from_votes(u, y) })
        })
        .collect();
    Ok(MajorityRaster { spec: *raster, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lat: f64,
    pub lon: f64,
    pub kind: TraceKind,
}

/// Pickup then dropoff of every sampled trip.
pub fn export_trace_points(corpus: &[TripRecord], sampling: &Sampling) -> Vec<TracePoint> {
    sampling
        .select(corpus.len())
        .into_iter()
        .flat_map(|i| {
            let t = &corpus[i];
            [
                TracePoint { lat: t.pickup.lat, lon: t.pickup.lon, kind: TraceKind::Pickup },
                TracePoint { lat: t.dropoff.lat, lon: t.dropoff.lon, kind: TraceKind::Dropoff },
            ]
        })
        .collect()
}

pub fn write_trace_points<W: Write>(out: W, points: &[TracePoint]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> AnalyticsError {
    AnalyticsError::Io(io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub sampling: Sampling,
    pub price_bins: HistogramSpec,
    pub distance_bins: HistogramSpec,
    pub curve_bin_width: Cents,
    pub curve_min_support: u64,
    pub raster_cell_m: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            sampling: Sampling::all(),
            price_bins: HistogramSpec::prices(),
            distance_bins: HistogramSpec::distances(),
            curve_bin_width: Cents(100),
            curve_min_support: 1,
            raster_cell_m: 1_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsBundle {
    pub run: RunReport,
    pub prices: PriceDistributions,
    pub curve: MedianCurve,
    pub distances: DistanceStats,
    pub raster: MajorityRaster,
    pub trace_points: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median_gap_usd: Cents,
    pub median_yellow_usd: Cents,
    pub median_uber_usd: Cents,
    pub crossover_usd: Option<Cents>,
    pub mean_distance_mi: f64,
    pub meter_mean_distance_mi: Option<f64>,
    pub counts: SummaryCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCounts {
    pub corpus: u64,
    pub sampled: u64,
    pub paired: u64,
    pub provider_failed: u64,
    pub failures_by_kind: BTreeMap<String, u64>,
    pub raster_cells: u64,
    pub trace_points: u64,
}

/// Runs every analysis over one seeded sample of `corpus`. The raster uses the
/// same box as `mesh` with `config.raster_cell_m` cells.
pub fn run_stats(
    corpus: &[TripRecord],
    mesh: &MeshSpec,
    provider: &dyn PricingProvider,
    config: &StatsConfig,
) -> Result<StatsBundle, AnalyticsError> {
    let raster_spec = mesh
        .with_cell_size(config.raster_cell_m)
        .map_err(|e| AnalyticsError::Raster(e.to_string()))?;
    if raster_spec.cell_size < mesh.cell_size {
        return Err(AnalyticsError::Raster("raster cells must not be smaller than mesh cells".into()));
    }
    let run = run_experiment(corpus, provider, &config.sampling);
    let sampled: Vec<TripRecord> = config.sampling.select(corpus.len()).into_iter().map(|i| corpus[i]).collect();
    Ok(StatsBundle {
        prices: price_distributions(&run.pairs, &config.price_bins)?,
        curve: median_curve(&run.pairs, config.curve_bin_width, config.curve_min_support)?,
        distances: distance_distribution(&sampled, &config.distance_bins)?,
        raster: majority_raster(&run.pairs, &raster_spec)?,
        trace_points: export_trace_points(corpus, &config.sampling),
        run: run.report,
    })
}

impl StatsBundle {
    pub fn summary(&self) -> Summary {
        Summary {
            median_gap_usd: self.prices.median_gap,
            median_yellow_usd: self.prices.median_yellow,
            median_uber_usd: self.prices.median_uber,
            crossover_usd: self.curve.crossover,
            mean_distance_mi: self.distances.mean_mi,
            meter_mean_distance_mi: self.distances.meter_mean_mi,
            counts: SummaryCounts {
                corpus: self.run.corpus_size,
                sampled: self.run.sampled,
                paired: self.run.paired,
                provider_failed: self.run.provider_failed,
                failures_by_kind: self.run.failures_by_kind.clone(),
                raster_cells: self.raster.cells.len() as u64,
                trace_points: self.trace_points.len() as u64,
            },
        }
    }

    /// Writes `distributions.csv`, `median_curve.csv`, `distances.csv`,
    /// `raster.csv`, `trace_points.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), AnalyticsError> {
        fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_path(dir.join("distributions.csv")).map_err(csv_io)?;
        w.write_record(["bin_lo_usd", "bin_hi_usd", "yellow_count", "uber_count"]).map_err(csv_io)?;
        let (y, u) = (&self.prices.yellow, &self.prices.uber);
        w.write_record(["-inf".to_string(), y.bin_edges[0].to_string(), y.underflow.to_string(), u.underflow.to_string()])
            .map_err(csv_io)?;
        for i in 0..y.counts.len() {
            w.write_record([
                y.bin_edges[i].to_string(),
                y.bin_edges[i + 1].to_string(),
                y.counts[i].to_string(),
                u.counts[i].to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.write_record([y.bin_edges[y.counts.len()].to_string(), "inf".into(), y.overflow.to_string(), u.overflow.to_string()])
            .map_err(csv_io)?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("median_curve.csv")).map_err(csv_io)?;
        w.write_record(["bin_lo_usd", "bin_hi_usd", "support", "median_uber_usd"]).map_err(csv_io)?;
        for b in &self.curve.bins {
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.support.to_string(),
                b.median_uber.map(|m| m.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("distances.csv")).map_err(csv_io)?;
        w.write_record(["bin_lo_mi", "bin_hi_mi", "count"]).map_err(csv_io)?;
        let h = &self.distances.histogram;
        for i in 0..h.counts.len() {
            w.write_record([h.bin_edges[i].to_string(), h.bin_edges[i + 1].to_string(), h.counts[i].to_string()])
                .map_err(csv_io)?;
        }
        w.write_record([h.bin_edges[h.counts.len()].to_string(), "inf".into(), h.overflow.to_string()])
            .map_err(csv_io)?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("raster.csv")).map_err(csv_io)?;
        w.write_record(["ix", "iy", "verdict", "uber_cheaper", "yellow_cheaper"]).map_err(csv_io)?;
        for (cell, c) in &self.raster.cells {
            w.write_record([
                cell.ix.to_string(),
                cell.iy.to_string(),
                c.verdict.as_str().to_string(),
                c.uber_cheaper_count.to_string(),
                c.yellow_cheaper_count.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;

        write_trace_points(fs::File::create(dir.join("trace_points.csv"))?, &self.trace_points)?;

        let mut json = serde_json::to_string_pretty(&self.summary()).map_err(io::Error::other)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::{PriceRange, RateCard, RateCardEmulator};

    fn pair(yellow: i64, uber: i64) -> PricePair {
        PricePair { ordinal: 0, trip_id: 0, pickup: GeoPoint { lat: 40.75, lon: -73.98 }, yellow: Cents(yellow), uber: Cents(uber) }
    }

    fn trip(pickup: GeoPoint, dropoff: GeoPoint, cents: i64) -> TripRecord {
        TripRecord {
            trip_id: 0,
            pickup,
            dropoff,
            pickup_time: None,
            dropoff_time: None,
            total_fare: Cents(cents),
            trip_distance_mi: None,
        }
    }

    #[test]
    fn three_pair_medians() {
        let pairs = [pair(1000, 1200), pair(2000, 2100), pair(3000, 3000)];
        let d = price_distributions(&pairs, &HistogramSpec::prices()).unwrap();
        assert_eq!((d.median_yellow, d.median_uber, d.median_gap), (Cents(2000), Cents(2100), Cents(100)));
        assert!(d.yellow.is_consistent() && d.uber.is_consistent());
        assert_eq!(d.yellow.counts[10] + d.yellow.counts[20] + d.yellow.counts[30], 3);

        let same = [pair(900, 900), pair(1500, 1500)];
        assert_eq!(price_distributions(&same, &HistogramSpec::prices()).unwrap().median_gap, Cents(0));
        assert!(matches!(price_distributions(&[], &HistogramSpec::prices()), Err(AnalyticsError::EmptyInput)));
    }

    #[test]
    fn lower_median_even_count() {
        assert_eq!(lower_median(&mut [4, 1, 3, 2]), Some(2));
        assert_eq!(lower_median(&mut [7]), Some(7));
        assert_eq!(lower_median(&mut []), None);
    }

    #[test]
    fn histogram_edges_and_overflow() {
        let mut h = Histogram::uniform(0.0, 1.0, 3).unwrap();
        for v in [-0.5, 0.0, 0.999, 1.0, 2.5, 3.0, f64::NAN] {
            h.add(v);
        }
        assert_eq!(h.counts, vec![2, 1, 1]);
        assert_eq!((h.underflow, h.overflow, h.total), (1, 2, 7));
        assert!(h.is_consistent());
        assert!(Histogram::<f64>::with_edges(vec![1.0, 1.0]).is_err());
        assert!(Histogram::<f32>::uniform(0.0, 0.5, 4).is_ok());
    }

    #[test]
    fn price_histogram_has_no_float_edge_drift() {
        // 0.1 * 3 != 0.3 in floats; cent-built edges keep $0.30 in the right bin.
        let spec = HistogramSpec { lo: 0.0, width: 0.1, bins: 10 };
        let h = price_histogram(&spec, [Cents(30), Cents(29)].into_iter()).unwrap();
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.counts[2], 1);
    }

    #[test]
    fn curve_with_shift_at_35() {
        // Every cent value per bin so the in-bin lower median sits below the midpoint.
        let mut pairs = Vec::new();
        for y in (500..8000).step_by(7) {
            let u = if y < 3500 { y + 200 } else { y - 200 };
            pairs.push(pair(y, u));
        }
        let c = median_curve(&pairs, Cents(100), 1).unwrap();
        assert_eq!(c.crossover, Some(Cents(3500)));
    }

    #[test]
    fn curve_identity_crosses_at_first_bin() {
        let pairs: Vec<_> = (1000..3000).map(|y| pair(y, y)).collect();
        let c = median_curve(&pairs, Cents(100), 1).unwrap();
        assert_eq!(c.crossover, Some(Cents(1000)));
    }

    #[test]
    fn curve_never_crossing_and_support_gaps() {
        let pairs: Vec<_> = (1000..3000).map(|y| pair(y, y + 500)).collect();
        assert_eq!(median_curve(&pairs, Cents(100), 1).unwrap().crossover, None);

        // A lone expensive pair in a thin bin does not break the trailing run.
        let mut pairs: Vec<_> = (1000..3000).map(|y| pair(y, y - 300)).collect();
        pairs.push(pair(2550, 9000));
        let c = median_curve(&pairs, Cents(100), 10).unwrap();
        assert_eq!(c.crossover, Some(Cents(1000)));
        assert!(matches!(median_curve(&pairs, Cents(0), 1), Err(AnalyticsError::InvalidBinWidth)));
    }

    #[test]
    fn raster_votes() {
        let spec = MeshSpec::nyc().with_cell_size(1_000.0).unwrap();
        let a = spec.cell_center(&CellId::new(3, 3));
        let b = spec.cell_center(&CellId::new(4, 3));
        let c = spec.cell_center(&CellId::new(5, 3));
        let mut pairs = vec![];
        let at = |p: GeoPoint, y: i64, u: i64| PricePair { pickup: p, ..pair(y, u) };
        pairs.extend([at(a, 10, 5), at(a, 10, 5), at(a, 10, 5), at(a, 10, 15)]);
        pairs.extend([at(b, 10, 5), at(b, 10, 5), at(b, 10, 15), at(b, 10, 15), at(b, 10, 10)]);
        pairs.push(at(c, 10, 10));
        let r = majority_raster(&pairs, &spec).unwrap();
        assert_eq!(r.verdict_at(&CellId::new(3, 3)), Verdict::Black);
        assert_eq!(r.verdict_at(&CellId::new(4, 3)), Verdict::Yellow);
        assert_eq!(r.verdict_at(&CellId::new(5, 3)), Verdict::Nodata);
        assert_eq!(r.verdict_at(&CellId::new(9, 9)), Verdict::Nodata);
        assert_eq!(r.cells[&CellId::new(3, 3)].uber_cheaper_count, 3);
    }

    #[test]
    fn distance_means() {
        let o = GeoPoint { lat: 40.70, lon: -73.95 };
        // Due north: 1 mi and 3 mi.
        let north = |mi: f64| GeoPoint { lat: o.lat + (mi * crate::geo::METERS_PER_MILE / crate::geo::EARTH_RADIUS_M).to_degrees(), lon: o.lon };
        let s = distance_distribution(&[trip(o, north(3.0), 100)], &HistogramSpec::distances()).unwrap();
        assert!((s.mean_mi - 3.0).abs() < 1e-9);
        let s = distance_distribution(&[trip(o, north(1.0), 100), trip(o, north(3.0), 100)], &HistogramSpec::distances()).unwrap();
        assert!((s.mean_mi - 2.0).abs() < 1e-9);
        assert_eq!(s.meter_mean_mi, None);
        assert!(s.histogram.is_consistent());
        assert!(matches!(distance_distribution(&[], &HistogramSpec::distances()), Err(AnalyticsError::EmptyInput)));
    }

    #[test]
    fn experiment_pairs_and_sampling() {
        let card = RateCard { range_spread: 0.0, ..RateCard::illustrative() };
        let emulator = RateCardEmulator::new(card.clone()).unwrap();
        let o = GeoPoint { lat: 40.75, lon: -73.99 };
        let d = GeoPoint { lat: 40.78, lon: -73.95 };
        let run = run_experiment(&[trip(o, d, 1234)], &emulator, &Sampling::all());
        assert_eq!(run.pairs.len(), 1);
        assert_eq!(run.pairs[0].yellow, Cents(1234));
        let point = Cents::from_dollars(card.point_fare(haversine_miles(&o, &d))).unwrap();
        assert_eq!(run.pairs[0].uber, point);

        let corpus: Vec<_> = (0..200).map(|i| trip(o, d, 1000 + i)).collect();
        let s = Sampling::new(0.5, 42).unwrap();
        assert_eq!(s.select(200), s.select(200));
        let n = s.select(200).len();
        assert!(n > 60 && n < 140, "{n}");
        assert_ne!(Sampling::new(0.5, 43).unwrap().select(200), s.select(200));
        let run = run_experiment(&corpus, &emulator, &s);
        assert_eq!(run.report.sampled as usize, n);
        let picked: Vec<usize> = run.pairs.iter().map(|p| p.ordinal as usize).collect();
        assert_eq!(picked, s.select(200));
        assert!(Sampling::new(0.0, 1).is_err());
        assert!(Sampling::new(1.5, 1).is_err());
    }

    struct Flaky;

    impl PricingProvider for Flaky {
        fn estimate(&self, origin: &GeoPoint, _: &GeoPoint) -> Result<PriceRange, PricingError> {
            if origin.lat > 40.8 {
                Err(PricingError::ProviderUnavailable("flaky".into()))
            } else {
                PriceRange::from_dollars(10.0, 12.0)
            }
        }
        fn name(&self) -> &str {
            "flaky"
        }
    }

    #[test]
    fn provider_failures_are_counted_and_skipped() {
        let d = GeoPoint { lat: 40.70, lon: -73.95 };
        let corpus: Vec<_> = (0..1000)
            .map(|i| trip(GeoPoint { lat: if i % 4 == 0 { 40.85 } else { 40.75 }, lon: -73.95 }, d, 900))
            .collect();
        let run = run_experiment(&corpus, &Flaky, &Sampling::all());
        assert_eq!(run.report.provider_failed, 250);
        assert_eq!(run.pairs.len() as u64, run.report.sampled - run.report.provider_failed);
        assert_eq!(run.report.failures_by_kind["provider-unavailable"], 250);
    }

    #[test]
    fn trace_points() {
        let o = GeoPoint { lat: 40.75, lon: -73.99 };
        let d = GeoPoint { lat: 40.78, lon: -73.95 };
        let pts = export_trace_points(&[trip(o, d, 100)], &Sampling::all());
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[0].kind, pts[1].kind), (TraceKind::Pickup, TraceKind::Dropoff));
        let corpus: Vec<_> = (0..50).map(|_| trip(o, d, 100)).collect();
        assert_eq!(export_trace_points(&corpus, &Sampling::all()).len(), 100);
        let s = Sampling::new(0.3, 9).unwrap();
        assert_eq!(export_trace_points(&corpus, &s), export_trace_points(&corpus, &s));

        let mut buf = Vec::new();
        write_trace_points(&mut buf, &pts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lat,lon,kind\n40.75,-73.99,pickup\n40.78,-73.95,dropoff\n");
    }
}
