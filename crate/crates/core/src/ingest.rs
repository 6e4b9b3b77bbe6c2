//! CSV ingestion of historical taxi trips.
//!
//! Rows are mapped onto the canonical [`TripRecord`] through a [`ColumnMapping`]
//! (defaults match the 2013 FOIL trip/fare release), validated, and either kept
//! or rejected with the first rule they fail. Rejection rules, in order:
//!
//! 1. `malformed-number`: a required field is missing or does not parse.
//! 2. `zero-island`: pickup or dropoff is exactly (0, 0).
//! 3. `out-of-bbox`: pickup or dropoff lies outside the configured box.
//! 4. `nonpositive-fare`: total fare ≤ 0.
//! 5. `time-inverted`: pickup time later than dropoff time.
//!
//! The split trip/fare files are joined by [`join_fare`], which adds the
//! `unmatched` and `duplicate-key` reasons.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use csv::{ByteRecord, ReaderBuilder, Trim};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::{self, Decoder, Encoder, FormatError};
use crate::geo::{BoundingBox, GeoPoint};
use crate::money::Cents;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    /// Opaque identifier: the 0-based data row of the source trip file.
    pub trip_id: u64,
    pub pickup: GeoPoint,
    pub dropoff: GeoPoint,
    /// UTC epoch seconds.
    pub pickup_time: Option<i64>,
    pub dropoff_time: Option<i64>,
    /// Fare, surcharges and tip.
    pub total_fare: Cents,
    /// Meter-reported distance, quantized to 1/100 mile.
    pub trip_distance_mi: Option<f64>,
}

impl TripRecord {
    /// Rounds coordinates and meter distance to their stored resolution.
    pub fn quantized(self) -> Self {
        let q = |p: GeoPoint| GeoPoint { lat: quantize_degrees(p.lat), lon: quantize_degrees(p.lon) };
        TripRecord {
            pickup: q(self.pickup),
            dropoff: q(self.dropoff),
            trip_distance_mi: self.trip_distance_mi.map(quantize_miles),
            ..self
        }
    }

    /// Re-checks every record invariant against `bbox`.
    pub fn check(&self, bbox: &BoundingBox) -> Result<(), RejectReason> {
        if !self.pickup.is_valid() || !self.dropoff.is_valid() {
            return Err(RejectReason::OutOfBbox);
        }
        if is_zero_island(&self.pickup) || is_zero_island(&self.dropoff) {
            return Err(RejectReason::ZeroIsland);
        }
        if !bbox.contains(&self.pickup) || !bbox.contains(&self.dropoff) {
            return Err(RejectReason::OutOfBbox);
        }
        if !self.total_fare.is_positive() {
            return Err(RejectReason::NonpositiveFare);
        }
        if let (Some(p), Some(d)) = (self.pickup_time, self.dropoff_time) {
            if p > d {
                return Err(RejectReason::TimeInverted);
            }
        }
        match self.trip_distance_mi {
            Some(d) if !(d.is_finite() && d >= 0.0) => Err(RejectReason::MalformedNumber),
            _ => Ok(()),
        }
    }
}

fn is_zero_island(p: &GeoPoint) -> bool {
    p.lat == 0.0 && p.lon == 0.0
}

/// Coordinates are stored at micro-degree resolution.
pub fn to_micro_degrees(v: f64) -> i32 {
    (v * 1e6).round() as i32
}

pub fn from_micro_degrees(v: i32) -> f64 {
    v as f64 / 1e6
}

fn quantize_degrees(v: f64) -> f64 {
    from_micro_degrees(to_micro_degrees(v))
}

fn quantize_miles(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    MalformedNumber,
    ZeroIsland,
    OutOfBbox,
    NonpositiveFare,
    TimeInverted,
    Unmatched,
    DuplicateKey,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::MalformedNumber => "malformed-number",
            RejectReason::ZeroIsland => "zero-island",
            RejectReason::OutOfBbox => "out-of-bbox",
            RejectReason::NonpositiveFare => "nonpositive-fare",
            RejectReason::TimeInverted => "time-inverted",
            RejectReason::Unmatched => "unmatched",
            RejectReason::DuplicateKey => "duplicate-key",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rejects_by_reason: BTreeMap<RejectReason, u64>,
}

impl IngestReport {
    fn kept(&mut self) {
        self.rows_read += 1;
        self.rows_kept += 1;
    }

    fn reject(&mut self, reason: RejectReason) {
        self.rows_read += 1;
        *self.rejects_by_reason.entry(reason).or_default() += 1;
    }

    pub fn rejected(&self) -> u64 {
        self.rejects_by_reason.values().sum()
    }

    /// `rows_read = rows_kept + Σ rejects`.
    pub fn is_consistent(&self) -> bool {
        self.rows_read == self.rows_kept + self.rejected()
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("I/O error after {} rows: {source}", report.rows_read)]
    Io {
        #[source]
        source: io::Error,
        report: IngestReport,
    },
    #[error("CSV error after {} rows: {source}", report.rows_read)]
    Csv {
        #[source]
        source: csv::Error,
        report: IngestReport,
    },
}

impl IngestError {
    /// Counts accumulated before the failure, if any rows were processed.
    pub fn partial_report(&self) -> Option<&IngestReport> {
        match self {
            IngestError::Io { report, .. } | IngestError::Csv { report, .. } => Some(report),
            IngestError::Schema(_) => None,
        }
    }

    fn from_csv(source: csv::Error, report: &IngestReport) -> Self {
        let report = report.clone();
        if source.is_io_error() {
            match source.into_kind() {
                csv::ErrorKind::Io(source) => IngestError::Io { source, report },
                _ => unreachable!(),
            }
        } else {
            IngestError::Csv { source, report }
        }
    }
}

/// Canonical field → CSV header name. Header matching ignores surrounding
/// whitespace and ASCII case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub pickup_latitude: String,
    pub pickup_longitude: String,
    pub dropoff_latitude: String,
    pub dropoff_longitude: String,
    pub pickup_datetime: Option<String>,
    pub dropoff_datetime: Option<String>,
    /// Preferred fare source; includes the tip.
    pub total_amount: Option<String>,
    /// Used with `tip_amount` when the total column is absent.
    pub fare_amount: Option<String>,
    pub tip_amount: Option<String>,
    pub trip_distance: Option<String>,
    /// Join key parts for split trip/fare files.
    pub medallion: Option<String>,
    pub hack_license: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        let s = |v: &str| Some(v.to_string());
        ColumnMapping {
            pickup_latitude: "pickup_latitude".into(),
            pickup_longitude: "pickup_longitude".into(),
            dropoff_latitude: "dropoff_latitude".into(),
            dropoff_longitude: "dropoff_longitude".into(),
            pickup_datetime: s("pickup_datetime"),
            dropoff_datetime: s("dropoff_datetime"),
            total_amount: s("total_amount"),
            fare_amount: s("fare_amount"),
            tip_amount: s("tip_amount"),
            trip_distance: s("trip_distance"),
            medallion: s("medallion"),
            hack_license: s("hack_license"),
        }
    }
}

impl ColumnMapping {
    /// Reads a mapping from a JSON or TOML file (by extension; JSON otherwise).
    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IngestError::Schema(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let parsed = if is_toml {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| IngestError::Schema(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy)]
enum FareColumns {
    Total(usize),
    Parts(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    /// Geometry and fare in one file.
    Full,
    /// Geometry half of a split release.
    Trips,
    /// Fare half of a split release.
    Fares,
}

#[derive(Debug, Clone)]
struct Resolved {
    coords: [usize; 4],
    pickup_time: Option<usize>,
    dropoff_time: Option<usize>,
    fare: Option<FareColumns>,
    distance: Option<usize>,
    key: Option<[usize; 3]>,
}

fn resolve(headers: &ByteRecord, m: &ColumnMapping, role: Role) -> Result<Resolved, IngestError> {
    let names: Vec<String> = headers
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().to_ascii_lowercase())
        .collect();
    let find = |col: &str| names.iter().position(|h| *h == col.trim().to_ascii_lowercase());
    let required = |col: &str| {
        find(col).ok_or_else(|| IngestError::Schema(format!("column `{col}` not found in header")))
    };
    let optional = |col: &Option<String>| col.as_deref().and_then(find);

    let coords = if role == Role::Fares {
        [0; 4]
    } else {
        [
            required(&m.pickup_latitude)?,
            required(&m.pickup_longitude)?,
            required(&m.dropoff_latitude)?,
            required(&m.dropoff_longitude)?,
        ]
    };

    let fare = if role == Role::Trips {
        None
    } else if let Some(t) = optional(&m.total_amount) {
        Some(FareColumns::Total(t))
    } else if let (Some(f), Some(t)) = (optional(&m.fare_amount), optional(&m.tip_amount)) {
        Some(FareColumns::Parts(f, t))
    } else {
        return Err(IngestError::Schema(
            "no fare column: need total_amount, or fare_amount and tip_amount".into(),
        ));
    };

    let key = if role == Role::Full {
        None
    } else {
        let part = |c: &Option<String>, what: &str| {
            c.as_deref()
                .ok_or_else(|| IngestError::Schema(format!("join key column `{what}` not mapped")))
                .and_then(required)
        };
        Some([
            part(&m.medallion, "medallion")?,
            part(&m.hack_license, "hack_license")?,
            part(&m.pickup_datetime, "pickup_datetime")?,
        ])
    };

    Ok(Resolved {
        coords,
        pickup_time: optional(&m.pickup_datetime),
        dropoff_time: optional(&m.dropoff_datetime),
        fare,
        distance: optional(&m.trip_distance),
        key,
    })
}

/// Fields of one logical row, before validation.
struct RawRow<'a> {
    coords: [Option<&'a [u8]>; 4],
    pickup_time: Option<&'a [u8]>,
    dropoff_time: Option<&'a [u8]>,
    fare: [Option<&'a [u8]>; 2],
    fare_is_parts: bool,
    distance: Option<&'a [u8]>,
}

impl<'a> RawRow<'a> {
    fn geometry(rec: &'a ByteRecord, r: &Resolved) -> Self {
        RawRow {
            coords: r.coords.map(|i| rec.get(i)),
            pickup_time: r.pickup_time.map(|i| rec.get(i).unwrap_or(b"")),
            dropoff_time: r.dropoff_time.map(|i| rec.get(i).unwrap_or(b"")),
            fare: [None, None],
            fare_is_parts: false,
            distance: r.distance.map(|i| rec.get(i).unwrap_or(b"")),
        }
    }

    fn with_fare(mut self, rec: &'a ByteRecord, r: &Resolved) -> Self {
        match r.fare {
            Some(FareColumns::Total(i)) => self.fare = [rec.get(i), None],
            Some(FareColumns::Parts(f, t)) => {
                self.fare = [rec.get(f), rec.get(t)];
                self.fare_is_parts = true;
            }
            None => {}
        }
        self
    }
}

fn num(field: Option<&[u8]>) -> Result<f64, RejectReason> {
    let s = field
        .and_then(|f| std::str::from_utf8(f).ok())
        .ok_or(RejectReason::MalformedNumber)?;
    let v: f64 = s.trim().parse().map_err(|_| RejectReason::MalformedNumber)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RejectReason::MalformedNumber)
    }
}

fn timestamp(field: Option<&[u8]>) -> Result<Option<i64>, RejectReason> {
    let Some(raw) = field else { return Ok(None) };
    let s = std::str::from_utf8(raw).map_err(|_| RejectReason::MalformedNumber)?.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Ok(Some(t.and_utc().timestamp()));
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| Some(t.timestamp()))
        .map_err(|_| RejectReason::MalformedNumber)
}

fn validate(raw: &RawRow<'_>, trip_id: u64, bbox: &BoundingBox) -> Result<TripRecord, RejectReason> {
    let [plat, plon, dlat, dlon] = [0, 1, 2, 3].map(|i| num(raw.coords[i]));
    let (plat, plon, dlat, dlon) = (plat?, plon?, dlat?, dlon?);
    let fare = if raw.fare_is_parts {
        num(raw.fare[0])? + num(raw.fare[1])?
    } else {
        num(raw.fare[0])?
    };
    let total_fare = Cents::from_dollars(fare).ok_or(RejectReason::MalformedNumber)?;
    let trip_distance_mi = match raw.distance {
        Some(f) if !f.iter().all(u8::is_ascii_whitespace) => {
            let d = num(Some(f))?;
            if d < 0.0 {
                return Err(RejectReason::MalformedNumber);
            }
            Some(quantize_miles(d))
        }
        _ => None,
    };
    let pickup_time = timestamp(raw.pickup_time)?;
    let dropoff_time = timestamp(raw.dropoff_time)?;

    let pickup = GeoPoint { lat: quantize_degrees(plat), lon: quantize_degrees(plon) };
    let dropoff = GeoPoint { lat: quantize_degrees(dlat), lon: quantize_degrees(dlon) };
    let record = TripRecord {
        trip_id,
        pickup,
        dropoff,
        pickup_time,
        dropoff_time,
        total_fare,
        trip_distance_mi,
    };
    record.check(bbox)?;
    Ok(record)
}

/// Parses a single data row under a column mapping already resolved against
/// `headers`.
pub fn parse_row(
    headers: &ByteRecord,
    row: &ByteRecord,
    mapping: &ColumnMapping,
    bbox: &BoundingBox,
    trip_id: u64,
) -> Result<Result<TripRecord, RejectReason>, IngestError> {
    let resolved = resolve(headers, mapping, Role::Full)?;
    Ok(validate(&RawRow::geometry(row, &resolved).with_fare(row, &resolved), trip_id, bbox))
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(input)
}

/// Streaming ingestion over one CSV file holding geometry and fares.
///
/// Yields kept records in file order; rejected rows are counted in
/// [`TripStream::report`].
pub struct TripStream<R: Read> {
    reader: csv::Reader<R>,
    resolved: Resolved,
    bbox: BoundingBox,
    report: IngestReport,
    record: ByteRecord,
    failed: bool,
}

impl<R: Read> TripStream<R> {
    pub fn new(input: R, mapping: &ColumnMapping, bbox: BoundingBox) -> Result<Self, IngestError> {
        let mut reader = csv_reader(input);
        let headers = reader
            .byte_headers()
            .map_err(|e| IngestError::from_csv(e, &IngestReport::default()))?
            .clone();
        let resolved = resolve(&headers, mapping, Role::Full)?;
        Ok(TripStream {
            reader,
            resolved,
            bbox,
            report: IngestReport::default(),
            record: ByteRecord::new(),
            failed: false,
        })
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }
}

impl<R: Read> Iterator for TripStream<R> {
    type Item = Result<TripRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            match self.reader.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(IngestError::from_csv(e, &self.report)));
                }
            }
            let trip_id = self.report.rows_read;
            let raw = RawRow::geometry(&self.record, &self.resolved).with_fare(&self.record, &self.resolved);
            match validate(&raw, trip_id, &self.bbox) {
                Ok(rec) => {
                    self.report.kept();
                    return Some(Ok(rec));
                }
                Err(reason) => self.report.reject(reason),
            }
        }
    }
}

/// Ingests a whole reader; on failure the error carries the partial report.
pub fn ingest_reader<R: Read>(
    input: R,
    mapping: &ColumnMapping,
    bbox: BoundingBox,
) -> Result<(Vec<TripRecord>, IngestReport), IngestError> {
    let mut stream = TripStream::new(input, mapping, bbox)?;
    let mut records = Vec::new();
    for rec in stream.by_ref() {
        records.push(rec?);
    }
    Ok((records, stream.into_report()))
}

pub fn ingest_file(
    path: &Path,
    mapping: &ColumnMapping,
    bbox: BoundingBox,
) -> Result<(Vec<TripRecord>, IngestReport), IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        source,
        report: IngestReport::default(),
    })?;
    ingest_reader(BufReader::with_capacity(1 << 20, file), mapping, bbox)
}

type JoinKey = (Vec<u8>, Vec<u8>, Vec<u8>);

fn join_key(rec: &ByteRecord, idx: &[usize; 3]) -> Option<JoinKey> {
    Some((
        rec.get(idx[0])?.to_vec(),
        rec.get(idx[1])?.to_vec(),
        rec.get(idx[2])?.to_vec(),
    ))
}

/// Hash-joins a geometry file with a fare file on
/// (medallion, hack_license, pickup_datetime).
///
/// Every trip row is one logical row. Fare rows that are never consumed, either
/// because their key repeats an earlier fare row (`duplicate-key`, first row
/// wins) or because no trip carries their key (`unmatched`), are counted as
/// logical rows too, so `rows_read = rows_kept + Σ rejects` holds.
pub fn join_fare<T: Read, F: Read>(
    trips: T,
    fares: F,
    mapping: &ColumnMapping,
    bbox: BoundingBox,
) -> Result<(Vec<TripRecord>, IngestReport), IngestError> {
    let mut report = IngestReport::default();

    let mut fare_reader = csv_reader(fares);
    let fare_headers = fare_reader
        .byte_headers()
        .map_err(|e| IngestError::from_csv(e, &report))?
        .clone();
    let fare_cols = resolve(&fare_headers, mapping, Role::Fares)?;
    let fare_key = fare_cols.key.expect("fare role resolves a key");

    let mut fare_rows: HashMap<JoinKey, ByteRecord> = HashMap::new();
    let mut malformed_fares = 0u64;
    for row in fare_reader.byte_records() {
        let row = row.map_err(|e| IngestError::from_csv(e, &report))?;
        match join_key(&row, &fare_key) {
            None => malformed_fares += 1,
            Some(k) => match fare_rows.entry(k) {
                Entry::Occupied(_) => report.reject(RejectReason::DuplicateKey),
                Entry::Vacant(v) => {
                    v.insert(row);
                }
            },
        }
    }

    let mut trip_reader = csv_reader(trips);
    let trip_headers = trip_reader
        .byte_headers()
        .map_err(|e| IngestError::from_csv(e, &report))?
        .clone();
    let trip_cols = resolve(&trip_headers, mapping, Role::Trips)?;
    let trip_key = trip_cols.key.expect("trip role resolves a key");

    let mut records = Vec::new();
    let mut row = ByteRecord::new();
    let mut trip_id = 0u64;
    loop {
        match trip_reader.read_byte_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(IngestError::from_csv(e, &report)),
        }
        let id = trip_id;
        trip_id += 1;
        let Some(fare_row) = join_key(&row, &trip_key).and_then(|k| fare_rows.remove(&k)) else {
            report.reject(RejectReason::Unmatched);
            continue;
        };
        let raw = RawRow::geometry(&row, &trip_cols).with_fare(&fare_row, &fare_cols);
        match validate(&raw, id, &bbox) {
            Ok(rec) => {
                report.kept();
                records.push(rec);
            }
            Err(reason) => report.reject(reason),
        }
    }
    for _ in 0..fare_rows.len() {
        report.reject(RejectReason::Unmatched);
    }
    for _ in 0..malformed_fares {
        report.reject(RejectReason::MalformedNumber);
    }
    Ok((records, report))
}

const RECORDS_MAGIC: &[u8; 8] = b"CABTRIPS";
pub const RECORDS_VERSION: u32 = 1;
const NO_TIME: i64 = i64::MIN;
const NO_DISTANCE: u32 = u32::MAX;

/// Writes the columnar records file. Layout (little-endian):
///
/// ```text
/// magic "CABTRIPS" | version u32 | reserved u32
/// bbox: sw.lat f64, sw.lon f64, ne.lat f64, ne.lon f64
/// count u64
/// trip_id        u64 × count
/// pickup_lat     i32 × count   (micro-degrees)
/// pickup_lon     i32 × count
/// dropoff_lat    i32 × count
/// dropoff_lon    i32 × count
/// pickup_time    i64 × count   (epoch seconds, i64::MIN = absent)
/// dropoff_time   i64 × count
/// fare_cents     i64 × count
/// distance_cmi   u32 × count   (1/100 mile, u32::MAX = absent)
/// crc32 u32 over all preceding bytes
/// ```
pub fn encode_records(bbox: &BoundingBox, records: &[TripRecord]) -> Vec<u8> {
    let mut e = Encoder::with_capacity(RECORDS_MAGIC, RECORDS_VERSION, 64 + records.len() * 52);
    e.bbox(bbox);
    e.u64(records.len() as u64);
    records.iter().for_each(|r| e.u64(r.trip_id));
    records.iter().for_each(|r| e.i32(to_micro_degrees(r.pickup.lat)));
    records.iter().for_each(|r| e.i32(to_micro_degrees(r.pickup.lon)));
    records.iter().for_each(|r| e.i32(to_micro_degrees(r.dropoff.lat)));
    records.iter().for_each(|r| e.i32(to_micro_degrees(r.dropoff.lon)));
    records.iter().for_each(|r| e.i64(r.pickup_time.unwrap_or(NO_TIME)));
    records.iter().for_each(|r| e.i64(r.dropoff_time.unwrap_or(NO_TIME)));
    records.iter().for_each(|r| e.i64(r.total_fare.0));
    records.iter().for_each(|r| e.u32(encode_distance(r.trip_distance_mi)));
    e.finish()
}

pub(crate) fn encode_distance(d: Option<f64>) -> u32 {
    d.map(|d| (d * 100.0).round().clamp(0.0, (NO_DISTANCE - 1) as f64) as u32)
        .unwrap_or(NO_DISTANCE)
}

pub(crate) fn decode_distance(v: u32) -> Option<f64> {
    (v != NO_DISTANCE).then(|| v as f64 / 100.0)
}

pub(crate) fn decode_time(v: i64) -> Option<i64> {
    (v != NO_TIME).then_some(v)
}

pub(crate) fn encode_time(v: Option<i64>) -> i64 {
    v.unwrap_or(NO_TIME)
}

pub fn decode_records(bytes: &[u8]) -> Result<(BoundingBox, Vec<TripRecord>), FormatError> {
    let mut d = Decoder::open(bytes, RECORDS_MAGIC, RECORDS_VERSION, "trip records")?;
    let bbox = d.bbox()?;
    let count = d.u64()?;
    let n = d.expect_items(count, 52)?;
    let col_u64 = |d: &mut Decoder<'_>| (0..n).map(|_| d.u64()).collect::<Result<Vec<_>, _>>();
    let ids = col_u64(&mut d)?;
    let coord = |d: &mut Decoder<'_>| {
        (0..n).map(|_| d.i32().map(from_micro_degrees)).collect::<Result<Vec<_>, _>>()
    };
    let (plat, plon, dlat, dlon) = (coord(&mut d)?, coord(&mut d)?, coord(&mut d)?, coord(&mut d)?);
    let col_i64 = |d: &mut Decoder<'_>| (0..n).map(|_| d.i64()).collect::<Result<Vec<_>, _>>();
    let (pt, dt, fares) = (col_i64(&mut d)?, col_i64(&mut d)?, col_i64(&mut d)?);
    let dist = (0..n).map(|_| d.u32()).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;

    let records = (0..n)
        .map(|i| TripRecord {
            trip_id: ids[i],
            pickup: GeoPoint { lat: plat[i], lon: plon[i] },
            dropoff: GeoPoint { lat: dlat[i], lon: dlon[i] },
            pickup_time: decode_time(pt[i]),
            dropoff_time: decode_time(dt[i]),
            total_fare: Cents(fares[i]),
            trip_distance_mi: decode_distance(dist[i]),
        })
        .collect();
    Ok((bbox, records))
}

pub fn write_records(path: &Path, bbox: &BoundingBox, records: &[TripRecord]) -> Result<(), FormatError> {
    binfmt::write_atomic(path, &encode_records(bbox, records))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<(BoundingBox, Vec<TripRecord>), FormatError> {
    decode_records(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "medallion,hack_license,pickup_datetime,dropoff_datetime,trip_distance,pickup_longitude,pickup_latitude,dropoff_longitude,dropoff_latitude,total_amount";

    fn ingest(text: &str) -> (Vec<TripRecord>, IngestReport) {
        ingest_reader(text.as_bytes(), &ColumnMapping::default(), BoundingBox::nyc()).unwrap()
    }

    fn one(row: &str) -> Result<TripRecord, RejectReason> {
        let headers = ByteRecord::from(HEADER.split(',').collect::<Vec<_>>());
        let row = ByteRecord::from(row.split(',').collect::<Vec<_>>());
        parse_row(&headers, &row, &ColumnMapping::default(), &BoundingBox::nyc(), 0).unwrap()
    }

    #[test]
    fn parse_row_keeps_valid_row() {
        let r = one("M1,H1,2013-01-01 15:11:48,2013-01-01 15:18:10,1.00,-73.99,40.75,-73.97,40.76,11.5").unwrap();
        assert_eq!(r.pickup, GeoPoint { lat: 40.75, lon: -73.99 });
        assert_eq!(r.dropoff, GeoPoint { lat: 40.76, lon: -73.97 });
        assert_eq!(r.total_fare, Cents(1150));
        assert_eq!(r.pickup_time, Some(1_357_053_108));
        assert_eq!(r.trip_distance_mi, Some(1.0));
    }

    #[test]
    fn parse_row_reject_reasons() {
        let base = |coords: &str, total: &str, times: (&str, &str)| {
            one(&format!("M,H,{},{},1.0,{coords},{total}", times.0, times.1))
        };
        let t = ("2013-01-01 10:00:00", "2013-01-01 10:10:00");
        assert_eq!(base("0.0,0.0,-73.97,40.76", "11.5", t), Err(RejectReason::ZeroIsland));
        assert_eq!(base("-73.99,40.75,0,0", "11.5", t), Err(RejectReason::ZeroIsland));
        assert_eq!(base("-73.99,40.75,-73.97,40.76", "-3.00", t), Err(RejectReason::NonpositiveFare));
        assert_eq!(base("-73.99,40.75,-73.97,40.76", "0", t), Err(RejectReason::NonpositiveFare));
        assert_eq!(base("-73.99,40.75,-73.97,40.76", "abc", t), Err(RejectReason::MalformedNumber));
        assert_eq!(base("-73.99,40.75,-73.97,", "11.5", t), Err(RejectReason::MalformedNumber));
        assert_eq!(base("-118.2,34.0,-73.97,40.76", "11.5", t), Err(RejectReason::OutOfBbox));
        assert_eq!(base("-73.99,95.0,-73.97,40.76", "11.5", t), Err(RejectReason::OutOfBbox));
        let inverted = ("2013-01-01 10:10:00", "2013-01-01 10:00:00");
        assert_eq!(base("-73.99,40.75,-73.97,40.76", "11.5", inverted), Err(RejectReason::TimeInverted));
        assert_eq!(
            base("-73.99,40.75,-73.97,40.76", "11.5", ("yesterday", "")),
            Err(RejectReason::MalformedNumber)
        );
        // First failing rule wins.
        assert_eq!(base("0,0,-73.97,40.76", "-1", t), Err(RejectReason::ZeroIsland));
    }

    #[test]
    fn fare_parts_are_summed_when_total_is_absent() {
        let csv = "pickup_latitude,pickup_longitude,dropoff_latitude,dropoff_longitude,fare_amount,tip_amount\n\
                   40.75,-73.99,40.76,-73.97,10.00,2.25\n";
        let (recs, _) = ingest(csv);
        assert_eq!(recs[0].total_fare, Cents(1225));
        assert_eq!(recs[0].pickup_time, None);
        assert_eq!(recs[0].trip_distance_mi, None);
    }

    #[test]
    fn four_rows_one_bad() {
        let csv = format!(
            "{HEADER}\n\
             A,a,2013-01-01 10:00:00,2013-01-01 10:10:00,1.2,-73.99,40.75,-73.97,40.76,11.5\n\
             B,b,2013-01-01 11:00:00,2013-01-01 11:10:00,2.0,-73.98,40.74,-73.95,40.78,14.3\n\
             C,c,2013-01-01 12:00:00,2013-01-01 12:10:00,0.5,0,0,0,0,7.0\n\
             D,d,2013-01-01 13:00:00,2013-01-01 13:10:00,3.1,-73.97,40.76,-73.99,40.73,20.0\n"
        );
        let (recs, report) = ingest(&csv);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs.iter().map(|r| r.trip_id).collect::<Vec<_>>(), vec![0, 1, 3]);
        assert_eq!(report.rows_read, 4);
        assert_eq!(report.rows_kept, 3);
        assert_eq!(report.rejects_by_reason.len(), 1);
        assert_eq!(report.rejects_by_reason[&RejectReason::ZeroIsland], 1);
        assert!(report.is_consistent());
        for r in &recs {
            assert_eq!(r.check(&BoundingBox::nyc()), Ok(()));
        }
    }

    #[test]
    fn header_only_and_crlf() {
        let (recs, report) = ingest(&format!("{HEADER}\n"));
        assert!(recs.is_empty());
        assert_eq!(report.rows_read, 0);

        let lf = format!(
            "{HEADER}\nA,a,2013-01-01 10:00:00,2013-01-01 10:10:00,1.2,-73.99,40.75,-73.97,40.76,11.5\n"
        );
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(ingest(&lf), ingest(&crlf));
    }

    #[test]
    fn foil_headers_with_padding_resolve() {
        let csv = " pickup_latitude , Pickup_Longitude,dropoff_latitude,dropoff_longitude, total_amount\n\
                   40.75,-73.99,40.76,-73.97,9.9\n";
        let (recs, _) = ingest(csv);
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let err = ingest_reader(
            "pickup_latitude,pickup_longitude\n1,2\n".as_bytes(),
            &ColumnMapping::default(),
            BoundingBox::nyc(),
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)));
    }

    #[test]
    fn io_failure_carries_partial_report() {
        struct Failing<'a>(&'a [u8]);
        impl Read for Failing<'_> {
            fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
                if self.0.is_empty() {
                    return Err(io::Error::other("disk gone"));
                }
                let n = self.0.len().min(buf.len());
                buf[..n].copy_from_slice(&self.0[..n]);
                self.0 = &self.0[n..];
                Ok(n)
            }
        }
        let text = format!(
            "{HEADER}\nA,a,2013-01-01 10:00:00,2013-01-01 10:10:00,1.2,-73.99,40.75,-73.97,40.76,11.5\nB,b"
        );
        let err = ingest_reader(Failing(text.as_bytes()), &ColumnMapping::default(), BoundingBox::nyc())
            .unwrap_err();
        let report = err.partial_report().unwrap();
        assert_eq!(report.rows_kept, 1);
        assert!(matches!(err, IngestError::Io { .. }));
    }

    const TRIP_HEADER: &str = "medallion,hack_license,pickup_datetime,dropoff_datetime,trip_distance,pickup_longitude,pickup_latitude,dropoff_longitude,dropoff_latitude";
    const FARE_HEADER: &str = "medallion, hack_license, pickup_datetime, fare_amount, tip_amount, total_amount";

    fn join(trips: &str, fares: &str) -> (Vec<TripRecord>, IngestReport) {
        join_fare(trips.as_bytes(), fares.as_bytes(), &ColumnMapping::default(), BoundingBox::nyc()).unwrap()
    }

    #[test]
    fn join_matches_pairs() {
        let trips = format!(
            "{TRIP_HEADER}\n\
             M1,H1,2013-01-01 10:00:00,2013-01-01 10:10:00,1.0,-73.99,40.75,-73.97,40.76\n\
             M2,H2,2013-01-01 11:00:00,2013-01-01 11:10:00,2.0,-73.98,40.74,-73.95,40.78\n"
        );
        let fares = format!(
            "{FARE_HEADER}\n\
             M2,H2,2013-01-01 11:00:00,12.0,2.3,14.3\n\
             M1,H1,2013-01-01 10:00:00,9.0,1.0,10.5\n"
        );
        let (recs, report) = join(&trips, &fares);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].total_fare, Cents(1050));
        assert_eq!(recs[1].total_fare, Cents(1430));
        assert_eq!(report.rows_read, 2);
        assert!(report.is_consistent());
    }

    #[test]
    fn join_unmatched_and_duplicate() {
        let trips = format!(
            "{TRIP_HEADER}\n\
             M1,H1,2013-01-01 10:00:00,2013-01-01 10:10:00,1.0,-73.99,40.75,-73.97,40.76\n"
        );
        let (recs, report) = join(&trips, &format!("{FARE_HEADER}\n"));
        assert!(recs.is_empty());
        assert_eq!(report.rejects_by_reason[&RejectReason::Unmatched], 1);

        let fares = format!(
            "{FARE_HEADER}\n\
             M1,H1,2013-01-01 10:00:00,9.0,1.0,10.5\n\
             M1,H1,2013-01-01 10:00:00,99.0,1.0,100.0\n"
        );
        let (recs, report) = join(&trips, &fares);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].total_fare, Cents(1050), "first fare row wins");
        assert_eq!(report.rejects_by_reason[&RejectReason::DuplicateKey], 1);
        assert_eq!(report.rows_read, 2);
        assert!(report.is_consistent());
    }

    #[test]
    fn records_file_round_trip() {
        let (recs, _) = ingest(&format!(
            "{HEADER}\n\
             A,a,2013-01-01 10:00:00,2013-01-01 10:10:00,1.23,-73.991234,40.751111,-73.97,40.76,11.5\n\
             B,b,,,,-73.98,40.74,-73.95,40.78,14.3\n"
        ));
        let bytes = encode_records(&BoundingBox::nyc(), &recs);
        let (bbox, back) = decode_records(&bytes).unwrap();
        assert_eq!(bbox, BoundingBox::nyc());
        assert_eq!(back, recs);
        assert_eq!(back[1].pickup_time, None);
        assert_eq!(back[1].trip_distance_mi, None);

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_records(&flipped), Err(FormatError::Corrupt(_))));
        assert!(matches!(decode_records(&bytes[..bytes.len() - 3]), Err(FormatError::Corrupt(_))));
    }

    #[test]
    fn mapping_files() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("m.json");
        std::fs::write(&json, r#"{"pickup_latitude": "plat", "total_amount": "amt"}"#).unwrap();
        let m = ColumnMapping::from_file(&json).unwrap();
        assert_eq!(m.pickup_latitude, "plat");
        assert_eq!(m.total_amount.as_deref(), Some("amt"));
        assert_eq!(m.dropoff_latitude, "dropoff_latitude");

        let toml = dir.path().join("m.toml");
        std::fs::write(&toml, "# mapping\npickup_longitude = \"plon\"\n").unwrap();
        assert_eq!(ColumnMapping::from_file(&toml).unwrap().pickup_longitude, "plon");

        std::fs::write(&json, r#"{"bogus": "x"}"#).unwrap();
        assert!(ColumnMapping::from_file(&json).is_err());
    }
}
