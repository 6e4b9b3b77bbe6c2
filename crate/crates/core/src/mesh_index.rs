//! Immutable index from mesh cells to the trips picked up in them.
//!
//! Trips keep their input order as `u32` ordinals. The cell directory is sorted
//! row-major and the ordinal array is laid out in directory order, so the cells
//! of one mesh row between two columns form one contiguous ordinal slice. A
//! Chebyshev neighbourhood lookup therefore costs one pair of binary searches
//! per row.
//!
//! # File format
//!
//! All integers little-endian.
//!
//! ```text
//! magic "CABINDEX" | version u32 | reserved u32
//! spec: sw.lat f64, sw.lon f64, ne.lat f64, ne.lon f64,
//!       cell_size f64, ref_cos f64, earth_radius f64
//! built_at i64 (epoch seconds)
//! trip_count u64
//! cell_count u64
//! directory: cell_count × { ix u32, iy u32, offset u64, len u32 }   row-major
//! ordinals:  trip_count × u32
//! trips:     trip_count × 52-byte rows
//!            { trip_id u64, pickup_lat i32, pickup_lon i32, dropoff_lat i32,
//!              dropoff_lon i32, pickup_time i64, dropoff_time i64,
//!              fare_cents i64, distance_cmi u32 }
//! crc32 u32 over all preceding bytes
//! ```
//!
//! Coordinates are micro-degrees, absent times are `i64::MIN` and an absent
//! meter distance is `u32::MAX`. The trip block is fixed-width and can be
//! memory-mapped directly.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::binfmt::{self, Decoder, Encoder, FormatError};
use crate::geo::{CellId, CellRect, GeoError, GeoPoint, MeshSpec};
use crate::ingest::{self, TripRecord};
use crate::money::Cents;

const INDEX_MAGIC: &[u8; 8] = b"CABINDEX";
pub const INDEX_VERSION: u32 = 1;
const DIR_ENTRY_LEN: usize = 20;
const TRIP_ROW_LEN: usize = 52;

/// Default cap on ring expansion (≈ 1 km at 100 m cells).
pub const DEFAULT_MAX_RING: u32 = 10;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("trip ordinal {ordinal} (id {trip_id}) has its pickup outside the mesh: {source}")]
    OutOfBounds {
        ordinal: usize,
        trip_id: u64,
        #[source]
        source: GeoError,
    },
    #[error("index holds at most {} trips", u32::MAX)]
    TooManyTrips,
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error(transparent)]
    OutOfBounds(#[from] GeoError),
    #[error("max_ring must be at least 1")]
    InvalidRing,
    #[error("no historical trips within {max_ring} rings of the origin")]
    NoTripsFound { max_ring: u32 },
}

/// One cell directory entry: the cell's ordinals are
/// `ordinals[offset .. offset + len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpan {
    pub cell: CellId,
    pub offset: u64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshIndex {
    spec: MeshSpec,
    directory: Vec<CellSpan>,
    ordinals: Vec<u32>,
    trips: Vec<TripRecord>,
    built_at: i64,
}

/// Trips gathered from a whole Chebyshev square around the origin cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub ring_used: u32,
    /// Ascending.
    pub ordinals: Vec<u32>,
}

fn sort_key(c: &CellId) -> u64 {
    ((c.iy as u64) << 32) | c.ix as u64
}

impl MeshIndex {
    /// Builds the index; `built_at` is stored verbatim (epoch seconds).
    /// Coordinates are first rounded to the micro-degree storage resolution.
    pub fn build(records: Vec<TripRecord>, spec: MeshSpec, built_at: i64) -> Result<Self, IndexError> {
        if records.len() > u32::MAX as usize {
            return Err(IndexError::TooManyTrips);
        }
        let records: Vec<TripRecord> = records.into_par_iter().map(TripRecord::quantized).collect();
        let mut keyed: Vec<(u64, u32)> = records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                spec.cell_of(&r.pickup)
                    .map(|c| (sort_key(&c), i as u32))
                    .map_err(|source| IndexError::OutOfBounds { ordinal: i, trip_id: r.trip_id, source })
            })
            .collect::<Result<_, _>>()?;
        // Keys are unique (ordinal tiebreak) so the unstable sort is deterministic.
        keyed.par_sort_unstable();

        let mut directory: Vec<CellSpan> = Vec::new();
        let mut ordinals = Vec::with_capacity(keyed.len());
        for (pos, &(key, ordinal)) in keyed.iter().enumerate() {
            let cell = CellId::new(key as u32, (key >> 32) as u32);
            match directory.last_mut() {
                Some(span) if span.cell == cell => span.len += 1,
                _ => directory.push(CellSpan { cell, offset: pos as u64, len: 1 }),
            }
            ordinals.push(ordinal);
        }

        Ok(MeshIndex { spec, directory, ordinals, trips: records, built_at })
    }

    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn built_at(&self) -> i64 {
        self.built_at
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn trips(&self) -> &[TripRecord] {
        &self.trips
    }

    pub fn trip(&self, ordinal: u32) -> Option<&TripRecord> {
        self.trips.get(ordinal as usize)
    }

    /// Non-empty cells, row-major.
    pub fn directory(&self) -> &[CellSpan] {
        &self.directory
    }

    fn span_slice(&self, span: &CellSpan) -> &[u32] {
        let start = span.offset as usize;
        &self.ordinals[start..start + span.len as usize]
    }

    /// Ascending ordinals of trips picked up in `cell`; empty for unknown cells.
    pub fn trips_in(&self, cell: &CellId) -> &[u32] {
        let key = sort_key(cell);
        match self.directory.binary_search_by_key(&key, |s| sort_key(&s.cell)) {
            Ok(i) => self.span_slice(&self.directory[i]),
            Err(_) => &[],
        }
    }

    /// Ordinals of row `iy` between columns `ix_min..=ix_max`, as one slice.
    fn row_slice(&self, iy: u32, ix_min: u32, ix_max: u32) -> &[u32] {
        let lo = sort_key(&CellId::new(ix_min, iy));
        let hi = sort_key(&CellId::new(ix_max, iy));
        let first = self.directory.partition_point(|s| sort_key(&s.cell) < lo);
        let last = self.directory.partition_point(|s| sort_key(&s.cell) <= hi);
        if first == last {
            return &[];
        }
        let start = self.directory[first].offset as usize;
        let end_span = &self.directory[last - 1];
        let end = end_span.offset as usize + end_span.len as usize;
        &self.ordinals[start..end]
    }

    /// Per-row ordinal slices covering `rect`.
    pub fn rect_slices<'a>(&'a self, rect: &CellRect) -> impl Iterator<Item = &'a [u32]> + 'a {
        let rect = *rect;
        (rect.iy_min..=rect.iy_max)
            .map(move |iy| self.row_slice(iy, rect.ix_min, rect.ix_max))
            .filter(|s| !s.is_empty())
    }

    fn rect_count(&self, rect: &CellRect) -> usize {
        self.rect_slices(rect).map(<[u32]>::len).sum()
    }

    /// Smallest ring in `1..=max_ring` whose square around `origin` holds a
    /// trip, with that square.
    pub fn locate_ring(&self, origin: &GeoPoint, max_ring: u32) -> Result<(u32, CellRect), QueryError> {
        if max_ring == 0 {
            return Err(QueryError::InvalidRing);
        }
        let center = self.spec.cell_of(origin)?;
        // Past this ring the square already covers the whole mesh.
        let cover = self.spec.cols().max(self.spec.rows());
        for ring in 1..=max_ring.min(cover) {
            let rect = self.spec.neighborhood(&center, ring).expect("cell_of yields in-mesh cells");
            if self.rect_count(&rect) > 0 {
                return Ok((ring, rect));
            }
        }
        Err(QueryError::NoTripsFound { max_ring })
    }

    /// Expands rings from 1 until the square around the origin cell holds at
    /// least one trip, and returns every trip in that whole square.
    pub fn trips_near(&self, origin: &GeoPoint, max_ring: u32) -> Result<Neighborhood, QueryError> {
        let (ring_used, rect) = self.locate_ring(origin, max_ring)?;
        let mut ordinals: Vec<u32> = self.rect_slices(&rect).flatten().copied().collect();
        ordinals.sort_unstable();
        Ok(Neighborhood { ring_used, ordinals })
    }

    pub fn encode(&self) -> Vec<u8> {
        let cap = 128 + self.directory.len() * DIR_ENTRY_LEN + self.trips.len() * (4 + TRIP_ROW_LEN);
        let mut e = Encoder::with_capacity(INDEX_MAGIC, INDEX_VERSION, cap);
        e.bbox(&self.spec.bbox);
        e.f64(self.spec.cell_size);
        e.f64(self.spec.ref_cos);
        e.f64(self.spec.earth_radius);
        e.i64(self.built_at);
        e.u64(self.trips.len() as u64);
        e.u64(self.directory.len() as u64);
        for span in &self.directory {
            e.u32(span.cell.ix);
            e.u32(span.cell.iy);
            e.u64(span.offset);
            e.u32(span.len);
        }
        for &o in &self.ordinals {
            e.u32(o);
        }
        for t in &self.trips {
            e.u64(t.trip_id);
            e.i32(ingest::to_micro_degrees(t.pickup.lat));
            e.i32(ingest::to_micro_degrees(t.pickup.lon));
            e.i32(ingest::to_micro_degrees(t.dropoff.lat));
            e.i32(ingest::to_micro_degrees(t.dropoff.lon));
            e.i64(ingest::encode_time(t.pickup_time));
            e.i64(ingest::encode_time(t.dropoff_time));
            e.i64(t.total_fare.0);
            e.u32(ingest::encode_distance(t.trip_distance_mi));
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut d = Decoder::open(bytes, INDEX_MAGIC, INDEX_VERSION, "mesh index")?;
        let corrupt = |m: &str| IndexError::Format(FormatError::Corrupt(m.to_string()));

        let bbox = d.bbox()?;
        let spec = MeshSpec { bbox, cell_size: d.f64()?, ref_cos: d.f64()?, earth_radius: d.f64()? };
        spec.validate().map_err(|e| corrupt(&e.to_string()))?;
        let built_at = d.i64()?;
        let trip_count = d.u64()?;
        let cell_count = d.u64()?;

        let cells = d.expect_items(cell_count, DIR_ENTRY_LEN)?;
        let mut directory = Vec::with_capacity(cells);
        let mut expected_offset = 0u64;
        for _ in 0..cells {
            let span = CellSpan { cell: CellId::new(d.u32()?, d.u32()?), offset: d.u64()?, len: d.u32()? };
            if span.offset != expected_offset || span.len == 0 || !spec.contains_cell(&span.cell) {
                return Err(corrupt("cell directory is not contiguous"));
            }
            if directory.last().is_some_and(|p: &CellSpan| p.cell >= span.cell) {
                return Err(corrupt("cell directory is not sorted"));
            }
            expected_offset += span.len as u64;
            directory.push(span);
        }
        if expected_offset != trip_count {
            return Err(corrupt("cell directory does not cover every trip"));
        }

        let n = d.expect_items(trip_count, 4)?;
        let mut ordinals = Vec::with_capacity(n);
        for _ in 0..n {
            let o = d.u32()?;
            if o as u64 >= trip_count {
                return Err(corrupt("trip ordinal out of range"));
            }
            ordinals.push(o);
        }

        let n = d.expect_items(trip_count, TRIP_ROW_LEN)?;
        let mut trips = Vec::with_capacity(n);
        for _ in 0..n {
            trips.push(TripRecord {
                trip_id: d.u64()?,
                pickup: GeoPoint {
                    lat: ingest::from_micro_degrees(d.i32()?),
                    lon: ingest::from_micro_degrees(d.i32()?),
                },
                dropoff: GeoPoint {
                    lat: ingest::from_micro_degrees(d.i32()?),
                    lon: ingest::from_micro_degrees(d.i32()?),
                },
                pickup_time: ingest::decode_time(d.i64()?),
                dropoff_time: ingest::decode_time(d.i64()?),
                total_fare: Cents(d.i64()?),
                trip_distance_mi: ingest::decode_distance(d.u32()?),
            });
        }
        d.finish()?;
        Ok(MeshIndex { spec, directory, ordinals, trips, built_at })
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        binfmt::write_atomic(path, &self.encode()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::decode(&bytes)
    }
}
