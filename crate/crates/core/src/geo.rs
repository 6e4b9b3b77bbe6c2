//! Geodesy and mesh arithmetic.
//!
//! Points are WGS84 degrees. Distances are great-circle (haversine) on a sphere of
//! radius [`EARTH_RADIUS_M`]. The mesh is a local equirectangular projection
//! anchored at the south-west corner of a bounding box, with the longitude axis
//! scaled by the cosine of the box's mid-latitude. Cells are half-open squares
//! `[k·s, (k+1)·s)` on both axes, so a point on a cell boundary belongs to the
//! upper cell.
//!
//! Everything here is generic over the float type ([`Scalar`]); the rest of the
//! crate uses the `f64` instantiations re-exported at the crate root.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Mean Earth radius used for every distance and projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Default mesh cell edge.
pub const DEFAULT_CELL_SIZE_M: f64 = 100.0;
/// International statute mile.
pub const METERS_PER_MILE: f64 = 1_609.344;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid bounding box: south-west corner must be strictly south and west of north-east corner")]
    InvalidBoundingBox,
    #[error("invalid mesh: {0}")]
    InvalidMesh(&'static str),
    #[error("point ({lat}, {lon}) is outside the mesh bounding box")]
    OutOfBounds { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint<T = f64> {
    pub lat: T,
    pub lon: T,
}

impl<T: Scalar> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Result<Self, GeoError> {
        let p = Self { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: lat.to_f64().unwrap_or(f64::NAN),
                lon: lon.to_f64().unwrap_or(f64::NAN),
            })
        }
    }

    /// Finite, `lat` in [-90, 90] and `lon` in [-180, 180].
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat.abs() <= T::lit(90.0)
            && self.lon.abs() <= T::lit(180.0)
    }

    pub fn cast<U: Scalar>(self) -> GeoPoint<U> {
        GeoPoint {
            lat: U::from(self.lat).unwrap_or_else(U::nan),
            lon: U::from(self.lon).unwrap_or_else(U::nan),
        }
    }

    fn out_of_bounds(&self) -> GeoError {
        GeoError::OutOfBounds {
            lat: self.lat.to_f64().unwrap_or(f64::NAN),
            lon: self.lon.to_f64().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T = f64> {
    pub south_west: GeoPoint<T>,
    pub north_east: GeoPoint<T>,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(south_west: GeoPoint<T>, north_east: GeoPoint<T>) -> Result<Self, GeoError> {
        let bbox = Self { south_west, north_east };
        bbox.validate()?;
        Ok(bbox)
    }

    /// Box covering the five boroughs of New York City.
    pub fn nyc() -> Self {
        Self {
            south_west: GeoPoint { lat: T::lit(40.49), lon: T::lit(-74.27) },
            north_east: GeoPoint { lat: T::lit(40.92), lon: T::lit(-73.68) },
        }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.south_west.is_valid() || !self.north_east.is_valid() {
            return Err(GeoError::InvalidBoundingBox);
        }
        if self.south_west.lat < self.north_east.lat && self.south_west.lon < self.north_east.lon {
            Ok(())
        } else {
            Err(GeoError::InvalidBoundingBox)
        }
    }

    /// Inclusive on all four edges.
    pub fn contains(&self, p: &GeoPoint<T>) -> bool {
        p.lat >= self.south_west.lat
            && p.lat <= self.north_east.lat
            && p.lon >= self.south_west.lon
            && p.lon <= self.north_east.lon
    }

    pub fn mid_latitude(&self) -> T {
        (self.south_west.lat + self.north_east.lat) / T::lit(2.0)
    }
}

/// Integer grid coordinates of a mesh cell; `ix` counts east, `iy` north.
///
/// Ordered row-major (`iy`, then `ix`), which is the order of the on-disk cell
/// directory and of every cell listing this crate produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub ix: u32,
    pub iy: u32,
}

impl CellId {
    pub const fn new(ix: u32, iy: u32) -> Self {
        Self { ix, iy }
    }

    pub fn chebyshev(&self, other: &CellId) -> u32 {
        self.ix.abs_diff(other.ix).max(self.iy.abs_diff(other.iy))
    }
}

impl Ord for CellId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.iy, self.ix).cmp(&(other.iy, other.ix))
    }
}

impl PartialOrd for CellId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.ix, self.iy)
    }
}

/// Inclusive rectangle of cells, already clipped to the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub ix_min: u32,
    pub ix_max: u32,
    pub iy_min: u32,
    pub iy_max: u32,
}

impl CellRect {
    pub fn len(&self) -> usize {
        (self.ix_max - self.ix_min + 1) as usize * (self.iy_max - self.iy_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (self.iy_min..=self.iy_max)
            .flat_map(move |iy| (self.ix_min..=self.ix_max).map(move |ix| CellId { ix, iy }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec<T = f64> {
    pub bbox: BoundingBox<T>,
    pub cell_size: T,
    /// Cosine of the bounding box mid-latitude.
    pub ref_cos: T,
    pub earth_radius: T,
}

impl<T: Scalar> MeshSpec<T> {
    pub fn new(bbox: BoundingBox<T>, cell_size: T) -> Result<Self, GeoError> {
        bbox.validate()?;
        let spec = Self {
            bbox,
            cell_size,
            ref_cos: bbox.mid_latitude().to_radians().cos(),
            earth_radius: T::lit(EARTH_RADIUS_M),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// New York City box with 100 m cells.
    pub fn nyc() -> Self {
        Self::new(BoundingBox::nyc(), T::lit(DEFAULT_CELL_SIZE_M)).expect("default mesh is valid")
    }

    /// Same box, different cell size (used for coarser analytics rasters).
    pub fn with_cell_size(&self, cell_size: T) -> Result<Self, GeoError> {
        let spec = Self { cell_size, ..*self };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        self.bbox.validate()?;
        if !(self.cell_size.is_finite() && self.cell_size > T::zero()) {
            return Err(GeoError::InvalidMesh("cell_size must be positive"));
        }
        if !(self.ref_cos > T::zero() && self.ref_cos <= T::one()) {
            return Err(GeoError::InvalidMesh("ref_cos must lie in (0, 1]"));
        }
        if !(self.earth_radius.is_finite() && self.earth_radius > T::zero()) {
            return Err(GeoError::InvalidMesh("earth_radius must be positive"));
        }
        let (w, h) = self.extent_m();
        if (w / self.cell_size).to_f64().unwrap_or(f64::INFINITY) >= u32::MAX as f64
            || (h / self.cell_size).to_f64().unwrap_or(f64::INFINITY) >= u32::MAX as f64
        {
            return Err(GeoError::InvalidMesh("too many cells"));
        }
        Ok(())
    }

    /// Projected width and height of the bounding box in meters.
    pub fn extent_m(&self) -> (T, T) {
        self.offsets(&self.bbox.north_east)
    }

    /// Number of cell columns. Points on the east edge fall in the last column.
    pub fn cols(&self) -> u32 {
        self.index_along(self.extent_m().0) + 1
    }

    pub fn rows(&self) -> u32 {
        self.index_along(self.extent_m().1) + 1
    }

    pub fn contains_cell(&self, c: &CellId) -> bool {
        c.ix < self.cols() && c.iy < self.rows()
    }

    fn offsets(&self, p: &GeoPoint<T>) -> (T, T) {
        let sw = &self.bbox.south_west;
        let x = self.earth_radius * self.ref_cos * (p.lon - sw.lon).to_radians();
        let y = self.earth_radius * (p.lat - sw.lat).to_radians();
        (x, y)
    }

    fn index_along(&self, offset: T) -> u32 {
        (offset / self.cell_size).floor().to_u32().unwrap_or(0)
    }

    /// Equirectangular offsets (meters east, meters north) of `p` from the
    /// south-west corner.
    pub fn project(&self, p: &GeoPoint<T>) -> Result<(T, T), GeoError> {
        if !self.bbox.contains(p) {
            return Err(p.out_of_bounds());
        }
        let (x, y) = self.offsets(p);
        Ok((x.max(T::zero()), y.max(T::zero())))
    }

    /// Inverse of [`MeshSpec::project`]; does not check the result is in the box.
    pub fn unproject(&self, x: T, y: T) -> GeoPoint<T> {
        let sw = &self.bbox.south_west;
        GeoPoint {
            lat: sw.lat + (y / self.earth_radius).to_degrees(),
            lon: sw.lon + (x / (self.earth_radius * self.ref_cos)).to_degrees(),
        }
    }

    pub fn cell_of(&self, p: &GeoPoint<T>) -> Result<CellId, GeoError> {
        let (x, y) = self.project(p)?;
        Ok(CellId {
            ix: self.index_along(x).min(self.cols() - 1),
            iy: self.index_along(y).min(self.rows() - 1),
        })
    }

    pub fn cell_center(&self, c: &CellId) -> GeoPoint<T> {
        let half = T::lit(0.5);
        let x = (T::from_u32(c.ix).unwrap() + half) * self.cell_size;
        let y = (T::from_u32(c.iy).unwrap() + half) * self.cell_size;
        self.unproject(x, y)
    }

    /// Clipped square of cells within Chebyshev distance `ring` of `c`, or
    /// `None` when `c` itself is outside the mesh.
    pub fn neighborhood(&self, c: &CellId, ring: u32) -> Option<CellRect> {
        if !self.contains_cell(c) {
            return None;
        }
        Some(CellRect {
            ix_min: c.ix.saturating_sub(ring),
            ix_max: c.ix.saturating_add(ring).min(self.cols() - 1),
            iy_min: c.iy.saturating_sub(ring),
            iy_max: c.iy.saturating_add(ring).min(self.rows() - 1),
        })
    }

    /// All in-mesh cells with Chebyshev distance ≤ `ring` from `c`, row-major.
    pub fn neighbors(&self, c: &CellId, ring: u32) -> Vec<CellId> {
        self.neighborhood(c, ring)
            .map(|r| r.cells().collect())
            .unwrap_or_default()
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine<T: Scalar>(a: &GeoPoint<T>, b: &GeoPoint<T>) -> T {
    let two = T::lit(2.0);
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let half_dlat = ((b.lat - a.lat) / two).to_radians().sin();
    let half_dlon = ((b.lon - a.lon) / two).to_radians().sin();
    let h = half_dlat * half_dlat + lat1.cos() * lat2.cos() * half_dlon * half_dlon;
    let h = h.max(T::zero()).min(T::one());
    two * T::lit(EARTH_RADIUS_M) * h.sqrt().asin()
}

pub fn haversine_miles<T: Scalar>(a: &GeoPoint<T>, b: &GeoPoint<T>) -> T {
    haversine(a, b) / T::lit(METERS_PER_MILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_identity_and_antipodes() {
        let ts = p(40.7580, -73.9855);
        assert_eq!(haversine(&ts, &ts), 0.0);
        let d = haversine(&p(0.0, 0.0), &p(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
        assert!((d - 20_015_086.796).abs() < 1e-3);
    }

    #[test]
    fn haversine_jfk_times_square() {
        // Frozen from an independent evaluation of the haversine formula.
        let expected = 21_773.376_195_850_21;
        let d = haversine(&p(40.6413, -73.7781), &p(40.7580, -73.9855));
        assert!((d - expected).abs() / expected < 1e-3, "{d}");
        let d32 = haversine(&GeoPoint::<f32>::new(40.6413, -73.7781).unwrap(), &GeoPoint::new(40.7580, -73.9855).unwrap());
        assert!((d32 as f64 - expected).abs() / expected < 1e-3, "{d32}");
    }

    #[test]
    fn rejects_invalid_points_and_boxes() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(BoundingBox::new(p(41.0, -74.0), p(40.0, -73.0)).is_err());
        assert!(MeshSpec::new(BoundingBox::nyc(), 0.0).is_err());
    }

    #[test]
    fn nyc_mesh_shape() {
        let spec = MeshSpec::<f64>::nyc();
        assert_eq!(spec.cell_size, 100.0);
        assert!((spec.ref_cos - 0.758_077_426_989_993_7).abs() < 1e-15);
        assert_eq!(spec.cols(), 498);
        assert_eq!(spec.rows(), 479);
    }

    #[test]
    fn project_corner_and_pure_north() {
        let spec = MeshSpec::<f64>::nyc();
        let sw = spec.bbox.south_west;
        assert_eq!(spec.project(&sw).unwrap(), (0.0, 0.0));
        let delta = 0.01;
        let (x, y) = spec.project(&p(sw.lat + delta, sw.lon)).unwrap();
        assert_eq!(x, 0.0);
        assert!((y - EARTH_RADIUS_M * delta.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn project_manhattan_matches_hand_computation() {
        // Empire State Building; values from an independent evaluation of the
        // equirectangular formula.
        let spec = MeshSpec::<f64>::nyc();
        let (x, y) = spec.project(&p(40.7484, -73.9857)).unwrap();
        assert!((x - 23_964.887_652_519_345).abs() < 1e-6, "{x}");
        assert!((y - 28_732.769_044_953_384).abs() < 1e-6, "{y}");
        assert_eq!(spec.cell_of(&p(40.7484, -73.9857)).unwrap(), CellId::new(239, 287));
    }

    #[test]
    fn cell_of_floor_convention() {
        let spec = MeshSpec::<f64>::nyc();
        assert_eq!(spec.cell_of(&spec.bbox.south_west).unwrap(), CellId::new(0, 0));
        let q = spec.unproject(150.0, 250.0);
        assert_eq!(spec.cell_of(&q).unwrap(), CellId::new(1, 2));
        // Boundary offsets belong to the upper cell.
        assert_eq!(spec.index_along(200.0), 2);
        assert_eq!(spec.index_along(199.999_999), 1);
    }

    #[test]
    fn cell_of_on_north_east_corner_is_last_cell() {
        let spec = MeshSpec::<f64>::nyc();
        let c = spec.cell_of(&spec.bbox.north_east).unwrap();
        assert_eq!(c, CellId::new(spec.cols() - 1, spec.rows() - 1));
    }

    #[test]
    fn project_out_of_bounds() {
        let spec = MeshSpec::<f64>::nyc();
        assert!(matches!(spec.project(&p(40.0, -74.0)), Err(GeoError::OutOfBounds { .. })));
        assert!(matches!(spec.cell_of(&p(40.7, -73.0)), Err(GeoError::OutOfBounds { .. })));
    }

    #[test]
    fn neighbors_counts() {
        let spec = MeshSpec::<f64>::nyc();
        let interior = CellId::new(100, 100);
        assert_eq!(spec.neighbors(&interior, 0), vec![interior]);
        assert_eq!(spec.neighbors(&interior, 1).len(), 9);
        assert_eq!(spec.neighbors(&interior, 2).len(), 25);
        assert_eq!(spec.neighbors(&CellId::new(0, 0), 1).len(), 4);
        let ne = CellId::new(spec.cols() - 1, spec.rows() - 1);
        assert_eq!(spec.neighbors(&ne, 1).len(), 4);
        assert_eq!(spec.neighbors(&CellId::new(0, 50), 1).len(), 6);
        assert!(spec.neighbors(&CellId::new(spec.cols(), 0), 1).is_empty());
        let cells = spec.neighbors(&interior, 1);
        assert!(cells.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn f32_mesh_agrees_with_f64() {
        let s64 = MeshSpec::<f64>::nyc();
        let s32 = MeshSpec::<f32>::nyc();
        let q = p(40.7484, -73.9857);
        let (x64, y64) = s64.project(&q).unwrap();
        let (x32, y32) = s32.project(&q.cast()).unwrap();
        assert!((x64 - x32 as f64).abs() < 0.5);
        assert!((y64 - y32 as f64).abs() < 0.5);
        assert_eq!(s32.cols(), s64.cols());
    }
}
