//! Gridded wind/terrain data model: grid geometry, fields, resampling,
//! point sampling, patch extraction/blending, and terrain features.
//!
//! Grids are node-registered: values live at cell corners, node (0, 0) at
//! (`lon_min`, `lat_min`), x increasing eastward and y increasing northward.
//! All geometry is degrees-based with a small-angle planar approximation
//! (no map projection).

mod field;
pub(crate) mod patch;
mod sample;
mod terrain;

pub(crate) use sample::stencil;

pub use field::{hourly_times, Station, StationSeries, WindField};
pub use patch::{blend_patches, extract_patches, upsample_patch, PatchPair, PatchPrediction};
pub use sample::{bilinear_resample, block_mean_aggregate, sample_at};
pub use terrain::{
    classify_tpi, compute_tpi, compute_tpi_cells, terrain_features, RoughnessClass, TerrainClass,
    TerrainFeatures, TerrainGrid, DEFAULT_TPI_RADIUS_M, FEATURE_NAMES, N_FEATURES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Meters per degree of latitude (and, in the planar approximation used
/// throughout, of longitude as well).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Tolerance for treating a fractional grid index as a node hit, in index
/// units. Keeps node-coincident samples bit-exact despite float rounding in
/// coordinate arithmetic.
pub(crate) const INDEX_SNAP_EPS: f64 = 1e-9;

/// Node-registered grid geometry in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Node spacing in degrees, identical in both axes.
    pub cell_size: f64,
    /// Node count along x (east).
    pub nx: usize,
    /// Node count along y (north).
    pub ny: usize,
}

impl GridSpec {
    /// Build a spec from the lower-left corner, node spacing, and node counts.
    pub fn new(lon_min: f64, lat_min: f64, cell_size: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cell_size must be > 0, got {cell_size}"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 2x2 nodes, got {nx}x{ny}"
            )));
        }
        let spec = GridSpec {
            lon_min,
            lon_max: lon_min + (nx - 1) as f64 * cell_size,
            lat_min,
            lat_max: lat_min + (ny - 1) as f64 * cell_size,
            cell_size,
            nx,
            ny,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check the node-count/extent consistency invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.lon_max > self.lon_min) || !(self.lat_max > self.lat_min) {
            return Err(Error::InvalidInput(format!(
                "degenerate bbox [{}, {}] x [{}, {}]",
                self.lon_min, self.lon_max, self.lat_min, self.lat_max
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidInput("cell_size must be > 0".into()));
        }
        let nx = ((self.lon_max - self.lon_min) / self.cell_size).round() as usize + 1;
        let ny = ((self.lat_max - self.lat_min) / self.cell_size).round() as usize + 1;
        if nx != self.nx || ny != self.ny {
            return Err(Error::InvalidInput(format!(
                "node counts {}x{} inconsistent with bbox/cell_size (expected {nx}x{ny})",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    /// Longitude of node column `ix`.
    #[inline]
    pub fn lon_at(&self, ix: usize) -> f64 {
        self.lon_min + ix as f64 * self.cell_size
    }

    /// Latitude of node row `iy`.
    #[inline]
    pub fn lat_at(&self, iy: usize) -> f64 {
        self.lat_min + iy as f64 * self.cell_size
    }

    /// Whether a point lies inside the bbox (inclusive, with snap tolerance).
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let eps = INDEX_SNAP_EPS * self.cell_size;
        lon >= self.lon_min - eps
            && lon <= self.lon_max + eps
            && lat >= self.lat_min - eps
            && lat <= self.lat_max + eps
    }

    /// Whether `other`'s bbox is contained in ours.
    pub fn contains_bbox(&self, other: &GridSpec) -> bool {
        self.contains(other.lon_min, other.lat_min) && self.contains(other.lon_max, other.lat_max)
    }

    /// Fractional node index of a point, snapped to exact nodes within
    /// [`INDEX_SNAP_EPS`].
    pub(crate) fn frac_index(&self, lon: f64, lat: f64) -> (f64, f64) {
        let snap = |f: f64| {
            let r = f.round();
            if (f - r).abs() < INDEX_SNAP_EPS {
                r
            } else {
                f
            }
        };
        (
            snap((lon - self.lon_min) / self.cell_size),
            snap((lat - self.lat_min) / self.cell_size),
        )
    }

    /// Integer node index of a point that must coincide with a node.
    pub(crate) fn node_index(&self, lon: f64, lat: f64, context: &str) -> Result<(usize, usize)> {
        let (fx, fy) = self.frac_index(lon, lat);
        let (rx, ry) = (fx.round(), fy.round());
        if (fx - rx).abs() > 1e-6 || (fy - ry).abs() > 1e-6 {
            return Err(Error::Alignment(format!(
                "{context}: point ({lon}, {lat}) is not on a grid node"
            )));
        }
        if rx < 0.0 || ry < 0.0 || rx as usize >= self.nx || ry as usize >= self.ny {
            return Err(Error::OutOfDomain {
                context: context.to_string(),
                lon,
                lat,
            });
        }
        Ok((rx as usize, ry as usize))
    }

    /// Integer ratio of this spec's cell size to a finer spec's, or an
    /// alignment error when the ratio is not integral.
    pub fn cell_ratio_to(&self, finer: &GridSpec) -> Result<usize> {
        let ratio = self.cell_size / finer.cell_size;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-6 {
            return Err(Error::Alignment(format!(
                "cell sizes {} and {} are not an integer ratio",
                self.cell_size, finer.cell_size
            )));
        }
        Ok(r as usize)
    }

    /// Both specs describe the same bbox (within snap tolerance).
    pub fn same_bbox(&self, other: &GridSpec) -> bool {
        let eps = INDEX_SNAP_EPS * self.cell_size.max(other.cell_size);
        (self.lon_min - other.lon_min).abs() < eps
            && (self.lon_max - other.lon_max).abs() < eps
            && (self.lat_min - other.lat_min).abs() < eps
            && (self.lat_max - other.lat_max).abs() < eps
    }
}

/// Wind speed in m/s from (u, v) components.
#[inline]
pub fn wind_speed(u: f64, v: f64) -> f64 {
    (u * u + v * v).sqrt()
}

/// Wind direction: the direction air moves toward, degrees clockwise from
/// north, in [0, 360).
#[inline]
pub fn wind_dir_deg(u: f64, v: f64) -> f64 {
    u.atan2(v).to_degrees().rem_euclid(360.0)
}
