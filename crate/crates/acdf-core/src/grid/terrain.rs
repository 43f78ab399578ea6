//! Static terrain layers and the per-node feature stack derived from them.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, METERS_PER_DEGREE};

/// Number of per-node terrain features.
pub const N_FEATURES: usize = 5;

/// Feature order in [`TerrainFeatures::data`].
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "elevation_norm",
    "tpi",
    "slope_east",
    "slope_north",
    "roughness",
];

/// Default topographic-position-index neighborhood radius: 10 cells of the
/// 0.005-degree operational grid.
pub const DEFAULT_TPI_RADIUS_M: f64 = 0.05 * METERS_PER_DEGREE;

/// Land-cover class, ordered by aerodynamic roughness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoughnessClass {
    Water = 0,
    Open = 1,
    Forest = 2,
    Urban = 3,
}

impl RoughnessClass {
    /// Dimensionless drag scalar used by the feature stack.
    pub fn scalar(self) -> f64 {
        match self {
            RoughnessClass::Water => 0.0,
            RoughnessClass::Open => 0.1,
            RoughnessClass::Forest => 0.5,
            RoughnessClass::Urban => 1.0,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(RoughnessClass::Water),
            1 => Ok(RoughnessClass::Open),
            2 => Ok(RoughnessClass::Forest),
            3 => Ok(RoughnessClass::Urban),
            _ => Err(Error::InvalidInput(format!(
                "roughness class code {code} out of range 0..=3"
            ))),
        }
    }
}

/// Topographic position relative to the TPI neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Valley,
    Flat,
    Ridge,
}

impl std::fmt::Display for TerrainClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TerrainClass::Valley => write!(f, "valley"),
            TerrainClass::Flat => write!(f, "flat"),
            TerrainClass::Ridge => write!(f, "ridge"),
        }
    }
}

/// Valley below -50 m, ridge above +50 m, flat between (inclusive).
pub fn classify_tpi(tpi_m: f64) -> TerrainClass {
    if tpi_m < -50.0 {
        TerrainClass::Valley
    } else if tpi_m > 50.0 {
        TerrainClass::Ridge
    } else {
        TerrainClass::Flat
    }
}

/// Static terrain on a node-registered grid: elevation in meters and a
/// land-cover class per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    pub spec: GridSpec,
    pub elevation: Array2<f32>,
    pub roughness_class: Array2<u8>,
}

impl TerrainGrid {
    pub fn new(
        spec: GridSpec,
        elevation: Array2<f32>,
        roughness_class: Array2<u8>,
    ) -> Result<Self> {
        spec.validate()?;
        if elevation.shape() != [spec.ny, spec.nx] || roughness_class.shape() != [spec.ny, spec.nx]
        {
            return Err(Error::ShapeMismatch(format!(
                "terrain layers {:?}/{:?} vs grid {}x{}",
                elevation.shape(),
                roughness_class.shape(),
                spec.ny,
                spec.nx
            )));
        }
        if elevation.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput("non-finite elevation".into()));
        }
        for &c in &roughness_class {
            RoughnessClass::from_code(c)?;
        }
        Ok(TerrainGrid {
            spec,
            elevation,
            roughness_class,
        })
    }

    /// Zero elevation, water everywhere.
    pub fn flat(spec: GridSpec) -> Result<Self> {
        let (ny, nx) = (spec.ny, spec.nx);
        TerrainGrid::new(spec, Array2::zeros((ny, nx)), Array2::zeros((ny, nx)))
    }
}

/// Topographic position index in meters: elevation minus the mean elevation
/// of nodes within `radius_cells` (circular mask, center excluded, truncated
/// at domain edges).
pub fn compute_tpi_cells(elevation: &Array2<f32>, radius_cells: usize) -> Array2<f64> {
    let (ny, nx) = elevation.dim();
    let r = radius_cells as isize;
    // Per-row half-widths of the circular mask.
    let half_w: Vec<isize> = (-r..=r)
        .map(|dy| ((r * r - dy * dy) as f64).sqrt().floor() as isize)
        .collect();
    // Row prefix sums: row_sum[y][x+1] = sum of elevation[y][0..=x].
    let mut row_sum = vec![vec![0.0f64; nx + 1]; ny];
    for y in 0..ny {
        for x in 0..nx {
            row_sum[y][x + 1] = row_sum[y][x] + elevation[[y, x]] as f64;
        }
    }
    let mut tpi = Array2::zeros((ny, nx));
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for (k, &w) in half_w.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy < 0 || yy >= ny as isize {
                    continue;
                }
                let x0 = (x as isize - w).max(0) as usize;
                let x1 = (x as isize + w).min(nx as isize - 1) as usize;
                acc += row_sum[yy as usize][x1 + 1] - row_sum[yy as usize][x0];
                count += x1 - x0 + 1;
            }
            // Exclude the center node itself.
            acc -= elevation[[y, x]] as f64;
            count -= 1;
            tpi[[y, x]] = if count == 0 {
                0.0
            } else {
                elevation[[y, x]] as f64 - acc / count as f64
            };
        }
    }
    tpi
}

/// [`compute_tpi_cells`] with the radius given in meters and converted to
/// whole cells on this grid (at least 1).
pub fn compute_tpi(terrain: &TerrainGrid, radius_m: f64) -> Result<Array2<f64>> {
    if !(radius_m > 0.0) {
        return Err(Error::InvalidInput(format!(
            "TPI radius must be > 0 m, got {radius_m}"
        )));
    }
    let cell_m = terrain.spec.cell_size * METERS_PER_DEGREE;
    let radius_cells = (radius_m / cell_m).round().max(1.0) as usize;
    Ok(compute_tpi_cells(&terrain.elevation, radius_cells))
}

/// Per-node feature stack: `data[y, x, f]` ordered as [`FEATURE_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainFeatures {
    pub spec: GridSpec,
    pub data: Array3<f64>,
}

/// Build the feature stack for a terrain grid.
///
/// Elevation is normalized by its maximum absolute value (divisor 1 when the
/// grid is all-zero), TPI stays in meters, slopes are central differences in
/// m/m (one-sided at edges), and roughness is the land-cover drag scalar. A
/// flat water grid therefore maps to all-zero features.
pub fn terrain_features(terrain: &TerrainGrid, tpi_radius_m: f64) -> Result<TerrainFeatures> {
    let (ny, nx) = (terrain.spec.ny, terrain.spec.nx);
    let tpi = compute_tpi(terrain, tpi_radius_m)?;
    let elev_max = terrain
        .elevation
        .iter()
        .fold(0.0f64, |m, &e| m.max((e as f64).abs()));
    let elev_div = if elev_max > 0.0 { elev_max } else { 1.0 };
    let cell_m = terrain.spec.cell_size * METERS_PER_DEGREE;
    let mut data = Array3::zeros((ny, nx, N_FEATURES));
    for y in 0..ny {
        for x in 0..nx {
            let e = |yy: usize, xx: usize| terrain.elevation[[yy, xx]] as f64;
            let slope_east = if nx == 1 {
                0.0
            } else if x == 0 {
                (e(y, 1) - e(y, 0)) / cell_m
            } else if x == nx - 1 {
                (e(y, nx - 1) - e(y, nx - 2)) / cell_m
            } else {
                (e(y, x + 1) - e(y, x - 1)) / (2.0 * cell_m)
            };
            let slope_north = if ny == 1 {
                0.0
            } else if y == 0 {
                (e(1, x) - e(0, x)) / cell_m
            } else if y == ny - 1 {
                (e(ny - 1, x) - e(ny - 2, x)) / cell_m
            } else {
                (e(y + 1, x) - e(y - 1, x)) / (2.0 * cell_m)
            };
            data[[y, x, 0]] = e(y, x) / elev_div;
            data[[y, x, 1]] = tpi[[y, x]];
            data[[y, x, 2]] = slope_east;
            data[[y, x, 3]] = slope_north;
            data[[y, x, 4]] = RoughnessClass::from_code(terrain.roughness_class[[y, x]])
                .expect("validated at construction")
                .scalar();
        }
    }
    Ok(TerrainFeatures {
        spec: terrain.spec.clone(),
        data,
    })
}
