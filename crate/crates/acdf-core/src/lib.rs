//! Core algorithms for wind-hazard forecasting over power networks:
//! synthetic cyclone scenarios, grid bias correction, terrain-aware
//! downscaling to 500 m, component reliability mapping, and evaluation
//! metrics.

// Validation uses `!(x > 0.0)` on purpose: unlike `x <= 0.0`, it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corrector;
pub mod downscaler;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod risk;
pub mod scenario;
pub(crate) mod util;

pub use corrector::{CorrectorFitConfig, CorrectorModel, CycleLabels, ForecastCycle, LossReport};
pub use downscaler::{DownscalerFitConfig, DownscalerModel};
pub use error::{Error, Result};
pub use eval::{LosoFold, MetricsReport};
pub use grid::{GridSpec, StationSeries, TerrainGrid, WindField};
