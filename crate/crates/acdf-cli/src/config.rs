//! Run configuration: one JSON document with a section per pipeline stage.
//!
//! Every field has a default so a minimal config is `{}`; unknown keys are
//! rejected so typos fail loudly before any compute starts. Commands write
//! the fully resolved document next to their outputs.

use std::path::{Path, PathBuf};

use acdf_core::corrector::CorrectorFitConfig;
use acdf_core::downscaler::DownscalerFitConfig;
use acdf_core::risk::{CorrelationMode, RiskConfig};
use acdf_core::scenario::{BiasModel, EventParams, TerrainParams, TrackPoint, VortexParams};
use acdf_core::{Error, GridSpec, Result};
use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

/// Top-level run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub grids: GridsSection,
    pub corrector: CorrectorSection,
    pub downscaler: DownscalerSection,
    pub risk: RiskSection,
    pub eval: EvalSection,
    pub seeds: SeedsSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.grids.coarse_spec()?;
        self.grids.fine_spec()?;
        if self.scenario.n_events == 0 {
            return Err(Error::InvalidInput("scenario.n_events must be >= 1".into()));
        }
        let min_hours = self.corrector.history_hours + self.corrector.lead_hours + 1;
        if self.scenario.hours < min_hours {
            return Err(Error::InvalidInput(format!(
                "scenario.hours = {} cannot fit one forecast cycle ({} history + {} lead)",
                self.scenario.hours, self.corrector.history_hours, self.corrector.lead_hours
            )));
        }
        if !(0.0..1.0).contains(&self.eval.val_fraction) {
            return Err(Error::InvalidInput(format!(
                "eval.val_fraction = {} outside [0, 1)",
                self.eval.val_fraction
            )));
        }
        Ok(())
    }

    /// Serialize the resolved (defaults filled in) document.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Event ids covered by the scenario section.
    pub fn event_ids(&self) -> Vec<String> {
        (0..self.scenario.n_events)
            .map(|e| format!("ev{e:02}"))
            .collect()
    }

    /// Full parameter set for one event. Per-event seeds and track geometry
    /// are derived deterministically from the scenario seed and event index.
    pub fn event_params(&self, event_index: usize) -> Result<EventParams> {
        let s = &self.scenario;
        if event_index >= s.n_events {
            return Err(Error::InvalidInput(format!(
                "event index {event_index} out of range (n_events = {})",
                s.n_events
            )));
        }
        let fine = self.grids.fine_spec()?;
        let (lon_span, lat_span) = (fine.lon_max - fine.lon_min, fine.lat_max - fine.lat_min);
        // Alternate the crossing direction and vary the entry latitude so
        // events sample different trajectories over the same terrain.
        let frac = 0.35 + 0.3 * (event_index as f64 / s.n_events.max(1) as f64);
        let (lat_a, lat_b) = (
            fine.lat_min + frac * lat_span,
            fine.lat_min + (1.0 - frac) * lat_span,
        );
        let (lon_a, lon_b) = if event_index % 2 == 0 {
            (fine.lon_min + 0.1 * lon_span, fine.lon_max - 0.1 * lon_span)
        } else {
            (fine.lon_max - 0.1 * lon_span, fine.lon_min + 0.1 * lon_span)
        };
        let t0 = s.start_time;
        let t1 = t0 + Duration::hours(s.hours as i64);
        let seed = |tag: &str| mix_seed(self.seeds.scenario, &format!("{event_index}:{tag}"));
        Ok(EventParams {
            event_id: format!("ev{event_index:02}"),
            vortex: VortexParams {
                v_max: s.v_max * (1.0 + 0.05 * event_index as f64),
                r_max_km: s.r_max_km,
                alpha: s.alpha,
                track: vec![
                    TrackPoint {
                        time: t0,
                        lat: lat_a,
                        lon: lon_a,
                    },
                    TrackPoint {
                        time: t1,
                        lat: lat_b,
                        lon: lon_b,
                    },
                ],
                include_translation: s.translation,
            },
            bias: BiasModel {
                gain: s.bias_gain,
                offset: s.bias_offset,
                displacement: (s.bias_displacement_lon, s.bias_displacement_lat),
                noise_sigma: s.bias_noise_sigma,
            },
            terrain: TerrainParams {
                n_bumps: s.terrain_bumps,
                height_m: s.terrain_height_m,
                radius_km: s.terrain_radius_km,
                // Shared across events: one fixed landscape per scenario seed.
                seed: mix_seed(self.seeds.scenario, "terrain"),
            },
            k_tpi: s.k_tpi,
            k_rough: s.k_rough,
            tpi_radius_m: s.tpi_radius_m,
            n_stations: s.n_stations,
            n_lines: s.n_lines,
            towers_per_line: s.towers_per_line,
            span_km: s.span_km,
            bias_seed: seed("bias"),
            station_seed: seed("stations"),
            network_seed: seed("network"),
        })
    }

    pub fn risk_config(&self) -> RiskConfig {
        RiskConfig {
            mc_samples: self.risk.mc_samples,
            seed: self.seeds.risk,
            threshold: self.risk.threshold,
            correlation: self.risk.correlation,
            substeps: self.risk.substeps,
        }
    }

    pub fn corrector_fit_config(&self) -> CorrectorFitConfig {
        CorrectorFitConfig {
            alpha: self.corrector.alpha,
            step_size: self.corrector.step_size,
            max_iters: self.corrector.max_iters,
            rel_tol: self.corrector.rel_tol,
        }
    }

    pub fn downscaler_fit_config(&self) -> DownscalerFitConfig {
        DownscalerFitConfig {
            ridge_lambda: self.downscaler.ridge_lambda,
            active: None,
        }
    }
}

/// Deterministic per-purpose seed derivation (FNV-1a over the tag, mixed
/// with the base seed).
pub fn mix_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ h
}

/// Synthetic-event generation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_events: usize,
    /// Hours of truth per event (one field per hour).
    pub hours: usize,
    pub start_time: DateTime<Utc>,
    pub v_max: f64,
    pub r_max_km: f64,
    /// Outer-profile decay exponent of the vortex.
    pub alpha: f64,
    /// Add the translation velocity of the moving center to the flow.
    pub translation: bool,
    pub terrain_bumps: usize,
    pub terrain_height_m: f64,
    pub terrain_radius_km: f64,
    /// Terrain speed-up strength on the TPI feature.
    pub k_tpi: f64,
    /// Slow-down strength on the roughness feature.
    pub k_rough: f64,
    pub tpi_radius_m: f64,
    pub bias_gain: f64,
    pub bias_offset: f64,
    pub bias_displacement_lon: f64,
    pub bias_displacement_lat: f64,
    pub bias_noise_sigma: f64,
    pub n_stations: usize,
    pub n_lines: usize,
    pub towers_per_line: usize,
    pub span_km: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            n_events: 3,
            hours: 48,
            start_time: Utc.with_ymd_and_hms(2020, 8, 1, 0, 0, 0).unwrap(),
            v_max: 40.0,
            r_max_km: 30.0,
            alpha: 0.5,
            translation: true,
            terrain_bumps: 40,
            terrain_height_m: 400.0,
            terrain_radius_km: 8.0,
            k_tpi: 0.3,
            k_rough: 0.1,
            tpi_radius_m: acdf_core::grid::DEFAULT_TPI_RADIUS_M,
            bias_gain: 0.8,
            bias_offset: -1.0,
            bias_displacement_lon: 0.0,
            bias_displacement_lat: 0.0,
            bias_noise_sigma: 0.3,
            n_stations: 60,
            n_lines: 8,
            towers_per_line: 12,
            span_km: 0.4,
        }
    }
}

/// Coarse/fine grid geometry. The fine grid shares the coarse bounding box;
/// its node count follows from the cell-size ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridsSection {
    pub lon_min: f64,
    pub lat_min: f64,
    pub coarse_cell_deg: f64,
    pub fine_cell_deg: f64,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub patch_deg: f64,
    pub stride_deg: f64,
}

impl Default for GridsSection {
    fn default() -> Self {
        Self {
            lon_min: 110.0,
            lat_min: 20.0,
            coarse_cell_deg: 0.125,
            fine_cell_deg: 0.005,
            coarse_nx: 11,
            coarse_ny: 11,
            patch_deg: 0.5,
            stride_deg: 0.25,
        }
    }
}

impl GridsSection {
    pub fn coarse_spec(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.lon_min,
            self.lat_min,
            self.coarse_cell_deg,
            self.coarse_nx,
            self.coarse_ny,
        )
    }

    pub fn fine_spec(&self) -> Result<GridSpec> {
        let raw = self.coarse_cell_deg / self.fine_cell_deg;
        let rounded = raw.round();
        if rounded < 1.0 || (raw - rounded).abs() > 1e-6 {
            return Err(Error::Alignment(format!(
                "coarse cell {} is not an integer multiple of fine cell {}",
                self.coarse_cell_deg, self.fine_cell_deg
            )));
        }
        let ratio = rounded as usize;
        GridSpec::new(
            self.lon_min,
            self.lat_min,
            self.fine_cell_deg,
            (self.coarse_nx - 1) * ratio + 1,
            (self.coarse_ny - 1) * ratio + 1,
        )
    }
}

/// Corrector window geometry and optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorSection {
    pub history_hours: usize,
    pub lead_hours: usize,
    /// Hours between consecutive training issue times.
    pub issue_stride: usize,
    pub alpha: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        let fit = CorrectorFitConfig::default();
        Self {
            history_hours: acdf_core::corrector::DEFAULT_HISTORY_HOURS,
            lead_hours: acdf_core::corrector::DEFAULT_LEAD_HOURS,
            issue_stride: 6,
            alpha: fit.alpha,
            step_size: fit.step_size,
            max_iters: fit.max_iters,
            rel_tol: fit.rel_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownscalerSection {
    pub ridge_lambda: f64,
}

impl Default for DownscalerSection {
    fn default() -> Self {
        Self {
            ridge_lambda: DownscalerFitConfig::default().ridge_lambda,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub mc_samples: usize,
    pub threshold: f64,
    pub correlation: CorrelationMode,
    pub substeps: usize,
}

impl Default for RiskSection {
    fn default() -> Self {
        let base = RiskConfig::default();
        Self {
            mc_samples: base.mc_samples,
            threshold: base.threshold,
            correlation: base.correlation,
            substeps: base.substeps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub val_fraction: f64,
    /// High-wind stratum threshold (m/s).
    pub high_wind_threshold: f64,
    /// Speed-histogram bin width (m/s) and upper edge.
    pub histogram_bin_width: f64,
    pub histogram_max: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            val_fraction: 0.15,
            high_wind_threshold: acdf_core::eval::HIGH_WIND_THRESHOLD,
            histogram_bin_width: 2.0,
            histogram_max: 80.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub scenario: u64,
    pub risk: u64,
    pub folds: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        Self {
            scenario: 1,
            risk: 2,
            folds: 3,
        }
    }
}

/// Where commands read and write. Relative paths resolve against the
/// process working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub forecast_dir: PathBuf,
    pub risk_dir: PathBuf,
    pub eval_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            model_dir: "models".into(),
            forecast_dir: "forecasts".into(),
            risk_dir: "risk".into(),
            eval_dir: "eval".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let config: RunConfig = serde_json::from_str("{}").unwrap();
        config.validate().unwrap();
        assert_eq!(config.scenario.n_events, 3);
        assert_eq!(config.grids.coarse_cell_deg, 0.125);
        let fine = config.grids.fine_spec().unwrap();
        assert_eq!(fine.nx, 251);
        assert_eq!(fine.ny, 251);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"scneario": {}}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"risk": {"mc_smaples": 10}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn round_trips_through_resolved_json() {
        let config = RunConfig::default();
        let text = config.to_pretty_json();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.scenario.hours, config.scenario.hours);
        assert_eq!(back.seeds.scenario, config.seeds.scenario);
    }

    #[test]
    fn event_params_are_deterministic_and_distinct() {
        let config = RunConfig::default();
        let a = config.event_params(0).unwrap();
        let b = config.event_params(0).unwrap();
        assert_eq!(a, b);
        let c = config.event_params(1).unwrap();
        assert_ne!(a.bias_seed, c.bias_seed);
        assert_ne!(
            a.vortex.track[0].lat, c.vortex.track[0].lat,
            "events should take different tracks"
        );
        // Terrain is the shared landscape.
        assert_eq!(a.terrain, c.terrain);
        assert!(config.event_params(3).is_err());
    }

    #[test]
    fn too_short_scenario_is_rejected() {
        let mut config = RunConfig::default();
        config.scenario.hours = 10;
        assert!(config.validate().is_err());
    }
}
