//! Subcommand implementations. Each returns the manifest it wrote so the
//! entry point can print it.

pub mod eval;
pub mod forecast;
pub mod risk;
pub mod synth;
pub mod train;

use acdf_core::corrector::{CycleLabels, ForecastCycle};
use acdf_core::grid::Station;
use acdf_core::grid::{classify_tpi, compute_tpi, TerrainClass, TerrainGrid};
use acdf_core::scenario::SyntheticEvent;
use anyhow::{bail, Result};
use chrono::{DateTime, Utc};

use crate::config::RunConfig;

/// Build the forecast cycle issued at `issue_time` from an event's stored
/// forecast and truth series.
pub fn cycle_at(
    event: &SyntheticEvent,
    config: &RunConfig,
    issue_time: DateTime<Utc>,
) -> Result<(ForecastCycle, CycleLabels)> {
    let (h, tau) = (config.corrector.history_hours, config.corrector.lead_hours);
    let cycles = acdf_core::corrector::cycles_from_event(event, h, tau, 1)?;
    for (cycle, labels) in cycles {
        if cycle.issue_time == issue_time {
            return Ok((cycle, labels));
        }
    }
    bail!(
        "issue time {} leaves no {h} h of history and {tau} h of forecast in event {} \
         ({} .. {})",
        issue_time.to_rfc3339(),
        event.event_id,
        event
            .truth_coarse
            .times
            .first()
            .map(|t| t.to_rfc3339())
            .unwrap_or_default(),
        event
            .truth_coarse
            .times
            .last()
            .map(|t| t.to_rfc3339())
            .unwrap_or_default(),
    )
}

/// Terrain class at each station's nearest fine-grid node.
pub fn station_classes(
    terrain: &TerrainGrid,
    tpi_radius_m: f64,
    stations: &[Station],
) -> Result<Vec<TerrainClass>> {
    let tpi = compute_tpi(terrain, tpi_radius_m)?;
    let spec = &terrain.spec;
    Ok(stations
        .iter()
        .map(|st| {
            let x = ((st.lon - spec.lon_min) / spec.cell_size)
                .round()
                .clamp(0.0, (spec.nx - 1) as f64) as usize;
            let y = ((st.lat - spec.lat_min) / spec.cell_size)
                .round()
                .clamp(0.0, (spec.ny - 1) as f64) as usize;
            classify_tpi(tpi[[y, x]])
        })
        .collect())
}
