//! `acdf synth`: generate the synthetic event corpus on disk.

use acdf_core::io;
use acdf_core::scenario::generate_event;
use anyhow::Result;

use crate::config::RunConfig;
use crate::manifest::{Manifest, OutputTracker};
use crate::store;

pub fn run(config: &RunConfig) -> Result<Manifest> {
    let coarse_spec = config.grids.coarse_spec()?;
    let fine_spec = config.grids.fine_spec()?;
    let times = acdf_core::grid::hourly_times(config.scenario.start_time, config.scenario.hours);

    let mut tracker = OutputTracker::new(&config.paths.data_dir)?;
    tracker.write_resolved_config(config)?;

    let ids = config.event_ids();
    for (e, id) in ids.iter().enumerate() {
        let params = config.event_params(e)?;
        let event = generate_event(&fine_spec, &coarse_spec, &times, &params)?;
        io::write_wind(
            &tracker.path(format!("{id}/{}", store::TRUTH_FINE))?,
            &event.truth_fine,
        )?;
        io::write_wind(
            &tracker.path(format!("{id}/{}", store::TRUTH_COARSE))?,
            &event.truth_coarse,
        )?;
        io::write_wind(
            &tracker.path(format!("{id}/{}", store::FORECAST_COARSE))?,
            &event.forecast_coarse,
        )?;
        io::write_stations_csv(
            &tracker.path(format!("{id}/{}", store::STATIONS))?,
            &event.stations,
        )?;
        io::write_terrain(
            &tracker.path(format!("{id}/{}", store::TERRAIN))?,
            &event.terrain,
        )?;
        io::write_network_json(
            &tracker.path(format!("{id}/{}", store::NETWORK))?,
            &event.network,
        )?;
    }
    std::fs::write(
        tracker.path(store::EVENTS_INDEX)?,
        serde_json::to_string_pretty(&ids)?,
    )?;
    tracker.finish("synth")
}
