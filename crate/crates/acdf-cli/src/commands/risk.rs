//! `acdf risk`: tower and line failure probabilities from a fine wind grid
//! and a network description.

use std::path::Path;

use acdf_core::io;
use acdf_core::risk::{risk_forecast, FragilityTable};
use anyhow::Result;

use crate::config::RunConfig;
use crate::manifest::{Manifest, OutputTracker};

pub const TOWERS_CSV: &str = "towers.csv";
pub const LINES_CSV: &str = "lines.csv";
pub const LINES_GEOJSON: &str = "lines.geojson";

pub fn run(config: &RunConfig, wind_file: &Path, network_file: &Path) -> Result<Manifest> {
    let wind = io::read_wind(wind_file)?;
    let network = io::read_network_json(network_file)?;
    let table = FragilityTable::default();
    let risk = risk_forecast(&wind, &network, &table, &config.risk_config())?;

    let mut tracker = OutputTracker::new(&config.paths.risk_dir)?;
    tracker.write_resolved_config(config)?;
    io::write_risk_towers_csv(&tracker.path(TOWERS_CSV)?, &risk)?;
    io::write_risk_lines_csv(&tracker.path(LINES_CSV)?, &risk)?;
    io::write_risk_geojson(&tracker.path(LINES_GEOJSON)?, &risk, &network)?;
    tracker.finish("risk")
}
