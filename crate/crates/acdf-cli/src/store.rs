//! On-disk layout for synthetic events and trained models.
//!
//! ```text
//! <data_dir>/
//!   events.json                 # list of event ids
//!   <event_id>/
//!     truth_fine.acdf
//!     truth_coarse.acdf
//!     forecast_coarse.acdf
//!     stations.csv
//!     terrain.acdf
//!     network.json
//! <model_dir>/<fold>/
//!     downscaler.json
//!     corrector.json
//! ```

use std::path::{Path, PathBuf};

use acdf_core::io;
use acdf_core::scenario::SyntheticEvent;
use anyhow::{bail, Context, Result};

pub const TRUTH_FINE: &str = "truth_fine.acdf";
pub const TRUTH_COARSE: &str = "truth_coarse.acdf";
pub const FORECAST_COARSE: &str = "forecast_coarse.acdf";
pub const STATIONS: &str = "stations.csv";
pub const TERRAIN: &str = "terrain.acdf";
pub const NETWORK: &str = "network.json";
pub const EVENTS_INDEX: &str = "events.json";
pub const DOWNSCALER_FILE: &str = "downscaler.json";
pub const CORRECTOR_FILE: &str = "corrector.json";

/// Fold directory name: the whole corpus, or one event held out.
pub fn fold_name(held_out: Option<&str>) -> String {
    match held_out {
        Some(id) => format!("loso-{id}"),
        None => "all".to_string(),
    }
}

pub fn event_dir(data_dir: &Path, event_id: &str) -> PathBuf {
    data_dir.join(event_id)
}

pub fn read_event_ids(data_dir: &Path) -> Result<Vec<String>> {
    let path = data_dir.join(EVENTS_INDEX);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run synth first?)", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_event(data_dir: &Path, event_id: &str) -> Result<SyntheticEvent> {
    let dir = event_dir(data_dir, event_id);
    if !dir.is_dir() {
        bail!("no event directory {} (run synth first?)", dir.display());
    }
    let ctx = |name: &str| format!("reading {}", dir.join(name).display());
    Ok(SyntheticEvent {
        event_id: event_id.to_string(),
        truth_fine: io::read_wind(&dir.join(TRUTH_FINE)).with_context(|| ctx(TRUTH_FINE))?,
        truth_coarse: io::read_wind(&dir.join(TRUTH_COARSE)).with_context(|| ctx(TRUTH_COARSE))?,
        forecast_coarse: io::read_wind(&dir.join(FORECAST_COARSE))
            .with_context(|| ctx(FORECAST_COARSE))?,
        stations: io::read_stations_csv(&dir.join(STATIONS)).with_context(|| ctx(STATIONS))?,
        terrain: io::read_terrain(&dir.join(TERRAIN)).with_context(|| ctx(TERRAIN))?,
        network: io::read_network_json(&dir.join(NETWORK)).with_context(|| ctx(NETWORK))?,
    })
}

pub fn downscaler_path(model_dir: &Path, held_out: Option<&str>) -> PathBuf {
    model_dir.join(fold_name(held_out)).join(DOWNSCALER_FILE)
}

pub fn corrector_path(model_dir: &Path, held_out: Option<&str>) -> PathBuf {
    model_dir.join(fold_name(held_out)).join(CORRECTOR_FILE)
}
