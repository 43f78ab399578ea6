//! `acdf forecast`: one operational cycle — correct the coarse forecast,
//! then downscale it to the fine grid. Emits both grids plus a per-stage
//! timing report (timing is run-dependent and stays out of the manifest).

use std::time::Instant;

use acdf_core::corrector::{apply_correction, CorrectorModel};
use acdf_core::downscaler::{downscale_field, DownscalerModel};
use acdf_core::grid::terrain_features;
use acdf_core::io;
use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::commands::cycle_at;
use crate::config::RunConfig;
use crate::manifest::{Manifest, OutputTracker, TIMING_NAME};
use crate::store;

pub const CORRECTED_COARSE: &str = "corrected_coarse.acdf";
pub const FORECAST_FINE: &str = "forecast_fine.acdf";

#[derive(Debug, Serialize)]
struct TimingReport {
    load_s: f64,
    correction_s: f64,
    downscale_s: f64,
    write_s: f64,
    total_s: f64,
}

pub fn run(
    config: &RunConfig,
    event_id: &str,
    issue_time: DateTime<Utc>,
    held_out: Option<&str>,
) -> Result<Manifest> {
    let t_start = Instant::now();
    let event = store::read_event(&config.paths.data_dir, event_id)?;
    let fold = store::fold_name(held_out);
    let downscaler =
        DownscalerModel::load(&store::downscaler_path(&config.paths.model_dir, held_out))
            .with_context(|| format!("loading downscaler for fold {fold} (run train first?)"))?;
    let corrector = CorrectorModel::load(&store::corrector_path(&config.paths.model_dir, held_out))
        .with_context(|| format!("loading corrector for fold {fold} (run train first?)"))?;
    let features = terrain_features(&event.terrain, config.scenario.tpi_radius_m)?;
    let (cycle, _labels) = cycle_at(&event, config, issue_time)?;
    let load_s = t_start.elapsed().as_secs_f64();

    let t_correct = Instant::now();
    let corrected = apply_correction(&corrector, &cycle)?;
    let correction_s = t_correct.elapsed().as_secs_f64();

    let t_down = Instant::now();
    let fine = downscale_field(
        &downscaler,
        &corrected,
        &features,
        config.grids.patch_deg,
        config.grids.stride_deg,
    )?;
    let downscale_s = t_down.elapsed().as_secs_f64();

    let t_write = Instant::now();
    let out_dir = config
        .paths
        .forecast_dir
        .join(event_id)
        .join(issue_time.format("%Y%m%dT%H%M%SZ").to_string());
    let mut tracker = OutputTracker::new(&out_dir)?;
    tracker.write_resolved_config(config)?;
    io::write_wind(&tracker.path(CORRECTED_COARSE)?, &corrected)?;
    io::write_wind(&tracker.path(FORECAST_FINE)?, &fine)?;
    let write_s = t_write.elapsed().as_secs_f64();

    let timing = TimingReport {
        load_s,
        correction_s,
        downscale_s,
        write_s,
        total_s: t_start.elapsed().as_secs_f64(),
    };
    std::fs::write(
        tracker.unhashed_path(TIMING_NAME)?,
        serde_json::to_string_pretty(&timing)?,
    )?;
    tracker.finish("forecast")
}
