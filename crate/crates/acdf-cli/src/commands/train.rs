//! `acdf train`: two-stage fit. Stage 1 fits and freezes the terrain
//! downscaler on (coarse truth, fine truth) patches; Stage 2 fits the
//! bias corrector through the frozen downscaler.

use acdf_core::corrector::{fit_corrector, CycleLabels, ForecastCycle};
use acdf_core::downscaler::fit_downscaler;
use acdf_core::grid::{extract_patches, terrain_features, PatchPair};
use anyhow::{bail, Context, Result};

use crate::config::RunConfig;
use crate::manifest::{Manifest, OutputTracker};
use crate::store;

pub fn run(config: &RunConfig, held_out: Option<&str>) -> Result<Manifest> {
    let all_ids = store::read_event_ids(&config.paths.data_dir)?;
    if let Some(held) = held_out {
        if !all_ids.iter().any(|id| id == held) {
            bail!("held-out event {held} not in corpus {all_ids:?}");
        }
    }
    let train_ids: Vec<&String> = all_ids
        .iter()
        .filter(|id| Some(id.as_str()) != held_out)
        .collect();
    if train_ids.is_empty() {
        bail!("no training events left after holding out {held_out:?}");
    }

    let fold = store::fold_name(held_out);
    let mut tracker = OutputTracker::new(&config.paths.model_dir.join(&fold))?;
    tracker.write_resolved_config(config)?;

    // Stage 1: downscaler on truth pairs from every training event.
    let mut pairs: Vec<PatchPair> = Vec::new();
    let mut events = Vec::with_capacity(train_ids.len());
    for id in &train_ids {
        let event = store::read_event(&config.paths.data_dir, id)
            .with_context(|| format!("loading event {id}"))?;
        let features = terrain_features(&event.terrain, config.scenario.tpi_radius_m)?;
        pairs.extend(extract_patches(
            &event.truth_coarse,
            &event.truth_fine,
            &features,
            config.grids.patch_deg,
            config.grids.stride_deg,
            id,
        )?);
        events.push((event, features));
    }
    let mut downscaler = fit_downscaler(&pairs, &config.downscaler_fit_config())?;
    drop(pairs);
    downscaler.freeze()?;
    downscaler.save(&tracker.path(store::DOWNSCALER_FILE)?)?;

    // Stage 2: corrector through the frozen downscaler. All training events
    // share one terrain, so any event's feature stack parameterizes the
    // station loss.
    let mut cycles: Vec<ForecastCycle> = Vec::new();
    let mut labels: Vec<CycleLabels> = Vec::new();
    for (event, _) in &events {
        for (cycle, label) in acdf_core::corrector::cycles_from_event(
            event,
            config.corrector.history_hours,
            config.corrector.lead_hours,
            config.corrector.issue_stride,
        )? {
            cycles.push(cycle);
            labels.push(label);
        }
    }
    let corrector = fit_corrector(
        &cycles,
        &labels,
        &downscaler,
        &events[0].1,
        &config.corrector_fit_config(),
    )?;
    corrector.save(&tracker.path(store::CORRECTOR_FILE)?)?;

    tracker.finish("train")
}
