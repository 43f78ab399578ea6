//! `acdf eval`: leave-one-event-out skill report. For each fold, the
//! held-out event is forecast by three model variants — raw (bilinear
//! upsampling only), corrected-only, and the full correction + downscaling
//! chain — plus a truth self-check row. Station metrics are stratified by
//! terrain class and wind regime; speed histograms support distribution
//! comparison.

use acdf_core::corrector::{apply_correction, CorrectorModel, CycleLabels, ForecastCycle};
use acdf_core::downscaler::{downscale_field, DownscalerModel};
use acdf_core::eval::{
    improvement, make_loso_folds, render_table, station_predictions, stratify, LosoFold,
    MetricsReport, WindBin,
};
use acdf_core::grid::{
    bilinear_resample, hourly_times, terrain_features, Station, TerrainClass, TerrainFeatures,
};
use acdf_core::scenario::SyntheticEvent;
use acdf_core::{GridSpec, StationSeries, WindField};
use anyhow::{Context, Result};
use ndarray::Array3;
use serde::Serialize;

use crate::commands::station_classes;
use crate::config::RunConfig;
use crate::manifest::{Manifest, OutputTracker};
use crate::store;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

pub const VARIANTS: [&str; 4] = ["raw", "corrected_only", "full", "truth"];

#[derive(Debug, Serialize)]
struct FoldReport {
    held_out_event_id: String,
    train_event_ids: Vec<String>,
    /// Station-scale metrics per model variant.
    variants: std::collections::BTreeMap<String, MetricsReport>,
    /// Fine-grid MSE vs the fine truth, per model variant (m^2/s^2).
    grid_mse: std::collections::BTreeMap<String, f64>,
    /// Percent station speed-MAE reduction vs the raw baseline.
    improvement_pct_vs_raw: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    folds: Vec<FoldReport>,
}

/// Pooled station predictions and observations for one variant, stacked as
/// (cycle x station) virtual stations over the lead-time axis.
struct Pool {
    stations: Vec<Station>,
    data: Vec<Array3<f32>>,
}

impl Pool {
    fn new() -> Self {
        Self {
            stations: Vec::new(),
            data: Vec::new(),
        }
    }

    fn push(&mut self, cycle_idx: usize, series: &StationSeries) {
        for st in &series.stations {
            self.stations.push(Station {
                id: format!("c{cycle_idx}:{}", st.id),
                lat: st.lat,
                lon: st.lon,
            });
        }
        self.data.push(series.data.clone());
    }

    fn into_series(self, tau: usize) -> Result<StationSeries> {
        let total: usize = self.data.iter().map(|d| d.shape()[1]).sum();
        let mut data = Array3::<f32>::zeros((tau, total, 2));
        let mut offset = 0;
        for block in &self.data {
            let ns = block.shape()[1];
            data.slice_mut(ndarray::s![.., offset..offset + ns, ..])
                .assign(block);
            offset += ns;
        }
        // The pooled axis is lead hours; the calendar origin is irrelevant
        // to the metrics and kept synthetic.
        use chrono::TimeZone;
        let times = hourly_times(
            chrono::Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(),
            tau,
        );
        Ok(StationSeries::new(self.stations, times, data)?)
    }
}

/// Mean squared error between two fine fields over all times, nodes, and
/// both channels.
fn grid_mse(pred: &WindField, truth: &WindField) -> f64 {
    let mut se = 0.0f64;
    for (a, b) in pred.data.iter().zip(truth.data.iter()) {
        let d = *a as f64 - *b as f64;
        se += d * d;
    }
    se / pred.data.len() as f64
}

/// Histogram of station wind speeds, uniform bins of `width` m/s up to `max`.
fn speed_histogram(series: &StationSeries, width: f64, max: f64) -> Vec<(f64, f64, u64)> {
    let n_bins = (max / width).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    for t in 0..series.times.len() {
        for s in 0..series.n_stations() {
            let spd = acdf_core::grid::wind_speed(
                series.data[[t, s, 0]] as f64,
                series.data[[t, s, 1]] as f64,
            );
            let bin = ((spd / width) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width, (i + 1) as f64 * width, c))
        .collect()
}

fn write_histogram_csv(path: &std::path::Path, hist: &[(f64, f64, u64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (lo, hi, count) in hist {
        w.write_record(&[format!("{lo}"), format!("{hi}"), format!("{count}")])?;
    }
    w.flush()?;
    Ok(())
}

/// One fold's pooled predictions, per variant, plus grid-level MSE.
struct FoldAccumulator {
    obs: Pool,
    pools: std::collections::BTreeMap<String, Pool>,
    grid_se: std::collections::BTreeMap<String, (f64, usize)>,
}

impl FoldAccumulator {
    fn new() -> Self {
        let mut pools = std::collections::BTreeMap::new();
        for v in VARIANTS {
            pools.insert(v.to_string(), Pool::new());
        }
        let mut grid_se = std::collections::BTreeMap::new();
        for v in VARIANTS {
            grid_se.insert(v.to_string(), (0.0, 0));
        }
        Self {
            obs: Pool::new(),
            pools,
            grid_se,
        }
    }

    fn add_variant(
        &mut self,
        name: &str,
        cycle_idx: usize,
        fine: &WindField,
        truth_fine: &WindField,
        template: &StationSeries,
    ) -> Result<()> {
        let preds = station_predictions(fine, template)?;
        self.pools.get_mut(name).unwrap().push(cycle_idx, &preds);
        let entry = self.grid_se.get_mut(name).unwrap();
        entry.0 += grid_mse(fine, truth_fine);
        entry.1 += 1;
        Ok(())
    }
}

/// Forecast one cycle with every variant and pool the results.
#[allow(clippy::too_many_arguments)]
fn process_cycle(
    acc: &mut FoldAccumulator,
    cycle_idx: usize,
    cycle: &ForecastCycle,
    labels: &CycleLabels,
    event: &SyntheticEvent,
    features: &TerrainFeatures,
    fine_spec: &GridSpec,
    downscaler: &DownscalerModel,
    corrector: &CorrectorModel,
    config: &RunConfig,
) -> Result<()> {
    let tau = cycle.tau();
    // Raw lead window: the biased forecast with no correction applied.
    let raw_coarse = cycle.forecast().time_slice(cycle.h(), tau)?;
    let corrected = apply_correction(corrector, cycle)?;

    // Fine truth over the lead window.
    let t0 = event.truth_fine.time_index(cycle.lead_times()[0])?;
    let truth_fine = event.truth_fine.time_slice(t0, tau)?;

    let raw_fine = bilinear_resample(&raw_coarse, fine_spec)?;
    let corrected_fine = bilinear_resample(&corrected, fine_spec)?;
    let full_fine = downscale_field(
        downscaler,
        &corrected,
        features,
        config.grids.patch_deg,
        config.grids.stride_deg,
    )?;

    let template = &labels.station_obs;
    acc.obs.push(cycle_idx, template);
    acc.add_variant("raw", cycle_idx, &raw_fine, &truth_fine, template)?;
    acc.add_variant(
        "corrected_only",
        cycle_idx,
        &corrected_fine,
        &truth_fine,
        template,
    )?;
    acc.add_variant("full", cycle_idx, &full_fine, &truth_fine, template)?;
    acc.add_variant("truth", cycle_idx, &truth_fine, &truth_fine, template)?;
    Ok(())
}

pub fn run(config: &RunConfig) -> Result<Manifest> {
    let ids = store::read_event_ids(&config.paths.data_dir)?;
    let folds: Vec<LosoFold> = make_loso_folds(&ids, config.eval.val_fraction, config.seeds.folds)?;
    let fine_spec = config.grids.fine_spec()?;
    let wind_bins = vec![
        WindBin {
            label: "all".into(),
            min_speed: f64::NEG_INFINITY,
        },
        WindBin {
            label: format!(">{}", config.eval.high_wind_threshold),
            min_speed: config.eval.high_wind_threshold,
        },
    ];

    let mut tracker = OutputTracker::new(&config.paths.eval_dir)?;
    tracker.write_resolved_config(config)?;

    let mut fold_reports = Vec::new();
    let mut table_rows: Vec<(String, MetricsReport)> = Vec::new();
    for fold in &folds {
        let held = &fold.held_out_event_id;
        let event = store::read_event(&config.paths.data_dir, held)?;
        let downscaler =
            DownscalerModel::load(&store::downscaler_path(&config.paths.model_dir, Some(held)))
                .with_context(|| format!("fold {held}: run `train --hold-out {held}` first"))?;
        let corrector =
            CorrectorModel::load(&store::corrector_path(&config.paths.model_dir, Some(held)))
                .with_context(|| format!("fold {held}: run `train --hold-out {held}` first"))?;
        let features = terrain_features(&event.terrain, config.scenario.tpi_radius_m)?;
        let classes_one = station_classes(
            &event.terrain,
            config.scenario.tpi_radius_m,
            &event.stations.stations,
        )?;

        let mut acc = FoldAccumulator::new();
        let cycles = acdf_core::corrector::cycles_from_event(
            &event,
            config.corrector.history_hours,
            config.corrector.lead_hours,
            config.corrector.issue_stride,
        )?;
        let n_cycles = cycles.len();
        for (ci, (cycle, labels)) in cycles.iter().enumerate() {
            process_cycle(
                &mut acc,
                ci,
                cycle,
                labels,
                &event,
                &features,
                &fine_spec,
                &downscaler,
                &corrector,
                config,
            )?;
        }

        // Station classes repeat per pooled cycle.
        let mut classes: Vec<TerrainClass> = Vec::with_capacity(n_cycles * classes_one.len());
        for _ in 0..n_cycles {
            classes.extend_from_slice(&classes_one);
        }

        let tau = config.corrector.lead_hours;
        let obs = acc.obs.into_series(tau)?;
        let mut variants = std::collections::BTreeMap::new();
        let mut grid_mse_map = std::collections::BTreeMap::new();
        for name in VARIANTS {
            let pool = acc.pools.remove(name).unwrap();
            let series = pool.into_series(tau)?;
            let report = stratify(&series, &obs, &classes, &wind_bins)?;
            let hist = speed_histogram(
                &series,
                config.eval.histogram_bin_width,
                config.eval.histogram_max,
            );
            write_histogram_csv(&tracker.path(format!("hist_{held}_{name}.csv"))?, &hist)?;
            table_rows.push((format!("{held}/{name}"), report.clone()));
            variants.insert(name.to_string(), report);
            let (se, n) = acc.grid_se[name];
            grid_mse_map.insert(name.to_string(), se / n.max(1) as f64);
        }
        let obs_hist = speed_histogram(
            &obs,
            config.eval.histogram_bin_width,
            config.eval.histogram_max,
        );
        write_histogram_csv(&tracker.path(format!("hist_{held}_obs.csv"))?, &obs_hist)?;

        let mut improvement_map = std::collections::BTreeMap::new();
        for name in ["corrected_only", "full"] {
            improvement_map.insert(
                name.to_string(),
                improvement(&variants["raw"], &variants[name])?,
            );
        }
        fold_reports.push(FoldReport {
            held_out_event_id: held.clone(),
            train_event_ids: fold.train_event_ids.clone(),
            variants,
            grid_mse: grid_mse_map,
            improvement_pct_vs_raw: improvement_map,
        });
    }

    let report = EvalReport {
        folds: fold_reports,
    };
    std::fs::write(
        tracker.path(REPORT_JSON)?,
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(tracker.path(REPORT_TXT)?, render_table(&table_rows))?;
    tracker.finish("eval")
}
