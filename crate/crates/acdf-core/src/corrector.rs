//! Bias correction of coarse forecasts from recent forecast–observation
//! history, trained end to end through the frozen downscaler.
//!
//! A forecast cycle carries H hours of paired forecast and observation
//! history plus τ hours of future forecast. Per lead time and channel, a
//! linear model over history-error and forecast features emits an additive
//! correction, so a zero-weight model is the identity on forecasts.
//!
//! Training minimizes the mean of a dual objective over cycles: a coarse-grid
//! term against gridded observations plus α times a station term measured on
//! the downscaled corrected field at station locations. The gradient is
//! assembled analytically through the correction, bilinear upsampling, the
//! downscaler's residual response, and bilinear station sampling. The station
//! path is evaluated sparsely: overlapping patches agree bitwise on shared
//! nodes, so the downscaled value at a fine node reduces to the cell response
//! at the globally interpolated coarse flow there.

use std::path::Path;

use chrono::{DateTime, Utc};
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::downscaler::{cell_jacobian, cell_response, DownscalerModel};
use crate::error::{Error, Result};
use crate::grid::{
    sample_at, stencil, GridSpec, StationSeries, TerrainFeatures, WindField, N_FEATURES,
};
use crate::scenario::SyntheticEvent;

/// History window length, hours.
pub const DEFAULT_HISTORY_HOURS: usize = 6;
/// Forecast (lead) window length, hours.
pub const DEFAULT_LEAD_HOURS: usize = 12;
/// Station-term weight in the dual objective.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Feature count of ψ(node, lead).
pub const N_CORRECTOR_FEATURES: usize = 10;

const MODEL_VERSION: u32 = 1;

/// Names of the ψ features, in weight order.
pub fn corrector_feature_names() -> Vec<String> {
    [
        "mean_hist_err_u",
        "mean_hist_err_v",
        "last_hist_err_u",
        "last_hist_err_v",
        "forecast_u",
        "forecast_v",
        "forecast_speed",
        "lead_fraction",
        "nbhd_hist_err_u",
        "nbhd_hist_err_v",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// One forecast issue: paired history and the forecast to correct.
///
/// The forecast field spans both windows, `[t₀−H+1, t₀+τ]`; observations
/// cover the history window `[t₀−H+1, t₀]` on the same grid.
#[derive(Debug, Clone)]
pub struct ForecastCycle {
    pub event_id: String,
    pub issue_time: DateTime<Utc>,
    forecast_coarse: WindField,
    obs_coarse: WindField,
}

impl ForecastCycle {
    pub fn new(
        event_id: &str,
        issue_time: DateTime<Utc>,
        forecast_coarse: WindField,
        obs_coarse: WindField,
    ) -> Result<Self> {
        if obs_coarse.spec != forecast_coarse.spec {
            return Err(Error::Alignment(
                "forecast and observation grids differ".into(),
            ));
        }
        let h = obs_coarse.n_times();
        if forecast_coarse.n_times() < h + 1 {
            return Err(Error::IncompleteCycle(format!(
                "forecast covers {} hours but history alone is {h}",
                forecast_coarse.n_times()
            )));
        }
        if forecast_coarse.times[..h] != obs_coarse.times[..] {
            return Err(Error::IncompleteCycle(
                "forecast and observation history hours differ".into(),
            ));
        }
        if obs_coarse.times[h - 1] != issue_time {
            return Err(Error::IncompleteCycle(format!(
                "issue time {issue_time} is not the last observed hour {}",
                obs_coarse.times[h - 1]
            )));
        }
        Ok(Self {
            event_id: event_id.to_string(),
            issue_time,
            forecast_coarse,
            obs_coarse,
        })
    }

    /// History hours H.
    pub fn h(&self) -> usize {
        self.obs_coarse.n_times()
    }

    /// Lead hours τ.
    pub fn tau(&self) -> usize {
        self.forecast_coarse.n_times() - self.h()
    }

    pub fn spec(&self) -> &GridSpec {
        &self.forecast_coarse.spec
    }

    /// Forecast over both windows.
    pub fn forecast(&self) -> &WindField {
        &self.forecast_coarse
    }

    /// Observations over the history window.
    pub fn obs(&self) -> &WindField {
        &self.obs_coarse
    }

    /// Valid times of the forecast window, `[t₀+1, t₀+τ]`.
    pub fn lead_times(&self) -> &[DateTime<Utc>] {
        &self.forecast_coarse.times[self.h()..]
    }
}

/// ψ(node, lead): per-node forecast-error and forecast-state features,
/// shape (τ, ny, nx, [`N_CORRECTOR_FEATURES`]).
///
/// Features: mean history error per channel (obs − forecast over H hours),
/// last-hour error, forecast (u, v) at the lead, forecast speed, lead/τ, and
/// the 3×3-neighborhood mean of the history error (edge-truncated).
pub fn build_features(cycle: &ForecastCycle) -> Array4<f64> {
    let spec = cycle.spec();
    let (ny, nx) = (spec.ny, spec.nx);
    let (h, tau) = (cycle.h(), cycle.tau());
    let fcst = &cycle.forecast_coarse.data;
    let obs = &cycle.obs_coarse.data;

    let mut mean_err = Array3::<f64>::zeros((ny, nx, 2));
    let mut last_err = Array3::<f64>::zeros((ny, nx, 2));
    for y in 0..ny {
        for x in 0..nx {
            for c in 0..2 {
                let mut acc = 0.0;
                for t in 0..h {
                    acc += obs[[t, y, x, c]] as f64 - fcst[[t, y, x, c]] as f64;
                }
                mean_err[[y, x, c]] = acc / h as f64;
                last_err[[y, x, c]] = obs[[h - 1, y, x, c]] as f64 - fcst[[h - 1, y, x, c]] as f64;
            }
        }
    }
    let mut nbhd_err = Array3::<f64>::zeros((ny, nx, 2));
    for y in 0..ny {
        for x in 0..nx {
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(ny - 1));
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(nx - 1));
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            for c in 0..2 {
                let mut acc = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        acc += mean_err[[yy, xx, c]];
                    }
                }
                nbhd_err[[y, x, c]] = acc / count;
            }
        }
    }

    let mut psi = Array4::<f64>::zeros((tau, ny, nx, N_CORRECTOR_FEATURES));
    for l in 0..tau {
        let t = h + l;
        let lead_frac = (l + 1) as f64 / tau as f64;
        for y in 0..ny {
            for x in 0..nx {
                let fu = fcst[[t, y, x, 0]] as f64;
                let fv = fcst[[t, y, x, 1]] as f64;
                psi[[l, y, x, 0]] = mean_err[[y, x, 0]];
                psi[[l, y, x, 1]] = mean_err[[y, x, 1]];
                psi[[l, y, x, 2]] = last_err[[y, x, 0]];
                psi[[l, y, x, 3]] = last_err[[y, x, 1]];
                psi[[l, y, x, 4]] = fu;
                psi[[l, y, x, 5]] = fv;
                psi[[l, y, x, 6]] = (fu * fu + fv * fv).sqrt();
                psi[[l, y, x, 7]] = lead_frac;
                psi[[l, y, x, 8]] = nbhd_err[[y, x, 0]];
                psi[[l, y, x, 9]] = nbhd_err[[y, x, 1]];
            }
        }
    }
    psi
}

/// Weight vectors of one lead time, one per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadWeights {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LeadWeights {
    fn zeros() -> Self {
        Self {
            u: vec![0.0; N_CORRECTOR_FEATURES],
            v: vec![0.0; N_CORRECTOR_FEATURES],
        }
    }
}

/// Per-lead linear correction model over ψ, bound to the downscaler it was
/// trained through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorModel {
    version: u32,
    tau: usize,
    feature_names: Vec<String>,
    weights: Vec<LeadWeights>,
    alpha: f64,
    downscaler_digest: String,
    trained: bool,
    loss_trajectory: Vec<f64>,
}

impl CorrectorModel {
    fn with_weights(tau: usize, weights: Vec<LeadWeights>, trained: bool) -> Self {
        Self {
            version: MODEL_VERSION,
            tau,
            feature_names: corrector_feature_names(),
            weights,
            alpha: DEFAULT_ALPHA,
            downscaler_digest: String::new(),
            trained,
            loss_trajectory: Vec::new(),
        }
    }

    /// Placeholder with no fitted weights; [`apply_correction`] refuses it.
    pub fn untrained(tau: usize) -> Self {
        Self::with_weights(tau, vec![LeadWeights::zeros(); tau], false)
    }

    /// Zero-weight model: a valid model whose correction is identically zero.
    pub fn zero(tau: usize) -> Self {
        Self::with_weights(tau, vec![LeadWeights::zeros(); tau], true)
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weights(&self) -> &[LeadWeights] {
        &self.weights
    }

    /// Digest of the frozen downscaler the model was trained through (empty
    /// if the model was built without training).
    pub fn downscaler_digest(&self) -> &str {
        &self.downscaler_digest
    }

    pub fn loss_trajectory(&self) -> &[f64] {
        &self.loss_trajectory
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "corrector model version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if model.weights.len() != model.tau
            || model.feature_names.len() != N_CORRECTOR_FEATURES
            || model
                .weights
                .iter()
                .any(|lw| lw.u.len() != N_CORRECTOR_FEATURES || lw.v.len() != N_CORRECTOR_FEATURES)
        {
            return Err(Error::Format(
                "corrector model weight layout mismatch".into(),
            ));
        }
        let finite = model
            .weights
            .iter()
            .flat_map(|lw| lw.u.iter().chain(&lw.v))
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::Format("non-finite corrector weight".into()));
        }
        Ok(model)
    }
}

/// Correct a cycle's forecast window: output = forecast + θ(lead) · ψ per
/// node and channel, on the coarse grid over `[t₀+1, t₀+τ]`.
pub fn apply_correction(model: &CorrectorModel, cycle: &ForecastCycle) -> Result<WindField> {
    if !model.trained {
        return Err(Error::NotTrained("corrector has no fitted weights"));
    }
    if model.tau != cycle.tau() {
        return Err(Error::ShapeMismatch(format!(
            "model covers {} lead hours, cycle has {}",
            model.tau,
            cycle.tau()
        )));
    }
    let psi = build_features(cycle);
    let spec = cycle.spec();
    let (h, tau) = (cycle.h(), cycle.tau());
    let mut data = Array4::<f32>::zeros((tau, spec.ny, spec.nx, 2));
    for l in 0..tau {
        let lw = &model.weights[l];
        for y in 0..spec.ny {
            for x in 0..spec.nx {
                for (c, w) in [&lw.u, &lw.v].into_iter().enumerate() {
                    let mut delta = 0.0f64;
                    for f in 0..N_CORRECTOR_FEATURES {
                        delta += w[f] * psi[[l, y, x, f]];
                    }
                    data[[l, y, x, c]] =
                        (cycle.forecast_coarse.data[[h + l, y, x, c]] as f64 + delta) as f32;
                }
            }
        }
    }
    WindField::new(spec.clone(), cycle.lead_times().to_vec(), data)
}

/// Mean squared error against gridded observations: (1/(τN)) Σ ‖·‖² over
/// times, nodes, and both channels.
pub fn loss_grid(corrected: &WindField, grid_obs: &WindField) -> Result<f64> {
    if corrected.spec != grid_obs.spec || corrected.times != grid_obs.times {
        return Err(Error::ShapeMismatch(
            "loss_grid: fields disagree on grid or times".into(),
        ));
    }
    let mut se = 0.0f64;
    for (a, b) in corrected.data.iter().zip(grid_obs.data.iter()) {
        let d = *a as f64 - *b as f64;
        se += d * d;
    }
    let n = (corrected.n_times() * corrected.spec.ny * corrected.spec.nx) as f64;
    Ok(se / n)
}

/// Mean squared error at stations: (1/(τS)) Σ ‖sample − obs‖² over times,
/// stations, and both channels.
pub fn loss_station(downscaled: &WindField, station_obs: &StationSeries) -> Result<f64> {
    if downscaled.times != station_obs.times {
        return Err(Error::ShapeMismatch(
            "loss_station: time axes differ".into(),
        ));
    }
    let s_count = station_obs.n_stations();
    if s_count == 0 {
        return Err(Error::InvalidInput("loss_station: no stations".into()));
    }
    let mut se = 0.0f64;
    for t in 0..downscaled.n_times() {
        for (si, st) in station_obs.stations.iter().enumerate() {
            let (u, v) = sample_at(downscaled, t, st.lon, st.lat)?;
            let du = u - station_obs.data[[t, si, 0]] as f64;
            let dv = v - station_obs.data[[t, si, 1]] as f64;
            se += du * du + dv * dv;
        }
    }
    Ok(se / (downscaled.n_times() * s_count) as f64)
}

/// Combined dual-objective loss, l_total = l_grid + α · l_station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_grid: f64,
    pub l_station: f64,
    pub l_total: f64,
    pub alpha: f64,
}

pub fn loss_total(l_grid: f64, l_station: f64, alpha: f64) -> Result<LossReport> {
    if !(l_grid >= 0.0 && l_station >= 0.0 && alpha >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "loss_total: negative inputs ({l_grid}, {l_station}, alpha={alpha})"
        )));
    }
    Ok(LossReport {
        l_grid,
        l_station,
        l_total: l_grid + alpha * l_station,
        alpha,
    })
}

/// Supervision for one cycle: gridded and station observations over the
/// forecast window.
#[derive(Debug, Clone)]
pub struct CycleLabels {
    pub grid_obs: WindField,
    pub station_obs: StationSeries,
}

/// Options for [`fit_corrector`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorFitConfig {
    /// Station-term weight in the objective.
    pub alpha: f64,
    /// Initial gradient step; backtracking halves it on any loss increase.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop when the relative loss improvement falls below this.
    pub rel_tol: f64,
}

impl Default for CorrectorFitConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            step_size: 1.0,
            max_iters: 2000,
            rel_tol: 1e-8,
        }
    }
}

/// One fine-grid corner of a station's bilinear footprint: its blend weight,
/// terrain features, and the global coarse nodes interpolating the flow there.
struct CornerPlan {
    weight: f64,
    terr: [f64; N_FEATURES],
    coarse: [(usize, usize, f64); 4],
}

struct StationPlan {
    corners: Vec<CornerPlan>,
}

/// Precomputed, θ-independent state for objective evaluations.
struct Workspace<'a> {
    cycles: &'a [ForecastCycle],
    ds_weights: &'a [f64],
    alpha: f64,
    tau: usize,
    ny: usize,
    nx: usize,
    /// ψ per cycle, flattened standard layout (τ, ny, nx, F).
    features: Vec<Array4<f64>>,
    /// Observation fields per cycle over the forecast window.
    grid_obs: Vec<&'a WindField>,
    station_obs: Vec<&'a StationSeries>,
    plans: Vec<Vec<StationPlan>>,
}

const DIMS_PER_LEAD: usize = 2 * N_CORRECTOR_FEATURES;

impl<'a> Workspace<'a> {
    fn build(
        cycles: &'a [ForecastCycle],
        labels: &'a [CycleLabels],
        frozen_ds: &'a DownscalerModel,
        terrain: &'a TerrainFeatures,
        alpha: f64,
    ) -> Result<Self> {
        if cycles.is_empty() {
            return Err(Error::InvalidInput(
                "fit_corrector needs at least one cycle".into(),
            ));
        }
        if cycles.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cycles but {} label sets",
                cycles.len(),
                labels.len()
            )));
        }
        let spec = cycles[0].spec();
        let tau = cycles[0].tau();
        if !spec.same_bbox(&terrain.spec) {
            return Err(Error::Alignment(
                "fit_corrector: coarse grid and terrain bboxes differ".into(),
            ));
        }
        let ratio = spec.cell_ratio_to(&terrain.spec)?;
        if terrain.spec.ny - 1 != (spec.ny - 1) * ratio
            || terrain.spec.nx - 1 != (spec.nx - 1) * ratio
        {
            return Err(Error::Alignment(
                "fit_corrector: terrain node counts do not refine the coarse grid".into(),
            ));
        }

        let mut features = Vec::with_capacity(cycles.len());
        let mut grid_obs = Vec::with_capacity(cycles.len());
        let mut station_obs = Vec::with_capacity(cycles.len());
        let mut plans = Vec::with_capacity(cycles.len());
        for (cycle, label) in cycles.iter().zip(labels) {
            if cycle.spec() != spec || cycle.tau() != tau {
                return Err(Error::Alignment(
                    "fit_corrector: cycles disagree on grid or lead window".into(),
                ));
            }
            if label.grid_obs.spec != *spec || label.grid_obs.times != cycle.lead_times() {
                return Err(Error::Alignment(
                    "fit_corrector: grid observations do not cover the forecast window".into(),
                ));
            }
            if label.station_obs.times != cycle.lead_times() {
                return Err(Error::Alignment(
                    "fit_corrector: station observations do not cover the forecast window".into(),
                ));
            }
            if label.station_obs.n_stations() == 0 {
                return Err(Error::InvalidInput(
                    "fit_corrector: cycle has no stations".into(),
                ));
            }
            features.push(build_features(cycle));
            grid_obs.push(&label.grid_obs);
            station_obs.push(&label.station_obs);
            plans.push(
                label
                    .station_obs
                    .stations
                    .iter()
                    .map(|st| station_plan(st.lon, st.lat, terrain, ratio))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            cycles,
            ds_weights: frozen_ds.weights(),
            alpha,
            tau,
            ny: spec.ny,
            nx: spec.nx,
            features,
            grid_obs,
            station_obs,
            plans,
        })
    }

    fn dim(&self) -> usize {
        self.tau * DIMS_PER_LEAD
    }

    /// Mean total loss over cycles; gradient accumulated in cycle order when
    /// requested. Returns (total, grid component, station component).
    fn eval(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> (f64, f64, f64) {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let m = self.cycles.len() as f64;
        let fdim = N_CORRECTOR_FEATURES;
        let (mut grid_acc, mut st_acc) = (0.0f64, 0.0f64);
        for (ci, cycle) in self.cycles.iter().enumerate() {
            let psi = &self.features[ci];
            let psi_flat = psi.as_slice().expect("standard layout");
            let h = cycle.h();
            let fcst = &cycle.forecast_coarse.data;
            let gobs = &self.grid_obs[ci].data;
            let inv_gn = 1.0 / (self.tau * self.ny * self.nx) as f64;

            // Coarse-grid term: forward and backward fused per node.
            let mut grid_se = 0.0f64;
            for l in 0..self.tau {
                for y in 0..self.ny {
                    for x in 0..self.nx {
                        let off = ((l * self.ny + y) * self.nx + x) * fdim;
                        let prow = &psi_flat[off..off + fdim];
                        for c in 0..2 {
                            let tb = (l * 2 + c) * fdim;
                            let mut corr = fcst[[h + l, y, x, c]] as f64;
                            for f in 0..fdim {
                                corr += theta[tb + f] * prow[f];
                            }
                            let r = corr - gobs[[l, y, x, c]] as f64;
                            grid_se += r * r;
                            if let Some(g) = grad.as_deref_mut() {
                                let w = 2.0 * inv_gn / m * r;
                                for f in 0..fdim {
                                    g[tb + f] += w * prow[f];
                                }
                            }
                        }
                    }
                }
            }

            // Station term through the downscaler, sparse at station corners.
            let plans = &self.plans[ci];
            let sobs = &self.station_obs[ci].data;
            let s_count = plans.len();
            let inv_sn = 1.0 / (self.tau * s_count) as f64;
            let mut st_se = 0.0f64;
            let corrected_at = |theta: &[f64], l: usize, y: usize, x: usize, c: usize| -> f64 {
                let off = ((l * self.ny + y) * self.nx + x) * fdim;
                let prow = &psi_flat[off..off + fdim];
                let tb = (l * 2 + c) * fdim;
                let mut corr = fcst[[h + l, y, x, c]] as f64;
                for f in 0..fdim {
                    corr += theta[tb + f] * prow[f];
                }
                corr
            };
            for l in 0..self.tau {
                for (si, plan) in plans.iter().enumerate() {
                    let mut v = [0.0f64; 2];
                    let mut ups = Vec::with_capacity(plan.corners.len());
                    for corner in &plan.corners {
                        let mut up = [0.0f64; 2];
                        for &(cy, cx, wu) in &corner.coarse {
                            up[0] += wu * corrected_at(theta, l, cy, cx, 0);
                            up[1] += wu * corrected_at(theta, l, cy, cx, 1);
                        }
                        let (ou, ov) = cell_response(self.ds_weights, &corner.terr, up[0], up[1]);
                        v[0] += corner.weight * ou;
                        v[1] += corner.weight * ov;
                        ups.push(up);
                    }
                    let ru = v[0] - sobs[[l, si, 0]] as f64;
                    let rv = v[1] - sobs[[l, si, 1]] as f64;
                    st_se += ru * ru + rv * rv;
                    if let Some(g) = grad.as_deref_mut() {
                        let scale = 2.0 * self.alpha * inv_sn / m;
                        for (corner, up) in plan.corners.iter().zip(&ups) {
                            let j = cell_jacobian(self.ds_weights, &corner.terr, up[0], up[1]);
                            // Pull the residual back through the response.
                            let du = corner.weight * (ru * j[0][0] + rv * j[1][0]);
                            let dv = corner.weight * (ru * j[0][1] + rv * j[1][1]);
                            for &(cy, cx, wu) in &corner.coarse {
                                let off = ((l * self.ny + cy) * self.nx + cx) * fdim;
                                let prow = &psi_flat[off..off + fdim];
                                let (w0, w1) = (scale * wu * du, scale * wu * dv);
                                let (tb0, tb1) = (l * 2 * fdim, (l * 2 + 1) * fdim);
                                for f in 0..fdim {
                                    g[tb0 + f] += w0 * prow[f];
                                    g[tb1 + f] += w1 * prow[f];
                                }
                            }
                        }
                    }
                }
            }

            grid_acc += grid_se * inv_gn;
            st_acc += st_se * inv_sn;
        }
        let (grid_mean, st_mean) = (grid_acc / m, st_acc / m);
        (grid_mean + self.alpha * st_mean, grid_mean, st_mean)
    }
}

/// Bilinear footprint of one station on the fine grid, with each corner's
/// global coarse interpolation stencil.
fn station_plan(
    lon: f64,
    lat: f64,
    terrain: &TerrainFeatures,
    ratio: usize,
) -> Result<StationPlan> {
    let spec = &terrain.spec;
    if !spec.contains(lon, lat) {
        return Err(Error::OutOfDomain {
            context: "fit_corrector: station outside the fine grid".into(),
            lon,
            lat,
        });
    }
    let (fx, fy) = spec.frac_index(lon, lat);
    let (ix, wx) = stencil(fx, spec.nx);
    let (iy, wy) = stencil(fy, spec.ny);
    let fine_corners = [
        (iy, ix, (1.0 - wy) * (1.0 - wx)),
        (iy, ix + 1, (1.0 - wy) * wx),
        (iy + 1, ix, wy * (1.0 - wx)),
        (iy + 1, ix + 1, wy * wx),
    ];
    let n_cy = (spec.ny - 1) / ratio + 1;
    let n_cx = (spec.nx - 1) / ratio + 1;
    let coarse_stencil = |i: usize, n_c: usize| -> (usize, f64) {
        if i / ratio >= n_c - 1 {
            (n_c - 2, 1.0)
        } else {
            (i / ratio, (i % ratio) as f64 / ratio as f64)
        }
    };
    let corners = fine_corners
        .iter()
        .filter(|&&(_, _, w)| w != 0.0)
        .map(|&(y, x, weight)| {
            let mut terr = [0.0; N_FEATURES];
            for (k, t) in terr.iter_mut().enumerate() {
                *t = terrain.data[[y, x, k]];
            }
            let (cy, wyc) = coarse_stencil(y, n_cy);
            let (cx, wxc) = coarse_stencil(x, n_cx);
            CornerPlan {
                weight,
                terr,
                coarse: [
                    (cy, cx, (1.0 - wyc) * (1.0 - wxc)),
                    (cy, cx + 1, (1.0 - wyc) * wxc),
                    (cy + 1, cx, wyc * (1.0 - wxc)),
                    (cy + 1, cx + 1, wyc * wxc),
                ],
            }
        })
        .collect();
    Ok(StationPlan { corners })
}

fn pack(weights: &[LeadWeights]) -> Vec<f64> {
    let mut theta = Vec::with_capacity(weights.len() * DIMS_PER_LEAD);
    for lw in weights {
        theta.extend_from_slice(&lw.u);
        theta.extend_from_slice(&lw.v);
    }
    theta
}

fn unpack(theta: &[f64]) -> Vec<LeadWeights> {
    theta
        .chunks_exact(DIMS_PER_LEAD)
        .map(|chunk| LeadWeights {
            u: chunk[..N_CORRECTOR_FEATURES].to_vec(),
            v: chunk[N_CORRECTOR_FEATURES..].to_vec(),
        })
        .collect()
}

/// Mean dual-objective loss over cycles and its gradient with respect to the
/// corrector weights, evaluated end to end through the frozen downscaler.
pub fn training_loss_and_gradient(
    cycles: &[ForecastCycle],
    labels: &[CycleLabels],
    frozen_ds: &DownscalerModel,
    terrain: &TerrainFeatures,
    alpha: f64,
    weights: &[LeadWeights],
) -> Result<(LossReport, Vec<LeadWeights>)> {
    let ws = Workspace::build(cycles, labels, frozen_ds, terrain, alpha)?;
    if weights.len() != ws.tau {
        return Err(Error::ShapeMismatch(format!(
            "{} lead-weight vectors for {} lead hours",
            weights.len(),
            ws.tau
        )));
    }
    let theta = pack(weights);
    let mut grad = vec![0.0; ws.dim()];
    let (_, l_grid, l_station) = ws.eval(&theta, Some(&mut grad));
    Ok((loss_total(l_grid, l_station, alpha)?, unpack(&grad)))
}

/// Fit per-lead weights by full-batch gradient descent with backtracking.
///
/// Starts from zero weights, halves the step on any loss increase, and stops
/// at relative improvement below `rel_tol` or after `max_iters` accepted
/// steps. The downscaler must be frozen; it is never mutated.
pub fn fit_corrector(
    cycles: &[ForecastCycle],
    labels: &[CycleLabels],
    frozen_ds: &DownscalerModel,
    terrain: &TerrainFeatures,
    config: &CorrectorFitConfig,
) -> Result<CorrectorModel> {
    if !frozen_ds.is_frozen() {
        return Err(Error::Frozen(
            "corrector training requires a frozen downscaler".into(),
        ));
    }
    if !(config.step_size > 0.0) || config.alpha < 0.0 {
        return Err(Error::InvalidInput(
            "fit_corrector: step_size must be positive and alpha non-negative".into(),
        ));
    }
    let ws = Workspace::build(cycles, labels, frozen_ds, terrain, config.alpha)?;
    let mut theta = vec![0.0f64; ws.dim()];
    let (mut loss, _, _) = ws.eval(&theta, None);
    let mut trajectory = vec![loss];
    let mut grad = vec![0.0f64; ws.dim()];
    let mut step = config.step_size;
    for _ in 0..config.max_iters {
        ws.eval(&theta, Some(&mut grad));
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut done = false;
        let mut accepted = false;
        while step > 1e-30 {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (cand_loss, _, _) = ws.eval(&cand, None);
            if cand_loss <= loss {
                let rel = if loss > 0.0 {
                    (loss - cand_loss) / loss
                } else {
                    0.0
                };
                theta = cand;
                loss = cand_loss;
                trajectory.push(loss);
                accepted = true;
                if rel < config.rel_tol {
                    done = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || done {
            break;
        }
    }

    let mut model = CorrectorModel::with_weights(ws.tau, unpack(&theta), true);
    model.alpha = config.alpha;
    model.downscaler_digest = frozen_ds.digest();
    model.loss_trajectory = trajectory;
    Ok(model)
}

/// Carve training cycles out of a synthetic event: one cycle per issue hour,
/// stepping by `issue_stride`, with coarse truth as gridded observations and
/// the event's station series as point observations.
pub fn cycles_from_event(
    event: &SyntheticEvent,
    h: usize,
    tau: usize,
    issue_stride: usize,
) -> Result<Vec<(ForecastCycle, CycleLabels)>> {
    if h < 1 || tau < 1 {
        return Err(Error::InvalidInput(
            "cycles_from_event: history and lead windows must be non-empty".into(),
        ));
    }
    let nt = event.forecast_coarse.n_times();
    if nt < h + tau {
        return Err(Error::IncompleteCycle(format!(
            "event covers {nt} hours; a cycle needs {h} history + {tau} lead hours"
        )));
    }
    let stride = issue_stride.max(1);
    let mut out = Vec::new();
    let mut i = h - 1;
    while i + tau < nt {
        let forecast = event.forecast_coarse.time_slice(i + 1 - h, h + tau)?;
        let obs = event.truth_coarse.time_slice(i + 1 - h, h)?;
        let cycle = ForecastCycle::new(
            &event.event_id,
            event.forecast_coarse.times[i],
            forecast,
            obs,
        )?;
        let labels = CycleLabels {
            grid_obs: event.truth_coarse.time_slice(i + 1, tau)?,
            station_obs: event.stations.time_slice(i + 1, tau)?,
        };
        out.push((cycle, labels));
        i += stride;
    }
    Ok(out)
}
