//! Terrain-aware spatial refinement of coarse wind fields.
//!
//! A fine-grid prediction is bilinear upsampling of the coarse patch plus a
//! terrain-driven residual. The residual acts on speed only: per cell,
//! predicted flow = upsampled flow × (1 + θ · φ), where φ stacks the terrain
//! features and their interactions with upsampled speed, so the direction of
//! the upsampled flow is preserved. φ has no constant term, which makes two
//! identities exact: featureless terrain reproduces plain bilinear upsampling,
//! and a zero-weight model is the identity on upsampled fields.
//!
//! Training is closed-form least squares on the residual (which is linear in
//! θ), accumulated in a fixed order so the fit is bit-stable regardless of
//! worker count. A fitted model can be frozen; frozen models reject weight
//! mutation, which downstream training relies on.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{s, Array3, Array4, ArrayView3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::patch::{axis_positions, span_cells};
use crate::grid::{
    blend_patches, upsample_patch, PatchPair, PatchPrediction, TerrainFeatures, WindField,
    FEATURE_NAMES, N_FEATURES,
};

/// Patch edge length used throughout the pipeline, in degrees.
pub const PATCH_DEG: f64 = 0.5;
/// Patch stride used throughout the pipeline, in degrees.
pub const STRIDE_DEG: f64 = 0.25;

/// Model feature count: each terrain feature appears plain and crossed with
/// upsampled speed.
pub const N_MODEL_FEATURES: usize = 2 * N_FEATURES;

/// Speed scale (m/s) for the interaction features, keeping the design matrix
/// columns comparable in magnitude.
const INTERACTION_SPEED_SCALE: f64 = 10.0;
/// Smoothing floor inside the speed square root so the response stays
/// differentiable at zero wind.
pub(crate) const SPEED_EPS2: f64 = 1e-12;

const MODEL_VERSION: u32 = 1;

/// Names of the model features, in weight order.
pub fn model_feature_names() -> Vec<String> {
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(FEATURE_NAMES.iter().map(|s| format!("{s}_x_speed")));
    names
}

/// Options for [`fit_downscaler`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownscalerFitConfig {
    /// Ridge strength applied only if the plain normal equations are not
    /// positive definite.
    pub ridge_lambda: f64,
    /// Optional feature mask (length [`N_MODEL_FEATURES`]); masked-out weights
    /// stay at zero.
    pub active: Option<Vec<bool>>,
}

impl Default for DownscalerFitConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-8,
            active: None,
        }
    }
}

/// How a model was fitted, carried inside the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DownscalerMetadata {
    pub n_pairs: usize,
    /// Scalar residual equations seen by the fit (pairs × cells × channels).
    pub n_samples: usize,
    /// Mean squared residual of plain bilinear upsampling (the θ = 0 loss).
    pub initial_loss: f64,
    /// Mean squared residual of the fitted model on its training pairs.
    pub final_loss: f64,
    /// True if the normal equations needed the ridge fallback.
    pub ridge_fallback: bool,
    /// Digest of the fit configuration.
    pub config_digest: String,
}

/// Residual downscaling model: weights over [`model_feature_names`], plus
/// training provenance and a freeze flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownscalerModel {
    version: u32,
    n_features: usize,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    trained: bool,
    frozen: bool,
    metadata: DownscalerMetadata,
}

impl DownscalerModel {
    fn with_weights(weights: Vec<f64>, trained: bool) -> Self {
        Self {
            version: MODEL_VERSION,
            n_features: N_MODEL_FEATURES,
            feature_names: model_feature_names(),
            weights,
            trained,
            frozen: false,
            metadata: DownscalerMetadata::default(),
        }
    }

    /// Placeholder with no fitted weights; [`predict`] refuses it.
    pub fn untrained() -> Self {
        Self::with_weights(vec![0.0; N_MODEL_FEATURES], false)
    }

    /// Zero-weight model: a valid, trained model whose prediction is plain
    /// bilinear upsampling.
    pub fn identity() -> Self {
        Self::with_weights(vec![0.0; N_MODEL_FEATURES], true)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn metadata(&self) -> &DownscalerMetadata {
        &self.metadata
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Replace the weights (marks the model trained). Rejected once frozen.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(
                "downscaler weights may not change after freeze".into(),
            ));
        }
        if weights.len() != self.n_features {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weights, got {}",
                self.n_features,
                weights.len()
            )));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidInput("non-finite downscaler weight".into()));
        }
        self.weights = weights;
        self.trained = true;
        Ok(())
    }

    /// Mark the model immutable. Idempotent; requires a trained model.
    pub fn freeze(&mut self) -> Result<()> {
        if !self.trained {
            return Err(Error::NotTrained("cannot freeze an unfitted downscaler"));
        }
        self.frozen = true;
        Ok(())
    }

    /// Stable hex digest of the full serialized model.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        format!("{:016x}", crate::util::fnv1a64(json.as_bytes()))
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
                "downscaler model version {} unsupported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        if model.n_features != N_MODEL_FEATURES
            || model.weights.len() != model.n_features
            || model.feature_names.len() != model.n_features
        {
            return Err(Error::Format(
                "downscaler model feature layout mismatch".into(),
            ));
        }
        if !model.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Format("non-finite downscaler weight".into()));
        }
        Ok(model)
    }
}

/// Bilinearly upsample a square coarse patch to `n_fine` nodes per axis,
/// exact at the coarse anchor nodes.
pub fn upsample_input(coarse_patch: ArrayView3<'_, f32>, n_fine: usize) -> Result<Array3<f64>> {
    upsample_patch(coarse_patch, n_fine)
}

/// Sums of the plain and interaction weight–feature products.
#[inline]
fn gain_terms(weights: &[f64], terr: &[f64; N_FEATURES]) -> (f64, f64) {
    let mut plain = 0.0;
    let mut inter = 0.0;
    for k in 0..N_FEATURES {
        plain += weights[k] * terr[k];
        inter += weights[N_FEATURES + k] * terr[k];
    }
    (plain, inter)
}

/// Per-cell speed gain 1 + θ · φ at upsampled flow (u, v).
#[inline]
pub(crate) fn cell_gain(weights: &[f64], terr: &[f64; N_FEATURES], u: f64, v: f64) -> f64 {
    let (plain, inter) = gain_terms(weights, terr);
    let s = (u * u + v * v + SPEED_EPS2).sqrt();
    1.0 + plain + inter * (s / INTERACTION_SPEED_SCALE)
}

/// Downscaled flow at one cell given the upsampled flow there.
#[inline]
pub(crate) fn cell_response(
    weights: &[f64],
    terr: &[f64; N_FEATURES],
    u: f64,
    v: f64,
) -> (f64, f64) {
    let g = cell_gain(weights, terr, u, v);
    (u * g, v * g)
}

/// Jacobian of [`cell_response`] with respect to the upsampled flow,
/// `[[d out_u/du, d out_u/dv], [d out_v/du, d out_v/dv]]`.
#[inline]
pub(crate) fn cell_jacobian(
    weights: &[f64],
    terr: &[f64; N_FEATURES],
    u: f64,
    v: f64,
) -> [[f64; 2]; 2] {
    let (plain, inter) = gain_terms(weights, terr);
    let s = (u * u + v * v + SPEED_EPS2).sqrt();
    let g = 1.0 + plain + inter * (s / INTERACTION_SPEED_SCALE);
    // d g / d(u, v) = inter / scale · (u, v) / s.
    let k = inter / (INTERACTION_SPEED_SCALE * s);
    [[g + u * u * k, u * v * k], [v * u * k, g + v * v * k]]
}

#[inline]
fn terrain_at(patch: &ArrayView3<'_, f64>, y: usize, x: usize) -> [f64; N_FEATURES] {
    let mut terr = [0.0; N_FEATURES];
    for (k, t) in terr.iter_mut().enumerate() {
        *t = patch[[y, x, k]];
    }
    terr
}

/// Downscale one patch: upsample the coarse flow and apply the terrain
/// residual cell by cell.
pub fn predict(
    model: &DownscalerModel,
    coarse_patch: ArrayView3<'_, f32>,
    terrain_patch: ArrayView3<'_, f64>,
) -> Result<Array3<f32>> {
    if !model.trained {
        return Err(Error::NotTrained("downscaler has no fitted weights"));
    }
    let sh = terrain_patch.shape();
    let (n_fine, n_feat) = (sh[0], sh[2]);
    if sh[1] != n_fine || n_feat != N_FEATURES {
        return Err(Error::ShapeMismatch(format!(
            "terrain patch must be square with {N_FEATURES} features, got {sh:?}"
        )));
    }
    let up = upsample_patch(coarse_patch, n_fine)?;
    let mut out = Array3::<f32>::zeros((n_fine, n_fine, 2));
    for y in 0..n_fine {
        for x in 0..n_fine {
            let terr = terrain_at(&terrain_patch, y, x);
            let (ou, ov) = cell_response(&model.weights, &terr, up[[y, x, 0]], up[[y, x, 1]]);
            out[[y, x, 0]] = ou as f32;
            out[[y, x, 1]] = ov as f32;
        }
    }
    Ok(out)
}

/// φ at one cell: terrain features, then terrain × (speed / 10 m/s).
#[inline]
fn features_at(terr: &[f64; N_FEATURES], u: f64, v: f64) -> [f64; N_MODEL_FEATURES] {
    let s_scaled = (u * u + v * v + SPEED_EPS2).sqrt() / INTERACTION_SPEED_SCALE;
    let mut phi = [0.0; N_MODEL_FEATURES];
    for k in 0..N_FEATURES {
        phi[k] = terr[k];
        phi[N_FEATURES + k] = terr[k] * s_scaled;
    }
    phi
}

/// Fit weights by least squares over all pairs, cells, and channels.
///
/// The target at each cell and channel is the fine label minus the upsampled
/// coarse value; the predictor row is the upsampled value times φ. Normal
/// equations accumulate in (pair, cell, channel) order in f64. Rank-deficient
/// systems fall back to ridge regularization, recorded in the metadata.
pub fn fit_downscaler(
    pairs: &[PatchPair],
    config: &DownscalerFitConfig,
) -> Result<DownscalerModel> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "fit_downscaler needs at least one patch pair".into(),
        ));
    }
    let active = match &config.active {
        Some(mask) => {
            if mask.len() != N_MODEL_FEATURES {
                return Err(Error::ShapeMismatch(format!(
                    "active mask length {} != {N_MODEL_FEATURES}",
                    mask.len()
                )));
            }
            mask.clone()
        }
        None => vec![true; N_MODEL_FEATURES],
    };
    let idx: Vec<usize> = (0..N_MODEL_FEATURES).filter(|&j| active[j]).collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput(
            "fit_downscaler needs at least one active feature".into(),
        ));
    }

    let fine_shape = pairs[0].fine_label.shape().to_vec();
    let n_fine = fine_shape[0];
    let n_cells = (n_fine * n_fine) as f64;
    let mut a = DMatrix::<f64>::zeros(N_MODEL_FEATURES, N_MODEL_FEATURES);
    let mut b = DVector::<f64>::zeros(N_MODEL_FEATURES);
    let mut initial_se = 0.0f64;
    let mut upsampled = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.fine_label.shape() != fine_shape.as_slice()
            || pair.terrain.shape()[..2] != fine_shape[..2]
        {
            return Err(Error::ShapeMismatch(
                "patch pairs disagree on fine shape".into(),
            ));
        }
        if pair.terrain.shape()[2] != N_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "terrain patch must carry {N_FEATURES} features"
            )));
        }
        let up = upsample_patch(pair.coarse.view(), n_fine)?;
        let tview = pair.terrain.view();
        for y in 0..n_fine {
            for x in 0..n_fine {
                let terr = terrain_at(&tview, y, x);
                let (u, v) = (up[[y, x, 0]], up[[y, x, 1]]);
                let phi = features_at(&terr, u, v);
                let ru = pair.fine_label[[y, x, 0]] as f64 - u;
                let rv = pair.fine_label[[y, x, 1]] as f64 - v;
                initial_se += ru * ru + rv * rv;
                // Both channels share φ: the row for channel c is c_up · φ,
                // so x xᵀ sums to (u² + v²) φ φᵀ and x·r to (u ru + v rv) φ.
                let aw = u * u + v * v;
                let bw = u * ru + v * rv;
                for (ii, &ji) in idx.iter().enumerate() {
                    b[ji] += bw * phi[ji];
                    for &jj in &idx[ii..] {
                        a[(ji, jj)] += aw * phi[ji] * phi[jj];
                    }
                }
            }
        }
        upsampled.push(up);
    }
    for ii in 0..N_MODEL_FEATURES {
        for jj in ii + 1..N_MODEL_FEATURES {
            a[(jj, ii)] = a[(ii, jj)];
        }
    }

    let a_act = a.select_rows(&idx).select_columns(&idx);
    let b_act = DVector::from_iterator(idx.len(), idx.iter().map(|&j| b[j]));
    let mut ridge_fallback = false;
    let chol = Cholesky::new(a_act.clone()).or_else(|| {
        ridge_fallback = true;
        let mut ridged = a_act;
        for d in 0..idx.len() {
            ridged[(d, d)] += config.ridge_lambda;
        }
        Cholesky::new(ridged)
    });
    let solution = chol
        .ok_or_else(|| Error::InvalidInput("normal equations unsolvable even with ridge".into()))?
        .solve(&b_act);

    let mut weights = vec![0.0; N_MODEL_FEATURES];
    for (ii, &j) in idx.iter().enumerate() {
        weights[j] = solution[ii];
    }
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::InvalidInput(
            "downscaler fit produced non-finite weights".into(),
        ));
    }

    let mut final_se = 0.0f64;
    for (pair, up) in pairs.iter().zip(&upsampled) {
        let tview = pair.terrain.view();
        for y in 0..n_fine {
            for x in 0..n_fine {
                let terr = terrain_at(&tview, y, x);
                let (ou, ov) = cell_response(&weights, &terr, up[[y, x, 0]], up[[y, x, 1]]);
                let ru = pair.fine_label[[y, x, 0]] as f64 - ou;
                let rv = pair.fine_label[[y, x, 1]] as f64 - ov;
                final_se += ru * ru + rv * rv;
            }
        }
    }

    let denom = pairs.len() as f64 * n_cells;
    let mut model = DownscalerModel::with_weights(weights, true);
    model.metadata = DownscalerMetadata {
        n_pairs: pairs.len(),
        n_samples: pairs.len() * n_fine * n_fine * 2,
        initial_loss: initial_se / denom,
        final_loss: final_se / denom,
        ridge_fallback,
        config_digest: {
            let json = serde_json::to_string(config).expect("config serializes");
            format!("{:016x}", crate::util::fnv1a64(json.as_bytes()))
        },
    };
    Ok(model)
}

/// Downscale a whole coarse field onto the terrain grid: extract overlapping
/// patches, predict each, and blend, independently per timestep.
///
/// The coarse field and the terrain must share a bounding box, and the patch
/// tiling must cover every fine node.
pub fn downscale_field(
    model: &DownscalerModel,
    coarse: &WindField,
    terrain: &TerrainFeatures,
    patch_deg: f64,
    stride_deg: f64,
) -> Result<WindField> {
    if !model.trained {
        return Err(Error::NotTrained("downscaler has no fitted weights"));
    }
    if !coarse.spec.same_bbox(&terrain.spec) {
        return Err(Error::Alignment(
            "downscale_field: coarse field and terrain bboxes differ".into(),
        ));
    }
    let ratio = coarse.spec.cell_ratio_to(&terrain.spec)?;
    let span_c = span_cells(patch_deg, coarse.spec.cell_size, "patch extent")?;
    let stride_c = span_cells(stride_deg, coarse.spec.cell_size, "patch stride")?;
    let span_f = span_c * ratio;
    let xs = axis_positions(coarse.spec.nx, span_c, stride_c);
    let ys = axis_positions(coarse.spec.ny, span_c, stride_c);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput(format!(
            "domain {}x{} coarse nodes is smaller than one {patch_deg}-deg patch",
            coarse.spec.nx, coarse.spec.ny
        )));
    }

    let per_time: Vec<Array3<f32>> = (0..coarse.n_times())
        .into_par_iter()
        .map(|t| -> Result<Array3<f32>> {
            let mut preds = Vec::with_capacity(ys.len() * xs.len());
            for &cy in &ys {
                for &cx in &xs {
                    let (fy, fx) = (cy * ratio, cx * ratio);
                    let coarse_patch =
                        coarse
                            .data
                            .slice(s![t, cy..=cy + span_c, cx..=cx + span_c, ..]);
                    let terrain_patch =
                        terrain
                            .data
                            .slice(s![fy..=fy + span_f, fx..=fx + span_f, ..]);
                    preds.push(PatchPrediction {
                        origin: (coarse.spec.lon_at(cx), coarse.spec.lat_at(cy)),
                        data: predict(model, coarse_patch, terrain_patch)?,
                    });
                }
            }
            let (blended, _) = blend_patches(&preds, &terrain.spec)?;
            Ok(blended)
        })
        .collect::<Result<_>>()?;

    let mut data = Array4::<f32>::zeros((coarse.n_times(), terrain.spec.ny, terrain.spec.nx, 2));
    for (t, field) in per_time.into_iter().enumerate() {
        data.slice_mut(s![t, .., .., ..]).assign(&field);
    }
    WindField::new(terrain.spec.clone(), coarse.times.clone(), data)
}
