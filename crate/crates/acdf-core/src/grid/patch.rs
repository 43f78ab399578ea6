//! Overlapping-patch extraction and recomposition for patchwise refinement.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use ndarray::{s, Array2, Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, TerrainFeatures, WindField};

/// One training sample: a coarse patch, the fine-grid label on the same
/// footprint, and the terrain features under it.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub event_id: String,
    pub time: DateTime<Utc>,
    /// (lon, lat) of the patch's lower-left node.
    pub origin: (f64, f64),
    /// Coarse wind, `[py][px][2]`.
    pub coarse: Array3<f32>,
    /// Fine wind label, `[fy][fx][2]`.
    pub fine_label: Array3<f32>,
    /// Terrain features on the fine footprint, `[fy][fx][F]`. Static per
    /// position, so shared across the timesteps that reuse it.
    pub terrain: Arc<Array3<f64>>,
}

/// A fine-grid patch output to be placed back into a full field.
#[derive(Debug, Clone)]
pub struct PatchPrediction {
    /// (lon, lat) of the patch's lower-left node.
    pub origin: (f64, f64),
    /// `[fy][fx][2]`.
    pub data: Array3<f32>,
}

/// Patch-position node indices along one axis: starts at node 0, advances by
/// `stride` nodes, keeps only windows that fit entirely in `n` nodes.
pub(crate) fn axis_positions(n: usize, span: usize, stride: usize) -> Vec<usize> {
    (0..)
        .map(|p| p * stride)
        .take_while(|&i0| i0 + span < n)
        .collect()
}

/// Whole-cell span of `deg` on a grid, or an alignment error.
pub(crate) fn span_cells(deg: f64, cell_size: f64, what: &str) -> Result<usize> {
    let ratio = deg / cell_size;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-6 {
        return Err(Error::Alignment(format!(
            "{what} of {deg} deg is not a whole number of {cell_size}-deg cells"
        )));
    }
    Ok(r as usize)
}

/// Extract overlapping (coarse, fine, terrain) patch triples.
///
/// Positions tile left-to-right then bottom-to-top per timestep; windows that
/// would poke past the domain edge are dropped. Coarse and fine must share
/// bbox and time axis, terrain must live on the fine grid.
pub fn extract_patches(
    coarse: &WindField,
    fine: &WindField,
    terrain: &TerrainFeatures,
    patch_deg: f64,
    stride_deg: f64,
    event_id: &str,
) -> Result<Vec<PatchPair>> {
    if !coarse.spec.same_bbox(&fine.spec) {
        return Err(Error::Alignment(
            "extract_patches: coarse and fine bboxes differ".into(),
        ));
    }
    if coarse.times != fine.times {
        return Err(Error::Alignment(
            "extract_patches: coarse and fine time axes differ".into(),
        ));
    }
    if terrain.spec != fine.spec {
        return Err(Error::Alignment(
            "extract_patches: terrain features not on the fine grid".into(),
        ));
    }
    let span_c = span_cells(patch_deg, coarse.spec.cell_size, "patch extent")?;
    let span_f = span_cells(patch_deg, fine.spec.cell_size, "patch extent")?;
    let stride_c = span_cells(stride_deg, coarse.spec.cell_size, "patch stride")?;
    let stride_f = span_cells(stride_deg, fine.spec.cell_size, "patch stride")?;
    let xs = axis_positions(coarse.spec.nx, span_c, stride_c);
    let ys = axis_positions(coarse.spec.ny, span_c, stride_c);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput(format!(
            "domain {}x{} coarse nodes is smaller than one {patch_deg}-deg patch",
            coarse.spec.nx, coarse.spec.ny
        )));
    }
    // Terrain is static: one shared slice per position, reused across times.
    let terrain_at: Vec<Arc<Array3<f64>>> = ys
        .iter()
        .flat_map(|&cy| xs.iter().map(move |&cx| (cy, cx)))
        .map(|(cy, cx)| {
            let (fy, fx) = (cy * stride_f / stride_c, cx * stride_f / stride_c);
            Arc::new(
                terrain
                    .data
                    .slice(s![fy..=fy + span_f, fx..=fx + span_f, ..])
                    .to_owned(),
            )
        })
        .collect();
    let mut pairs = Vec::with_capacity(coarse.n_times() * ys.len() * xs.len());
    for t in 0..coarse.n_times() {
        for (iy, &cy) in ys.iter().enumerate() {
            for (ix, &cx) in xs.iter().enumerate() {
                let (fy, fx) = (cy * stride_f / stride_c, cx * stride_f / stride_c);
                pairs.push(PatchPair {
                    event_id: event_id.to_string(),
                    time: coarse.times[t],
                    origin: (coarse.spec.lon_at(cx), coarse.spec.lat_at(cy)),
                    coarse: coarse
                        .data
                        .slice(s![t, cy..=cy + span_c, cx..=cx + span_c, ..])
                        .to_owned(),
                    fine_label: fine
                        .data
                        .slice(s![t, fy..=fy + span_f, fx..=fx + span_f, ..])
                        .to_owned(),
                    terrain: Arc::clone(&terrain_at[iy * xs.len() + ix]),
                });
            }
        }
    }
    Ok(pairs)
}

/// Recompose patch outputs onto a target grid for one timestep.
///
/// Overlapping predictions are averaged per node with f64 accumulation.
/// Where every overlapping patch agrees bitwise — the norm, since patch
/// predictions are deterministic functions of the shared coarse nodes — the
/// common value is returned exactly, with no summation round-off at all.
/// Returns the blended field and the per-node coverage count; any uncovered
/// node is an error.
pub fn blend_patches(
    preds: &[PatchPrediction],
    target: &GridSpec,
) -> Result<(Array3<f32>, Array2<u32>)> {
    let mut acc = Array3::<f64>::zeros((target.ny, target.nx, 2));
    let mut count = Array2::<u32>::zeros((target.ny, target.nx));
    let mut first = Array3::<f32>::zeros((target.ny, target.nx, 2));
    let mut mixed = Array2::<bool>::from_elem((target.ny, target.nx), false);
    for p in preds {
        let (x0, y0) = target.node_index(p.origin.0, p.origin.1, "blend_patches origin")?;
        let sh = p.data.shape();
        let (py, px) = (sh[0], sh[1]);
        if y0 + py > target.ny || x0 + px > target.nx {
            return Err(Error::OutOfDomain {
                context: "blend_patches: patch extends past target".into(),
                lon: p.origin.0,
                lat: p.origin.1,
            });
        }
        for y in 0..py {
            for x in 0..px {
                let (gy, gx) = (y0 + y, x0 + x);
                let (u, v) = (p.data[[y, x, 0]], p.data[[y, x, 1]]);
                if count[[gy, gx]] == 0 {
                    first[[gy, gx, 0]] = u;
                    first[[gy, gx, 1]] = v;
                } else if first[[gy, gx, 0]].to_bits() != u.to_bits()
                    || first[[gy, gx, 1]].to_bits() != v.to_bits()
                {
                    mixed[[gy, gx]] = true;
                }
                acc[[gy, gx, 0]] += u as f64;
                acc[[gy, gx, 1]] += v as f64;
                count[[gy, gx]] += 1;
            }
        }
    }
    let n_uncovered = count.iter().filter(|&&c| c == 0).count();
    if n_uncovered > 0 {
        let (first_y, first_x) = count
            .indexed_iter()
            .find(|(_, &c)| c == 0)
            .map(|((y, x), _)| (y, x))
            .expect("counted above");
        return Err(Error::Coverage {
            n_uncovered,
            first_x,
            first_y,
        });
    }
    let mut out = first;
    for y in 0..target.ny {
        for x in 0..target.nx {
            if mixed[[y, x]] {
                let c = count[[y, x]] as f64;
                out[[y, x, 0]] = (acc[[y, x, 0]] / c) as f32;
                out[[y, x, 1]] = (acc[[y, x, 1]] / c) as f32;
            }
        }
    }
    Ok((out, count))
}

/// Bilinearly upsample a square patch in index space to `n_fine` nodes per
/// axis; `n_fine - 1` must be a multiple of the coarse cell count.
pub fn upsample_patch(coarse: ArrayView3<'_, f32>, n_fine: usize) -> Result<Array3<f64>> {
    let sh = coarse.shape();
    let (n_c, n_ch) = (sh[0], sh[2]);
    if sh[1] != n_c || n_c < 2 {
        return Err(Error::ShapeMismatch(format!(
            "upsample_patch expects a square patch of >= 2 nodes, got {sh:?}"
        )));
    }
    if (n_fine - 1) % (n_c - 1) != 0 {
        return Err(Error::Alignment(format!(
            "{n_fine} fine nodes do not align with {n_c} coarse nodes"
        )));
    }
    let ratio = (n_fine - 1) / (n_c - 1);
    // Shared per-axis stencil: fine node o sits at coarse index o / ratio.
    let stencil: Vec<(usize, f64)> = (0..n_fine)
        .map(|o| {
            let (i, rem) = (o / ratio, o % ratio);
            if i == n_c - 1 {
                (n_c - 2, 1.0)
            } else {
                (i, rem as f64 / ratio as f64)
            }
        })
        .collect();
    let mut out = Array3::zeros((n_fine, n_fine, n_ch));
    for (oy, &(iy, wy)) in stencil.iter().enumerate() {
        for (ox, &(ix, wx)) in stencil.iter().enumerate() {
            for c in 0..n_ch {
                let v00 = coarse[[iy, ix, c]] as f64;
                let v01 = coarse[[iy, ix + 1, c]] as f64;
                let v10 = coarse[[iy + 1, ix, c]] as f64;
                let v11 = coarse[[iy + 1, ix + 1, c]] as f64;
                out[[oy, ox, c]] =
                    (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::field::hourly_times;
    use chrono::TimeZone;
    use ndarray::{Array3 as A3, Array4};

    fn times(n: usize) -> Vec<DateTime<Utc>> {
        hourly_times(Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap(), n)
    }

    /// Coarse 0.125-deg / fine 0.005-deg pair over `ext_x` x `ext_y` degrees,
    /// fine values a deterministic hash of position.
    fn pair_fields(ext_x: f64, ext_y: f64, nt: usize) -> (WindField, WindField, TerrainFeatures) {
        let nx_c = (ext_x / 0.125).round() as usize + 1;
        let ny_c = (ext_y / 0.125).round() as usize + 1;
        let nx_f = (ext_x / 0.005).round() as usize + 1;
        let ny_f = (ext_y / 0.005).round() as usize + 1;
        let spec_c = GridSpec::new(110.0, 20.0, 0.125, nx_c, ny_c).unwrap();
        let spec_f = GridSpec::new(110.0, 20.0, 0.005, nx_f, ny_f).unwrap();
        let mut fine = Array4::zeros((nt, ny_f, nx_f, 2));
        for t in 0..nt {
            for y in 0..ny_f {
                for x in 0..nx_f {
                    fine[[t, y, x, 0]] = ((x * 31 + y * 7 + t * 13) % 97) as f32 * 0.25;
                    fine[[t, y, x, 1]] = ((x * 17 + y * 29 + t * 5) % 89) as f32 * -0.125;
                }
            }
        }
        let coarse = WindField::zeros(spec_c, times(nt)).unwrap();
        let fine = WindField::new(spec_f.clone(), times(nt), fine).unwrap();
        let terrain = TerrainFeatures {
            spec: spec_f,
            data: A3::zeros((ny_f, nx_f, 5)),
        };
        (coarse, fine, terrain)
    }

    #[test]
    fn patch_count_formula() {
        let (coarse, fine, terrain) = pair_fields(4.75, 3.75, 1);
        let pairs = extract_patches(&coarse, &fine, &terrain, 0.5, 0.25, "ev").unwrap();
        assert_eq!(pairs.len(), 18 * 14);
        assert_eq!(pairs[0].coarse.shape(), [5, 5, 2]);
        assert_eq!(pairs[0].fine_label.shape(), [101, 101, 2]);
    }

    #[test]
    fn exact_patch_domain_and_timestep_scaling() {
        let (coarse, fine, terrain) = pair_fields(0.5, 0.5, 2);
        let pairs = extract_patches(&coarse, &fine, &terrain, 0.5, 0.25, "ev").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].origin, (110.0, 20.0));
        assert_eq!(pairs[0].fine_label, fine.data.slice(s![0, .., .., ..]));
    }

    #[test]
    fn blend_of_extracted_labels_reconstructs_fine_field() {
        // 1.0 x 0.5 deg: 3 overlapping x-positions, coverage counts 1/2/3.
        let (coarse, fine, terrain) = pair_fields(1.0, 0.5, 1);
        let pairs = extract_patches(&coarse, &fine, &terrain, 0.5, 0.25, "ev").unwrap();
        assert_eq!(pairs.len(), 3);
        let preds: Vec<PatchPrediction> = pairs
            .iter()
            .map(|p| PatchPrediction {
                origin: p.origin,
                data: p.fine_label.clone(),
            })
            .collect();
        let (blended, count) = blend_patches(&preds, &fine.spec).unwrap();
        assert_eq!(blended, fine.data.slice(s![0, .., .., ..]).to_owned());
        assert_eq!(count[[0, 0]], 1);
        assert_eq!(count[[0, 60]], 2);
        assert_eq!(count[[0, 100]], 3);
    }

    #[test]
    fn blend_averages_disagreeing_overlap() {
        let target = GridSpec::new(0.0, 0.0, 0.005, 151, 101).unwrap();
        let mk = |x0: usize, val: f32| PatchPrediction {
            origin: (target.lon_at(x0), target.lat_at(0)),
            data: A3::from_elem((101, 101, 2), val),
        };
        let (blended, _) = blend_patches(&[mk(0, 4.0), mk(50, 6.0)], &target).unwrap();
        assert_eq!(blended[[40, 10, 0]], 4.0);
        assert_eq!(blended[[40, 75, 0]], 5.0); // mean of 4 and 6
        assert_eq!(blended[[40, 120, 0]], 6.0);
    }

    #[test]
    fn uncovered_node_is_an_error() {
        let target = GridSpec::new(0.0, 0.0, 0.005, 151, 101).unwrap();
        let one = PatchPrediction {
            origin: (0.0, 0.0),
            data: A3::zeros((101, 101, 2)),
        };
        match blend_patches(&[one], &target) {
            Err(Error::Coverage {
                n_uncovered,
                first_x,
                ..
            }) => {
                assert_eq!(n_uncovered, 50 * 101);
                assert_eq!(first_x, 101);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn upsample_constant_and_ramp() {
        let mut patch = A3::zeros((5, 5, 2));
        for y in 0..5 {
            for x in 0..5 {
                patch[[y, x, 0]] = 7.0;
                patch[[y, x, 1]] = x as f32 * 2.0; // linear ramp
            }
        }
        let up = upsample_patch(patch.view(), 101).unwrap();
        assert_eq!(up.shape(), [101, 101, 2]);
        for y in (0..101).step_by(10) {
            for x in 0..101 {
                // Constant survives exactly at the f32 precision consumers use.
                assert_eq!(up[[y, x, 0]] as f32, 7.0);
                let want = x as f64 * 2.0 / 25.0;
                assert!((up[[y, x, 1]] - want).abs() < 1e-12);
            }
        }
    }
}
