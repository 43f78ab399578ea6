//! Resampling between grids and point sampling within a grid.

use ndarray::Array4;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, WindField};

/// Lower node index and interpolation weight for a fractional index.
///
/// The index is clamped so the 2-node stencil stays in `[0, n - 1]`; exact
/// node hits yield weights of exactly 0.0 or 1.0, keeping node samples
/// bit-exact.
#[inline]
pub(crate) fn stencil(frac: f64, n: usize) -> (usize, f64) {
    let mut i0 = frac.floor() as isize;
    if i0 < 0 {
        i0 = 0;
    }
    if i0 > n as isize - 2 {
        i0 = n as isize - 2;
    }
    (i0 as usize, frac - i0 as f64)
}

/// Bilinear (u, v) sample at a point, at timestep `t`.
///
/// Interpolation runs in f64; a sample exactly on a node returns the stored
/// value bit-for-bit.
pub fn sample_at(field: &WindField, t: usize, lon: f64, lat: f64) -> Result<(f64, f64)> {
    let spec = &field.spec;
    if t >= field.n_times() {
        return Err(Error::ShapeMismatch(format!(
            "timestep {t} beyond {} steps",
            field.n_times()
        )));
    }
    if !spec.contains(lon, lat) {
        return Err(Error::OutOfDomain {
            context: "sample_at".into(),
            lon,
            lat,
        });
    }
    let (fx, fy) = spec.frac_index(lon, lat);
    let (ix, wx) = stencil(fx, spec.nx);
    let (iy, wy) = stencil(fy, spec.ny);
    let mut out = [0.0f64; 2];
    for (c, o) in out.iter_mut().enumerate() {
        let v00 = field.data[[t, iy, ix, c]] as f64;
        let v01 = field.data[[t, iy, ix + 1, c]] as f64;
        let v10 = field.data[[t, iy + 1, ix, c]] as f64;
        let v11 = field.data[[t, iy + 1, ix + 1, c]] as f64;
        *o = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
    }
    Ok((out[0], out[1]))
}

/// Bilinearly resample a field onto another grid covering a sub-bbox of it.
///
/// Target nodes that coincide with source nodes copy the stored value
/// bit-for-bit.
pub fn bilinear_resample(src: &WindField, dst: &GridSpec) -> Result<WindField> {
    dst.validate()?;
    if !src.spec.contains_bbox(dst) {
        return Err(Error::OutOfDomain {
            context: "bilinear_resample: target bbox outside source".into(),
            lon: dst.lon_min,
            lat: dst.lat_min,
        });
    }
    // Per-axis stencils are shared by every row/column and timestep. When the
    // target refines the source by an integral node factor over the same bbox,
    // the weights are the exact rationals rem/ratio, so domain-wide resampling
    // agrees bit-for-bit with patchwise upsampling of the same source nodes.
    let exact_ratio = |n_dst: usize, n_src: usize| -> Option<usize> {
        if src.spec.same_bbox(dst) && n_dst >= n_src && (n_dst - 1) % (n_src - 1) == 0 {
            Some((n_dst - 1) / (n_src - 1))
        } else {
            None
        }
    };
    let axis_stencils = |n_dst: usize, n_src: usize, frac_at: &dyn Fn(usize) -> f64| {
        if let Some(r) = exact_ratio(n_dst, n_src) {
            (0..n_dst)
                .map(|i| {
                    if i / r >= n_src - 1 {
                        (n_src - 2, 1.0)
                    } else {
                        (i / r, (i % r) as f64 / r as f64)
                    }
                })
                .collect::<Vec<(usize, f64)>>()
        } else {
            (0..n_dst).map(|i| stencil(frac_at(i), n_src)).collect()
        }
    };
    let xw = axis_stencils(dst.nx, src.spec.nx, &|ix| {
        src.spec.frac_index(dst.lon_at(ix), dst.lat_min).0
    });
    let yw = axis_stencils(dst.ny, src.spec.ny, &|iy| {
        src.spec.frac_index(dst.lon_min, dst.lat_at(iy)).1
    });
    let nt = src.n_times();
    let mut data = Array4::zeros((nt, dst.ny, dst.nx, 2));
    for t in 0..nt {
        for (oy, &(iy, wy)) in yw.iter().enumerate() {
            for (ox, &(ix, wx)) in xw.iter().enumerate() {
                for c in 0..2 {
                    let v00 = src.data[[t, iy, ix, c]] as f64;
                    let v01 = src.data[[t, iy, ix + 1, c]] as f64;
                    let v10 = src.data[[t, iy + 1, ix, c]] as f64;
                    let v11 = src.data[[t, iy + 1, ix + 1, c]] as f64;
                    let v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                    data[[t, oy, ox, c]] = v as f32;
                }
            }
        }
    }
    WindField::new(dst.clone(), src.times.clone(), data)
}

/// Aggregate a fine field onto an aligned coarser grid by block mean.
///
/// Each coarse node averages the fine nodes in a `ratio`-wide window centered
/// on the coincident fine node (window `[i - (ratio-1)/2, i + ratio/2]`,
/// truncated at domain edges). Accumulation is in f64.
pub fn block_mean_aggregate(fine: &WindField, coarse: &GridSpec) -> Result<WindField> {
    coarse.validate()?;
    if !coarse.same_bbox(&fine.spec) {
        return Err(Error::Alignment(
            "block_mean_aggregate: coarse and fine bboxes differ".into(),
        ));
    }
    let ratio = coarse.cell_ratio_to(&fine.spec)?;
    let half_lo = (ratio - 1) / 2;
    let half_hi = ratio / 2;
    let (nt, nyf, nxf) = (fine.n_times(), fine.spec.ny, fine.spec.nx);
    let mut data = Array4::zeros((nt, coarse.ny, coarse.nx, 2));
    for t in 0..nt {
        for cy in 0..coarse.ny {
            let fy = cy * ratio;
            let y0 = fy.saturating_sub(half_lo);
            let y1 = (fy + half_hi).min(nyf - 1);
            for cx in 0..coarse.nx {
                let fx = cx * ratio;
                let x0 = fx.saturating_sub(half_lo);
                let x1 = (fx + half_hi).min(nxf - 1);
                let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
                for c in 0..2 {
                    let mut acc = 0.0f64;
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            acc += fine.data[[t, y, x, c]] as f64;
                        }
                    }
                    data[[t, cy, cx, c]] = (acc / count) as f32;
                }
            }
        }
    }
    WindField::new(coarse.clone(), fine.times.clone(), data)
}
