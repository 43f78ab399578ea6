//! Synthetic ground truth: parametric cyclone wind fields, synthetic terrain,
//! injected systematic forecast bias, station sampling, and random-walk
//! transmission networks. These provide exact oracles for training and
//! evaluating the correction/downscaling/risk pipeline.

use chrono::{DateTime, Utc};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    block_mean_aggregate, sample_at, terrain_features, wind_speed, GridSpec, Station,
    StationSeries, TerrainFeatures, TerrainGrid, WindField, METERS_PER_DEGREE,
};
use crate::risk::{Line, Network, Tower};

/// One cyclone-center track knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
}

/// Rankine-profile vortex parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexParams {
    /// Peak tangential speed, m/s.
    pub v_max: f64,
    /// Radius of maximum wind, km.
    pub r_max_km: f64,
    /// Outer profile decay exponent in (0, 1].
    pub alpha: f64,
    pub track: Vec<TrackPoint>,
    /// Add the instantaneous center translation velocity to the wind.
    pub include_translation: bool,
}

impl VortexParams {
    fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0) || !(self.r_max_km > 0.0) {
            return Err(Error::InvalidInput("vortex needs v_max, r_max > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "vortex alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.track.is_empty() {
            return Err(Error::InvalidInput("vortex track is empty".into()));
        }
        if self.track.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidInput(
                "vortex track times must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Center position (lat, lon) and translation velocity (u, v) m/s at `t`.
    fn center_at(&self, t: DateTime<Utc>) -> Result<(f64, f64, f64, f64)> {
        let first = self.track.first().expect("validated non-empty");
        let last = self.track.last().expect("validated non-empty");
        if t < first.time || t > last.time {
            return Err(Error::InvalidInput(format!(
                "time {t} outside track span [{}, {}]",
                first.time, last.time
            )));
        }
        if self.track.len() == 1 {
            return Ok((first.lat, first.lon, 0.0, 0.0));
        }
        let i = self
            .track
            .partition_point(|p| p.time <= t)
            .clamp(1, self.track.len() - 1);
        let (a, b) = (&self.track[i - 1], &self.track[i]);
        let dt = (b.time - a.time).num_seconds() as f64;
        let w = (t - a.time).num_seconds() as f64 / dt;
        let trans_u = (b.lon - a.lon) * METERS_PER_DEGREE / dt;
        let trans_v = (b.lat - a.lat) * METERS_PER_DEGREE / dt;
        Ok((
            a.lat + w * (b.lat - a.lat),
            a.lon + w * (b.lon - a.lon),
            trans_u,
            trans_v,
        ))
    }
}

/// Tangential speed of the Rankine profile at radius `r_m` from the center.
fn rankine_speed(r_m: f64, v_max: f64, r_max_m: f64, alpha: f64) -> f64 {
    if r_m < r_max_m {
        v_max * r_m / r_max_m
    } else {
        v_max * (r_max_m / r_m).powf(alpha)
    }
}

/// Generate a counterclockwise vortex wind field along a moving track.
pub fn generate_vortex(
    params: &VortexParams,
    spec: &GridSpec,
    times: &[DateTime<Utc>],
) -> Result<WindField> {
    params.validate()?;
    spec.validate()?;
    let r_max_m = params.r_max_km * 1000.0;
    let mut data = Array4::zeros((times.len(), spec.ny, spec.nx, 2));
    for (t, &time) in times.iter().enumerate() {
        let (c_lat, c_lon, trans_u, trans_v) = params.center_at(time)?;
        for y in 0..spec.ny {
            let dy = (spec.lat_at(y) - c_lat) * METERS_PER_DEGREE;
            for x in 0..spec.nx {
                let dx = (spec.lon_at(x) - c_lon) * METERS_PER_DEGREE;
                let r = (dx * dx + dy * dy).sqrt();
                let (mut u, mut v) = if r > 0.0 {
                    let s = rankine_speed(r, params.v_max, r_max_m, params.alpha);
                    (-dy / r * s, dx / r * s)
                } else {
                    (0.0, 0.0)
                };
                if params.include_translation {
                    u += trans_u;
                    v += trans_v;
                }
                data[[t, y, x, 0]] = u as f32;
                data[[t, y, x, 1]] = v as f32;
            }
        }
    }
    WindField::new(spec.clone(), times.to_vec(), data)
}

/// Scale wind speed by terrain: ridge speed-up via TPI, drag slow-down via
/// roughness, factor clamped to [0.2, 2.0]; direction is preserved.
pub fn terrain_modulate(
    field: &WindField,
    features: &TerrainFeatures,
    k_tpi: f64,
    k_rough: f64,
) -> Result<WindField> {
    if field.spec != features.spec {
        return Err(Error::Alignment(
            "terrain_modulate: field and features on different grids".into(),
        ));
    }
    let mut data = field.data.clone();
    for t in 0..field.n_times() {
        for y in 0..field.spec.ny {
            for x in 0..field.spec.nx {
                let tpi = features.data[[y, x, 1]];
                let rough = features.data[[y, x, 4]];
                let scale = (1.0 + k_tpi * tpi / 100.0 - k_rough * rough).clamp(0.2, 2.0);
                data[[t, y, x, 0]] = (field.data[[t, y, x, 0]] as f64 * scale) as f32;
                data[[t, y, x, 1]] = (field.data[[t, y, x, 1]] as f64 * scale) as f32;
            }
        }
    }
    WindField::new(field.spec.clone(), field.times.clone(), data)
}

/// Systematic forecast error model applied to a truth field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    /// Multiplier on wind vectors.
    pub gain: f64,
    /// m/s added to speed along the local flow direction.
    pub offset: f64,
    /// Storm-position error: truth is sampled at x - displacement,
    /// (delta_lat, delta_lon) degrees.
    pub displacement: (f64, f64),
    /// Per-component Gaussian noise sigma, m/s.
    pub noise_sigma: f64,
}

impl BiasModel {
    pub fn identity() -> Self {
        BiasModel {
            gain: 1.0,
            offset: 0.0,
            displacement: (0.0, 0.0),
            noise_sigma: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(Error::InvalidInput(format!("bias gain {} <= 0", self.gain)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "bias noise sigma {} < 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Produce a biased forecast from a truth field.
///
/// The identity model returns the input bit-exactly. Noise streams are
/// derived per timestep from (seed, t) so per-timestep generation order does
/// not matter; cells are consumed row-major, u then v.
pub fn apply_bias(truth: &WindField, model: &BiasModel, seed: u64) -> Result<WindField> {
    model.validate()?;
    let spec = &truth.spec;
    let (dlat, dlon) = model.displacement;
    let shifted = dlat != 0.0 || dlon != 0.0;
    let mut data = Array4::zeros((truth.n_times(), spec.ny, spec.nx, 2));
    for t in 0..truth.n_times() {
        for y in 0..spec.ny {
            for x in 0..spec.nx {
                let (u0, v0) = if shifted {
                    let lon = (spec.lon_at(x) - dlon).clamp(spec.lon_min, spec.lon_max);
                    let lat = (spec.lat_at(y) - dlat).clamp(spec.lat_min, spec.lat_max);
                    sample_at(truth, t, lon, lat)?
                } else {
                    (
                        truth.data[[t, y, x, 0]] as f64,
                        truth.data[[t, y, x, 1]] as f64,
                    )
                };
                let (mut u, mut v) = (model.gain * u0, model.gain * v0);
                if model.offset != 0.0 {
                    let s = wind_speed(u, v);
                    if s > 0.0 {
                        let factor = ((s + model.offset).max(0.0)) / s;
                        u *= factor;
                        v *= factor;
                    }
                }
                data[[t, y, x, 0]] = u as f32;
                data[[t, y, x, 1]] = v as f32;
            }
        }
        if model.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, model.noise_sigma).expect("sigma validated");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            for y in 0..spec.ny {
                for x in 0..spec.nx {
                    for c in 0..2 {
                        let n: f64 = rng.sample(normal);
                        data[[t, y, x, c]] = (data[[t, y, x, c]] as f64 + n) as f32;
                    }
                }
            }
        }
    }
    WindField::new(spec.clone(), truth.times.clone(), data)
}

/// Place stations uniformly at random in the domain and read the truth field
/// at them (bilinear) for every timestep.
pub fn sample_stations(
    truth_fine: &WindField,
    n_stations: usize,
    seed: u64,
) -> Result<StationSeries> {
    if n_stations == 0 {
        return Err(Error::InvalidInput("n_stations must be >= 1".into()));
    }
    let spec = &truth_fine.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations: Vec<Station> = (0..n_stations)
        .map(|i| Station {
            id: format!("S{:04}", i + 1),
            lon: rng.gen_range(spec.lon_min..=spec.lon_max),
            lat: rng.gen_range(spec.lat_min..=spec.lat_max),
        })
        .collect();
    let mut data = ndarray::Array3::zeros((truth_fine.n_times(), n_stations, 2));
    for t in 0..truth_fine.n_times() {
        for (s, st) in stations.iter().enumerate() {
            let (u, v) = sample_at(truth_fine, t, st.lon, st.lat)?;
            data[[t, s, 0]] = u as f32;
            data[[t, s, 1]] = v as f32;
        }
    }
    StationSeries::new(stations, truth_fine.times.clone(), data)
}

/// Span azimuths for a polyline: bearing to the next point, degrees clockwise
/// from north; the last point copies the previous span.
pub(crate) fn span_azimuths(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut az = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let de = points[i + 1].0 - points[i].0;
        let dn = points[i + 1].1 - points[i].1;
        az.push(de.atan2(dn).to_degrees().rem_euclid(360.0));
    }
    az.push(*az.last().expect(">= 2 points"));
    az
}

/// Generate seeded random-walk transmission lines inside the domain.
pub fn generate_network(
    spec: &GridSpec,
    n_lines: usize,
    towers_per_line: usize,
    span_km: f64,
    seed: u64,
) -> Result<Network> {
    if n_lines == 0 || towers_per_line < 2 {
        return Err(Error::InvalidInput(
            "network needs >= 1 line and >= 2 towers per line".into(),
        ));
    }
    if !(span_km > 0.0) {
        return Err(Error::InvalidInput("span_km must be > 0".into()));
    }
    let step_deg = span_km * 1000.0 / METERS_PER_DEGREE;
    let center = (
        (spec.lon_min + spec.lon_max) / 2.0,
        (spec.lat_min + spec.lat_max) / 2.0,
    );
    let mut lines = Vec::with_capacity(n_lines);
    for li in 0..n_lines {
        // Per-line stream: the walk does not depend on how many lines exist.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(li as u64 + 1);
        let mut lon = rng.gen_range(spec.lon_min..=spec.lon_max);
        let mut lat = rng.gen_range(spec.lat_min..=spec.lat_max);
        let mut heading: f64 = rng.gen_range(0.0..360.0);
        let mut points = Vec::with_capacity(towers_per_line);
        points.push((lon, lat));
        for _ in 1..towers_per_line {
            heading += rng.gen_range(-25.0..25.0);
            let mut cand_lon = lon + step_deg * heading.to_radians().sin();
            let mut cand_lat = lat + step_deg * heading.to_radians().cos();
            if !spec.contains(cand_lon, cand_lat) {
                // Turn back toward the domain interior and retry once.
                heading = (center.0 - lon)
                    .atan2(center.1 - lat)
                    .to_degrees()
                    .rem_euclid(360.0)
                    + rng.gen_range(-20.0..20.0);
                cand_lon = lon + step_deg * heading.to_radians().sin();
                cand_lat = lat + step_deg * heading.to_radians().cos();
            }
            lon = cand_lon.clamp(spec.lon_min, spec.lon_max);
            lat = cand_lat.clamp(spec.lat_min, spec.lat_max);
            points.push((lon, lat));
        }
        let az = span_azimuths(&points);
        let towers = points
            .iter()
            .zip(az)
            .enumerate()
            .map(|(ti, (&(lon, lat), azimuth))| Tower {
                id: format!("L{:03}-T{:03}", li + 1, ti + 1),
                lat,
                lon,
                span_azimuth: azimuth,
            })
            .collect();
        lines.push(Line {
            id: format!("L{:03}", li + 1),
            towers,
        });
    }
    let network = Network { lines };
    network.validate()?;
    Ok(network)
}

/// Synthetic-terrain shape parameters: a sum of random Gaussian bumps (both
/// hills and depressions) plus blobby land-cover classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub n_bumps: usize,
    /// Peak bump amplitude, m.
    pub height_m: f64,
    /// Nominal bump radius, km.
    pub radius_km: f64,
    pub seed: u64,
}

/// Generate terrain as Gaussian bumps on a flat plain.
pub fn generate_terrain(spec: &GridSpec, params: &TerrainParams) -> Result<TerrainGrid> {
    if !(params.height_m >= 0.0) || !(params.radius_km > 0.0) {
        return Err(Error::InvalidInput(
            "terrain needs height >= 0 and radius > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cell_m = spec.cell_size * METERS_PER_DEGREE;
    let (ny, nx) = (spec.ny, spec.nx);
    let mut elevation = Array2::<f32>::zeros((ny, nx));
    let add_bumps = |field: &mut Array2<f32>,
                     n: usize,
                     amp: &mut dyn FnMut(&mut ChaCha8Rng) -> f64,
                     rng: &mut ChaCha8Rng| {
        for _ in 0..n {
            let cx = rng.gen_range(0.0..nx as f64);
            let cy = rng.gen_range(0.0..ny as f64);
            let a = amp(rng);
            let r_cells = params.radius_km * 1000.0 / cell_m * rng.gen_range(0.5..1.5);
            // 3-sigma support keeps the cost proportional to bump area.
            let reach = (3.0 * r_cells).ceil() as isize;
            let y0 = ((cy as isize) - reach).max(0) as usize;
            let y1 = ((cy as isize) + reach).min(ny as isize - 1) as usize;
            let x0 = ((cx as isize) - reach).max(0) as usize;
            let x1 = ((cx as isize) + reach).min(nx as isize - 1) as usize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    field[[y, x]] += (a * (-d2 / (2.0 * r_cells * r_cells)).exp()) as f32;
                }
            }
        }
    };
    let height = params.height_m;
    add_bumps(
        &mut elevation,
        params.n_bumps,
        &mut |rng| rng.gen_range(-1.0..1.0) * height,
        &mut rng,
    );
    // Land cover from a second bump field quantized by fixed fractions of its
    // maximum; an all-zero field stays water everywhere.
    let mut cover = Array2::<f32>::zeros((ny, nx));
    add_bumps(
        &mut cover,
        params.n_bumps.div_ceil(2),
        &mut |_| 1.0,
        &mut rng,
    );
    let max_cover = cover.iter().fold(0.0f32, |m, &v| m.max(v));
    let classes = cover.mapv(|v| {
        if max_cover <= 0.0 {
            return 0u8;
        }
        match v / max_cover {
            f if f < 0.25 => 0u8,
            f if f < 0.5 => 1,
            f if f < 0.75 => 2,
            _ => 3,
        }
    });
    TerrainGrid::new(spec.clone(), elevation, classes)
}

/// A fully assembled synthetic event: fine/coarse truth, biased forecast,
/// station reads, terrain, and a network to stress.
#[derive(Debug, Clone)]
pub struct SyntheticEvent {
    pub event_id: String,
    pub truth_fine: WindField,
    pub truth_coarse: WindField,
    pub forecast_coarse: WindField,
    pub stations: StationSeries,
    pub terrain: TerrainGrid,
    pub network: Network,
}

/// Everything needed to build one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub event_id: String,
    pub vortex: VortexParams,
    pub bias: BiasModel,
    pub terrain: TerrainParams,
    /// Terrain speed-up/slow-down strengths for the fine truth.
    pub k_tpi: f64,
    pub k_rough: f64,
    pub tpi_radius_m: f64,
    pub n_stations: usize,
    pub n_lines: usize,
    pub towers_per_line: usize,
    pub span_km: f64,
    pub bias_seed: u64,
    pub station_seed: u64,
    pub network_seed: u64,
}

/// Assemble an event: vortex -> terrain-modulated fine truth -> block-mean
/// coarse truth -> biased coarse forecast, plus stations and network.
pub fn generate_event(
    fine_spec: &GridSpec,
    coarse_spec: &GridSpec,
    times: &[DateTime<Utc>],
    params: &EventParams,
) -> Result<SyntheticEvent> {
    let terrain = generate_terrain(fine_spec, &params.terrain)?;
    let features = terrain_features(&terrain, params.tpi_radius_m)?;
    let base = generate_vortex(&params.vortex, fine_spec, times)?;
    let truth_fine = terrain_modulate(&base, &features, params.k_tpi, params.k_rough)?;
    let truth_coarse = block_mean_aggregate(&truth_fine, coarse_spec)?;
    let forecast_coarse = apply_bias(&truth_coarse, &params.bias, params.bias_seed)?;
    let stations = sample_stations(&truth_fine, params.n_stations, params.station_seed)?;
    let network = generate_network(
        fine_spec,
        params.n_lines,
        params.towers_per_line,
        params.span_km,
        params.network_seed,
    )?;
    Ok(SyntheticEvent {
        event_id: params.event_id.clone(),
        truth_fine,
        truth_coarse,
        forecast_coarse,
        stations,
        terrain,
        network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hourly_times;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap()
    }

    fn stationary_params(lat: f64, lon: f64, r_max_km: f64) -> VortexParams {
        VortexParams {
            v_max: 40.0,
            r_max_km,
            alpha: 0.5,
            track: vec![
                TrackPoint {
                    time: t0(),
                    lat,
                    lon,
                },
                TrackPoint {
                    time: t0() + chrono::Duration::hours(48),
                    lat,
                    lon,
                },
            ],
            include_translation: false,
        }
    }

    #[test]
    fn rankine_profile_values() {
        // Center on a node; r_max exactly 10 cells east of it.
        let spec = GridSpec::new(0.0, 0.0, 0.005, 41, 41).unwrap();
        let cell_m = 0.005 * METERS_PER_DEGREE;
        let params = stationary_params(spec.lat_at(20), spec.lon_at(20), 10.0 * cell_m / 1000.0);
        let field = generate_vortex(&params, &spec, &hourly_times(t0(), 1)).unwrap();
        // At (center + r_max east): tangential flow is due north at v_max.
        let u = field.data[[0, 20, 30, 0]] as f64;
        let v = field.data[[0, 20, 30, 1]] as f64;
        assert!(u.abs() < 1e-4);
        assert!((v - 40.0).abs() < 1e-4);
        // At 2 r_max with alpha = 0.5: v_max / sqrt(2).
        let v2 = field.data[[0, 20, 40, 1]] as f64;
        assert!((v2 - 40.0 / 2f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn vortex_is_antisymmetric_about_center() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 41, 41).unwrap();
        let params = stationary_params(spec.lat_at(20), spec.lon_at(20), 3.0);
        let field = generate_vortex(&params, &spec, &hourly_times(t0(), 1)).unwrap();
        for (dy, dx) in [(3i64, 7i64), (-5, 2), (10, -10)] {
            let (ya, xa) = ((20 + dy) as usize, (20 + dx) as usize);
            let (yb, xb) = ((20 - dy) as usize, (20 - dx) as usize);
            for c in 0..2 {
                let a = field.data[[0, ya, xa, c]];
                let b = field.data[[0, yb, xb, c]];
                assert!((a + b).abs() < 1e-4, "channel {c} at ({dy},{dx})");
            }
        }
    }

    #[test]
    fn translation_adds_uniformly() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 21, 21).unwrap();
        let mut params = stationary_params(spec.lat_at(10), spec.lon_at(10), 3.0);
        // Move east by 0.1 deg/h.
        params.track[1].lon += 0.1 * 48.0;
        params.include_translation = true;
        let moving = generate_vortex(&params, &spec, &hourly_times(t0(), 1)).unwrap();
        params.track[1].lon = params.track[0].lon;
        params.include_translation = false;
        let still = generate_vortex(&params, &spec, &hourly_times(t0(), 1)).unwrap();
        let want_u = 0.1 * METERS_PER_DEGREE / 3600.0;
        for y in [0usize, 7, 20] {
            for x in [0usize, 13, 20] {
                let du = moving.data[[0, y, x, 0]] - still.data[[0, y, x, 0]];
                let dv = moving.data[[0, y, x, 1]] - still.data[[0, y, x, 1]];
                assert!((du as f64 - want_u).abs() < 1e-4);
                assert!(dv.abs() < 1e-4);
            }
        }
    }

    #[test]
    fn times_outside_track_are_rejected() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 5, 5).unwrap();
        let params = stationary_params(0.01, 0.01, 3.0);
        let late = hourly_times(t0() + chrono::Duration::hours(100), 1);
        assert!(generate_vortex(&params, &spec, &late).is_err());
    }

    #[test]
    fn modulation_scales_speed_with_clamp() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 3, 3).unwrap();
        let mut data = Array4::zeros((1, 3, 3, 2));
        data.slice_mut(ndarray::s![0, .., .., 0]).fill(10.0);
        let field = WindField::new(spec.clone(), hourly_times(t0(), 1), data).unwrap();
        let mut feats = TerrainFeatures {
            spec: spec.clone(),
            data: ndarray::Array3::zeros((3, 3, 5)),
        };
        feats.data[[1, 1, 1]] = 100.0; // TPI +100 m
        feats.data[[2, 2, 1]] = -500.0; // deep valley, clamps
        let out = terrain_modulate(&field, &feats, 0.3, 0.0).unwrap();
        assert_eq!(out.data[[0, 0, 0, 0]], 10.0); // featureless: unchanged
        assert!((out.data[[0, 1, 1, 0]] - 13.0).abs() < 1e-5);
        assert!((out.data[[0, 2, 2, 0]] - 2.0).abs() < 1e-5); // clamp at 0.2
    }

    #[test]
    fn identity_bias_is_bitwise_identity() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 9, 9).unwrap();
        let params = stationary_params(spec.lat_at(4), spec.lon_at(4), 2.0);
        let truth = generate_vortex(&params, &spec, &hourly_times(t0(), 2)).unwrap();
        let forecast = apply_bias(&truth, &BiasModel::identity(), 99).unwrap();
        assert_eq!(forecast.data, truth.data);
    }

    #[test]
    fn gain_and_offset_shift_uniform_flow() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 3, 3).unwrap();
        let mut data = Array4::zeros((1, 3, 3, 2));
        data.slice_mut(ndarray::s![0, .., .., 0]).fill(12.0);
        data.slice_mut(ndarray::s![0, .., .., 1]).fill(16.0);
        let truth = WindField::new(spec, hourly_times(t0(), 1), data).unwrap();
        let model = BiasModel {
            gain: 0.8,
            offset: -1.0,
            displacement: (0.0, 0.0),
            noise_sigma: 0.0,
        };
        let fc = apply_bias(&truth, &model, 0).unwrap();
        // speed 20 -> 0.8*20 - 1 = 15, direction kept: (9, 12).
        assert!((fc.data[[0, 1, 1, 0]] - 9.0).abs() < 1e-5);
        assert!((fc.data[[0, 1, 1, 1]] - 12.0).abs() < 1e-5);
    }

    #[test]
    fn noisy_bias_is_seed_deterministic() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 7, 7).unwrap();
        let params = stationary_params(spec.lat_at(3), spec.lon_at(3), 2.0);
        let truth = generate_vortex(&params, &spec, &hourly_times(t0(), 2)).unwrap();
        let model = BiasModel {
            noise_sigma: 0.5,
            ..BiasModel::identity()
        };
        let a = apply_bias(&truth, &model, 7).unwrap();
        let b = apply_bias(&truth, &model, 7).unwrap();
        let c = apply_bias(&truth, &model, 8).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn stations_read_the_field_and_repeat_with_seed() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 21, 21).unwrap();
        let params = stationary_params(spec.lat_at(10), spec.lon_at(10), 3.0);
        let truth = generate_vortex(&params, &spec, &hourly_times(t0(), 3)).unwrap();
        let a = sample_stations(&truth, 5, 13).unwrap();
        let b = sample_stations(&truth, 5, 13).unwrap();
        assert_eq!(a, b);
        for (s, st) in a.stations.iter().enumerate() {
            for t in 0..3 {
                let (u, v) = sample_at(&truth, t, st.lon, st.lat).unwrap();
                assert_eq!(a.data[[t, s, 0]], u as f32);
                assert_eq!(a.data[[t, s, 1]], v as f32);
            }
        }
    }

    #[test]
    fn span_azimuth_of_eastward_pair() {
        let az = span_azimuths(&[(117.0, 27.0), (117.1, 27.0)]);
        assert_eq!(az, vec![90.0, 90.0]);
        let az = span_azimuths(&[(117.0, 27.0), (117.0, 27.1), (117.1, 27.1)]);
        assert_eq!(az, vec![0.0, 90.0, 90.0]);
    }

    #[test]
    fn network_shape_and_determinism() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 101, 101).unwrap();
        let a = generate_network(&spec, 4, 6, 2.0, 5).unwrap();
        let b = generate_network(&spec, 4, 6, 2.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_towers(), 24);
        for line in &a.lines {
            for t in &line.towers {
                assert!(spec.contains(t.lon, t.lat), "tower {} escaped", t.id);
            }
        }
        // Line streams are independent of n_lines.
        let fewer = generate_network(&spec, 2, 6, 2.0, 5).unwrap();
        assert_eq!(fewer.lines[1], a.lines[1]);
    }

    #[test]
    fn terrain_generator_is_deterministic_with_valid_classes() {
        let spec = GridSpec::new(0.0, 0.0, 0.005, 61, 61).unwrap();
        let params = TerrainParams {
            n_bumps: 8,
            height_m: 300.0,
            radius_km: 2.0,
            seed: 3,
        };
        let a = generate_terrain(&spec, &params).unwrap();
        let b = generate_terrain(&spec, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.elevation.iter().any(|&e| e.abs() > 10.0));
        assert!(a.roughness_class.iter().all(|&c| c < 4));
    }

    #[test]
    fn event_assembly_keeps_coarse_fine_consistency() {
        let fine = GridSpec::new(0.0, 0.0, 0.005, 126, 126).unwrap();
        let coarse = GridSpec::new(0.0, 0.0, 0.125, 6, 6).unwrap();
        let params = EventParams {
            event_id: "ev1".into(),
            vortex: stationary_params(fine.lat_at(60), fine.lon_at(60), 5.0),
            bias: BiasModel::identity(),
            terrain: TerrainParams {
                n_bumps: 4,
                height_m: 200.0,
                radius_km: 3.0,
                seed: 1,
            },
            k_tpi: 0.3,
            k_rough: 0.1,
            tpi_radius_m: 5000.0,
            n_stations: 4,
            n_lines: 2,
            towers_per_line: 3,
            span_km: 3.0,
            bias_seed: 10,
            station_seed: 11,
            network_seed: 12,
        };
        let times = hourly_times(t0(), 2);
        let ev = generate_event(&fine, &coarse, &times, &params).unwrap();
        let agg = block_mean_aggregate(&ev.truth_fine, &coarse).unwrap();
        assert_eq!(ev.truth_coarse.data, agg.data);
        // Identity bias: forecast equals coarse truth.
        assert_eq!(ev.forecast_coarse.data, ev.truth_coarse.data);
        assert_eq!(ev.stations.n_stations(), 4);
    }
}
