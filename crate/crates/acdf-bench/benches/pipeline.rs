//! Benchmarks for the kernels that dominate a forecast cycle: vortex synthesis,
//! terrain preprocessing, patch downscaling, and Monte Carlo tower risk.

use chrono::{TimeZone, Utc};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use acdf_core::downscaler::{downscale_field, DownscalerModel, N_MODEL_FEATURES};
use acdf_core::grid::{hourly_times, terrain_features, DEFAULT_TPI_RADIUS_M};
use acdf_core::risk::{
    risk_forecast, tower_risk_analytic, tower_risk_mc, FragilityTable, RiskConfig, TowerExposure,
};
use acdf_core::scenario::{
    generate_network, generate_terrain, generate_vortex, TerrainParams, TrackPoint, VortexParams,
};
use acdf_core::GridSpec;

fn vortex_params(times: &[chrono::DateTime<Utc>]) -> VortexParams {
    VortexParams {
        v_max: 45.0,
        r_max_km: 40.0,
        alpha: 0.5,
        include_translation: true,
        track: vec![
            TrackPoint {
                time: times[0],
                lat: 21.0,
                lon: 110.3,
            },
            TrackPoint {
                time: *times.last().unwrap(),
                lat: 22.0,
                lon: 112.0,
            },
        ],
    }
}

fn bench_vortex(c: &mut Criterion) {
    let coarse = GridSpec::new(110.0, 20.0, 0.125, 21, 21).unwrap();
    let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 1, 0, 0, 0).unwrap(), 12);
    let params = vortex_params(&times);
    c.bench_function("vortex_21x21x12h", |b| {
        b.iter(|| generate_vortex(&params, &coarse, &times).unwrap())
    });
}

fn bench_terrain_features(c: &mut Criterion) {
    let fine = GridSpec::new(110.0, 20.0, 0.005, 301, 301).unwrap();
    let terrain = generate_terrain(
        &fine,
        &TerrainParams {
            n_bumps: 40,
            height_m: 400.0,
            radius_km: 4.0,
            seed: 7,
        },
    )
    .unwrap();
    c.bench_function("terrain_features_301x301", |b| {
        b.iter(|| terrain_features(&terrain, DEFAULT_TPI_RADIUS_M).unwrap())
    });
}

fn bench_downscale(c: &mut Criterion) {
    let coarse_spec = GridSpec::new(110.0, 20.0, 0.125, 13, 13).unwrap();
    let fine_spec = GridSpec::new(110.0, 20.0, 0.005, 301, 301).unwrap();
    let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 1, 0, 0, 0).unwrap(), 3);
    let coarse = generate_vortex(&vortex_params(&times), &coarse_spec, &times).unwrap();
    let terrain = generate_terrain(
        &fine_spec,
        &TerrainParams {
            n_bumps: 40,
            height_m: 400.0,
            radius_km: 4.0,
            seed: 7,
        },
    )
    .unwrap();
    let features = terrain_features(&terrain, DEFAULT_TPI_RADIUS_M).unwrap();
    let mut model = DownscalerModel::untrained();
    model
        .set_weights(
            (0..N_MODEL_FEATURES)
                .map(|k| 0.001 * (k as f64 - 5.0))
                .collect(),
        )
        .unwrap();
    model.freeze().unwrap();
    let mut group = c.benchmark_group("downscale");
    group.sample_size(20);
    group.bench_function("301x301x3h", |b| {
        b.iter(|| downscale_field(&model, &coarse, &features, 0.5, 0.25).unwrap())
    });
    group.finish();
}

fn bench_tower_risk(c: &mut Criterion) {
    let table = FragilityTable::default();
    // Mixed exposure: sub-median early steps, strong gusts late.
    let speeds: Vec<f64> = (0..12).map(|t| 12.0 + 2.2 * t as f64).collect();
    let angles: Vec<f64> = (0..12).map(|t| 15.0 * (t % 6) as f64).collect();
    let exposure = TowerExposure::new(speeds, angles).unwrap();
    c.bench_function("tower_mc_10k_x_12h", |b| {
        b.iter(|| tower_risk_mc(&exposure, &table, 10_000, 42, 0).unwrap())
    });
    c.bench_function("tower_analytic_12h", |b| {
        b.iter(|| tower_risk_analytic(&exposure, &table).unwrap())
    });
}

fn bench_network_risk(c: &mut Criterion) {
    let fine = GridSpec::new(110.0, 20.0, 0.005, 301, 301).unwrap();
    let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 1, 0, 0, 0).unwrap(), 6);
    let wind = generate_vortex(&vortex_params(&times), &fine, &times).unwrap();
    let network = generate_network(&fine, 20, 25, 0.4, 11).unwrap();
    let table = FragilityTable::default();
    let config = RiskConfig {
        mc_samples: 2_000,
        seed: 3,
        ..Default::default()
    };
    let mut group = c.benchmark_group("network_risk");
    group.sample_size(10);
    group.bench_function("500_towers_2k_mc_x_6h", |b| {
        b.iter_batched(
            || (),
            |_| risk_forecast(&wind, &network, &table, &config).unwrap(),
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

criterion_group!(
    kernels,
    bench_vortex,
    bench_terrain_features,
    bench_downscale,
    bench_tower_risk,
    bench_network_risk
);
criterion_main!(kernels);
