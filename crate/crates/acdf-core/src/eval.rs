//! Forecast verification at stations: speed MAE/ME, circular direction MAE,
//! terrain and wind-regime stratification, and leave-one-event-out folds.
//!
//! All metrics pool (station, time) samples; reported spreads are population
//! standard deviations over that pool. Direction errors use the shared
//! direction convention and exclude samples whose observed speed is calm.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_at, StationSeries, TerrainClass, WindField};

/// Observed speeds below this (m/s) have no meaningful direction.
pub const CALM_SPEED_THRESHOLD: f64 = 0.5;
/// Default high-wind stratum threshold (m/s).
pub const HIGH_WIND_THRESHOLD: f64 = 20.0;

/// Speed-error summary over pooled samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedErrorStats {
    /// Mean |pred − obs| of scalar speed.
    pub mae: f64,
    pub mae_std: f64,
    /// Mean (pred − obs): positive = overestimation.
    pub me: f64,
    pub me_std: f64,
    pub n: usize,
}

/// Direction-error summary over non-calm samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirErrorStats {
    /// Mean folded angular error, degrees in [0, 180].
    pub mae: f64,
    pub std: f64,
    pub n: usize,
}

/// Pooled verification metrics, optionally broken out by stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sample_count: usize,
    pub mae_spd: f64,
    pub mae_spd_std: f64,
    pub me_spd: f64,
    pub me_spd_std: f64,
    /// None when every sample in the set was calm.
    pub mae_dir: Option<f64>,
    pub mae_dir_std: Option<f64>,
    pub dir_sample_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<StratumReport>,
}

/// One labeled sub-report, e.g. `terrain:ridge` or `wind:>20`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub label: String,
    pub report: MetricsReport,
}

/// A wind-regime stratum: samples with observed speed strictly above `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindBin {
    pub label: String,
    pub min_speed: f64,
}

/// The standard regimes: everything, and the high-wind subset.
pub fn default_wind_bins() -> Vec<WindBin> {
    vec![
        WindBin {
            label: "all".into(),
            min_speed: f64::NEG_INFINITY,
        },
        WindBin {
            label: format!(">{HIGH_WIND_THRESHOLD}"),
            min_speed: HIGH_WIND_THRESHOLD,
        },
    ]
}

/// One pooled (station, time) sample.
#[derive(Debug, Clone, Copy)]
struct Sample {
    station: usize,
    pred_spd: f64,
    obs_spd: f64,
    pred_dir: f64,
    obs_dir: f64,
}

fn aligned_samples(pred: &StationSeries, obs: &StationSeries) -> Result<Vec<Sample>> {
    if pred.stations != obs.stations {
        return Err(Error::ShapeMismatch(
            "prediction and observation station lists differ".into(),
        ));
    }
    if pred.times != obs.times {
        return Err(Error::ShapeMismatch(
            "prediction and observation time axes differ".into(),
        ));
    }
    let mut out = Vec::with_capacity(pred.times.len() * pred.n_stations());
    for t in 0..pred.times.len() {
        for s in 0..pred.n_stations() {
            let (pu, pv) = (pred.data[[t, s, 0]] as f64, pred.data[[t, s, 1]] as f64);
            let (ou, ov) = (obs.data[[t, s, 0]] as f64, obs.data[[t, s, 1]] as f64);
            out.push(Sample {
                station: s,
                pred_spd: crate::grid::wind_speed(pu, pv),
                obs_spd: crate::grid::wind_speed(ou, ov),
                pred_dir: crate::grid::wind_dir_deg(pu, pv),
                obs_dir: crate::grid::wind_dir_deg(ou, ov),
            });
        }
    }
    Ok(out)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let mut ss = 0.0f64;
    for v in values {
        let d = v - mean;
        ss += d * d;
    }
    (mean, (ss / n as f64).sqrt(), n)
}

fn speed_stats(samples: &[Sample]) -> SpeedErrorStats {
    let errs = samples.iter().map(|s| s.pred_spd - s.obs_spd);
    let (me, me_std, n) = mean_std(errs.clone());
    let (mae, mae_std, _) = mean_std(errs.map(f64::abs));
    SpeedErrorStats {
        mae,
        mae_std,
        me,
        me_std,
        n,
    }
}

/// Folded angular distance between two directions, degrees in [0, 180].
fn dir_error(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

fn dir_stats(samples: &[Sample]) -> Option<DirErrorStats> {
    let errs = samples
        .iter()
        .filter(|s| s.obs_spd >= CALM_SPEED_THRESHOLD)
        .map(|s| dir_error(s.pred_dir, s.obs_dir));
    let (mae, std, n) = mean_std(errs);
    (n > 0).then_some(DirErrorStats { mae, std, n })
}

fn report_from(samples: &[Sample]) -> MetricsReport {
    let spd = speed_stats(samples);
    let dir = dir_stats(samples);
    MetricsReport {
        sample_count: spd.n,
        mae_spd: spd.mae,
        mae_spd_std: spd.mae_std,
        me_spd: spd.me,
        me_spd_std: spd.me_std,
        mae_dir: dir.map(|d| d.mae),
        mae_dir_std: dir.map(|d| d.std),
        dir_sample_count: dir.map_or(0, |d| d.n),
        strata: Vec::new(),
    }
}

/// Speed MAE and ME (m/s) over pooled (station, time) samples.
pub fn speed_errors(pred: &StationSeries, obs: &StationSeries) -> Result<SpeedErrorStats> {
    Ok(speed_stats(&aligned_samples(pred, obs)?))
}

/// Mean folded direction error (degrees), excluding calm observations.
pub fn direction_mae(pred: &StationSeries, obs: &StationSeries) -> Result<DirErrorStats> {
    dir_stats(&aligned_samples(pred, obs)?).ok_or_else(|| {
        Error::InvalidInput(format!(
            "direction_mae: every sample is calmer than {CALM_SPEED_THRESHOLD} m/s"
        ))
    })
}

/// Pooled metrics without strata.
pub fn metrics_report(pred: &StationSeries, obs: &StationSeries) -> Result<MetricsReport> {
    Ok(report_from(&aligned_samples(pred, obs)?))
}

/// Pooled metrics plus per-terrain-class and per-wind-regime sub-reports.
///
/// `station_classes[s]` is the terrain class at station `s`. Terrain strata
/// partition the samples; wind strata filter by observed speed, with the
/// `all` bin equal to the global report.
pub fn stratify(
    pred: &StationSeries,
    obs: &StationSeries,
    station_classes: &[TerrainClass],
    wind_bins: &[WindBin],
) -> Result<MetricsReport> {
    if station_classes.len() != pred.n_stations() {
        return Err(Error::ShapeMismatch(format!(
            "{} terrain classes for {} stations",
            station_classes.len(),
            pred.n_stations()
        )));
    }
    let samples = aligned_samples(pred, obs)?;
    let mut report = report_from(&samples);
    for class in [
        TerrainClass::Valley,
        TerrainClass::Flat,
        TerrainClass::Ridge,
    ] {
        let subset: Vec<Sample> = samples
            .iter()
            .filter(|s| station_classes[s.station] == class)
            .copied()
            .collect();
        report.strata.push(StratumReport {
            label: format!("terrain:{class}"),
            report: report_from(&subset),
        });
    }
    for bin in wind_bins {
        let subset: Vec<Sample> = samples
            .iter()
            .filter(|s| s.obs_spd > bin.min_speed)
            .copied()
            .collect();
        report.strata.push(StratumReport {
            label: format!("wind:{}", bin.label),
            report: report_from(&subset),
        });
    }
    Ok(report)
}

/// One leave-one-event-out fold: the held-out event and the remaining events
/// whose samples feed training, with a seeded train/validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub held_out_event_id: String,
    pub train_event_ids: Vec<String>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl LosoFold {
    /// Split sample indices `0..n` into (train, val) by seeded shuffle;
    /// deterministic for a given fold. Both halves come back sorted.
    pub fn split_samples(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        let fold_seed = self.seed ^ crate::util::fnv1a64(self.held_out_event_id.as_bytes());
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(fold_seed));
        let n_val = ((n as f64) * self.val_fraction).round() as usize;
        let n_val = n_val.min(n);
        let mut val = idx[..n_val].to_vec();
        let mut train = idx[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        (train, val)
    }
}

/// One fold per event, each holding that event out of training entirely.
pub fn make_loso_folds(
    event_ids: &[String],
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<LosoFold>> {
    if event_ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "leave-one-out needs at least 2 events, got {}",
            event_ids.len()
        )));
    }
    let mut unique = event_ids.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != event_ids.len() {
        return Err(Error::InvalidInput("duplicate event ids".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidInput(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    Ok(event_ids
        .iter()
        .map(|held| LosoFold {
            held_out_event_id: held.clone(),
            train_event_ids: event_ids.iter().filter(|id| *id != held).cloned().collect(),
            val_fraction,
            seed,
        })
        .collect())
}

/// Percent MAE reduction of `b` relative to baseline `a`:
/// 100 · (mae_a − mae_b) / mae_a.
pub fn improvement(a: &MetricsReport, b: &MetricsReport) -> Result<f64> {
    if a.sample_count != b.sample_count {
        return Err(Error::ShapeMismatch(format!(
            "improvement compares reports over {} vs {} samples",
            a.sample_count, b.sample_count
        )));
    }
    if a.mae_spd == 0.0 {
        return Err(Error::InvalidInput(
            "improvement undefined: baseline MAE is zero".into(),
        ));
    }
    Ok(100.0 * (a.mae_spd - b.mae_spd) / a.mae_spd)
}

/// Predictions at a station set: the field sampled at each station and time.
pub fn station_predictions(field: &WindField, template: &StationSeries) -> Result<StationSeries> {
    if field.times != template.times {
        return Err(Error::ShapeMismatch(
            "station_predictions: field and station time axes differ".into(),
        ));
    }
    let mut data = ndarray::Array3::<f32>::zeros((template.times.len(), template.n_stations(), 2));
    for t in 0..template.times.len() {
        for (s, st) in template.stations.iter().enumerate() {
            let (u, v) = sample_at(field, t, st.lon, st.lat)?;
            data[[t, s, 0]] = u as f32;
            data[[t, s, 1]] = v as f32;
        }
    }
    StationSeries::new(template.stations.clone(), template.times.clone(), data)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "-".into(),
    }
}

/// Aligned-column text table, one row per labeled report.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
        "model", "samples", "MAE_spd", "ME_spd", "MAE_dir", "dir_n"
    ));
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<24} {:>8} {:>9.3} {:>9.3} {:>9} {:>9}\n",
            label,
            r.sample_count,
            r.mae_spd,
            r.me_spd,
            fmt_opt(r.mae_dir),
            r.dir_sample_count
        ));
        for s in &r.strata {
            out.push_str(&format!(
                "{:<24} {:>8} {:>9.3} {:>9.3} {:>9} {:>9}\n",
                format!("  {}", s.label),
                s.report.sample_count,
                s.report.mae_spd,
                s.report.me_spd,
                fmt_opt(s.report.mae_dir),
                s.report.dir_sample_count
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{hourly_times, Station};
    use chrono::{TimeZone, Utc};
    use ndarray::Array3;

    fn series_from_speeds(speeds: &[&[f64]]) -> StationSeries {
        // speeds[t][s], flow due north (v = speed).
        let nt = speeds.len();
        let ns = speeds[0].len();
        let stations = (0..ns)
            .map(|s| Station {
                id: format!("S{s}"),
                lat: 20.0 + s as f64 * 0.01,
                lon: 110.0,
            })
            .collect();
        let mut data = Array3::<f32>::zeros((nt, ns, 2));
        for t in 0..nt {
            for s in 0..ns {
                data[[t, s, 1]] = speeds[t][s] as f32;
            }
        }
        let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap(), nt);
        StationSeries::new(stations, times, data).unwrap()
    }

    fn series_from_dirs(dirs_speed: &[(f64, f64)]) -> StationSeries {
        // One time, one station per entry, direction (deg) and speed.
        let ns = dirs_speed.len();
        let stations = (0..ns)
            .map(|s| Station {
                id: format!("S{s}"),
                lat: 20.0 + s as f64 * 0.01,
                lon: 110.0,
            })
            .collect();
        let mut data = Array3::<f32>::zeros((1, ns, 2));
        for (s, &(dir, spd)) in dirs_speed.iter().enumerate() {
            let rad = dir.to_radians();
            data[[0, s, 0]] = (spd * rad.sin()) as f32;
            data[[0, s, 1]] = (spd * rad.cos()) as f32;
        }
        let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap(), 1);
        StationSeries::new(stations, times, data).unwrap()
    }

    #[test]
    fn identical_series_scores_zero() {
        let s = series_from_speeds(&[&[5.0, 8.0], &[12.0, 3.0]]);
        let spd = speed_errors(&s, &s).unwrap();
        assert_eq!(spd.mae, 0.0);
        assert_eq!(spd.me, 0.0);
        assert_eq!(spd.n, 4);
        let dir = direction_mae(&s, &s).unwrap();
        assert_eq!(dir.mae, 0.0);
    }

    #[test]
    fn crossing_errors_cancel_in_me_but_not_mae() {
        let pred = series_from_speeds(&[&[3.0, 5.0]]);
        let obs = series_from_speeds(&[&[4.0, 4.0]]);
        let spd = speed_errors(&pred, &obs).unwrap();
        assert!((spd.mae - 1.0).abs() < 1e-9);
        assert!(spd.me.abs() < 1e-9);
        assert!((spd.me_std - 1.0).abs() < 1e-9);
        assert!((spd.mae_std - 0.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_bias_shows_in_both() {
        let pred = series_from_speeds(&[&[6.0, 9.0], &[14.0, 5.0]]);
        let obs = series_from_speeds(&[&[4.0, 7.0], &[12.0, 3.0]]);
        let spd = speed_errors(&pred, &obs).unwrap();
        assert!((spd.mae - 2.0).abs() < 1e-6);
        assert!((spd.me - 2.0).abs() < 1e-6);
        assert!(spd.me_std < 1e-6);
    }

    #[test]
    fn direction_errors_fold_across_north() {
        let pred = series_from_dirs(&[(10.0, 5.0)]);
        let obs = series_from_dirs(&[(350.0, 5.0)]);
        let dir = direction_mae(&pred, &obs).unwrap();
        assert!((dir.mae - 20.0).abs() < 1e-4);

        let pred = series_from_dirs(&[(90.0, 5.0)]);
        let obs = series_from_dirs(&[(270.0, 5.0)]);
        let dir = direction_mae(&pred, &obs).unwrap();
        assert!((dir.mae - 180.0).abs() < 1e-4);
    }

    #[test]
    fn calm_observations_are_excluded() {
        let pred = series_from_dirs(&[(10.0, 5.0), (200.0, 5.0)]);
        let obs = series_from_dirs(&[(350.0, 5.0), (90.0, 0.3)]);
        let dir = direction_mae(&pred, &obs).unwrap();
        assert_eq!(dir.n, 1);
        assert!((dir.mae - 20.0).abs() < 1e-4);

        let all_calm = series_from_dirs(&[(350.0, 0.2), (90.0, 0.3)]);
        assert!(direction_mae(&pred, &all_calm).is_err());
        // But the pooled report simply reports no direction stats.
        let rep = metrics_report(&pred, &all_calm).unwrap();
        assert_eq!(rep.mae_dir, None);
        assert_eq!(rep.dir_sample_count, 0);
        assert_eq!(rep.sample_count, 2);
    }

    #[test]
    fn mae_bounds_me() {
        let pred = series_from_speeds(&[&[3.0, 9.0, 7.5], &[2.0, 11.0, 6.0]]);
        let obs = series_from_speeds(&[&[4.0, 7.0, 7.0], &[3.5, 12.0, 8.0]]);
        let spd = speed_errors(&pred, &obs).unwrap();
        assert!(spd.mae >= spd.me.abs());
    }

    #[test]
    fn strata_partition_and_match_global() {
        let pred = series_from_speeds(&[&[6.0, 9.0, 3.0], &[14.0, 5.0, 8.0]]);
        let obs = series_from_speeds(&[&[4.0, 7.0, 2.0], &[12.0, 3.0, 9.0]]);
        let classes = vec![TerrainClass::Flat; 3];
        let report = stratify(&pred, &obs, &classes, &default_wind_bins()).unwrap();
        let stratum = |label: &str| {
            report
                .strata
                .iter()
                .find(|s| s.label == label)
                .unwrap_or_else(|| panic!("missing stratum {label}"))
        };
        assert_eq!(stratum("terrain:valley").report.sample_count, 0);
        assert_eq!(stratum("terrain:ridge").report.sample_count, 0);
        let flat = &stratum("terrain:flat").report;
        assert_eq!(flat.sample_count, report.sample_count);
        assert_eq!(flat.mae_spd, report.mae_spd);
        // Terrain strata counts sum to the total.
        let sum: usize = report
            .strata
            .iter()
            .filter(|s| s.label.starts_with("terrain:"))
            .map(|s| s.report.sample_count)
            .sum();
        assert_eq!(sum, report.sample_count);
        // Speeds are capped below 20, so the high-wind bin is empty.
        assert_eq!(stratum("wind:>20").report.sample_count, 0);
        assert_eq!(stratum("wind:all").report.sample_count, 6);
    }

    #[test]
    fn loso_folds_hold_each_event_out_once() {
        let ids: Vec<String> = (0..5).map(|i| format!("ev{i}")).collect();
        let folds = make_loso_folds(&ids, 0.15, 42).unwrap();
        assert_eq!(folds.len(), 5);
        for (i, fold) in folds.iter().enumerate() {
            assert_eq!(fold.held_out_event_id, ids[i]);
            assert!(!fold.train_event_ids.contains(&ids[i]));
            assert_eq!(fold.train_event_ids.len(), 4);
        }
        assert_eq!(folds, make_loso_folds(&ids, 0.15, 42).unwrap());
        assert!(make_loso_folds(&ids[..1], 0.15, 42).is_err());

        let (train, val) = folds[0].split_samples(40);
        assert_eq!(train.len() + val.len(), 40);
        assert_eq!(val.len(), 6); // 15% of 40
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(folds[0].split_samples(40), (train, val));
    }

    #[test]
    fn improvement_percentages() {
        let mk = |mae: f64| MetricsReport {
            sample_count: 100,
            mae_spd: mae,
            mae_spd_std: 0.0,
            me_spd: 0.0,
            me_spd_std: 0.0,
            mae_dir: None,
            mae_dir_std: None,
            dir_sample_count: 0,
            strata: vec![],
        };
        let imp = improvement(&mk(2.245), &mk(1.374)).unwrap();
        assert!((imp - 38.8).abs() < 0.05, "improvement {imp}");
        assert_eq!(improvement(&mk(2.0), &mk(2.0)).unwrap(), 0.0);
        assert_eq!(improvement(&mk(2.0), &mk(1.0)).unwrap(), 50.0);
    }

    #[test]
    fn table_rendering_lines_up() {
        let rep = MetricsReport {
            sample_count: 1234,
            mae_spd: 2.2451,
            mae_spd_std: 0.5,
            me_spd: -1.1019,
            me_spd_std: 0.4,
            mae_dir: Some(14.234),
            mae_dir_std: Some(3.0),
            dir_sample_count: 1200,
            strata: vec![],
        };
        let txt = render_table(&[("raw".to_string(), rep)]);
        let lines: Vec<&str> = txt.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].len(), lines[1].len());
        assert!(lines[0].contains("MAE_spd"));
        assert!(lines[1].contains("2.245"));
        assert!(lines[1].contains("-1.102"));
        assert!(lines[1].contains("14.23"));
    }

    #[test]
    fn station_predictions_read_the_field() {
        let spec = crate::grid::GridSpec::new(110.0, 20.0, 0.125, 5, 5).unwrap();
        let times = hourly_times(Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap(), 2);
        let mut data = ndarray::Array4::<f32>::zeros((2, 5, 5, 2));
        for t in 0..2 {
            for y in 0..5 {
                for x in 0..5 {
                    data[[t, y, x, 0]] = (t * 25 + y * 5 + x) as f32 * 0.1;
                    data[[t, y, x, 1]] = 1.0;
                }
            }
        }
        let field = WindField::new(spec, times.clone(), data).unwrap();
        let template = StationSeries::new(
            vec![
                Station {
                    id: "A".into(),
                    lat: 20.2,
                    lon: 110.3,
                },
                Station {
                    id: "B".into(),
                    lat: 20.37,
                    lon: 110.11,
                },
            ],
            times,
            Array3::zeros((2, 2, 2)),
        )
        .unwrap();
        let preds = station_predictions(&field, &template).unwrap();
        for t in 0..2 {
            for (s, st) in template.stations.iter().enumerate() {
                let (u, v) = sample_at(&field, t, st.lon, st.lat).unwrap();
                assert_eq!(preds.data[[t, s, 0]], u as f32);
                assert_eq!(preds.data[[t, s, 1]], v as f32);
            }
        }
    }
}
