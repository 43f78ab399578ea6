//! Time-evolving gridded wind fields and station series.

use chrono::{DateTime, Duration, Utc};
use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Physical sanity cap on wind speed, m/s.
pub(crate) const MAX_SPEED: f64 = 150.0;

/// Gridded (u, v) wind in m/s: `data[t, y, x, c]`, channel 0 = u (eastward),
/// channel 1 = v (northward), hourly timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    pub spec: GridSpec,
    pub times: Vec<DateTime<Utc>>,
    pub data: Array4<f32>,
}

impl WindField {
    /// Construct and validate: shape agreement, hourly strictly-increasing
    /// times, finite values, speed cap.
    pub fn new(spec: GridSpec, times: Vec<DateTime<Utc>>, data: Array4<f32>) -> Result<Self> {
        spec.validate()?;
        let shape = data.shape();
        if shape != [times.len(), spec.ny, spec.nx, 2] {
            return Err(Error::ShapeMismatch(format!(
                "wind data {:?} vs expected [{}, {}, {}, 2]",
                shape,
                times.len(),
                spec.ny,
                spec.nx
            )));
        }
        validate_hourly(&times)?;
        for yx in data.rows() {
            let (u, v) = (yx[0] as f64, yx[1] as f64);
            if !u.is_finite() || !v.is_finite() {
                return Err(Error::InvalidInput("non-finite wind component".into()));
            }
            if u * u + v * v > MAX_SPEED * MAX_SPEED {
                return Err(Error::InvalidInput(format!(
                    "wind speed {:.1} m/s exceeds {MAX_SPEED} m/s cap",
                    (u * u + v * v).sqrt()
                )));
            }
        }
        Ok(WindField { spec, times, data })
    }

    /// Zero-filled field on the given spec and time axis.
    pub fn zeros(spec: GridSpec, times: Vec<DateTime<Utc>>) -> Result<Self> {
        let data = Array4::zeros((times.len(), spec.ny, spec.nx, 2));
        WindField::new(spec, times, data)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Index of a timestamp on this field's time axis.
    pub fn time_index(&self, t: DateTime<Utc>) -> Result<usize> {
        self.times
            .iter()
            .position(|&x| x == t)
            .ok_or_else(|| Error::Alignment(format!("time {t} not on field time axis")))
    }

    /// View of the field restricted to `[start, start + len)` timesteps.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<WindField> {
        if start + len > self.n_times() {
            return Err(Error::ShapeMismatch(format!(
                "time slice {start}..{} beyond {} steps",
                start + len,
                self.n_times()
            )));
        }
        Ok(WindField {
            spec: self.spec.clone(),
            times: self.times[start..start + len].to_vec(),
            data: self
                .data
                .slice(ndarray::s![start..start + len, .., .., ..])
                .to_owned(),
        })
    }
}

/// A geolocated observation station.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Per-station (u, v) series: `data[t, s, c]`, hourly timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub stations: Vec<Station>,
    pub times: Vec<DateTime<Utc>>,
    pub data: Array3<f32>,
}

impl StationSeries {
    pub fn new(
        stations: Vec<Station>,
        times: Vec<DateTime<Utc>>,
        data: Array3<f32>,
    ) -> Result<Self> {
        if data.shape() != [times.len(), stations.len(), 2] {
            return Err(Error::ShapeMismatch(format!(
                "station data {:?} vs expected [{}, {}, 2]",
                data.shape(),
                times.len(),
                stations.len()
            )));
        }
        validate_hourly(&times)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite station value".into()));
        }
        Ok(StationSeries {
            stations,
            times,
            data,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Series restricted to `[start, start + len)` timesteps.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<StationSeries> {
        if start + len > self.times.len() {
            return Err(Error::ShapeMismatch(format!(
                "time slice {start}..{} beyond {} steps",
                start + len,
                self.times.len()
            )));
        }
        Ok(StationSeries {
            stations: self.stations.clone(),
            times: self.times[start..start + len].to_vec(),
            data: self
                .data
                .slice(ndarray::s![start..start + len, .., ..])
                .to_owned(),
        })
    }
}

fn validate_hourly(times: &[DateTime<Utc>]) -> Result<()> {
    for w in times.windows(2) {
        if w[1] - w[0] != Duration::hours(1) {
            return Err(Error::InvalidInput(format!(
                "timestamps must be strictly increasing, 1 h apart: {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Hourly time axis of `n` steps starting at `start`.
pub fn hourly_times(start: DateTime<Utc>, n: usize) -> Vec<DateTime<Utc>> {
    (0..n).map(|i| start + Duration::hours(i as i64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap()
    }

    #[test]
    fn rejects_speed_over_cap() {
        let spec = GridSpec::new(0.0, 0.0, 0.5, 2, 2).unwrap();
        let mut data = Array4::zeros((1, 2, 2, 2));
        data[[0, 0, 0, 0]] = 200.0;
        assert!(WindField::new(spec, hourly_times(t0(), 1), data).is_err());
    }

    #[test]
    fn rejects_non_hourly_times() {
        let spec = GridSpec::new(0.0, 0.0, 0.5, 2, 2).unwrap();
        let times = vec![t0(), t0() + Duration::minutes(30)];
        let data = Array4::zeros((2, 2, 2, 2));
        assert!(WindField::new(spec, times, data).is_err());
    }

    #[test]
    fn time_slice_keeps_alignment() {
        let spec = GridSpec::new(0.0, 0.0, 0.5, 2, 2).unwrap();
        let f = WindField::zeros(spec, hourly_times(t0(), 5)).unwrap();
        let s = f.time_slice(2, 3).unwrap();
        assert_eq!(s.times[0], t0() + Duration::hours(2));
        assert_eq!(s.n_times(), 3);
    }
}
