//! On-disk formats: the ACDF grid container, station observation CSV,
//! network/fragility JSON, and risk CSV/GeoJSON exports.
//!
//! Grid container layout: magic `ACDF`, u16 LE format version, u32 LE header
//! length, UTF-8 JSON header `{spec, times, channels, dtype}`, then a
//! row-major little-endian f32 payload ordered `[t][y][x][c]` (y northward,
//! x eastward).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write as _};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use ndarray::{Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Station, StationSeries, TerrainGrid, WindField};
use crate::risk::{FragilityTable, Network, RiskSeries};

const MAGIC: &[u8; 4] = b"ACDF";
const FORMAT_VERSION: u16 = 1;

/// A grid container with arbitrary channels, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub spec: GridSpec,
    pub times: Vec<DateTime<Utc>>,
    pub channels: Vec<String>,
    /// `[t][y][x][c]`.
    pub data: Array4<f32>,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    spec: GridSpec,
    times: Vec<DateTime<Utc>>,
    channels: Vec<String>,
    dtype: String,
}

/// Write a grid container.
pub fn write_grid(path: &Path, grid: &GridData) -> Result<()> {
    let sh = grid.data.shape();
    if sh
        != [
            grid.times.len(),
            grid.spec.ny,
            grid.spec.nx,
            grid.channels.len(),
        ]
    {
        return Err(Error::ShapeMismatch(format!(
            "grid payload {sh:?} vs header [{}, {}, {}, {}]",
            grid.times.len(),
            grid.spec.ny,
            grid.spec.nx,
            grid.channels.len()
        )));
    }
    let header = serde_json::to_vec(&GridHeader {
        spec: grid.spec.clone(),
        times: grid.times.clone(),
        channels: grid.channels.clone(),
        dtype: "f32".into(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let standard = grid.data.as_standard_layout();
    let mut buf = Vec::with_capacity(standard.len() * 4);
    for v in standard.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Read a grid container.
pub fn read_grid(path: &Path) -> Result<GridData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format(format!("{}: truncated magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    let header: GridHeader = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!(
            "{}: unsupported dtype {}",
            path.display(),
            header.dtype
        )));
    }
    header.spec.validate()?;
    let (nt, ny, nx, nc) = (
        header.times.len(),
        header.spec.ny,
        header.spec.nx,
        header.channels.len(),
    );
    let n_vals = nt * ny * nx * nc;
    let mut payload = vec![0u8; n_vals * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let data = Array4::from_shape_vec((nt, ny, nx, nc), values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(GridData {
        spec: header.spec,
        times: header.times,
        channels: header.channels,
        data,
    })
}

/// Write a wind field as a `u`/`v` container.
pub fn write_wind(path: &Path, field: &WindField) -> Result<()> {
    write_grid(
        path,
        &GridData {
            spec: field.spec.clone(),
            times: field.times.clone(),
            channels: vec!["u".into(), "v".into()],
            data: field.data.clone(),
        },
    )
}

/// Read a wind field; the container must carry exactly `u`, `v`.
pub fn read_wind(path: &Path) -> Result<WindField> {
    let grid = read_grid(path)?;
    if grid.channels != ["u", "v"] {
        return Err(Error::Format(format!(
            "{}: expected channels [u, v], got {:?}",
            path.display(),
            grid.channels
        )));
    }
    WindField::new(grid.spec, grid.times, grid.data)
}

/// Write static terrain as an `elevation`/`roughness_class` container with a
/// single placeholder timestamp (terrain is time-invariant).
pub fn write_terrain(path: &Path, terrain: &TerrainGrid) -> Result<()> {
    let (ny, nx) = (terrain.spec.ny, terrain.spec.nx);
    let mut data = Array4::zeros((1, ny, nx, 2));
    for y in 0..ny {
        for x in 0..nx {
            data[[0, y, x, 0]] = terrain.elevation[[y, x]];
            data[[0, y, x, 1]] = terrain.roughness_class[[y, x]] as f32;
        }
    }
    write_grid(
        path,
        &GridData {
            spec: terrain.spec.clone(),
            times: vec![Utc.timestamp_opt(0, 0).unwrap()],
            channels: vec!["elevation".into(), "roughness_class".into()],
            data,
        },
    )
}

/// Read static terrain written by [`write_terrain`].
pub fn read_terrain(path: &Path) -> Result<TerrainGrid> {
    let grid = read_grid(path)?;
    if grid.channels != ["elevation", "roughness_class"] {
        return Err(Error::Format(format!(
            "{}: expected channels [elevation, roughness_class], got {:?}",
            path.display(),
            grid.channels
        )));
    }
    if grid.times.len() != 1 {
        return Err(Error::Format(format!(
            "{}: terrain must have exactly 1 timestep",
            path.display()
        )));
    }
    let (ny, nx) = (grid.spec.ny, grid.spec.nx);
    let elevation = grid
        .data
        .index_axis(Axis(0), 0)
        .index_axis(Axis(2), 0)
        .to_owned();
    let mut classes = Array2::zeros((ny, nx));
    for y in 0..ny {
        for x in 0..nx {
            let c = grid.data[[0, y, x, 1]];
            if c.fract() != 0.0 || !(0.0..=255.0).contains(&c) {
                return Err(Error::Format(format!(
                    "{}: roughness class {c} is not a small integer",
                    path.display()
                )));
            }
            classes[[y, x]] = c as u8;
        }
    }
    TerrainGrid::new(grid.spec, elevation, classes)
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Write station observations as CSV rows (station_id, lat, lon, time, u, v),
/// chronological, station-minor. Floats use shortest round-trip formatting so
/// reading the file back reproduces the series bit-exactly.
pub fn write_stations_csv(path: &Path, series: &StationSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["station_id", "lat", "lon", "time", "u", "v"])?;
    for (t, &time) in series.times.iter().enumerate() {
        for (s, st) in series.stations.iter().enumerate() {
            w.write_record([
                st.id.as_str(),
                &st.lat.to_string(),
                &st.lon.to_string(),
                &rfc3339(time),
                &series.data[[t, s, 0]].to_string(),
                &series.data[[t, s, 1]].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a station CSV; rows must form a complete (time x station) grid.
pub fn read_stations_csv(path: &Path) -> Result<StationSeries> {
    #[derive(Deserialize)]
    struct Row {
        station_id: String,
        lat: f64,
        lon: f64,
        time: DateTime<Utc>,
        u: f32,
        v: f32,
    }
    let mut stations: Vec<Station> = Vec::new();
    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut rows: Vec<(usize, usize, f32, f32)> = Vec::new();
    for record in csv::Reader::from_path(path)?.deserialize() {
        let row: Row = record?;
        let s = match stations.iter().position(|st| st.id == row.station_id) {
            Some(s) => {
                if stations[s].lat != row.lat || stations[s].lon != row.lon {
                    return Err(Error::Format(format!(
                        "station {} has inconsistent coordinates",
                        row.station_id
                    )));
                }
                s
            }
            None => {
                stations.push(Station {
                    id: row.station_id,
                    lat: row.lat,
                    lon: row.lon,
                });
                stations.len() - 1
            }
        };
        let t = match times.iter().position(|&t| t == row.time) {
            Some(t) => t,
            None => {
                times.push(row.time);
                times.len() - 1
            }
        };
        rows.push((t, s, row.u, row.v));
    }
    let (nt, ns) = (times.len(), stations.len());
    if rows.len() != nt * ns {
        return Err(Error::Format(format!(
            "station CSV is not a complete grid: {} rows for {nt} times x {ns} stations",
            rows.len()
        )));
    }
    let mut data = Array3::from_elem((nt, ns, 2), f32::NAN);
    for (t, s, u, v) in rows {
        if !data[[t, s, 0]].is_nan() {
            return Err(Error::Format(format!(
                "duplicate station CSV row for ({}, {})",
                stations[s].id, times[t]
            )));
        }
        data[[t, s, 0]] = u;
        data[[t, s, 1]] = v;
    }
    StationSeries::new(stations, times, data)
}

/// Write a network as pretty-printed JSON.
pub fn write_network_json(path: &Path, network: &Network) -> Result<()> {
    network.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, network)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_network_json(path: &Path) -> Result<Network> {
    let network: Network = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    network.validate()?;
    Ok(network)
}

pub fn write_fragility_json(path: &Path, table: &FragilityTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, table)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_fragility_json(path: &Path) -> Result<FragilityTable> {
    let raw: FragilityTable = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    FragilityTable::new(raw.angles, raw.mu, raw.sigma)
}

/// Round to `digits` significant decimal digits (reporting precision for
/// probability outputs).
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - mag);
    (x * factor).round() / factor
}

fn fmt_prob(p: f64) -> String {
    round_sig(p, 6).to_string()
}

/// Write per-tower cumulative probabilities: tower_id, line_id, time,
/// probability (6 significant digits).
pub fn write_risk_towers_csv(path: &Path, risk: &RiskSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tower_id", "line_id", "time", "probability"])?;
    for tower in &risk.towers {
        for (t, &p) in tower.probs.iter().enumerate() {
            w.write_record([
                tower.tower_id.as_str(),
                tower.line_id.as_str(),
                &rfc3339(risk.times[t]),
                &fmt_prob(p),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write per-line cumulative probabilities: line_id, time, probability.
pub fn write_risk_lines_csv(path: &Path, risk: &RiskSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["line_id", "time", "probability"])?;
    for line in &risk.lines {
        for (t, &p) in line.probs.iter().enumerate() {
            w.write_record([line.line_id.as_str(), &rfc3339(risk.times[t]), &fmt_prob(p)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Risk forecast as a GeoJSON FeatureCollection: one LineString per line with
/// max_prob, first_exceed_time, and flagged properties.
pub fn risk_geojson(risk: &RiskSeries, network: &Network) -> Result<serde_json::Value> {
    let features: Vec<serde_json::Value> = risk
        .lines
        .iter()
        .map(|lr| {
            let line = network
                .lines
                .iter()
                .find(|l| l.id == lr.line_id)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("line {} missing from network", lr.line_id))
                })?;
            let coords: Vec<[f64; 2]> = line.towers.iter().map(|t| [t.lon, t.lat]).collect();
            Ok(serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {
                    "line_id": lr.line_id,
                    "max_prob": round_sig(lr.max_prob, 6),
                    "first_exceed_time": lr.first_exceed_time.map(rfc3339),
                    "flagged": lr.flagged,
                },
            }))
        })
        .collect::<Result<_>>()?;
    Ok(serde_json::json!({
        "type": "FeatureCollection",
        "features": features,
    }))
}

pub fn write_risk_geojson(path: &Path, risk: &RiskSeries, network: &Network) -> Result<()> {
    let doc = risk_geojson(risk, network)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
