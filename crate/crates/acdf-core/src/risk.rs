//! Tower/line failure-probability forecasting: angle-dependent lognormal
//! fragility, Monte Carlo resistance sampling with an analytic cross-check,
//! survival updates, and series-system line aggregation.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::{sample_at, wind_dir_deg, wind_speed, WindField};

/// Fragility parameters per wind attack angle: lognormal capacity in wind
/// speed units, median exp(mu), log-space spread sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilityTable {
    /// Attack angles in degrees, strictly increasing, spanning [0, 90].
    pub angles: Vec<f64>,
    /// ln(m/s) capacity medians per angle.
    pub mu: Vec<f64>,
    /// Lognormal sigma per angle.
    pub sigma: Vec<f64>,
}

impl FragilityTable {
    pub fn new(angles: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if angles.len() < 2 || angles.len() != mu.len() || angles.len() != sigma.len() {
            return Err(Error::InvalidInput(
                "fragility table needs >= 2 aligned (angle, mu, sigma) rows".into(),
            ));
        }
        if angles[0] != 0.0 || *angles.last().unwrap() != 90.0 {
            return Err(Error::InvalidInput(
                "fragility angles must span [0, 90] degrees".into(),
            ));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "fragility angles must be strictly increasing".into(),
            ));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput(
                "fragility needs finite mu and sigma > 0".into(),
            ));
        }
        Ok(FragilityTable { angles, mu, sigma })
    }

    /// (mu, sigma) at an attack angle, linearly interpolated between table
    /// rows; exact at table angles.
    pub fn params(&self, theta_deg: f64) -> Result<(f64, f64)> {
        if !(0.0..=90.0).contains(&theta_deg) {
            return Err(Error::InvalidInput(format!(
                "attack angle {theta_deg} outside [0, 90]"
            )));
        }
        let i = match self
            .angles
            .iter()
            .position(|&a| theta_deg <= a)
            .expect("angles span [0, 90]")
        {
            0 => return Ok((self.mu[0], self.sigma[0])),
            i => i,
        };
        let (a0, a1) = (self.angles[i - 1], self.angles[i]);
        if theta_deg == a1 {
            return Ok((self.mu[i], self.sigma[i]));
        }
        let w = (theta_deg - a0) / (a1 - a0);
        Ok((
            self.mu[i - 1] + w * (self.mu[i] - self.mu[i - 1]),
            self.sigma[i - 1] + w * (self.sigma[i] - self.sigma[i - 1]),
        ))
    }
}

impl Default for FragilityTable {
    /// Suspension-tower capacity at 0/30/45/60/90 degrees.
    fn default() -> Self {
        FragilityTable::new(
            vec![0.0, 30.0, 45.0, 60.0, 90.0],
            vec![2.708, 2.996, 3.219, 3.401, 3.555],
            vec![0.03; 5],
        )
        .expect("default table is valid")
    }
}

/// Acute angle between wind direction and span azimuth, folded to [0, 90].
pub fn attack_angle(wind_dir_deg: f64, span_azimuth_deg: f64) -> f64 {
    let d = (wind_dir_deg - span_azimuth_deg).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Marginal (resistance-integrated) failure probability at one timestep:
/// Phi((ln v - mu) / sigma), 0 in calm air.
pub fn marginal_failure_prob(v: f64, theta_deg: f64, table: &FragilityTable) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::InvalidInput(format!("wind speed {v} < 0")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let (mu, sigma) = table.params(theta_deg)?;
    Ok(std_normal().cdf((v.ln() - mu) / sigma))
}

/// Failure indicator given the latent resistance draw `z`: capacity is
/// exp(mu + sigma * z), failure iff demand reaches it.
pub fn conditional_failure(z: f64, v: f64, theta_deg: f64, table: &FragilityTable) -> Result<bool> {
    if !(v >= 0.0) {
        return Err(Error::InvalidInput(format!("wind speed {v} < 0")));
    }
    if v == 0.0 {
        return Ok(false);
    }
    let (mu, sigma) = table.params(theta_deg)?;
    Ok(v >= (mu + sigma * z).exp())
}

/// One step of the cumulative-failure recursion: failure is absorbing.
pub fn survival_update(p_prev: f64, p_inst: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_prev) || !(0.0..=1.0).contains(&p_inst) {
        return Err(Error::InvalidInput(format!(
            "probabilities ({p_prev}, {p_inst}) outside [0, 1]"
        )));
    }
    Ok(p_prev + (1.0 - p_prev) * p_inst)
}

/// Demand series at one tower: wind speed and attack angle per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerExposure {
    pub speed: Vec<f64>,
    pub angle_deg: Vec<f64>,
}

impl TowerExposure {
    pub fn new(speed: Vec<f64>, angle_deg: Vec<f64>) -> Result<Self> {
        if speed.len() != angle_deg.len() {
            return Err(Error::ShapeMismatch(
                "exposure speed/angle lengths differ".into(),
            ));
        }
        if speed.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput("negative exposure speed".into()));
        }
        if angle_deg.iter().any(|&a| !(0.0..=90.0).contains(&a)) {
            return Err(Error::InvalidInput("attack angle outside [0, 90]".into()));
        }
        Ok(TowerExposure { speed, angle_deg })
    }

    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    /// Standardized log-demand margins (ln v - mu)/sigma per step; -inf in
    /// calm air. A latent draw z fails by step t iff z <= max margin so far.
    fn margins(&self, table: &FragilityTable) -> Result<Vec<f64>> {
        self.speed
            .iter()
            .zip(&self.angle_deg)
            .map(|(&v, &a)| {
                let (mu, sigma) = table.params(a)?;
                Ok(if v > 0.0 {
                    (v.ln() - mu) / sigma
                } else {
                    f64::NEG_INFINITY
                })
            })
            .collect()
    }
}

/// Running maxima of a margin series.
fn running_max(margins: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(margins.len());
    let mut m = f64::NEG_INFINITY;
    for &x in margins {
        m = m.max(x);
        out.push(m);
    }
    out
}

/// Monte Carlo cumulative failure probabilities P_t for one tower.
///
/// One time-invariant latent resistance draw per sample; a sample has failed
/// by t iff its capacity was reached at any step <= t, so counts are exact
/// integer statistics and the result is order- and thread-independent given
/// (seed, stream).
pub fn tower_risk_mc(
    exposure: &TowerExposure,
    table: &FragilityTable,
    mc_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    if mc_samples == 0 {
        return Err(Error::InvalidInput("mc_samples must be >= 1".into()));
    }
    let cum_margin = running_max(&exposure.margins(table)?);
    let nt = cum_margin.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // first_fail[t] = number of samples whose first failure step is t.
    let mut first_fail = vec![0u64; nt];
    for _ in 0..mc_samples {
        let z: f64 = rng.sample(StandardNormal);
        if let Some(t) = cum_margin.iter().position(|&m| z <= m) {
            first_fail[t] += 1;
        }
    }
    let mut failed = 0u64;
    let probs = first_fail
        .iter()
        .map(|&f| {
            failed += f;
            failed as f64 / mc_samples as f64
        })
        .collect();
    Ok(probs)
}

/// Closed-form counterpart of [`tower_risk_mc`]: P_t = Phi(max margin up to t).
pub fn tower_risk_analytic(exposure: &TowerExposure, table: &FragilityTable) -> Result<Vec<f64>> {
    let n = std_normal();
    Ok(running_max(&exposure.margins(table)?)
        .into_iter()
        .map(|m| if m.is_finite() { n.cdf(m) } else { 0.0 })
        .collect())
}

/// How tower resistances co-vary within a line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Conditionally independent tower resistances (default).
    Independent,
    /// Common-factor latent model: z_j = sqrt(rho) z0 + sqrt(1-rho) eps_j.
    CommonFactor { rho: f64 },
}

/// Series-system line probability from marginal tower probabilities.
pub fn line_risk_independent(tower_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let nt = tower_probs
        .first()
        .ok_or_else(|| Error::InvalidInput("line has no towers".into()))?
        .len();
    if tower_probs.iter().any(|p| p.len() != nt) {
        return Err(Error::ShapeMismatch(
            "tower probability series lengths differ".into(),
        ));
    }
    Ok((0..nt)
        .map(|t| {
            let survive: f64 = tower_probs.iter().map(|p| 1.0 - p[t]).product();
            1.0 - survive
        })
        .collect())
}

/// Series-system line probability under the common-factor resistance model,
/// by joint Monte Carlo over the whole line.
pub fn line_risk_correlated(
    exposures: &[TowerExposure],
    table: &FragilityTable,
    rho: f64,
    mc_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho {rho} outside [0, 1]")));
    }
    if exposures.is_empty() {
        return Err(Error::InvalidInput("line has no towers".into()));
    }
    if mc_samples == 0 {
        return Err(Error::InvalidInput("mc_samples must be >= 1".into()));
    }
    let nt = exposures[0].len();
    if exposures.iter().any(|e| e.len() != nt) {
        return Err(Error::ShapeMismatch("exposure lengths differ".into()));
    }
    let cum_margins: Vec<Vec<f64>> = exposures
        .iter()
        .map(|e| Ok(running_max(&e.margins(table)?)))
        .collect::<Result<_>>()?;
    let (w0, w1) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut first_fail = vec![0u64; nt];
    for _ in 0..mc_samples {
        let z0: f64 = rng.sample(StandardNormal);
        // Earliest failure step over all towers in this sample. Tower draws
        // happen in fixed order so the stream is consumed deterministically.
        let mut first: Option<usize> = None;
        for margins in &cum_margins {
            let eps: f64 = rng.sample(StandardNormal);
            let z = w0 * z0 + w1 * eps;
            if let Some(t) = margins.iter().position(|&m| z <= m) {
                first = Some(first.map_or(t, |f| f.min(t)));
            }
        }
        if let Some(t) = first {
            first_fail[t] += 1;
        }
    }
    let mut failed = 0u64;
    let probs = first_fail
        .iter()
        .map(|&f| {
            failed += f;
            failed as f64 / mc_samples as f64
        })
        .collect();
    Ok(probs)
}

/// A transmission tower: location and the azimuth of its span toward the
/// next tower, degrees clockwise from north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub span_azimuth: f64,
}

/// An ordered chain of towers acting as a series system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub towers: Vec<Tower>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub lines: Vec<Line>,
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        let mut tower_ids = std::collections::HashSet::new();
        let mut line_ids = std::collections::HashSet::new();
        for line in &self.lines {
            if !line_ids.insert(line.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate line id {}",
                    line.id
                )));
            }
            if line.towers.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "line {} has fewer than 2 towers",
                    line.id
                )));
            }
            for t in &line.towers {
                if !tower_ids.insert(t.id.as_str()) {
                    return Err(Error::InvalidInput(format!("duplicate tower id {}", t.id)));
                }
                if !(0.0..360.0).contains(&t.span_azimuth) {
                    return Err(Error::InvalidInput(format!(
                        "tower {} azimuth {} outside [0, 360)",
                        t.id, t.span_azimuth
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_towers(&self) -> usize {
        self.lines.iter().map(|l| l.towers.len()).sum()
    }
}

/// Cumulative failure series for one tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerRisk {
    pub tower_id: String,
    pub line_id: String,
    pub probs: Vec<f64>,
}

/// Cumulative failure series for one line, with threshold exceedance flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRisk {
    pub line_id: String,
    pub probs: Vec<f64>,
    pub max_prob: f64,
    pub first_exceed_time: Option<DateTime<Utc>>,
    pub flagged: bool,
}

/// Full network risk forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSeries {
    pub times: Vec<DateTime<Utc>>,
    pub towers: Vec<TowerRisk>,
    pub lines: Vec<LineRisk>,
    pub mc_samples: usize,
    pub seed: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub mc_samples: usize,
    pub seed: u64,
    /// Operational probability threshold for flagging a line.
    pub threshold: f64,
    pub correlation: CorrelationMode,
    /// Exposure substeps per input timestep (piecewise-constant demand).
    pub substeps: usize,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            mc_samples: 100_000,
            seed: 0,
            threshold: 0.01,
            correlation: CorrelationMode::Independent,
            substeps: 1,
        }
    }
}

/// RNG stream for an asset id: per-asset streams keep Monte Carlo draws
/// independent of iteration order and thread count.
fn asset_stream(id: &str) -> u64 {
    crate::util::fnv1a64(id.as_bytes())
}

/// Exposure for a tower sampled from a wind field (with optional substeps).
fn tower_exposure(wind: &WindField, tower: &Tower, substeps: usize) -> Result<TowerExposure> {
    let nt = wind.n_times();
    let mut speed = Vec::with_capacity(nt * substeps);
    let mut angle = Vec::with_capacity(nt * substeps);
    for t in 0..nt {
        let (u, v) = sample_at(wind, t, tower.lon, tower.lat).map_err(|e| match e {
            Error::OutOfDomain { lon, lat, .. } => Error::OutOfDomain {
                context: format!("tower {}", tower.id),
                lon,
                lat,
            },
            other => other,
        })?;
        let s = wind_speed(u, v);
        let a = attack_angle(wind_dir_deg(u, v), tower.span_azimuth);
        for _ in 0..substeps {
            speed.push(s);
            angle.push(a);
        }
    }
    TowerExposure::new(speed, angle)
}

/// End-to-end network risk: sample exposure at every tower, run the per-tower
/// Monte Carlo, aggregate lines, and flag threshold exceedances.
pub fn risk_forecast(
    wind: &WindField,
    network: &Network,
    table: &FragilityTable,
    config: &RiskConfig,
) -> Result<RiskSeries> {
    network.validate()?;
    if config.substeps == 0 {
        return Err(Error::InvalidInput("substeps must be >= 1".into()));
    }
    let outside: Vec<&str> = network
        .lines
        .iter()
        .flat_map(|l| &l.towers)
        .filter(|t| !wind.spec.contains(t.lon, t.lat))
        .map(|t| t.id.as_str())
        .collect();
    if !outside.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} towers outside the wind domain (first: {})",
            outside.len(),
            outside[0]
        )));
    }
    let times: Vec<DateTime<Utc>> = if config.substeps == 1 {
        wind.times.clone()
    } else {
        let step = Duration::minutes(60 / config.substeps as i64);
        wind.times
            .iter()
            .flat_map(|&t0| (0..config.substeps).map(move |k| t0 + step * k as i32))
            .collect()
    };

    // Tower work items are independent; per-tower RNG streams keep results
    // identical under any parallel schedule.
    let tower_jobs: Vec<(usize, &Tower)> = network
        .lines
        .iter()
        .enumerate()
        .flat_map(|(li, l)| l.towers.iter().map(move |t| (li, t)))
        .collect();
    let tower_results: Vec<(usize, TowerRisk, Vec<f64>)> = tower_jobs
        .par_iter()
        .map(|&(li, tower)| {
            let exposure = tower_exposure(wind, tower, config.substeps)?;
            let probs = tower_risk_mc(
                &exposure,
                table,
                config.mc_samples,
                config.seed,
                asset_stream(&tower.id),
            )?;
            Ok((
                li,
                TowerRisk {
                    tower_id: tower.id.clone(),
                    line_id: network.lines[li].id.clone(),
                    probs: probs.clone(),
                },
                probs,
            ))
        })
        .collect::<Result<_>>()?;

    let mut per_line_probs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); network.lines.len()];
    let mut towers = Vec::with_capacity(tower_results.len());
    for (li, tr, probs) in tower_results {
        per_line_probs[li].push(probs);
        towers.push(tr);
    }

    let line_probs: Vec<Vec<f64>> = network
        .lines
        .par_iter()
        .enumerate()
        .map(|(li, line)| match config.correlation {
            CorrelationMode::Independent => line_risk_independent(&per_line_probs[li]),
            CorrelationMode::CommonFactor { rho } => {
                let exposures: Vec<TowerExposure> = line
                    .towers
                    .iter()
                    .map(|t| tower_exposure(wind, t, config.substeps))
                    .collect::<Result<_>>()?;
                line_risk_correlated(
                    &exposures,
                    table,
                    rho,
                    config.mc_samples,
                    config.seed,
                    asset_stream(&line.id),
                )
            }
        })
        .collect::<Result<_>>()?;

    let lines = network
        .lines
        .iter()
        .zip(line_probs)
        .map(|(line, probs)| {
            let max_prob = probs.iter().cloned().fold(0.0f64, f64::max);
            let first_exceed = probs
                .iter()
                .position(|&p| p > config.threshold)
                .map(|i| times[i]);
            LineRisk {
                line_id: line.id.clone(),
                flagged: max_prob > config.threshold,
                first_exceed_time: first_exceed,
                max_prob,
                probs,
            }
        })
        .collect();

    Ok(RiskSeries {
        times,
        towers,
        lines,
        mc_samples: config.mc_samples,
        seed: config.seed,
        threshold: config.threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_angle_folding() {
        assert_eq!(attack_angle(90.0, 90.0), 0.0);
        assert_eq!(attack_angle(0.0, 90.0), 90.0);
        assert_eq!(attack_angle(210.0, 90.0), 60.0);
        assert_eq!(attack_angle(350.0, 10.0), 20.0);
    }

    #[test]
    fn fragility_interpolation() {
        let table = FragilityTable::default();
        assert_eq!(table.params(45.0).unwrap(), (3.219, 0.03));
        assert_eq!(table.params(0.0).unwrap(), (2.708, 0.03));
        assert_eq!(table.params(90.0).unwrap(), (3.555, 0.03));
        let (mu15, _) = table.params(15.0).unwrap();
        assert!((mu15 - 2.852).abs() < 1e-12);
        assert!(table.params(-1.0).is_err());
        assert!(table.params(90.5).is_err());
    }

    #[test]
    fn marginal_medians_and_fig_curve() {
        let table = FragilityTable::default();
        for (&theta, &mu) in table.angles.iter().zip(&table.mu) {
            let p = marginal_failure_prob(mu.exp(), theta, &table).unwrap();
            assert!((p - 0.5).abs() < 1e-9, "median at {theta} deg: {p}");
        }
        // The 45-degree curve crosses ~0.5 near 25 m/s.
        let p25 = marginal_failure_prob(25.0, 45.0, &table).unwrap();
        assert!((p25 - 0.498).abs() < 5e-4, "{p25}");
        assert_eq!(marginal_failure_prob(0.0, 45.0, &table).unwrap(), 0.0);
    }

    #[test]
    fn conditional_threshold_at_z0() {
        let table = FragilityTable::default();
        assert!(conditional_failure(0.0, 26.0, 45.0, &table).unwrap());
        assert!(!conditional_failure(0.0, 24.0, 45.0, &table).unwrap());
        assert!(!conditional_failure(-5.0, 0.0, 45.0, &table).unwrap());
    }

    #[test]
    fn survival_update_algebra() {
        assert_eq!(survival_update(0.0, 0.3).unwrap(), 0.3);
        assert_eq!(survival_update(0.5, 0.5).unwrap(), 0.75);
        assert_eq!(survival_update(1.0, 0.7).unwrap(), 1.0);
        assert!(survival_update(1.2, 0.0).is_err());
        // Composing updates equals 1 - prod(1 - p_inst).
        let ps = [0.1, 0.25, 0.0, 0.6];
        let composed = ps
            .iter()
            .fold(0.0, |acc, &p| survival_update(acc, p).unwrap());
        let direct = 1.0 - ps.iter().map(|p| 1.0 - p).product::<f64>();
        assert!((composed - direct).abs() < 1e-15);
    }

    #[test]
    fn mc_matches_analytic_oracle() {
        let table = FragilityTable::default();
        let exp = TowerExposure::new(vec![20.0, 30.0, 25.0], vec![45.0; 3]).unwrap();
        let analytic = tower_risk_analytic(&exp, &table).unwrap();
        // ln 30 is ~6 sigma above mu(45): effectively certain failure by t=2.
        assert!(analytic[1] > 0.999999);
        assert_eq!(analytic[1], analytic[2]); // 25 m/s adds no new max
        let mc = tower_risk_mc(&exp, &table, 100_000, 7, 0).unwrap();
        for (m, a) in mc.iter().zip(&analytic) {
            assert!((m - a).abs() <= 0.005, "mc {m} vs analytic {a}");
        }
        // Demand at the median capacity: first-step probability ~0.5.
        let med = TowerExposure::new(vec![3.219f64.exp()], vec![45.0]).unwrap();
        let mc = tower_risk_mc(&med, &table, 100_000, 11, 0).unwrap();
        assert!((mc[0] - 0.5).abs() <= 0.005, "{}", mc[0]);
    }

    #[test]
    fn mc_is_deterministic_per_stream() {
        let table = FragilityTable::default();
        let exp = TowerExposure::new(vec![24.0, 26.0], vec![45.0; 2]).unwrap();
        let a = tower_risk_mc(&exp, &table, 10_000, 42, 5).unwrap();
        let b = tower_risk_mc(&exp, &table, 10_000, 42, 5).unwrap();
        let c = tower_risk_mc(&exp, &table, 10_000, 42, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn line_independent_oracle() {
        let probs = vec![vec![0.1], vec![0.2]];
        let line = line_risk_independent(&probs).unwrap();
        assert!((line[0] - 0.28).abs() < 1e-12);
        let absorbed = line_risk_independent(&[vec![1.0], vec![0.3]]).unwrap();
        assert_eq!(absorbed[0], 1.0);
    }

    #[test]
    fn fully_correlated_identical_towers_collapse_to_one() {
        let table = FragilityTable::default();
        let exp = TowerExposure::new(vec![24.5, 25.5], vec![45.0; 2]).unwrap();
        let single = tower_risk_analytic(&exp, &table).unwrap();
        let joint =
            line_risk_correlated(&[exp.clone(), exp.clone(), exp], &table, 1.0, 200_000, 3, 9)
                .unwrap();
        for (j, s) in joint.iter().zip(&single) {
            assert!((j - s).abs() <= 0.005, "joint {j} vs single {s}");
        }
    }

    #[test]
    fn substeps_preserve_hourly_probabilities() {
        // Piecewise-constant demand: denser steps add no new running maxima.
        let table = FragilityTable::default();
        let spec = crate::grid::GridSpec::new(0.0, 0.0, 0.005, 11, 11).unwrap();
        let times = crate::grid::hourly_times(
            chrono::TimeZone::with_ymd_and_hms(&Utc, 2020, 8, 3, 0, 0, 0).unwrap(),
            3,
        );
        let mut data = ndarray::Array4::zeros((3, 11, 11, 2));
        for (t, v) in [(0usize, 20.0f32), (1, 26.0), (2, 23.0)] {
            data.slice_mut(ndarray::s![t, .., .., 0]).fill(v);
        }
        let wind = WindField::new(spec, times, data).unwrap();
        let network = Network {
            lines: vec![Line {
                id: "L1".into(),
                towers: vec![
                    Tower {
                        id: "T1".into(),
                        lat: 0.01,
                        lon: 0.01,
                        span_azimuth: 0.0,
                    },
                    Tower {
                        id: "T2".into(),
                        lat: 0.02,
                        lon: 0.02,
                        span_azimuth: 90.0,
                    },
                ],
            }],
        };
        let base = risk_forecast(&wind, &network, &table, &RiskConfig::default()).unwrap();
        let dense = risk_forecast(
            &wind,
            &network,
            &table,
            &RiskConfig {
                substeps: 2,
                ..RiskConfig::default()
            },
        )
        .unwrap();
        assert_eq!(dense.times.len(), 6);
        for (tr_base, tr_dense) in base.towers.iter().zip(&dense.towers) {
            for t in 0..3 {
                // Hourly mark t is dense index 2t + 1 (end of that hour).
                assert_eq!(tr_base.probs[t], tr_dense.probs[2 * t + 1]);
            }
        }
    }

    #[test]
    fn calm_field_produces_no_flags() {
        let table = FragilityTable::default();
        let spec = crate::grid::GridSpec::new(0.0, 0.0, 0.005, 11, 11).unwrap();
        let times = crate::grid::hourly_times(
            chrono::TimeZone::with_ymd_and_hms(&Utc, 2020, 8, 3, 0, 0, 0).unwrap(),
            2,
        );
        let wind = WindField::zeros(spec, times).unwrap();
        let network = Network {
            lines: vec![Line {
                id: "L1".into(),
                towers: vec![
                    Tower {
                        id: "T1".into(),
                        lat: 0.01,
                        lon: 0.01,
                        span_azimuth: 10.0,
                    },
                    Tower {
                        id: "T2".into(),
                        lat: 0.03,
                        lon: 0.03,
                        span_azimuth: 200.0,
                    },
                ],
            }],
        };
        let risk = risk_forecast(&wind, &network, &table, &RiskConfig::default()).unwrap();
        assert!(risk
            .towers
            .iter()
            .all(|t| t.probs.iter().all(|&p| p == 0.0)));
        assert!(risk.lines.iter().all(|l| !l.flagged));
        assert!(risk.lines[0].first_exceed_time.is_none());
    }

    #[test]
    fn out_of_domain_tower_is_reported() {
        let table = FragilityTable::default();
        let spec = crate::grid::GridSpec::new(0.0, 0.0, 0.005, 11, 11).unwrap();
        let times = crate::grid::hourly_times(
            chrono::TimeZone::with_ymd_and_hms(&Utc, 2020, 8, 3, 0, 0, 0).unwrap(),
            1,
        );
        let wind = WindField::zeros(spec, times).unwrap();
        let network = Network {
            lines: vec![Line {
                id: "L1".into(),
                towers: vec![
                    Tower {
                        id: "far".into(),
                        lat: 5.0,
                        lon: 5.0,
                        span_azimuth: 0.0,
                    },
                    Tower {
                        id: "T2".into(),
                        lat: 0.01,
                        lon: 0.01,
                        span_azimuth: 0.0,
                    },
                ],
            }],
        };
        let err = risk_forecast(&wind, &network, &table, &RiskConfig::default()).unwrap_err();
        assert!(err.to_string().contains("far"), "{err}");
    }
}
