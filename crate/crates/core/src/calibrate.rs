//! Mechanism parameters estimated from an adoption log.
//!
//! Exposure of an adopter is the number of followees that adopted strictly
//! before its adoption day (the state at the end of the previous day). Only
//! adopters outside shock periods feed the transmission and threshold pools.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adoption::AdoptionLog;
use crate::error::{LabError, Result};
use crate::graph::DirectedGraph;
use crate::rng::{self, Domain};
use crate::shocks::{Day, ShockSchedule};

/// Default mean daily check-in probability.
pub const DEFAULT_MEAN_ACTIVITY: f64 = 0.032;
const MIN_ACTIVITY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl PoolSummary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count.max(1) as f64;
        PoolSummary {
            count,
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Empirical distribution resampled per node at simulation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub values: Vec<f64>,
    pub summary: PoolSummary,
}

impl Pool {
    pub fn new(values: Vec<f64>) -> Self {
        let summary = PoolSummary::of(&values);
        Pool { values, summary }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[rng.random_range(0..self.values.len())]
    }
}

/// Exposure at adoption eve for every adopter, in log order.
pub(crate) fn eve_exposures(g: &DirectedGraph, times: &[Option<Day>], log: &AdoptionLog) -> Vec<usize> {
    log.records()
        .iter()
        .map(|r| {
            g.followees(r.node)
                .iter()
                .filter(|&&v| matches!(times[v], Some(tv) if tv < r.day))
                .count()
        })
        .collect()
}

/// `β = 1/m` for each non-shock adopter with exposure `m > 0`.
pub fn calibrate_transmission(g: &DirectedGraph, log: &AdoptionLog) -> Result<Pool> {
    if log.is_empty() {
        return Err(LabError::insufficient("adoption log is empty"));
    }
    let times = log.adoption_times(g.node_count())?;
    let m = eve_exposures(g, &times, log);
    let values: Vec<f64> = log
        .records()
        .iter()
        .zip(&m)
        .filter(|(r, &m)| m > 0 && !log.is_shock_day(r.day))
        .map(|(_, &m)| 1.0 / m as f64)
        .collect();
    if values.is_empty() {
        return Err(LabError::insufficient("no non-shock adopter had a positive exposure"));
    }
    Ok(Pool::new(values))
}

/// `φ = m/k` for each non-shock adopter with `k > 0` and `m > 0`.
pub fn calibrate_thresholds(g: &DirectedGraph, log: &AdoptionLog) -> Result<Pool> {
    if log.is_empty() {
        return Err(LabError::insufficient("adoption log is empty"));
    }
    if log.records().iter().all(|r| g.in_degree(r.node) == 0) {
        return Err(LabError::insufficient("every adopter has in-degree zero"));
    }
    let times = log.adoption_times(g.node_count())?;
    let m = eve_exposures(g, &times, log);
    let values: Vec<f64> = log
        .records()
        .iter()
        .zip(&m)
        .filter(|(r, &m)| m > 0 && g.in_degree(r.node) > 0 && !log.is_shock_day(r.day))
        .map(|(r, &m)| m as f64 / g.in_degree(r.node) as f64)
        .collect();
    if values.is_empty() {
        return Err(LabError::insufficient("no non-shock adopter had exposed followees"));
    }
    Ok(Pool::new(values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundRate {
    pub rate: f64,
    pub zero_exposure_adopters: usize,
    pub susceptible_days: u64,
}

/// Zero-exposure non-shock adopters divided by total susceptible-days.
///
/// An adopter on day `t` contributes `t - first_day` susceptible-days; a
/// node that never adopts contributes the whole horizon.
pub fn calibrate_background(g: &DirectedGraph, log: &AdoptionLog) -> Result<BackgroundRate> {
    let n = g.node_count();
    let times = log.adoption_times(n)?;
    let m = eve_exposures(g, &times, log);
    let zero = log
        .records()
        .iter()
        .zip(&m)
        .filter(|(r, &m)| m == 0 && !log.is_shock_day(r.day))
        .count();
    let horizon = log.horizon_days();
    let susceptible_days: u64 = times
        .iter()
        .map(|t| match t {
            Some(d) => u64::from(d - log.first_day),
            None => horizon,
        })
        .sum();
    if susceptible_days == 0 {
        return Err(LabError::insufficient("no susceptible-days in the horizon"));
    }
    Ok(BackgroundRate {
        rate: zero as f64 / susceptible_days as f64,
        zero_exposure_adopters: zero,
        susceptible_days,
    })
}

/// `a_i ∝ log(1 + c_i)` scaled so the mean equals `target_mean`, capped at 1.
///
/// When the cap binds the scale is re-solved by bisection so the capped
/// values still average to the target. Zero-volume nodes get a small floor.
pub fn calibrate_activity(post_counts: &[f64], target_mean: f64) -> Result<Vec<f64>> {
    if post_counts.is_empty() {
        return Err(LabError::insufficient("no posting volumes"));
    }
    if post_counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(LabError::invalid("posting volumes must be finite and non-negative"));
    }
    if !(target_mean > 0.0 && target_mean <= 1.0) {
        return Err(LabError::invalid(format!("target mean activity {target_mean} outside (0, 1]")));
    }
    let logs: Vec<f64> = post_counts.iter().map(|c| c.ln_1p()).collect();
    let total: f64 = logs.iter().sum();
    if total <= 0.0 {
        return Err(LabError::insufficient("all posting volumes are zero"));
    }
    let n = logs.len() as f64;
    let capped_mean = |s: f64| logs.iter().map(|l| (s * l).min(1.0)).sum::<f64>() / n;

    let mut scale = target_mean * n / total;
    if capped_mean(scale) < target_mean - 1e-15 {
        let (mut lo, mut hi) = (scale, scale);
        while capped_mean(hi) < target_mean {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(LabError::invalid("target mean unreachable under the cap of 1"));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if capped_mean(mid) < target_mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        scale = hi;
    }
    Ok(logs.iter().map(|l| (scale * l).clamp(MIN_ACTIVITY, 1.0)).collect())
}

/// Per-node simulation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub activity: Vec<f64>,
    pub r: f64,
    pub shock_schedule: ShockSchedule,
    /// Daily adoption probability on the day of the largest peak.
    pub shock_prob_at_peak: f64,
}

impl MechanismParams {
    /// Homogeneous parameters, mostly for tests and examples.
    pub fn uniform(n: usize, beta: f64, phi: f64, activity: f64, r: f64) -> Self {
        MechanismParams {
            beta: vec![beta; n],
            phi: vec![phi; n],
            activity: vec![activity; n],
            r,
            shock_schedule: ShockSchedule::empty(),
            shock_prob_at_peak: 0.0,
        }
    }

    /// Assigns `β_i` and `φ_i` by i.i.d. resampling from the pools.
    #[allow(clippy::too_many_arguments)]
    pub fn from_pools(
        n: usize,
        beta: &Pool,
        phi: &Pool,
        activity: Vec<f64>,
        r: f64,
        shock_schedule: ShockSchedule,
        shock_prob_at_peak: f64,
        seed: u64,
    ) -> Result<Self> {
        if beta.values.is_empty() || phi.values.is_empty() {
            return Err(LabError::insufficient("empty parameter pool"));
        }
        let mut rng = rng::stream(seed, Domain::ParamAssignment, 0);
        let b = (0..n).map(|_| beta.sample(&mut rng)).collect();
        let p = (0..n).map(|_| phi.sample(&mut rng)).collect();
        let params = MechanismParams {
            beta: b,
            phi: p,
            activity,
            r,
            shock_schedule,
            shock_prob_at_peak,
        };
        params.validate(n)?;
        Ok(params)
    }

    pub fn with_shocks(mut self, schedule: ShockSchedule, prob_at_peak: f64) -> Self {
        self.shock_schedule = schedule;
        self.shock_prob_at_peak = prob_at_peak;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("beta", &self.beta), ("phi", &self.phi), ("activity", &self.activity)] {
            if v.len() != n {
                return Err(LabError::invalid(format!("{name} has {} entries for {n} nodes", v.len())));
            }
        }
        let in_unit = |x: &f64| (0.0..=1.0).contains(x);
        if !self.beta.iter().all(in_unit) || !self.activity.iter().all(in_unit) {
            return Err(LabError::invalid("beta and activity must lie in [0, 1]"));
        }
        if self.phi.iter().any(|x| !(*x >= 0.0)) {
            return Err(LabError::invalid("phi must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.r) || !(0.0..=1.0).contains(&self.shock_prob_at_peak) {
            return Err(LabError::invalid("r and shock_prob_at_peak must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything `calibrate` derives from a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub beta: Pool,
    pub phi: Pool,
    pub background: BackgroundRate,
}

pub fn calibrate(g: &DirectedGraph, log: &AdoptionLog) -> Result<Calibration> {
    Ok(Calibration {
        beta: calibrate_transmission(g, log)?,
        phi: calibrate_thresholds(g, log)?,
        background: calibrate_background(g, log)?,
    })
}
