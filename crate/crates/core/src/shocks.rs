//! Exogenous shock schedule, shock-day detection and power-law decay fits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type Day = u32;

/// One burst: peak day, height relative to the largest burst, decay exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub tau: Day,
    pub gamma: f64,
    pub alpha: f64,
}

/// Ordered bursts with strictly increasing peaks.
///
/// Between consecutive peaks only the most recent burst is active:
/// `λ(t) = γ_j (t - τ_j + 1)^(-α_j)` for `τ_j <= t < τ_{j+1}`, and zero
/// before the first peak.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Shock>", into = "Vec<Shock>")]
pub struct ShockSchedule {
    shocks: Vec<Shock>,
}

impl TryFrom<Vec<Shock>> for ShockSchedule {
    type Error = LabError;

    fn try_from(shocks: Vec<Shock>) -> Result<Self> {
        ShockSchedule::new(shocks)
    }
}

impl From<ShockSchedule> for Vec<Shock> {
    fn from(s: ShockSchedule) -> Self {
        s.shocks
    }
}

impl ShockSchedule {
    pub fn new(shocks: Vec<Shock>) -> Result<Self> {
        for w in shocks.windows(2) {
            if w[1].tau <= w[0].tau {
                return Err(LabError::invalid(format!(
                    "shock peaks must be strictly increasing ({} then {})",
                    w[0].tau, w[1].tau
                )));
            }
        }
        for s in &shocks {
            if !(s.alpha > 0.0 && s.alpha.is_finite()) {
                return Err(LabError::invalid(format!("decay exponent must be > 0, got {}", s.alpha)));
            }
            if !(s.gamma > 0.0 && s.gamma <= 1.0) {
                return Err(LabError::invalid(format!("relative height must lie in (0, 1], got {}", s.gamma)));
            }
        }
        if !shocks.is_empty() && !shocks.iter().any(|s| s.gamma == 1.0) {
            return Err(LabError::invalid("relative heights must be normalized so the largest equals 1"));
        }
        Ok(ShockSchedule { shocks })
    }

    pub fn empty() -> Self {
        ShockSchedule::default()
    }

    /// Five reference bursts with day 0 = 2023-06-01: the Twitter outage,
    /// the X fee announcement, Bluesky's public launch, the Brazil X ban and
    /// the US election, with the fitted heights and exponents.
    pub fn reference() -> Self {
        ShockSchedule::new(vec![
            Shock { tau: 30, gamma: 0.183, alpha: 0.626 },
            Shock { tau: 110, gamma: 0.335, alpha: 0.231 },
            Shock { tau: 250, gamma: 0.140, alpha: 0.775 },
            Shock { tau: 457, gamma: 0.087, alpha: 0.556 },
            Shock { tau: 524, gamma: 1.000, alpha: 0.679 },
        ])
        .expect("reference schedule is valid")
    }

    pub fn shocks(&self) -> &[Shock] {
        &self.shocks
    }

    pub fn is_empty(&self) -> bool {
        self.shocks.is_empty()
    }

    /// Index of the burst active on day `t`.
    fn active(&self, t: Day) -> Option<usize> {
        let k = self.shocks.partition_point(|s| s.tau <= t);
        k.checked_sub(1)
    }

    /// Raw intensity `λ_shock(t)`.
    pub fn intensity(&self, t: Day) -> f64 {
        match self.active(t) {
            Some(j) => {
                let s = &self.shocks[j];
                s.gamma * f64::from(t - s.tau + 1).powf(-s.alpha)
            }
            None => 0.0,
        }
    }

    /// Largest relative height (1 for any valid non-empty schedule).
    pub fn peak_max(&self) -> f64 {
        self.shocks.iter().map(|s| s.gamma).fold(0.0, f64::max)
    }

    /// Per-day adoption probability with the largest peak mapped to `prob_at_peak`.
    pub fn probability(&self, t: Day, prob_at_peak: f64) -> f64 {
        let peak = self.peak_max();
        if peak <= 0.0 {
            return 0.0;
        }
        (prob_at_peak * self.intensity(t) / peak).clamp(0.0, 1.0)
    }

    /// Days since the most recent peak at or before `t`.
    pub fn recency(&self, t: Day) -> Option<Day> {
        self.active(t).map(|j| t - self.shocks[j].tau)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Daily adoption counts, day 0 = series start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionSeries {
    pub counts: Vec<u64>,
}

impl AdoptionSeries {
    pub fn new(counts: Vec<u64>) -> Self {
        AdoptionSeries { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Reads `day,count` rows. Missing days are zero; repeated days are an error.
    pub fn load_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            day: u32,
            count: u64,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| LabError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: e.to_string(),
            })?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(LabError::EmptyInput(path.to_path_buf()));
        }
        let len = rows.iter().map(|r| r.day as usize).max().unwrap_or(0) + 1;
        let mut counts = vec![None; len];
        for r in rows {
            if counts[r.day as usize].replace(r.count).is_some() {
                return Err(LabError::invalid(format!("day {} listed twice in {}", r.day, path.display())));
            }
        }
        Ok(AdoptionSeries::new(counts.into_iter().map(|c| c.unwrap_or(0)).collect()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["day", "count"])?;
        for (d, c) in self.counts.iter().enumerate() {
            w.write_record([d.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }
}

/// Detection thresholds for shock days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub min_count: u64,
    pub window: usize,
    pub z: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            min_count: 150,
            window: 30,
            z: 3.0,
        }
    }
}

/// Run of consecutive flagged days, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShockRange {
    pub start: usize,
    pub end: usize,
    pub peak_day: usize,
    pub peak_count: u64,
}

/// Flags day `t` when `count[t] >= min_count` and it exceeds the trailing
/// `window`-day mean (days `t - window .. t`, excluding `t`) by more than `z`
/// sample standard deviations. Days without a full trailing window are not
/// evaluated. Adjacent flagged days are merged.
pub fn detect_shocks(series: &AdoptionSeries, cfg: &DetectConfig) -> Result<Vec<ShockRange>> {
    let w = cfg.window;
    if w < 2 || series.len() <= w {
        return Err(LabError::insufficient(format!(
            "series of {} days is not longer than the {}-day window",
            series.len(),
            w
        )));
    }
    let c: Vec<f64> = series.counts.iter().map(|&x| x as f64).collect();
    let mut flagged = vec![false; c.len()];
    for t in w..c.len() {
        if series.counts[t] < cfg.min_count {
            continue;
        }
        let win = &c[t - w..t];
        let mean = win.iter().sum::<f64>() / w as f64;
        let var = win.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w - 1) as f64;
        if c[t] > mean + cfg.z * var.sqrt() {
            flagged[t] = true;
        }
    }

    let mut out: Vec<ShockRange> = Vec::new();
    for (t, &f) in flagged.iter().enumerate() {
        if !f {
            continue;
        }
        match out.last_mut() {
            Some(r) if r.end + 1 == t => {
                r.end = t;
                if series.counts[t] > r.peak_count {
                    r.peak_count = series.counts[t];
                    r.peak_day = t;
                }
            }
            _ => out.push(ShockRange {
                start: t,
                end: t,
                peak_day: t,
                peak_count: series.counts[t],
            }),
        }
    }
    Ok(out)
}

/// Result of a post-peak decay fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Decay exponent.
    pub alpha: f64,
    /// Coefficient of determination on the log scale.
    pub r_squared: f64,
    /// Fitted count on the peak day, `exp(intercept)`.
    pub height: f64,
    /// `height` relative to the observed peak-day count.
    pub gamma: f64,
    pub points: usize,
    pub iterations: usize,
}

/// Huber tuning constant (95% efficiency under Gaussian errors).
pub const HUBER_K: f64 = 1.345;
const MAX_IRLS: usize = 50;
const ALPHA_TOL: f64 = 1e-8;

pub fn fit_power_law(series: &AdoptionSeries, peak: usize) -> Result<PowerLawFit> {
    let c: Vec<f64> = series.counts.iter().map(|&x| x as f64).collect();
    fit_power_law_values(&c, peak)
}

/// Fits `log c_t = log h - α log(t - peak + 1)` over days `t >= peak` with
/// positive counts, by iteratively reweighted least squares under Huber loss
/// with a MAD residual scale.
pub fn fit_power_law_values(counts: &[f64], peak: usize) -> Result<PowerLawFit> {
    if peak >= counts.len() {
        return Err(LabError::invalid(format!("peak day {peak} beyond series of {} days", counts.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = counts[peak..]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (((i + 1) as f64).ln(), v.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(LabError::insufficient(format!(
            "need at least 3 positive post-peak days, found {}",
            x.len()
        )));
    }

    let mut w = vec![1.0; x.len()];
    let (mut intercept, mut slope) = weighted_line(&x, &y, &w)?;
    // scale fixed from the least-squares residuals, so each step lowers the Huber loss
    let resid: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - intercept - slope * xi).collect();
    let scale = mad(&resid) / 0.6745;
    let mut iterations = 0;
    let mut converged = scale <= f64::EPSILON;
    while !converged && iterations < MAX_IRLS {
        iterations += 1;
        let resid: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - intercept - slope * xi).collect();
        for (wi, r) in w.iter_mut().zip(&resid) {
            let u = r.abs() / scale;
            *wi = if u <= HUBER_K { 1.0 } else { HUBER_K / u };
        }
        let (b0, b1) = weighted_line(&x, &y, &w)?;
        let delta = (b1 - slope).abs();
        intercept = b0;
        slope = b1;
        if delta < ALPHA_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LabError::NoConvergence {
            what: "Huber power-law fit",
            iterations,
        });
    }

    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= f64::EPSILON {
        1.0
    } else {
        0.0
    };
    let height = intercept.exp();
    let peak_count = counts[peak];
    Ok(PowerLawFit {
        alpha: -slope,
        r_squared,
        height,
        gamma: if peak_count > 0.0 { height / peak_count } else { f64::NAN },
        points: x.len(),
        iterations,
    })
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - mx) * (xi - mx);
        sxy += wi * (xi - mx) * (yi - my);
    }
    if sxx <= 0.0 {
        return Err(LabError::Undefined("no spread in log offsets".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mad(r: &[f64]) -> f64 {
    let mut v = r.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = r.iter().map(|x| (x - m).abs()).collect();
    median(&mut dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched(v: &[(u32, f64, f64)]) -> ShockSchedule {
        ShockSchedule::new(v.iter().map(|&(tau, gamma, alpha)| Shock { tau, gamma, alpha }).collect()).unwrap()
    }

    #[test]
    fn peak_identity_and_election_decay() {
        let s = ShockSchedule::reference();
        for sh in s.shocks() {
            assert_eq!(s.intensity(sh.tau), sh.gamma);
        }
        let election = s.shocks()[4];
        let v = s.intensity(election.tau + 1);
        assert!((v - 2f64.powf(-0.679)).abs() < 1e-15);
        assert!((v - 0.6246).abs() < 1e-4);
        assert_eq!(s.intensity(0), 0.0);
        assert_eq!(s.recency(29), None);
        assert_eq!(s.recency(35), Some(5));
    }

    #[test]
    fn schedule_validation() {
        assert!(ShockSchedule::new(vec![
            Shock { tau: 5, gamma: 1.0, alpha: 0.5 },
            Shock { tau: 5, gamma: 0.5, alpha: 0.5 },
        ])
        .is_err());
        assert!(ShockSchedule::new(vec![Shock { tau: 5, gamma: 0.5, alpha: 0.5 }]).is_err());
        assert!(ShockSchedule::new(vec![Shock { tau: 5, gamma: 1.0, alpha: 0.0 }]).is_err());
        let json = r#"[{"tau": 3, "gamma": 1.0, "alpha": 0.7}]"#;
        let s: ShockSchedule = serde_json::from_str(json).unwrap();
        assert_eq!(s.shocks()[0].tau, 3);
        assert!(serde_json::from_str::<ShockSchedule>(r#"[{"tau": 3, "gamma": 0.4, "alpha": 0.7}]"#).is_err());
    }

    #[test]
    fn probability_is_clamped() {
        let s = sched(&[(10, 1.0, 0.5)]);
        assert_eq!(s.probability(10, 3.0), 1.0);
        assert!((s.probability(13, 0.2) - 0.2 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_no_shocks() {
        let series = AdoptionSeries::new(vec![100; 90]);
        assert!(detect_shocks(&series, &DetectConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_spike_flagged() {
        let mut counts = vec![10; 40];
        counts[35] = 500;
        let got = detect_shocks(&AdoptionSeries::new(counts), &DetectConfig::default()).unwrap();
        assert_eq!(
            got,
            vec![ShockRange { start: 35, end: 35, peak_day: 35, peak_count: 500 }]
        );
    }

    #[test]
    fn short_series_rejected() {
        let series = AdoptionSeries::new(vec![1; 30]);
        assert!(detect_shocks(&series, &DetectConfig::default()).is_err());
    }

    #[test]
    fn five_spike_series() {
        // baseline with mild weekly wiggle, five bursts decaying as power laws
        let mut counts: Vec<u64> = (0..600).map(|d| 20 + (d % 7) as u64).collect();
        let peaks = [(60, 400.0, 0.6), (150, 700.0, 0.25), (260, 300.0, 0.8), (380, 200.0, 0.55), (500, 1800.0, 0.68)];
        for &(p, h, a) in &peaks {
            for k in 0..20usize {
                counts[p + k] += (h * ((k + 1) as f64).powf(-a)) as u64;
            }
        }
        let series = AdoptionSeries::new(counts.clone());
        let got = detect_shocks(&series, &DetectConfig::default()).unwrap();

        // oracle: re-evaluate the rule day by day
        let mut oracle = Vec::new();
        for t in 30..counts.len() {
            let win: Vec<f64> = counts[t - 30..t].iter().map(|&x| x as f64).collect();
            let m = win.iter().sum::<f64>() / 30.0;
            let sd = (win.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 29.0).sqrt();
            if counts[t] >= 150 && (counts[t] as f64) > m + 3.0 * sd {
                oracle.push(t);
            }
        }
        let flagged: Vec<usize> = got.iter().flat_map(|r| r.start..=r.end).collect();
        assert_eq!(flagged, oracle);
        assert_eq!(got.len(), 5);
        for (r, p) in got.iter().zip(peaks) {
            assert_eq!(r.peak_day, p.0);
        }
    }

    #[test]
    fn noiseless_decay_recovered() {
        let c: Vec<f64> = (0..30).map(|t| 100.0 * ((t + 1) as f64).powf(-0.6)).collect();
        let fit = fit_power_law_values(&c, 0).unwrap();
        assert!((fit.alpha - 0.6).abs() < 1e-3);
        assert!(fit.r_squared > 0.999);
        assert!((fit.height - 100.0).abs() < 1e-6);
    }

    #[test]
    fn flat_tail_gives_zero_exponent() {
        let series = AdoptionSeries::new(vec![3, 8, 50, 50, 50, 50, 50, 50]);
        let fit = fit_power_law(&series, 2).unwrap();
        assert!(fit.alpha.abs() < 1e-6);
    }

    #[test]
    fn too_few_points() {
        let series = AdoptionSeries::new(vec![0, 9, 4, 0, 0]);
        assert!(matches!(fit_power_law(&series, 1), Err(LabError::InsufficientData(_))));
    }

    #[test]
    fn outlier_day_downweighted() {
        let mut c: Vec<f64> = (0..40).map(|t| 500.0 * ((t + 1) as f64).powf(-0.7)).collect();
        c[25] *= 8.0;
        let fit = fit_power_law_values(&c, 0).unwrap();
        assert!((fit.alpha - 0.7).abs() < 0.01, "alpha {}", fit.alpha);
    }

    proptest! {
        #[test]
        fn intensity_non_increasing_between_peaks(a in 0.05f64..2.0, g in 0.05f64..1.0, gap in 2u32..60) {
            let s = sched(&[(5, g, a), (5 + gap, 1.0, 0.4)]);
            for t in 5..(5 + gap - 1) {
                prop_assert!(s.intensity(t + 1) <= s.intensity(t));
            }
        }

        #[test]
        fn alpha_scale_invariant(alpha in 0.1f64..1.5, scale in 0.01f64..1000.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..25).map(|t| 200.0 * ((t + 1) as f64).powf(-alpha) * (1.0 + 0.2 * (rng.random::<f64>() - 0.5))).collect();
            let scaled: Vec<f64> = c.iter().map(|v| v * scale).collect();
            let a = fit_power_law_values(&c, 0).unwrap().alpha;
            let b = fit_power_law_values(&scaled, 0).unwrap().alpha;
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn detection_ignores_trailing_zeros(extra in 1usize..50, spike in 150u64..2000) {
            let mut counts = vec![12u64; 60];
            counts[45] = spike;
            let base = detect_shocks(&AdoptionSeries::new(counts.clone()), &DetectConfig::default()).unwrap();
            counts.extend(std::iter::repeat_n(0, extra));
            let padded = detect_shocks(&AdoptionSeries::new(counts), &DetectConfig::default()).unwrap();
            prop_assert_eq!(base, padded);
        }
    }
}
