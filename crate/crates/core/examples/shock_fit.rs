//! Find bursts in a daily adoption series and fit their power-law decay.

use contagion_lab::shocks::{detect_shocks, fit_power_law, AdoptionSeries, DetectConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> contagion_lab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // baseline around 40/day, bursts on days 90 and 200
    let bursts = [(90usize, 2000.0, 0.6), (200, 5000.0, 0.4)];
    let counts: Vec<u64> = (0..320)
        .map(|t| {
            let mut mu: f64 = 40.0;
            if let Some(&(tau, h, a)) = bursts.iter().rev().find(|b| b.0 <= t) {
                mu += h * ((t - tau + 1) as f64).powf(-a);
            }
            let noise: f64 = rng.random_range(-0.1..0.1);
            (mu * noise.exp()).round() as u64
        })
        .collect();
    let series = AdoptionSeries::new(counts);

    let ranges = detect_shocks(&series, &DetectConfig::default())?;
    for (i, r) in ranges.iter().enumerate() {
        let end = ranges.get(i + 1).map_or(series.len(), |n| n.start);
        let window = AdoptionSeries::new(series.counts[..end].to_vec());
        let fit = fit_power_law(&window, r.peak_day)?;
        println!(
            "burst days {}..={} peak {} ({}): alpha={:.3} R2={:.3} over {} days",
            r.start, r.end, r.peak_day, r.peak_count, fit.alpha, fit.r_squared, fit.points
        );
    }
    Ok(())
}
