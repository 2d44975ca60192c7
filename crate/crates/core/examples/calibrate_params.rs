//! Recover parameter pools and the background rate from an adoption log.

use contagion_lab::calibrate::calibrate;
use contagion_lab::cascade::Seeding;
use contagion_lab::synthgen::{gen_graph, gen_pure_cascade, SynthConfig};
use contagion_lab::{CascadeConfig, Mechanism, MechanismParams};

fn main() -> contagion_lab::Result<()> {
    let (g, _) = gen_graph(&SynthConfig { n_nodes: 3000, mean_degree: 15.0, seed: 3, ..Default::default() })?;
    let truth = MechanismParams::uniform(g.node_count(), 0.05, 0.146, 0.1, 2e-4);
    let cfg = CascadeConfig { seeds: Seeding::Count(10), ..Default::default() };

    for mech in [Mechanism::Simple, Mechanism::Complex] {
        let pure = gen_pure_cascade(&g, mech, &truth, &cfg, 7)?;
        let cal = calibrate(&g, &pure.log)?;
        println!("{} cascade, {} adopters", mech.name(), pure.log.len());
        println!(
            "  beta pool: n={} mean={:.3}   phi pool: n={} mean={:.3} (min {:.3})",
            cal.beta.summary.count,
            cal.beta.summary.mean,
            cal.phi.summary.count,
            cal.phi.summary.mean,
            cal.phi.summary.min
        );
        println!(
            "  r = {:.2e} from {} zero-exposure adopters over {} susceptible days",
            cal.background.rate, cal.background.zero_exposure_adopters, cal.background.susceptible_days
        );
    }
    Ok(())
}
