//! Calibrate on an observed log, simulate a training ensemble from the
//! calibrated pools, then label every observed adoption.

use contagion_lab::calibrate::calibrate;
use contagion_lab::cascade::{run_ensemble, run_realization, Seeding};
use contagion_lab::mechclass::{decompose, train, BoostParams, Dataset};
use contagion_lab::synthgen::{gen_graph, SynthConfig};
use contagion_lab::adoption::Adoption;
use contagion_lab::{AdoptionLog, CascadeConfig, Mechanism, MechanismParams, ShockSchedule};

fn main() -> contagion_lab::Result<()> {
    let (g, _) = gen_graph(&SynthConfig { n_nodes: 5000, mean_degree: 20.0, seed: 6, ..Default::default() })?;
    let n = g.node_count();
    let shocks = ShockSchedule::reference();
    let truth = MechanismParams::uniform(n, 0.05, 0.146, 0.032, 60e-6).with_shocks(shocks.clone(), 0.5);
    let observed = run_realization(&g, &truth, &CascadeConfig { seeds: Seeding::Count(10), ..Default::default() }, 99, 0)?;
    let recs = observed.events.iter().map(|e| Adoption { node: e.node, day: e.day }).collect();
    let log = AdoptionLog::new(recs, 0, observed.stop_day)?;

    let cal = calibrate(&g, &log)?;
    let params = MechanismParams::from_pools(n, &cal.beta, &cal.phi, vec![0.032; n], cal.background.rate, shocks.clone(), 0.5, 5)?;
    let ens = run_ensemble(&g, &params, &CascadeConfig::default(), 10, 7)?;
    let (model, _) = train(&Dataset::from_events(&ens.events), &BoostParams { n_rounds: 100, ..Default::default() }, 0.2, 3)?;

    let report = decompose(&model, &log, &g, &shocks)?;
    println!("{:<12} {:>8} {:>10}", "mechanism", "true %", "labeled %");
    for m in Mechanism::ALL {
        let k = observed.events.iter().filter(|e| !e.seeded && e.mechanism == m).count();
        let total = observed.events.iter().filter(|e| !e.seeded).count();
        println!("{:<12} {:>8.1} {:>10.1}", m.name(), 100.0 * k as f64 / total as f64, 100.0 * report.share(m));
    }
    Ok(())
}
