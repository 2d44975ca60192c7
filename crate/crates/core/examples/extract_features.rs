//! The seven egocentric features at adoption time, for an observed log.

use contagion_lab::cascade::{run_realization, Seeding};
use contagion_lab::features::{extract_log, FEATURE_NAMES};
use contagion_lab::synthgen::{gen_graph, SynthConfig};
use contagion_lab::{AdoptionLog, CascadeConfig, MechanismParams, ShockSchedule};
use contagion_lab::adoption::Adoption;

fn main() -> contagion_lab::Result<()> {
    let (g, _) = gen_graph(&SynthConfig { n_nodes: 2000, mean_degree: 12.0, seed: 4, ..Default::default() })?;
    let shocks = ShockSchedule::reference();
    let params = MechanismParams::uniform(g.node_count(), 0.1, 0.146, 0.1, 1e-4).with_shocks(shocks.clone(), 0.2);
    let cfg = CascadeConfig { seeds: Seeding::Count(5), ..Default::default() };
    let run = run_realization(&g, &params, &cfg, 9, 0)?;

    let recs = run.events.iter().map(|e| Adoption { node: e.node, day: e.day }).collect();
    let log = AdoptionLog::new(recs, 0, run.stop_day)?;
    let rows = extract_log(&g, &log, &shocks)?;

    println!("{:>6} {:>4} {}", "node", "day", FEATURE_NAMES.join(" "));
    for (r, f) in log.records().iter().zip(&rows).step_by(rows.len().div_ceil(12)) {
        println!("{:>6} {:>4} {:?}", r.node, r.day, f.to_array());
    }

    // the engine logs the same vectors at adoption time
    let same = run.events.iter().zip(&rows).filter(|(e, f)| e.features == **f).count();
    println!("{same}/{} rows match the simulated events", rows.len());
    Ok(())
}
