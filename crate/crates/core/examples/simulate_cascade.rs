//! One mixed-mechanism cascade, then a small deduplicated ensemble.

use contagion_lab::cascade::{run_ensemble, run_realization, Seeding};
use contagion_lab::synthgen::{gen_graph, SynthConfig};
use contagion_lab::{CascadeConfig, Mechanism, MechanismParams, ShockSchedule};

fn main() -> contagion_lab::Result<()> {
    let (g, _) = gen_graph(&SynthConfig { n_nodes: 5000, mean_degree: 20.0, seed: 2, ..Default::default() })?;
    let params = MechanismParams::uniform(g.node_count(), 0.089, 0.146, 0.032, 60e-6)
        .with_shocks(ShockSchedule::reference(), 0.3);
    let cfg = CascadeConfig { seeds: Seeding::Count(10), ..Default::default() };

    let run = run_realization(&g, &params, &cfg, 42, 0)?;
    println!(
        "stopped on day {} ({:?}) with {:.1}% adopted",
        run.stop_day,
        run.stop_reason,
        100.0 * run.adopted_fraction
    );
    for m in Mechanism::ALL {
        let k = run.events.iter().filter(|e| !e.seeded && e.mechanism == m).count();
        println!("  {:<12} {k}", m.name());
    }
    let ties = run.events.iter().filter(|e| e.fired.len() > 1).count();
    println!("  adoptions where several rules fired: {ties}");

    let ens = run_ensemble(&g, &params, &cfg, 20, 42)?;
    println!(
        "ensemble of 20: {} events, {} after dedup",
        ens.summary.counts_before_dedup.total(),
        ens.summary.counts_after_dedup.total()
    );
    Ok(())
}
