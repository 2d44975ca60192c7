//! Train the boosted-tree mechanism classifier on a synthetic ensemble.

use contagion_lab::cascade::{run_ensemble, Seeding};
use contagion_lab::mechclass::{train, BoostParams, Dataset};
use contagion_lab::synthgen::{gen_graph, SynthConfig};
use contagion_lab::{CascadeConfig, MechanismParams, ShockSchedule};

fn main() -> contagion_lab::Result<()> {
    let (g, _) = gen_graph(&SynthConfig { n_nodes: 5000, mean_degree: 20.0, seed: 5, ..Default::default() })?;
    let params = MechanismParams::uniform(g.node_count(), 0.089, 0.146, 0.032, 60e-6)
        .with_shocks(ShockSchedule::reference(), 0.3);
    let cfg = CascadeConfig { seeds: Seeding::Count(10), ..Default::default() };
    let ens = run_ensemble(&g, &params, &cfg, 10, 1)?;
    let training: Vec<_> = ens.events.into_iter().filter(|e| !e.seeded).collect();
    println!("{} labeled events", training.len());

    let boost = BoostParams { n_rounds: 100, ..Default::default() };
    let (model, report) = train(&Dataset::from_events(&training), &boost, 0.2, 3)?;
    println!("held-out accuracy {:.3}, macro-F1 {:.3}", report.test.accuracy, report.test.macro_f1);
    for c in &report.test.per_class {
        println!("  {:<12} support {:>5}  recall {:.2}  F1 {:.2}", c.class.name(), c.support, c.recall, c.f1);
    }
    for (name, gain) in &report.gain_importance {
        println!("  gain {name:<18} {gain:.3}");
    }

    let x = training[0].features;
    let p = model.predict(&x);
    println!("first event {:?} -> {} ({:?})", x.to_array(), p.label.name(), p.probs);
    Ok(())
}
