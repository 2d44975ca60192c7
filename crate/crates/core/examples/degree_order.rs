//! Who adopts first? Spearman correlation of in-degree against adoption day.

use contagion_lab::cascade::Seeding;
use contagion_lab::structtest::{degree_order_test, DegreeKind};
use contagion_lab::synthgen::{gen_graph, gen_pure_cascade, SynthConfig};
use contagion_lab::{CascadeConfig, Mechanism, MechanismParams};

fn main() -> contagion_lab::Result<()> {
    let cfg = CascadeConfig { seeds: Seeding::Count(5), ..Default::default() };
    println!("{:>4} {:>14} {:>14}", "seed", "simple rho", "complex rho");
    for s in 0..5 {
        let (g, _) = gen_graph(&SynthConfig { n_nodes: 5000, seed: s, ..Default::default() })?;
        let params = MechanismParams::uniform(g.node_count(), 0.089, 0.146, 1.0, 0.0);
        let simple = gen_pure_cascade(&g, Mechanism::Simple, &params, &cfg, s)?;
        let complex = gen_pure_cascade(&g, Mechanism::Complex, &params, &cfg, s)?;
        let a = degree_order_test(&g, &simple.log, DegreeKind::In)?;
        match degree_order_test(&g, &complex.log, DegreeKind::In) {
            Ok(b) => println!("{s:>4} {:>7.3} (p={:.0e}) {:>7.3} (p={:.0e})", a.rho, a.p_value, b.rho, b.p_value),
            Err(e) => println!("{s:>4} {:>7.3} (p={:.0e}) {e}", a.rho, a.p_value),
        }
    }
    Ok(())
}
