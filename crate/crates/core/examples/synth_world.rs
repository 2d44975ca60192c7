//! Heavy-tailed follower graph with a latent binary trait.
//!
//! `cargo run --release --example synth_world -- 5000 0.8`

use contagion_lab::synthgen::{gen_graph, SynthConfig};

fn main() -> contagion_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5000);
    let homophily: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.8);

    let cfg = SynthConfig { n_nodes: n, mean_degree: 20.0, homophily, seed: 1, ..Default::default() };
    let (g, traits) = gen_graph(&cfg)?;

    let mut followers: Vec<usize> = (0..n).map(|i| g.out_degree(i)).collect();
    followers.sort_unstable_by(|a, b| b.cmp(a));
    println!("{} nodes, {} edges", g.node_count(), g.edge_count());
    println!("top follower counts: {:?}", &followers[..10]);
    println!("median follower count: {}", followers[n / 2]);

    let same = g.edges().filter(|&(a, b)| traits[a] == traits[b]).count();
    println!("same-trait edges: {:.1}%", 100.0 * same as f64 / g.edge_count() as f64);
    Ok(())
}
