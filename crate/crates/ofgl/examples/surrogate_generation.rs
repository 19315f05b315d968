//! Synthesize a surrogate graph whose propagated class statistics match
//! pooled global statistics, then export it as a dataset bundle.
//!
//! ```bash
//! cargo run --release --example surrogate_generation -- /tmp/surrogate
//! ```

use ofgl::graph::save_bundle;
use ofgl::surrogate::{
    finalize_adjacency, init_surrogate, optimize_surrogate, total_loss, GenConfig, NodesPerClass,
};
use ofgl::synthetic::synthetic_global_stats;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "/tmp/ofgl-surrogate".to_string())
        .into();

    let stats = synthetic_global_stats(3, 16, 1, 7)?;
    println!(
        "targets: {} classes present, propagated dim {}",
        stats.present_classes().len(),
        stats.dim
    );

    let cfg = GenConfig {
        nodes_per_class: NodesPerClass::Fixed(4),
        prop_depth: 1,
        steps: 800,
        smoothness_weight: 0.1,
        ..GenConfig::default()
    };
    let (mut sg, mut lp) = init_surrogate(&stats, &cfg, 3)?;
    let (initial, _, _) = total_loss(&sg, &lp, &stats, &cfg)?;
    let trajectory = optimize_surrogate(&mut sg, &mut lp, &stats, &cfg)?;
    let (final_loss, _, _) = total_loss(&sg, &lp, &stats, &cfg)?;
    println!(
        "optimized {} steps: loss {:.5} -> {:.5} (alignment {:.5} -> {:.5})",
        trajectory.len() - 1,
        initial.total,
        final_loss.total,
        initial.alignment,
        final_loss.alignment
    );

    finalize_adjacency(&mut sg, cfg.sparsity)?;
    let bundle = sg.to_bundle("surrogate-demo")?;
    println!(
        "surrogate: {} nodes, {} edges at sparsity {}",
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        cfg.sparsity
    );
    save_bundle(&bundle, &out)?;
    println!("exported to {}", out.display());
    Ok(())
}
