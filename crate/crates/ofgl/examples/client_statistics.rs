//! One client's statistics pipeline: feature propagation, homophily,
//! label propagation, reliable node expansion, and class-wise moments.
//!
//! ```bash
//! cargo run --example client_statistics
//! ```

use ofgl::graph::label_imbalance_split;
use ofgl::stats::{
    class_homophily, estimate_class_stats, hre_expand, label_propagation, propagate_features,
    HreConfig, StatsConfig,
};
use ofgl::synthetic::tiny_fixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bundle = tiny_fixture(1);
    let clients = label_imbalance_split(&bundle, 2, 0)?;
    let cg = &clients[0];

    let stats_cfg = StatsConfig::default();
    let hre_cfg = HreConfig::default();

    let propagated = propagate_features(cg, stats_cfg.prop_depth);
    println!(
        "client 0: {} nodes, propagated features {}x{}",
        cg.num_nodes(),
        propagated.nrows(),
        propagated.ncols()
    );

    let profile = class_homophily(cg);
    for (c, h) in profile.class.iter().enumerate() {
        println!("class {c}: H = {h:.3}");
    }
    println!("top-2 homophily classes: {:?}", profile.top_k_classes(2));

    let soft = label_propagation(cg, &hre_cfg);
    let reached = (0..cg.num_nodes())
        .filter(|&v| soft.prediction(v).is_some())
        .count();
    println!("label propagation reached {reached}/{} nodes", cg.num_nodes());

    let reliable = hre_expand(cg, &soft, &profile, &hre_cfg);
    println!(
        "HRE selected {} reliable nodes (degree >= {:.2}, confidence >= {})",
        reliable.len(),
        hre_cfg.resolved_degree_threshold(&cg.graph),
        hre_cfg.confidence_threshold
    );

    let class_stats = estimate_class_stats(cg, &propagated, &stats_cfg, &reliable);
    for (c, m) in class_stats.classes.iter().enumerate() {
        match m {
            Some(m) => println!(
                "class {c}: {} samples, mean[0] {:+.3}, variance[0] {:.3}",
                m.count, m.mean[0], m.variance[0]
            ),
            None => println!("class {c}: too few samples, not reported"),
        }
    }
    Ok(())
}
