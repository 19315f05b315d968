//! Node-adaptive distillation on one imbalanced client: how the
//! class-homophily profile turns into per-node distillation weights, and
//! what the second stage gains over plain fine-tuning.
//!
//! ```bash
//! cargo run --release --example node_adaptive_distillation
//! ```

use ofgl::gnn::{model_forward, predictions, KlDirection, ModelSpec, TrainConfig};
use ofgl::graph::{label_imbalance_split, Split};
use ofgl::orchestrator::{evaluate_metrics, server};
use ofgl::personalize::{
    compute_gamma, compute_w_dist, effective_gamma, stage1_train_global, stage2_finetune,
    Ablation,
};
use ofgl::secure::{pooled_stats, DenominatorMode, StatsVector};
use ofgl::stats::{
    class_homophily, estimate_class_stats, label_propagation, propagate_features, HreConfig,
    StatsConfig,
};
use ofgl::surrogate::{GenConfig, NodesPerClass};
use ofgl::synthetic::{planted_partition_bundle, PlantedConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A 4-class dataset split across 3 clients; the first client ends up
    // imbalanced through the community structure.
    let bundle = planted_partition_bundle(&PlantedConfig {
        num_classes: 4,
        blocks_per_class: 3,
        block_size: 20,
        mean_scale: 2.0,
        impurity: 0.2,
        seed: 5,
        ..PlantedConfig::default()
    })?;
    let clients = label_imbalance_split(&bundle, 3, 1)?;
    let cg = &clients[0];

    let stats_cfg = StatsConfig::default();
    let hre_cfg = HreConfig::default();
    let profile = class_homophily(cg);
    let w_dist = compute_w_dist(&profile);
    println!("class homophily H: {:?}", profile.class);
    println!("distillation weights w_dist: {w_dist:?}");

    let soft = label_propagation(cg, &hre_cfg);
    let gamma = compute_gamma(&soft, &w_dist, 0.5);
    let mean_gamma = gamma.iter().sum::<f64>() / gamma.len() as f64;
    println!(
        "gamma: mean {:.3}, max {:.3} (beta = 0.5)",
        mean_gamma,
        gamma.iter().copied().fold(0.0f64, f64::max)
    );

    // Global statistics pooled from every client, surrogate, teacher.
    let vectors: Vec<StatsVector> = clients
        .iter()
        .map(|cg| {
            let propagated = propagate_features(cg, stats_cfg.prop_depth);
            StatsVector::from_class_stats(&estimate_class_stats(
                cg,
                &propagated,
                &stats_cfg,
                &[],
            ))
        })
        .collect();
    let summed = StatsVector::sum_plaintext(&vectors)?;
    let global = pooled_stats(&summed, vectors[0].layout, DenominatorMode::Paper)?;
    let gen = GenConfig {
        nodes_per_class: NodesPerClass::Fixed(2),
        steps: 400,
        ..GenConfig::default()
    };
    let (surrogate, _) = server::generate_surrogate(&global, &gen, 11)?;

    let spec = ModelSpec::Gcn2 { hidden: 32 };
    let train_cfg = TrainConfig {
        epochs: 150,
        ..TrainConfig::default()
    };
    let (teacher, init, _) = stage1_train_global(&surrogate, spec, &train_cfg, 13)?;

    let test = cg.splits.nodes_with(Split::Test);
    for (label, ablation) in [
        ("fine-tune only", Ablation::FtOnly),
        ("fixed gamma 0.5", Ablation::FixedGamma(0.5)),
        ("node-adaptive", Ablation::Full),
    ] {
        let g = effective_gamma(ablation, &gamma);
        let (student, _) = stage2_finetune(
            init.clone(),
            &teacher,
            cg,
            &g,
            &train_cfg,
            KlDirection::TeacherReference,
        )?;
        let adj = cg.graph.normalized_adjacency();
        let (logits, _) = model_forward(&student, &adj, &cg.features)?;
        let (acc, f1, _) = evaluate_metrics(
            &predictions(&logits),
            cg.labels.raw(),
            &test,
            cg.num_classes(),
        )?;
        println!("{label:>16}: accuracy {acc:.2}%, f1-macro {f1:.2}%");
    }
    Ok(())
}
