//! The full one-shot protocol against the standalone baseline on a
//! synthetic citation-style dataset.
//!
//! ```bash
//! cargo run --release --example one_shot_pipeline
//! ```

use ofgl::config::{FederationConfig, Pipeline};
use ofgl::gnn::TrainConfig;
use ofgl::orchestrator::run_one_shot_on;
use ofgl::surrogate::GenConfig;
use ofgl::synthetic::{planted_partition_bundle, PlantedConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bundle = planted_partition_bundle(&PlantedConfig {
        num_classes: 5,
        blocks_per_class: 3,
        block_size: 24,
        feature_dim: 32,
        mean_scale: 2.0,
        impurity: 0.2,
        seed: 3,
        ..PlantedConfig::default()
    })?;
    println!(
        "dataset: {} nodes, {} edges, {} classes",
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        bundle.num_classes()
    );

    let cfg = FederationConfig {
        num_clients: 4,
        seed: 1,
        generation: GenConfig {
            steps: 500,
            ..GenConfig::default()
        },
        stage1: TrainConfig {
            epochs: 150,
            ..TrainConfig::default()
        },
        stage2: TrainConfig {
            epochs: 150,
            ..TrainConfig::default()
        },
        ..FederationConfig::default()
    };

    let report = run_one_shot_on(&bundle, &cfg)?;
    let run = &report.runs[0];
    println!(
        "one-shot:   accuracy {:.2}%, f1-macro {:.2}% | upload {} B, download {} B per client",
        run.accuracy, run.f1_macro, run.upload_bytes_per_client, run.download_bytes_per_client
    );
    for c in &run.clients {
        println!(
            "  client {}: {:3} nodes, accuracy {:6.2}%, f1-macro {:6.2}%",
            c.client_id, c.num_nodes, c.accuracy, c.f1_macro
        );
    }

    let standalone_cfg = FederationConfig {
        pipeline: Pipeline::Standalone,
        ..cfg
    };
    let baseline = run_one_shot_on(&bundle, &standalone_cfg)?;
    println!(
        "standalone: accuracy {:.2}%, f1-macro {:.2}%",
        baseline.runs[0].accuracy, baseline.runs[0].f1_macro
    );
    Ok(())
}
