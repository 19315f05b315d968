//! Supervised training of a two-layer GCN and an SGC on the tiny fixture.
//!
//! ```bash
//! cargo run --example train_gcn
//! ```

use ofgl::gnn::{model_forward, predictions, train_supervised, GnnModel, ModelSpec, TrainConfig};
use ofgl::graph::Split;
use ofgl::orchestrator::evaluate_metrics;
use ofgl::synthetic::tiny_fixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bundle = tiny_fixture(2);
    let adj = bundle.graph.normalized_adjacency();
    let train = bundle.splits.nodes_with(Split::Train);
    let val = bundle.splits.nodes_with(Split::Val);
    let test = bundle.splits.nodes_with(Split::Test);
    println!(
        "fixture: {} nodes ({} train / {} val / {} test)",
        bundle.num_nodes(),
        train.len(),
        val.len(),
        test.len()
    );

    for spec in [ModelSpec::Gcn2 { hidden: 16 }, ModelSpec::Sgc { power: 2 }] {
        let model = GnnModel::init(spec, bundle.feature_dim(), bundle.num_classes(), 1);
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let (trained, history) = train_supervised(
            model,
            &adj,
            &bundle.features,
            bundle.labels.raw(),
            &train,
            &val,
            &cfg,
        )?;
        let (logits, _) = model_forward(&trained, &adj, &bundle.features)?;
        let preds = predictions(&logits);
        let (acc, f1, _) =
            evaluate_metrics(&preds, bundle.labels.raw(), &test, bundle.num_classes())?;
        println!(
            "{spec:?}: best epoch {}, loss {:.4} -> {:.4}, test accuracy {acc:.2}%, f1-macro {f1:.2}%",
            history.best_epoch,
            history.train_loss.first().unwrap(),
            history.train_loss.last().unwrap(),
        );
    }
    Ok(())
}
