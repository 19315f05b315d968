//! Load a dataset bundle and split it into label-imbalanced clients.
//!
//! ```bash
//! cargo run --example load_and_partition -- fixtures/tiny 3
//! ```

use ofgl::graph::{label_imbalance_split, load_bundle, louvain_partition, modularity, Split};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args
        .next()
        .unwrap_or_else(|| {
            concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/tiny").to_string()
        })
        .into();
    let num_clients: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let bundle = load_bundle(&dir)?;
    println!(
        "loaded '{}': {} nodes, {} edges, {} classes",
        bundle.name,
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        bundle.num_classes()
    );

    let communities = louvain_partition(&bundle.graph, 0);
    let num_communities = communities.iter().copied().max().map_or(0, |c| c + 1);
    println!(
        "louvain: {} communities, modularity {:.4}",
        num_communities,
        modularity(&bundle.graph, &communities)
    );

    let clients = label_imbalance_split(&bundle, num_clients, 0)?;
    for cg in &clients {
        let mut per_class = vec![0usize; cg.num_classes()];
        for v in 0..cg.num_nodes() {
            if let Some(y) = cg.labels.get(v) {
                per_class[y] += 1;
            }
        }
        println!(
            "client {}: {} nodes ({} train), class histogram {:?}",
            cg.client_id,
            cg.num_nodes(),
            cg.splits.count(Split::Train),
            per_class
        );
    }
    Ok(())
}
