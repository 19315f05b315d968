//! Generate synthetic planted-partition bundles.
//!
//! Writes the 60-node fixture shipped under `fixtures/tiny` by default;
//! pass a directory and optional seed to write elsewhere:
//!
//! ```bash
//! cargo run --example synthesize_dataset -- /tmp/my-fixture 7
//! ```

use ofgl::graph::save_bundle;
use ofgl::synthetic::tiny_fixture;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args
        .next()
        .unwrap_or_else(|| {
            concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/tiny").to_string()
        })
        .into();
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let bundle = tiny_fixture(seed);
    save_bundle(&bundle, &out)?;

    let mut per_class = vec![0usize; bundle.num_classes()];
    for v in 0..bundle.num_nodes() {
        if let Some(y) = bundle.labels.get(v) {
            per_class[y] += 1;
        }
    }
    println!(
        "wrote '{}': {} nodes, {} edges, {} features, class sizes {:?}",
        out.display(),
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        bundle.feature_dim(),
        per_class
    );
    Ok(())
}
