//! Pairwise-mask secure aggregation round trip.
//!
//! Three clients mask small statistics vectors; the server recovers the
//! exact fixed-point sum, and a tampered personal mask demonstrably
//! corrupts it.
//!
//! ```bash
//! cargo run --example secure_aggregation
//! ```

use ofgl::secure::{
    aggregate_unmask, build_masked_upload, pooled_stats, DenominatorMode, FixedPointCodec,
    MaskSeedMatrix, StatsLayout, StatsVector,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let codec = FixedPointCodec::default();
    let layout = StatsLayout {
        num_classes: 1,
        dim: 1,
    };

    // Three clients, one class, scalar features: (count, sum-form blocks).
    // Client data: {1,3}, {5,7}, {2,4} -> counts 2, means 2/6/3, variance 2.
    let clients = [(2.0, 2.0, 2.0), (2.0, 6.0, 2.0), (2.0, 3.0, 2.0)];
    let vectors: Vec<StatsVector> = clients
        .iter()
        .map(|&(n, mean, var)| StatsVector {
            layout,
            values: vec![1.0, n, n * mean, (n - 1.0) * var, n * mean * mean],
        })
        .collect();

    let seeds = MaskSeedMatrix::trusted_setup(42, vectors.len());
    let mut uploads = Vec::new();
    let mut masks = Vec::new();
    for (k, v) in vectors.iter().enumerate() {
        let (upload, mask) = build_masked_upload(v, k, &seeds, &codec)?;
        println!(
            "client {k}: masked residues {:?} (plaintext hidden)",
            &upload.values[..3]
        );
        uploads.push(upload);
        masks.push(mask);
    }

    let summed = aggregate_unmask(&uploads, &masks, vectors.len(), &codec)?;
    println!("unmasked sum: {summed:?}");

    let stats = pooled_stats(&summed, layout, DenominatorMode::Paper)?;
    let m = stats.classes[0].as_ref().unwrap();
    println!(
        "pooled: N = {}, contributors = {}, mean = {:.4}, variance = {:.4}",
        m.count, m.contributors, m.mean[0], m.variance[0]
    );

    // A zeroed personal mask corrupts the recovery.
    masks[1].values.iter_mut().for_each(|v| *v = 0);
    let corrupted = aggregate_unmask(&uploads, &masks, vectors.len(), &codec)?;
    println!(
        "after zeroing one personal mask the sum is corrupted: {:?}",
        &corrupted[..2]
    );
    Ok(())
}
