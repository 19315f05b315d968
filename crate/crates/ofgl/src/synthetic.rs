//! Deterministic synthetic dataset generators.
//!
//! Planted-partition graphs with class-conditional Gaussian features: the
//! node set is grouped into dense blocks, each block owner class keeps most
//! of its nodes while an impurity fraction is relabeled to random other
//! classes (those nodes become low-homophily minorities embedded in
//! foreign neighborhoods). Used by the test suites, the runnable examples,
//! and the shipped fixtures.

use crate::error::Result;
use crate::graph::{DatasetBundle, Graph, LabelVector, Split, SplitMasks};
use crate::rng::{derive_seed, rng_from_seed};
use crate::secure::{pooled_stats, DenominatorMode, GlobalStats, StatsVector};
use crate::stats::{estimate_class_stats, propagate_features, StatsConfig};
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Planted-partition generator parameters.
#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub num_classes: usize,
    pub blocks_per_class: usize,
    pub block_size: usize,
    pub feature_dim: usize,
    /// Distance scale between class means.
    pub mean_scale: f64,
    /// Std of the per-node feature noise.
    pub noise: f64,
    /// Edge probability inside a block.
    pub p_intra: f64,
    /// Edge probability across blocks.
    pub p_inter: f64,
    /// Fraction of each block's nodes relabeled to a random other class.
    pub impurity: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            num_classes: 3,
            blocks_per_class: 2,
            block_size: 10,
            feature_dim: 8,
            mean_scale: 1.5,
            noise: 0.6,
            p_intra: 0.4,
            p_inter: 0.01,
            impurity: 0.15,
            train_frac: 0.2,
            val_frac: 0.4,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn num_nodes(&self) -> usize {
        self.num_classes * self.blocks_per_class * self.block_size
    }
}

/// Class mean vectors: unit-normalized Gaussian directions scaled by
/// `mean_scale`.
fn class_means(cfg: &PlantedConfig, rng: &mut crate::rng::Rng) -> Array2<f64> {
    let mut means = Array2::zeros((cfg.num_classes, cfg.feature_dim));
    for mut row in means.rows_mut() {
        let mut norm2 = 0.0;
        for v in row.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v = g;
            norm2 += g * g;
        }
        let scale = cfg.mean_scale / norm2.sqrt().max(1e-12);
        row.mapv_inplace(|v| v * scale);
    }
    means
}

/// Generate a planted-partition bundle.
pub fn planted_partition_bundle(cfg: &PlantedConfig) -> Result<DatasetBundle> {
    let mut rng = rng_from_seed(cfg.seed);
    let n = cfg.num_nodes();
    let num_blocks = cfg.num_classes * cfg.blocks_per_class;

    // Block of each node and label with impurity.
    let block_of: Vec<usize> = (0..n).map(|v| v / cfg.block_size).collect();
    let mut labels: Vec<i64> = block_of
        .iter()
        .map(|&b| (b / cfg.blocks_per_class) as i64)
        .collect();
    for label in labels.iter_mut() {
        if rng.random_range(0.0..1.0) < cfg.impurity {
            let shift = rng.random_range(1..cfg.num_classes as i64);
            *label = (*label + shift) % cfg.num_classes as i64;
        }
    }

    // Features from the class-conditional Gaussians.
    let means = class_means(cfg, &mut rng);
    let mut features = Array2::zeros((n, cfg.feature_dim));
    for v in 0..n {
        let mean = means.row(labels[v] as usize);
        for c in 0..cfg.feature_dim {
            let g: f64 = StandardNormal.sample(&mut rng);
            features[(v, c)] = mean[c] + cfg.noise * g;
        }
    }

    // Edges follow the block structure, not the (possibly impure) labels.
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if rng.random_range(0.0..1.0) < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let splits: Vec<Split> = (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.0..1.0);
            if r < cfg.train_frac {
                Split::Train
            } else if r < cfg.train_frac + cfg.val_frac {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();

    let _ = num_blocks;
    DatasetBundle::new(
        format!("planted-c{}-n{}", cfg.num_classes, n),
        graph,
        features,
        LabelVector::new(labels, cfg.num_classes)?,
        SplitMasks::new(splits),
    )
}

/// The 60-node fixture shipped with the repository (3 classes, 8 features).
pub fn tiny_fixture(seed: u64) -> DatasetBundle {
    planted_partition_bundle(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })
    .expect("tiny fixture generates")
}

/// A citation-scale fixture mirroring a small bag-of-words network:
/// 2708 nodes, 7 classes, 1433 features, homophilic communities with
/// label-skewed blocks and a 20/40/40 split.
pub fn citation_fixture(seed: u64) -> DatasetBundle {
    planted_partition_bundle(&PlantedConfig {
        num_classes: 7,
        blocks_per_class: 4,
        block_size: 97, // 7 * 4 * 97 = 2716 nodes, close to 2708
        feature_dim: 1433,
        mean_scale: 2.5,
        noise: 1.0,
        p_intra: 0.055,
        p_inter: 0.0006,
        impurity: 0.22,
        train_frac: 0.2,
        val_frac: 0.4,
        seed,
    })
    .expect("citation fixture generates")
}

/// Realizable global statistics: sample a planted graph, propagate its
/// features to depth `prop_depth`, and pool the class moments centrally.
/// The result is attainable by construction, unlike independently drawn
/// random moment vectors.
pub fn synthetic_global_stats(
    num_classes: usize,
    feature_dim: usize,
    prop_depth: usize,
    seed: u64,
) -> Result<GlobalStats> {
    let bundle = planted_partition_bundle(&PlantedConfig {
        num_classes,
        blocks_per_class: 2,
        block_size: 30,
        feature_dim,
        train_frac: 1.0,
        val_frac: 0.0,
        seed: derive_seed(seed, "global-stats"),
        ..PlantedConfig::default()
    })?;
    let cg = crate::graph::induced_subgraph(
        &bundle.graph,
        &bundle.features,
        &bundle.labels,
        &bundle.splits,
        &(0..bundle.num_nodes()).collect::<Vec<_>>(),
        0,
    )?;
    let stats_cfg = StatsConfig {
        prop_depth,
        min_class_count: 2,
        enable_hre: false,
    };
    let propagated = propagate_features(&cg, prop_depth);
    let stats = estimate_class_stats(&cg, &propagated, &stats_cfg, &[]);
    let vector = StatsVector::from_class_stats(&stats);
    let summed = StatsVector::sum_plaintext(&[vector.clone()])?;
    pooled_stats(&summed, vector.layout, DenominatorMode::Centralized)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_bundle_is_valid_and_deterministic() {
        let a = tiny_fixture(4);
        let b = tiny_fixture(4);
        assert_eq!(a, b);
        assert_eq!(a.num_nodes(), 60);
        assert_eq!(a.num_classes(), 3);
        assert_eq!(a.feature_dim(), 8);
    }

    #[test]
    fn planted_blocks_are_homophilic() {
        let bundle = planted_partition_bundle(&PlantedConfig {
            impurity: 0.0,
            p_intra: 0.8,
            p_inter: 0.005,
            ..PlantedConfig::default()
        })
        .unwrap();
        let mut same = 0usize;
        let mut total = 0usize;
        for (u, v) in bundle.graph.edges() {
            total += 1;
            if bundle.labels.get(u) == bundle.labels.get(v) {
                same += 1;
            }
        }
        assert!(same as f64 / total as f64 > 0.9);
    }

    #[test]
    fn synthetic_stats_have_all_classes_present() {
        let gs = synthetic_global_stats(3, 16, 1, 7).unwrap();
        assert_eq!(gs.present_classes(), vec![0, 1, 2]);
        assert_eq!(gs.dim, 32);
        let total: f64 = gs
            .classes
            .iter()
            .flatten()
            .map(|m| m.proportion)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        for m in gs.classes.iter().flatten() {
            assert!(m.variance.iter().all(|&v| v >= 0.0));
        }
    }
}
