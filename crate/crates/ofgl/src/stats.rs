//! Client-side statistics: feature propagation, homophily measures, label
//! propagation, reliable node expansion (HRE), and class-wise moments.
//!
//! Everything here runs on one client's subgraph and consumes only the
//! labels of its *train* nodes; validation and test labels never enter any
//! computation. The class-wise mean/variance produced by
//! [`estimate_class_stats`] is the only information that later leaves the
//! client (through the secure-aggregation layer).

use crate::error::{Error, Result};
use crate::graph::{ClientGraph, Graph, Split};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Statistics-estimation knobs shared by clients and the surrogate
/// generator (the propagation depth must match on both sides).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    /// Propagation depth h; concatenated blocks are A^0 X .. A^h X.
    pub prop_depth: usize,
    /// Classes with fewer samples than this are not reported.
    pub min_class_count: usize,
    pub enable_hre: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            prop_depth: 1,
            min_class_count: 2,
            enable_hre: true,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prop_depth > 4 {
            return Err(Error::Config(format!(
                "prop_depth {} exceeds the practical bound 4",
                self.prop_depth
            )));
        }
        if self.min_class_count < 2 {
            return Err(Error::Config(
                "min_class_count must be >= 2 (unbiased variance needs two samples)".into(),
            ));
        }
        Ok(())
    }
}

/// Reliable-node-expansion thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HreConfig {
    /// Minimum degree; `None` resolves to the client graph's mean degree.
    pub degree_threshold: Option<f64>,
    /// Minimum soft-label confidence, in `[0, 1]`.
    pub confidence_threshold: f64,
    /// Number of top class-homophily classes admitted.
    pub top_k: usize,
    /// Restart weight of the label-propagation update.
    pub lp_alpha: f64,
    pub lp_iters: usize,
}

impl Default for HreConfig {
    fn default() -> Self {
        HreConfig {
            degree_threshold: None,
            confidence_threshold: 0.95,
            top_k: 2,
            lp_alpha: 0.9,
            lp_iters: 50,
        }
    }
}

impl HreConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config("confidence_threshold must be in [0, 1]".into()));
        }
        if self.top_k > num_classes {
            return Err(Error::Config(format!(
                "top_k {} exceeds {num_classes} classes",
                self.top_k
            )));
        }
        if !(0.0..1.0).contains(&self.lp_alpha) || self.lp_alpha <= 0.0 {
            return Err(Error::Config("lp_alpha must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn resolved_degree_threshold(&self, graph: &Graph) -> f64 {
        self.degree_threshold.unwrap_or_else(|| graph.mean_degree())
    }
}

/// Per-node and per-class homophily of the labeled train set.
#[derive(Debug, Clone)]
pub struct HomophilyProfile {
    /// `h_node` per node; 0 for nodes where it is undefined.
    pub node: Vec<f64>,
    /// `H(c)` per class: the sum of `h_node` over train nodes of class c.
    pub class: Vec<f64>,
}

impl HomophilyProfile {
    /// Classes with the `k` largest `H` values; ties broken toward the
    /// smaller class id.
    pub fn top_k_classes(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.class.len()).collect();
        order.sort_by(|&a, &b| {
            self.class[b]
                .partial_cmp(&self.class[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(k);
        order
    }
}

/// Row-stochastic soft labels; an all-zero row marks an unreached node.
#[derive(Debug, Clone)]
pub struct SoftLabels {
    pub matrix: Array2<f64>,
}

impl SoftLabels {
    /// `(argmax class, confidence)` of node `v`, or `None` for a zero row.
    pub fn prediction(&self, v: usize) -> Option<(usize, f64)> {
        let row = self.matrix.row(v);
        let sum: f64 = row.sum();
        if sum <= 0.0 {
            return None;
        }
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        Some((best, row[best]))
    }
}

/// Per-class count, mean, and unbiased variance of propagated features.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// Indexed by class id; `None` marks a class without enough samples.
    pub classes: Vec<Option<ClassMoments>>,
    /// Dimension of the propagated features, `(h + 1) * f`.
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct ClassMoments {
    pub count: usize,
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
}

/// Propagated features `[X, A X, ..., A^h X]` with `A` the augmented
/// normalized adjacency; block 0 is `X` itself.
pub fn propagate_features(cg: &ClientGraph, prop_depth: usize) -> Array2<f64> {
    let n = cg.num_nodes();
    let f = cg.feature_dim();
    let norm = cg.graph.normalized_adjacency();
    let mut out = Array2::zeros((n, (prop_depth + 1) * f));
    let mut block = cg.features.clone();
    out.slice_mut(ndarray::s![.., 0..f]).assign(&block);
    for i in 1..=prop_depth {
        block = norm.mul_dense(&block);
        out.slice_mut(ndarray::s![.., i * f..(i + 1) * f])
            .assign(&block);
    }
    out
}

/// Fraction of a node's labeled (train) neighbors sharing its label.
///
/// Zero for nodes without a train label or without labeled neighbors.
pub fn node_homophily(cg: &ClientGraph) -> Vec<f64> {
    let n = cg.num_nodes();
    let is_train: Vec<bool> = (0..n).map(|v| cg.splits.tag(v) == Split::Train).collect();
    (0..n)
        .map(|v| {
            if !is_train[v] {
                return 0.0;
            }
            let y = match cg.labels.get(v) {
                Some(y) => y,
                None => return 0.0,
            };
            let mut labeled = 0usize;
            let mut matching = 0usize;
            for &u in cg.graph.neighbors(v) {
                if is_train[u] {
                    if let Some(yu) = cg.labels.get(u) {
                        labeled += 1;
                        if yu == y {
                            matching += 1;
                        }
                    }
                }
            }
            if labeled == 0 {
                0.0
            } else {
                matching as f64 / labeled as f64
            }
        })
        .collect()
}

/// Node and class homophily of the train-labeled set.
pub fn class_homophily(cg: &ClientGraph) -> HomophilyProfile {
    let node = node_homophily(cg);
    let mut class = vec![0.0; cg.num_classes()];
    for v in 0..cg.num_nodes() {
        if cg.splits.tag(v) == Split::Train {
            if let Some(y) = cg.labels.get(v) {
                class[y] += node[v];
            }
        }
    }
    HomophilyProfile { node, class }
}

/// Clamped label propagation.
///
/// Iterates `F <- alpha * A F + (1 - alpha) * F0` with `F0` one-hot on
/// train nodes (zero elsewhere), re-clamping train rows to one-hot after
/// every step, then normalizes rows with positive sum to sum 1.
pub fn label_propagation(cg: &ClientGraph, cfg: &HreConfig) -> SoftLabels {
    let n = cg.num_nodes();
    let c = cg.num_classes();
    let norm = cg.graph.normalized_adjacency();

    let mut seed = Array2::zeros((n, c));
    let mut train_rows = Vec::new();
    for v in 0..n {
        if cg.splits.tag(v) == Split::Train {
            if let Some(y) = cg.labels.get(v) {
                seed[(v, y)] = 1.0;
                train_rows.push((v, y));
            }
        }
    }

    let mut state = seed.clone();
    for _ in 0..cfg.lp_iters {
        state = norm.mul_dense(&state) * cfg.lp_alpha + &(&seed * (1.0 - cfg.lp_alpha));
        for &(v, y) in &train_rows {
            let mut row = state.row_mut(v);
            row.fill(0.0);
            row[y] = 1.0;
        }
    }
    for mut row in state.rows_mut() {
        let sum = row.sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
    SoftLabels { matrix: state }
}

/// Reliable unlabeled nodes with inferred labels.
///
/// A node qualifies when all three criteria hold: degree at least the
/// threshold, top soft-label confidence at least `confidence_threshold`,
/// and the predicted class among the `top_k` class-homophily classes.
pub fn hre_expand(
    cg: &ClientGraph,
    soft: &SoftLabels,
    profile: &HomophilyProfile,
    cfg: &HreConfig,
) -> Vec<(usize, usize)> {
    let d_th = cfg.resolved_degree_threshold(&cg.graph);
    let admitted = profile.top_k_classes(cfg.top_k);
    let mut out = Vec::new();
    for v in 0..cg.num_nodes() {
        if cg.splits.tag(v) == Split::Train {
            continue;
        }
        if (cg.graph.degree(v) as f64) < d_th {
            continue;
        }
        let Some((class, confidence)) = soft.prediction(v) else {
            continue;
        };
        if confidence < cfg.confidence_threshold {
            continue;
        }
        if !admitted.contains(&class) {
            continue;
        }
        out.push((v, class));
    }
    out
}

/// Class-wise count, mean, and unbiased (n-1) variance of the propagated
/// features over the train nodes of each class united with the HRE nodes
/// inferred to that class. Classes below `min_class_count` are absent.
pub fn estimate_class_stats(
    cg: &ClientGraph,
    propagated: &Array2<f64>,
    cfg: &StatsConfig,
    hre_nodes: &[(usize, usize)],
) -> ClassStats {
    let num_classes = cg.num_classes();
    let dim = propagated.ncols();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for v in 0..cg.num_nodes() {
        if cg.splits.tag(v) == Split::Train {
            if let Some(y) = cg.labels.get(v) {
                members[y].push(v);
            }
        }
    }
    for &(v, y) in hre_nodes {
        members[y].push(v);
    }

    let classes = members
        .into_iter()
        .map(|nodes| {
            if nodes.len() < cfg.min_class_count {
                return None;
            }
            let count = nodes.len();
            let mut mean = Array1::zeros(dim);
            for &v in &nodes {
                mean += &propagated.row(v);
            }
            mean /= count as f64;
            let mut variance = Array1::zeros(dim);
            for &v in &nodes {
                let d = &propagated.row(v) - &mean;
                variance += &(&d * &d);
            }
            variance /= (count - 1) as f64;
            Some(ClassMoments {
                count,
                mean,
                variance,
            })
        })
        .collect();
    ClassStats { classes, dim }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, LabelVector, SplitMasks};
    use ndarray::array;

    fn client(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<i64>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> ClientGraph {
        ClientGraph {
            client_id: 0,
            graph: Graph::from_edges(num_nodes, edges).unwrap(),
            features,
            labels: LabelVector::new(labels, num_classes).unwrap(),
            splits: SplitMasks::new(splits),
            global_node_ids: (0..num_nodes).collect(),
        }
    }

    fn star_client(center_label: i64, leaf_labels: &[i64]) -> ClientGraph {
        let n = 1 + leaf_labels.len();
        let edges: Vec<(usize, usize)> = (1..n).map(|v| (0, v)).collect();
        let mut labels = vec![center_label];
        labels.extend_from_slice(leaf_labels);
        client(
            n,
            &edges,
            Array2::zeros((n, 1)),
            labels,
            3,
            vec![Split::Train; n],
        )
    }

    #[test]
    fn propagate_depth_zero_is_identity() {
        let cg = client(
            2,
            &[(0, 1)],
            array![[1.0], [0.0]],
            vec![0, 1],
            2,
            vec![Split::Train, Split::Train],
        );
        assert_eq!(propagate_features(&cg, 0), array![[1.0], [0.0]]);
    }

    #[test]
    fn propagate_two_node_path_hand_computed() {
        // A_norm = [[.5,.5],[.5,.5]] applied to [[1],[0]].
        let cg = client(
            2,
            &[(0, 1)],
            array![[1.0], [0.0]],
            vec![0, 1],
            2,
            vec![Split::Train, Split::Train],
        );
        let p = propagate_features(&cg, 1);
        assert_eq!(p, array![[1.0, 0.5], [0.0, 0.5]]);
    }

    #[test]
    fn propagate_isolated_node_repeats_feature() {
        let cg = client(
            1,
            &[],
            array![[3.5]],
            vec![0],
            1,
            vec![Split::Train],
        );
        let p = propagate_features(&cg, 3);
        assert_eq!(p, array![[3.5, 3.5, 3.5, 3.5]]);
    }

    #[test]
    fn propagation_blocks_compose() {
        let cg = client(
            3,
            &[(0, 1), (1, 2)],
            array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]],
            vec![0, 1, 0],
            2,
            vec![Split::Train; 3],
        );
        let p2 = propagate_features(&cg, 2);
        let norm = cg.graph.normalized_adjacency();
        let block1 = p2.slice(ndarray::s![.., 2..4]).to_owned();
        let manually = norm.mul_dense(&block1);
        let block2 = p2.slice(ndarray::s![.., 4..6]).to_owned();
        for (a, b) in manually.iter().zip(block2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn node_homophily_all_neighbors_match() {
        let cg = star_client(1, &[1, 1, 1]);
        assert_eq!(node_homophily(&cg)[0], 1.0);
    }

    #[test]
    fn node_homophily_half_match() {
        let cg = star_client(2, &[2, 2, 0, 1]);
        assert_eq!(node_homophily(&cg)[0], 0.5);
    }

    #[test]
    fn node_homophily_no_labeled_neighbors_is_zero() {
        // Leaves are test nodes, so the center has no labeled neighbor.
        let mut cg = star_client(0, &[0, 0]);
        cg.splits = SplitMasks::new(vec![Split::Train, Split::Test, Split::Test]);
        assert_eq!(node_homophily(&cg)[0], 0.0);
    }

    #[test]
    fn class_homophily_sums_node_values() {
        // Path 0-1-2, labels 0,0,1: h(0)=1, h(1)=1/2, h(2)=0.
        let cg = client(
            3,
            &[(0, 1), (1, 2)],
            Array2::zeros((3, 1)),
            vec![0, 0, 1],
            2,
            vec![Split::Train; 3],
        );
        let prof = class_homophily(&cg);
        assert!((prof.class[0] - 1.5).abs() < 1e-15);
        assert_eq!(prof.class[1], 0.0);
    }

    #[test]
    fn class_homophily_absent_class_is_zero() {
        let cg = star_client(0, &[0, 0]);
        let prof = class_homophily(&cg);
        assert_eq!(prof.class[2], 0.0);
    }

    #[test]
    fn class_homophily_additivity_under_duplication() {
        // Two disjoint identical stars double H(c).
        let single = star_client(0, &[0, 0]);
        let h_single = class_homophily(&single).class[0];
        let mut edges = vec![(0usize, 1usize), (0, 2), (3, 4), (3, 5)];
        edges.sort_unstable();
        let double = client(
            6,
            &edges,
            Array2::zeros((6, 1)),
            vec![0, 0, 0, 0, 0, 0],
            3,
            vec![Split::Train; 6],
        );
        let h_double = class_homophily(&double).class[0];
        assert!((h_double - 2.0 * h_single).abs() < 1e-12);
    }

    #[test]
    fn label_propagation_clamps_isolated_train_node() {
        let cg = client(
            2,
            &[],
            Array2::zeros((2, 1)),
            vec![1, -1],
            2,
            vec![Split::Train, Split::Test],
        );
        let soft = label_propagation(&cg, &HreConfig::default());
        assert_eq!(soft.matrix.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(soft.matrix.row(1).sum(), 0.0);
    }

    #[test]
    fn label_propagation_single_class_diffusion() {
        let cg = client(
            4,
            &[(0, 1), (1, 2), (2, 3)],
            Array2::zeros((4, 1)),
            vec![0, -1, -1, 0],
            2,
            vec![Split::Train, Split::Test, Split::Test, Split::Train],
        );
        let soft = label_propagation(&cg, &HreConfig::default());
        for v in 0..4 {
            let (argmax, _) = soft.prediction(v).unwrap();
            assert_eq!(argmax, 0);
        }
    }

    #[test]
    fn label_propagation_two_node_hand_iteration() {
        // One step with alpha = 0.5: node 1 row is (0.25, 0), normalized (1, 0).
        let cg = client(
            2,
            &[(0, 1)],
            Array2::zeros((2, 1)),
            vec![0, -1],
            2,
            vec![Split::Train, Split::Test],
        );
        let cfg = HreConfig {
            lp_alpha: 0.5,
            lp_iters: 1,
            ..HreConfig::default()
        };
        let soft = label_propagation(&cg, &cfg);
        assert_eq!(soft.matrix.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(soft.matrix.row(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn soft_label_rows_sum_to_one_or_zero() {
        let cg = client(
            5,
            &[(0, 1), (1, 2), (2, 0)],
            Array2::zeros((5, 1)),
            vec![0, 1, -1, -1, -1],
            2,
            vec![
                Split::Train,
                Split::Train,
                Split::Test,
                Split::Test,
                Split::Test,
            ],
        );
        let soft = label_propagation(&cg, &HreConfig::default());
        for row in soft.matrix.rows() {
            let sum = row.sum();
            assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12);
        }
    }

    /// Two dense same-label blocks with sparse cross links.
    fn planted_two_block() -> ClientGraph {
        let n = 20;
        let mut edges = Vec::new();
        for i in 0..10usize {
            for j in (i + 1)..10 {
                edges.push((i, j));
                edges.push((i + 10, j + 10));
            }
        }
        edges.push((0, 10));
        let labels: Vec<i64> = (0..n).map(|v| if v < 10 { 0 } else { 1 }).collect();
        let splits: Vec<Split> = (0..n)
            .map(|v| {
                if v % 10 < 2 {
                    Split::Train
                } else {
                    Split::Test
                }
            })
            .collect();
        client(n, &edges, Array2::zeros((n, 1)), labels, 2, splits)
    }

    #[test]
    fn hre_selects_only_correct_labels_on_planted_blocks() {
        let cg = planted_two_block();
        let prof = class_homophily(&cg);
        // Clique nodes have degree 9; the bridge pulls the mean above that,
        // so the threshold is pinned below the clique degree here.
        let cfg = HreConfig {
            degree_threshold: Some(5.0),
            ..HreConfig::default()
        };
        let soft = label_propagation(&cg, &cfg);
        let picked = hre_expand(&cg, &soft, &prof, &cfg);
        assert!(!picked.is_empty());
        for (v, y) in picked {
            assert_eq!(Some(y), cg.labels.get(v), "node {v}");
        }
    }

    #[test]
    fn hre_is_a_conjunction_of_criteria() {
        let cg = planted_two_block();
        let prof = class_homophily(&cg);
        let cfg = HreConfig {
            degree_threshold: Some(5.0),
            ..HreConfig::default()
        };
        let soft = label_propagation(&cg, &cfg);
        let baseline = hre_expand(&cg, &soft, &prof, &cfg);
        assert!(!baseline.is_empty());

        // Degree criterion alone removes everything.
        let strict_degree = HreConfig {
            degree_threshold: Some(1e9),
            ..cfg.clone()
        };
        assert!(hre_expand(&cg, &soft, &prof, &strict_degree).is_empty());

        // Class criterion alone removes class-1 picks.
        let one_class = HreConfig {
            top_k: 1,
            ..cfg.clone()
        };
        let admitted = prof.top_k_classes(1)[0];
        for (_, y) in hre_expand(&cg, &soft, &prof, &one_class) {
            assert_eq!(y, admitted);
        }
    }

    #[test]
    fn hre_confidence_one_admits_only_exact_one_hot() {
        let cg = planted_two_block();
        let prof = class_homophily(&cg);
        let cfg = HreConfig {
            confidence_threshold: 1.0,
            ..HreConfig::default()
        };
        let soft = label_propagation(&cg, &cfg);
        for (v, _) in hre_expand(&cg, &soft, &prof, &cfg) {
            let (_, conf) = soft.prediction(v).unwrap();
            assert!(conf >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn class_stats_two_samples() {
        // Edgeless pair of class-0 nodes with propagated scalars 1 and 3.
        let cg = client(
            2,
            &[],
            array![[1.0], [3.0]],
            vec![0, 0],
            1,
            vec![Split::Train, Split::Train],
        );
        let prop = propagate_features(&cg, 0);
        let stats = estimate_class_stats(&cg, &prop, &StatsConfig::default(), &[]);
        let m = stats.classes[0].as_ref().unwrap();
        assert_eq!(m.count, 2);
        assert_eq!(m.mean[0], 2.0);
        assert_eq!(m.variance[0], 2.0);
    }

    #[test]
    fn class_stats_below_threshold_absent() {
        let cg = client(
            2,
            &[],
            array![[1.0], [3.0]],
            vec![0, 1],
            2,
            vec![Split::Train, Split::Train],
        );
        let prop = propagate_features(&cg, 0);
        let stats = estimate_class_stats(&cg, &prop, &StatsConfig::default(), &[]);
        assert!(stats.classes[0].is_none());
        assert!(stats.classes[1].is_none());
    }

    #[test]
    fn class_stats_hre_union_recomputed() {
        // Adding a pseudo-labeled node with value 2.0 to {1.0, 3.0}.
        let cg = client(
            3,
            &[],
            array![[1.0], [3.0], [2.0]],
            vec![0, 0, -1],
            1,
            vec![Split::Train, Split::Train, Split::Test],
        );
        let prop = propagate_features(&cg, 0);
        let stats =
            estimate_class_stats(&cg, &prop, &StatsConfig::default(), &[(2, 0)]);
        let m = stats.classes[0].as_ref().unwrap();
        assert_eq!(m.count, 3);
        assert_eq!(m.mean[0], 2.0);
        assert_eq!(m.variance[0], 1.0);
    }

    #[test]
    fn class_stats_match_two_pass_oracle() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(99);
        for _ in 0..20 {
            let n = rng.random_range(4..40);
            let f = rng.random_range(1..5);
            let feats = Array2::from_shape_fn((n, f), |_| rng.random_range(-3.0..3.0));
            let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let cg = client(n, &[], feats, labels.clone(), 3, vec![Split::Train; n]);
            let prop = propagate_features(&cg, 0);
            let stats = estimate_class_stats(&cg, &prop, &StatsConfig::default(), &[]);
            for c in 0..3 {
                let rows: Vec<usize> =
                    (0..n).filter(|&v| labels[v] == c as i64).collect();
                if rows.len() < 2 {
                    assert!(stats.classes[c].is_none());
                    continue;
                }
                let m = stats.classes[c].as_ref().unwrap();
                for col in 0..f {
                    let vals: Vec<f64> = rows.iter().map(|&v| prop[(v, col)]).collect();
                    let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var: f64 = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                        / (vals.len() - 1) as f64;
                    assert!((m.mean[col] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
                    assert!((m.variance[col] - var).abs() <= 1e-12 * var.abs().max(1.0));
                    assert!(m.variance[col] >= 0.0);
                }
            }
        }
    }
}
