//! Server-side synthesis of the global surrogate graph.
//!
//! A small set of learnable node features `X'` (rows grouped by class) and
//! a link predictor jointly parameterize a soft adjacency `P` in `(0,1)`.
//! During optimization, features propagate through the normalized soft
//! adjacency (`P + I`, degree-normalized exactly like a real graph) and the
//! per-class mean/variance of the propagated features is matched against
//! the pooled global statistics (alignment loss, classes weighted by their
//! global sample share), optionally together with a feature-smoothness
//! term. All gradients — through the propagation chain, the degree
//! normalization, the pairwise link predictor, and back into `X'` — are
//! analytic and finite-difference checked. The hard adjacency appears only
//! at the end, by thresholding `P` at the sparsity parameter.

use crate::error::{Error, Result};
use crate::gnn::{adam_step, AdamHyper, AdamState};
use crate::graph::{DatasetBundle, Graph, LabelVector, Split, SplitMasks};
use crate::rng::rng_from_seed;
use crate::secure::GlobalStats;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Surrogate sizing policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodesPerClass {
    /// The same node count for every present class.
    Fixed(usize),
    /// `max(1, round(fraction * N^c))` nodes for class c.
    Fraction(f64),
}

/// How the soft adjacency is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// Symmetrized pairwise MLP on concatenated features (the default).
    Mlp,
    /// A directly learnable logit matrix.
    Direct,
    /// Dot product of L2-normalized features, no extra parameters.
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInit {
    /// Pure `0.1 * N(0, 1)` rows.
    Gaussian,
    /// Gaussian noise shifted by the class mean's leading feature block.
    MeanShifted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub nodes_per_class: NodesPerClass,
    /// Sparsity threshold delta in [0, 1]; edges where `P >= delta`.
    pub sparsity: f64,
    /// Weight of the smoothness term in the objective.
    pub smoothness_weight: f64,
    /// Propagation depth; must match the clients' statistics depth.
    pub prop_depth: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Hidden layer widths of the link-predictor MLP.
    pub hidden: Vec<usize>,
    pub adjacency: AdjacencyMode,
    pub init: FeatureInit,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            nodes_per_class: NodesPerClass::Fixed(1),
            sparsity: 0.5,
            smoothness_weight: 0.1,
            prop_depth: 1,
            learning_rate: 0.01,
            steps: 2000,
            hidden: vec![128, 128],
            adjacency: AdjacencyMode::Mlp,
            init: FeatureInit::MeanShifted,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config("sparsity must be in [0, 1]".into()));
        }
        if self.smoothness_weight < 0.0 {
            return Err(Error::Config("smoothness_weight must be >= 0".into()));
        }
        if let NodesPerClass::Fraction(p) = self.nodes_per_class {
            if p <= 0.0 {
                return Err(Error::Config("fraction must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// The surrogate graph under construction (and, after
/// [`finalize_adjacency`], the frozen artifact).
#[derive(Debug, Clone)]
pub struct SurrogateGraph {
    /// Learnable features, frozen after finalization.
    pub features: Array2<f64>,
    /// Assigned class per node, grouped by class.
    pub labels: Vec<i64>,
    pub num_classes: usize,
    /// Soft adjacency from the last evaluation (symmetric, zero diagonal).
    pub soft_adjacency: Array2<f64>,
    /// Hard adjacency; present only after finalization.
    pub adjacency: Option<Graph>,
}

impl SurrogateGraph {
    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Export the finalized surrogate as a dataset bundle (all nodes
    /// labeled and tagged train), the download payload for clients.
    pub fn to_bundle(&self, name: &str) -> Result<DatasetBundle> {
        let graph = self
            .adjacency
            .clone()
            .ok_or_else(|| Error::Shape("surrogate adjacency not finalized".into()))?;
        DatasetBundle::new(
            name,
            graph,
            self.features.clone(),
            LabelVector::new(self.labels.clone(), self.num_classes)?,
            SplitMasks::new(vec![Split::Train; self.num_nodes()]),
        )
    }
}

/// Link predictor: the learnable half of the soft adjacency.
#[derive(Debug, Clone)]
pub struct LinkPredictor {
    pub mode: AdjacencyMode,
    layer_dims: Vec<usize>,
    /// Mlp: `[w0, b0, w1, b1, ...]` with biases as 1-row matrices;
    /// Direct: `[logits]` (n x n); Dot: empty.
    params: Vec<Array2<f64>>,
}

impl LinkPredictor {
    /// Small-uniform MLP weights / zero logits, deterministic per seed.
    pub fn init(
        mode: AdjacencyMode,
        feature_dim: usize,
        num_nodes: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::new();
        let mut layer_dims = Vec::new();
        match mode {
            AdjacencyMode::Mlp => {
                let mut dims = vec![2 * feature_dim];
                dims.extend_from_slice(hidden);
                dims.push(1);
                layer_dims = dims.clone();
                for w in dims.windows(2) {
                    params.push(Array2::from_shape_fn((w[0], w[1]), |_| {
                        rng.random_range(-0.05..0.05)
                    }));
                    params.push(Array2::zeros((1, w[1])));
                }
            }
            AdjacencyMode::Direct => {
                params.push(Array2::zeros((num_nodes, num_nodes)));
            }
            AdjacencyMode::Dot => {}
        }
        LinkPredictor {
            mode,
            layer_dims,
            params,
        }
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediates of a soft-adjacency evaluation.
struct PairCache {
    /// Ordered pairs (i, j), i != j, in row-major order.
    pairs: Vec<(usize, usize)>,
    /// Per-layer inputs of the MLP (activations before each linear layer).
    mlp_inputs: Vec<Array2<f64>>,
    /// Pre-activations of each MLP layer.
    mlp_pre: Vec<Array2<f64>>,
    /// L2-normalized features and norms (dot mode).
    normalized: Array2<f64>,
    norms: Vec<f64>,
}

/// Symmetric soft adjacency in `(0, 1)` with zero diagonal.
pub fn soft_adjacency(x: &Array2<f64>, lp: &LinkPredictor) -> Array2<f64> {
    soft_adjacency_cached(x, lp).0
}

fn soft_adjacency_cached(x: &Array2<f64>, lp: &LinkPredictor) -> (Array2<f64>, PairCache) {
    let n = x.nrows();
    let f = x.ncols();
    let mut cache = PairCache {
        pairs: Vec::new(),
        mlp_inputs: Vec::new(),
        mlp_pre: Vec::new(),
        normalized: Array2::zeros((0, 0)),
        norms: Vec::new(),
    };
    let mut p = Array2::zeros((n, n));
    match lp.mode {
        AdjacencyMode::Mlp => {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        cache.pairs.push((i, j));
                    }
                }
            }
            let rows = cache.pairs.len();
            let mut input = Array2::zeros((rows, 2 * f));
            for (r, &(i, j)) in cache.pairs.iter().enumerate() {
                for c in 0..f {
                    input[(r, c)] = x[(i, c)];
                    input[(r, f + c)] = x[(j, c)];
                }
            }
            // MLP forward with ReLU between layers, linear last layer.
            let num_layers = lp.layer_dims.len() - 1;
            let mut act = input;
            for l in 0..num_layers {
                cache.mlp_inputs.push(act.clone());
                let z = act.dot(&lp.params[2 * l]) + &lp.params[2 * l + 1];
                cache.mlp_pre.push(z.clone());
                act = if l + 1 < num_layers {
                    z.mapv(|v| v.max(0.0))
                } else {
                    z
                };
            }
            // z_ij at row of (i, j); logit = (z_ij + z_ji) / 2.
            let mut row_of = std::collections::HashMap::new();
            for (r, &(i, j)) in cache.pairs.iter().enumerate() {
                row_of.insert((i, j), r);
            }
            for (&(i, j), &r) in &row_of {
                if i < j {
                    let rj = row_of[&(j, i)];
                    let logit = 0.5 * (act[(r, 0)] + act[(rj, 0)]);
                    let value = sigmoid(logit);
                    p[(i, j)] = value;
                    p[(j, i)] = value;
                }
            }
        }
        AdjacencyMode::Direct => {
            let theta = &lp.params[0];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        p[(i, j)] = sigmoid(0.5 * (theta[(i, j)] + theta[(j, i)]));
                    }
                }
            }
        }
        AdjacencyMode::Dot => {
            let mut normalized = x.clone();
            let mut norms = Vec::with_capacity(n);
            for mut row in normalized.rows_mut() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                row /= norm;
                norms.push(norm);
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let dot = normalized.row(i).dot(&normalized.row(j));
                        p[(i, j)] = sigmoid(dot);
                    }
                }
            }
            cache.normalized = normalized;
            cache.norms = norms;
        }
    }
    (p, cache)
}

/// Backpropagate `dL/dP` (full-matrix convention) through the link
/// predictor; returns parameter gradients and the feature gradient.
fn soft_adjacency_backward(
    x: &Array2<f64>,
    lp: &LinkPredictor,
    p: &Array2<f64>,
    cache: &PairCache,
    dp: &Array2<f64>,
) -> (Vec<Array2<f64>>, Array2<f64>) {
    let n = x.nrows();
    let f = x.ncols();
    let mut dparams: Vec<Array2<f64>> = lp
        .params
        .iter()
        .map(|q| Array2::zeros(q.raw_dim()))
        .collect();
    let mut dx = Array2::zeros((n, f));

    match lp.mode {
        AdjacencyMode::Mlp => {
            // Gradient on each ordered pair's MLP output.
            let rows = cache.pairs.len();
            let mut dz_out = Array2::zeros((rows, 1));
            let mut row_of = std::collections::HashMap::new();
            for (r, &(i, j)) in cache.pairs.iter().enumerate() {
                row_of.insert((i, j), r);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let dl = (dp[(i, j)] + dp[(j, i)]) * p[(i, j)] * (1.0 - p[(i, j)]);
                    dz_out[(row_of[&(i, j)], 0)] = 0.5 * dl;
                    dz_out[(row_of[&(j, i)], 0)] = 0.5 * dl;
                }
            }
            // MLP backward.
            let num_layers = lp.layer_dims.len() - 1;
            let mut grad = dz_out;
            for l in (0..num_layers).rev() {
                if l + 1 < num_layers {
                    // grad is w.r.t. the ReLU output of layer l.
                    grad = &grad
                        * &cache.mlp_pre[l].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                }
                dparams[2 * l] = cache.mlp_inputs[l].t().dot(&grad);
                dparams[2 * l + 1] = grad
                    .sum_axis(ndarray::Axis(0))
                    .insert_axis(ndarray::Axis(0));
                grad = grad.dot(&lp.params[2 * l].t());
            }
            // grad is now w.r.t. the pair inputs [x_i || x_j].
            for (r, &(i, j)) in cache.pairs.iter().enumerate() {
                for c in 0..f {
                    dx[(i, c)] += grad[(r, c)];
                    dx[(j, c)] += grad[(r, f + c)];
                }
            }
        }
        AdjacencyMode::Direct => {
            let dtheta = &mut dparams[0];
            for i in 0..n {
                for j in (i + 1)..n {
                    let dl = (dp[(i, j)] + dp[(j, i)]) * p[(i, j)] * (1.0 - p[(i, j)]);
                    dtheta[(i, j)] += 0.5 * dl;
                    dtheta[(j, i)] += 0.5 * dl;
                }
            }
        }
        AdjacencyMode::Dot => {
            let normalized = &cache.normalized;
            let mut dnorm = Array2::zeros((n, f));
            for i in 0..n {
                for j in (i + 1)..n {
                    let dl = (dp[(i, j)] + dp[(j, i)]) * p[(i, j)] * (1.0 - p[(i, j)]);
                    for c in 0..f {
                        dnorm[(i, c)] += dl * normalized[(j, c)];
                        dnorm[(j, c)] += dl * normalized[(i, c)];
                    }
                }
            }
            // Through the L2 normalization: dx = (dn - nhat (nhat . dn)) / norm.
            for i in 0..n {
                let nhat = normalized.row(i);
                let dn = dnorm.row(i);
                let inner = nhat.dot(&dn);
                for c in 0..f {
                    dx[(i, c)] += (dn[c] - nhat[c] * inner) / cache.norms[i];
                }
            }
        }
    }
    (dparams, dx)
}

/// Loss terms of one objective evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub alignment: f64,
    pub smoothness: f64,
}

/// Gradients of the objective w.r.t. the features and predictor params.
pub struct ObjectiveGrads {
    pub features: Array2<f64>,
    pub predictor: Vec<Array2<f64>>,
}

struct Objective<'a> {
    stats: &'a GlobalStats,
    labels: &'a [i64],
    num_classes: usize,
    prop_depth: usize,
    include_alignment: bool,
    smoothness_weight: f64,
}

impl Objective<'_> {
    /// Forward + backward in one pass.
    fn evaluate(
        &self,
        x: &Array2<f64>,
        lp: &LinkPredictor,
    ) -> Result<(LossBreakdown, Array2<f64>, ObjectiveGrads)> {
        let n = x.nrows();
        let f = x.ncols();
        let expect = (self.prop_depth + 1) * f;
        if self.include_alignment && self.stats.dim != expect {
            return Err(Error::Shape(format!(
                "global statistics dimension {} does not match (h+1)*f = {expect}",
                self.stats.dim
            )));
        }

        let (p, pair_cache) = soft_adjacency_cached(x, lp);

        // Soft normalized adjacency of P + I.
        let degree: Vec<f64> = (0..n).map(|i| 1.0 + p.row(i).sum()).collect();
        let mut a_soft = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let s = if i == j { 1.0 } else { p[(i, j)] };
                a_soft[(i, j)] = s / (degree[i] * degree[j]).sqrt();
            }
        }

        // Propagation chain.
        let mut blocks = vec![x.clone()];
        for t in 1..=self.prop_depth {
            let next = a_soft.dot(&blocks[t - 1]);
            blocks.push(next);
        }

        // Alignment loss over the propagated blocks.
        let mut align = 0.0;
        let mut dblocks: Vec<Array2<f64>> = blocks
            .iter()
            .map(|b| Array2::zeros(b.raw_dim()))
            .collect();
        if self.include_alignment {
            let members = {
                let mut m = vec![Vec::new(); self.num_classes];
                for (v, &y) in self.labels.iter().enumerate() {
                    m[y as usize].push(v);
                }
                m
            };
            for c in 0..self.num_classes {
                let Some(target) = self.stats.classes[c].as_ref() else {
                    continue;
                };
                let nodes = &members[c];
                if nodes.is_empty() {
                    continue;
                }
                let nc = nodes.len() as f64;
                let lambda = target.proportion;
                let with_variance = nodes.len() >= 2;
                for (t, block) in blocks.iter().enumerate() {
                    for col in 0..f {
                        let gcol = t * f + col;
                        let mean: f64 =
                            nodes.iter().map(|&v| block[(v, col)]).sum::<f64>() / nc;
                        let dm = mean - target.mean[gcol];
                        align += lambda * dm * dm;
                        for &v in nodes {
                            dblocks[t][(v, col)] += lambda * 2.0 * dm / nc;
                        }
                        if with_variance {
                            let var: f64 = nodes
                                .iter()
                                .map(|&v| (block[(v, col)] - mean).powi(2))
                                .sum::<f64>()
                                / (nc - 1.0);
                            let dv = var - target.variance[gcol];
                            align += lambda * dv * dv;
                            for &v in nodes {
                                dblocks[t][(v, col)] += lambda
                                    * 2.0
                                    * dv
                                    * 2.0
                                    * (block[(v, col)] - mean)
                                    / (nc - 1.0);
                            }
                        }
                    }
                }
            }
        }

        // Smoothness loss over P and the raw features.
        let mut smooth = 0.0;
        let mut dp: Array2<f64> = Array2::zeros((n, n));
        let mut dx_smooth: Array2<f64> = Array2::zeros((n, f));
        if self.smoothness_weight > 0.0 && n >= 2 {
            let mut weight_sum = 0.0;
            let mut weighted = 0.0;
            let mut sim = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dist2: f64 = (0..f)
                        .map(|c| (x[(i, c)] - x[(j, c)]).powi(2))
                        .sum();
                    let w = (-dist2 / 2.0).exp();
                    sim[(i, j)] = w;
                    weight_sum += p[(i, j)];
                    weighted += p[(i, j)] * w;
                }
            }
            let value = weighted / weight_sum;
            smooth = value;
            let alpha = self.smoothness_weight;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    dp[(i, j)] += alpha * (sim[(i, j)] - value) / weight_sum;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    // d w_ij / d x_i = w_ij * (x_j - x_i); both orders hit x_i.
                    let scale = alpha * 2.0 * p[(i, j)] * sim[(i, j)] / weight_sum;
                    for c in 0..f {
                        dx_smooth[(i, c)] += scale * (x[(j, c)] - x[(i, c)]);
                    }
                }
            }
        }

        // Backward through the propagation chain.
        let mut d_a: Array2<f64> = Array2::zeros((n, n));
        let mut g = dblocks[self.prop_depth].clone();
        for t in (1..=self.prop_depth).rev() {
            d_a = d_a + g.dot(&blocks[t - 1].t());
            g = a_soft.dot(&g) + &dblocks[t - 1]; // a_soft is symmetric
        }
        let mut dx = g; // block-0 path

        // Through the normalization: A_ij = S_ij / sqrt(D_i D_j),
        // D_i = sum_j S_ij, S = P + I with unit diagonal held constant.
        if self.prop_depth > 0 {
            let mut ddeg = vec![0.0f64; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += d_a[(i, j)] * a_soft[(i, j)] + d_a[(j, i)] * a_soft[(j, i)];
                }
                ddeg[i] = -acc / (2.0 * degree[i]);
            }
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue; // diagonal of S is constant
                    }
                    dp[(i, j)] += d_a[(i, j)] / (degree[i] * degree[j]).sqrt() + ddeg[i];
                }
            }
        }

        // Through the link predictor into theta and X'.
        let (dpredictor, dx_pairs) = soft_adjacency_backward(x, lp, &p, &pair_cache, &dp);
        dx = dx + &dx_pairs + &dx_smooth;

        let breakdown = LossBreakdown {
            total: align + self.smoothness_weight * smooth,
            alignment: align,
            smoothness: smooth,
        };
        Ok((
            breakdown,
            p,
            ObjectiveGrads {
                features: dx,
                predictor: dpredictor,
            },
        ))
    }
}

/// Alignment loss and its gradients w.r.t. the features and predictor.
pub fn alignment_loss(
    x: &Array2<f64>,
    lp: &LinkPredictor,
    labels: &[i64],
    num_classes: usize,
    stats: &GlobalStats,
    prop_depth: usize,
) -> Result<(f64, ObjectiveGrads)> {
    let obj = Objective {
        stats,
        labels,
        num_classes,
        prop_depth,
        include_alignment: true,
        smoothness_weight: 0.0,
    };
    let (loss, _, grads) = obj.evaluate(x, lp)?;
    Ok((loss.alignment, grads))
}

/// Smoothness loss (unweighted) and its gradients.
pub fn smoothness_loss(
    x: &Array2<f64>,
    lp: &LinkPredictor,
    stats: &GlobalStats,
) -> Result<(f64, ObjectiveGrads)> {
    let obj = Objective {
        stats,
        labels: &[],
        num_classes: 0,
        prop_depth: 0,
        include_alignment: false,
        smoothness_weight: 1.0,
    };
    let (loss, _, grads) = obj.evaluate(x, lp)?;
    Ok((loss.smoothness, grads))
}

/// Total objective `L_align + alpha * L_smt` with gradients and the
/// current soft adjacency.
pub fn total_loss(
    sg: &SurrogateGraph,
    lp: &LinkPredictor,
    stats: &GlobalStats,
    cfg: &GenConfig,
) -> Result<(LossBreakdown, Array2<f64>, ObjectiveGrads)> {
    let obj = Objective {
        stats,
        labels: &sg.labels,
        num_classes: sg.num_classes,
        prop_depth: cfg.prop_depth,
        include_alignment: true,
        smoothness_weight: cfg.smoothness_weight,
    };
    obj.evaluate(&sg.features, lp)
}

/// Number of surrogate nodes for each present class under the policy.
pub fn class_node_counts(stats: &GlobalStats, policy: NodesPerClass) -> Vec<usize> {
    stats
        .classes
        .iter()
        .map(|m| match m {
            None => 0,
            Some(m) => match policy {
                NodesPerClass::Fixed(k) => k.max(1),
                NodesPerClass::Fraction(p) => ((p * m.count).round() as usize).max(1),
            },
        })
        .collect()
}

/// Initialize the surrogate features, labels, and link predictor.
pub fn init_surrogate(
    stats: &GlobalStats,
    cfg: &GenConfig,
    seed: u64,
) -> Result<(SurrogateGraph, LinkPredictor)> {
    cfg.validate()?;
    let counts = class_node_counts(stats, cfg.nodes_per_class);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Shape("no present class in the global statistics".into()));
    }
    let f = stats.dim / (cfg.prop_depth + 1);
    if f * (cfg.prop_depth + 1) != stats.dim {
        return Err(Error::Shape(format!(
            "statistics dimension {} is not divisible by h+1 = {}",
            stats.dim,
            cfg.prop_depth + 1
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut features = Array2::zeros((total, f));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for col in 0..f {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features[(row, col)] = 0.1 * noise;
                if cfg.init == FeatureInit::MeanShifted {
                    // Leading f entries of the class mean are the raw
                    // (depth-0) feature block.
                    features[(row, col)] += stats.classes[c].as_ref().unwrap().mean[col];
                }
            }
            labels.push(c as i64);
            row += 1;
        }
    }

    let lp = LinkPredictor::init(
        cfg.adjacency,
        f,
        total,
        &cfg.hidden,
        crate::rng::derive_seed(seed, "link-predictor"),
    );
    let soft = soft_adjacency(&features, &lp);
    Ok((
        SurrogateGraph {
            features,
            labels,
            num_classes: stats.num_classes(),
            soft_adjacency: soft,
            adjacency: None,
        },
        lp,
    ))
}

/// Jointly optimize the features and link predictor with Adam, keeping the
/// best-loss iterate. Returns the loss trajectory.
pub fn optimize_surrogate(
    sg: &mut SurrogateGraph,
    lp: &mut LinkPredictor,
    stats: &GlobalStats,
    cfg: &GenConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let hyper = AdamHyper {
        learning_rate: cfg.learning_rate,
        ..AdamHyper::default()
    };

    // One flat parameter list: features first, then predictor params.
    let mut params: Vec<Array2<f64>> = Vec::with_capacity(1 + lp.params().len());
    params.push(sg.features.clone());
    params.extend(lp.params().iter().cloned());
    let mut state = AdamState::new(&params);

    let mut trajectory = Vec::with_capacity(cfg.steps + 1);
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();

    for step in 0..=cfg.steps {
        sg.features = params[0].clone();
        for (dst, src) in lp.params_mut().iter_mut().zip(&params[1..]) {
            *dst = src.clone();
        }
        let (loss, soft, grads) = total_loss(sg, lp, stats, cfg)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "surrogate optimization diverged at step {step}: loss {}",
                loss.total
            )));
        }
        trajectory.push(loss.total);
        if loss.total < best_loss {
            best_loss = loss.total;
            best_params = params.clone();
        }
        sg.soft_adjacency = soft;
        if step == cfg.steps {
            break;
        }

        let mut grad_list = Vec::with_capacity(params.len());
        grad_list.push(grads.features);
        grad_list.extend(grads.predictor);
        adam_step(&mut params, &grad_list, &mut state, &hyper)?;
    }

    // Restore the best iterate and its soft adjacency.
    sg.features = best_params[0].clone();
    for (dst, src) in lp.params_mut().iter_mut().zip(&best_params[1..]) {
        *dst = src.clone();
    }
    sg.soft_adjacency = soft_adjacency(&sg.features, lp);
    Ok(trajectory)
}

/// Threshold the soft adjacency into the hard symmetric adjacency
/// (`P_ij >= delta`, no self-loops) and freeze the features at the
/// distribution precision (32-bit floats, matching the bundle codec).
pub fn finalize_adjacency(sg: &mut SurrogateGraph, delta: f64) -> Result<()> {
    let n = sg.num_nodes();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if sg.soft_adjacency[(i, j)] >= delta {
                edges.push((i, j));
            }
        }
    }
    sg.adjacency = Some(Graph::from_edges(n, &edges)?);
    sg.features.mapv_inplace(|v| v as f32 as f64);
    Ok(())
}
