//! Two-stage personalized training: a generalized model trained on the
//! surrogate graph, then local fine-tuning with node-adaptive distillation.
//!
//! The distillation weight of node i is `gamma_i = beta * y_i . w_dist`
//! where `y_i` is the node's soft label and `w_dist[c] = 1/(1 + ln(H(c)+1))`
//! shrinks with class homophily: nodes predicted into numerous,
//! well-connected classes learn mostly by fine-tuning, while minority and
//! low-homophily nodes lean on the frozen teacher. Stage 2 distills on
//! every local node (inputs only; no label is consumed outside the train
//! mask), with the teacher logits computed once and cached.

use crate::error::{Error, Result};
use crate::gnn::{
    accuracy_on, adam_step, cross_entropy_loss, kl_divergence_loss, model_backward,
    model_forward, train_supervised, AdamState, GnnModel, KlDirection, ModelSpec, TrainConfig,
    TrainHistory,
};
use crate::graph::{ClientGraph, DatasetBundle, Split};
use crate::stats::{HomophilyProfile, SoftLabels};
use serde::{Deserialize, Serialize};

/// Ablation switch of the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Node-adaptive distillation.
    Full,
    /// Fine-tuning only (distillation off).
    FtOnly,
    /// The same fixed weight for every node.
    FixedGamma(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonalizeConfig {
    /// Scaling hyper-parameter of the distillation weights.
    pub beta: f64,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub ablation: Ablation,
    pub kl_direction: KlDirection,
}

impl Default for PersonalizeConfig {
    fn default() -> Self {
        PersonalizeConfig {
            beta: 0.5,
            stage1: TrainConfig::default(),
            stage2: TrainConfig::default(),
            ablation: Ablation::Full,
            kl_direction: KlDirection::TeacherReference,
        }
    }
}

impl PersonalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be > 0".into()));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

/// Class-aware distillation weights: `1 / (1 + ln(H(c) + 1))`.
///
/// Entries lie in `(0, 1]` and strictly decrease in `H(c)`.
pub fn compute_w_dist(profile: &HomophilyProfile) -> Vec<f64> {
    profile
        .class
        .iter()
        .map(|&h| 1.0 / (1.0 + (h + 1.0).ln()))
        .collect()
}

/// Per-node distillation weights `gamma_i = beta * y_i . w_dist`.
///
/// Nodes the label propagation never reached (all-zero soft rows) get the
/// maximal weight `beta * max(w_dist)`: with no local evidence they rely
/// entirely on the teacher.
pub fn compute_gamma(soft: &SoftLabels, w_dist: &[f64], beta: f64) -> Vec<f64> {
    let max_w = w_dist.iter().copied().fold(0.0f64, f64::max);
    soft.matrix
        .rows()
        .into_iter()
        .map(|row| {
            let sum: f64 = row.sum();
            if sum <= 0.0 {
                beta * max_w
            } else {
                beta * row.iter().zip(w_dist).map(|(y, w)| y * w).sum::<f64>()
            }
        })
        .collect()
}

/// The per-node weights actually used in stage 2 under an ablation mode.
pub fn effective_gamma(ablation: Ablation, full_gamma: &[f64]) -> Vec<f64> {
    match ablation {
        Ablation::Full => full_gamma.to_vec(),
        Ablation::FtOnly => vec![0.0; full_gamma.len()],
        Ablation::FixedGamma(g) => vec![g; full_gamma.len()],
    }
}

/// Stage 1: train a generalized model on the surrogate graph (every node
/// labeled). Returns the frozen teacher and the trainable initialization,
/// parameter-identical at return.
pub fn stage1_train_global(
    surrogate: &DatasetBundle,
    spec: ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(GnnModel, GnnModel, TrainHistory)> {
    let adj = surrogate.graph.normalized_adjacency();
    let train: Vec<usize> = surrogate.splits.nodes_with(Split::Train);
    let model = GnnModel::init(spec, surrogate.feature_dim(), surrogate.num_classes(), seed);
    let (trained, history) = train_supervised(
        model,
        &adj,
        &surrogate.features,
        surrogate.labels.raw(),
        &train,
        &[],
        cfg,
    )?;
    Ok((trained.clone(), trained, history))
}

/// Stage 2: fine-tune the initialization on the local graph with
/// node-adaptive distillation from the frozen teacher.
///
/// Per epoch the loss is cross-entropy over train nodes plus
/// `sum_i gamma_i * KL(teacher_i, student_i)` over all local nodes; the
/// teacher logits are computed once and cached. With every `gamma_i = 0`
/// this is exactly supervised fine-tuning. A client without train nodes
/// learns from distillation alone.
pub fn stage2_finetune(
    init: GnnModel,
    teacher: &GnnModel,
    cg: &ClientGraph,
    gamma: &[f64],
    cfg: &TrainConfig,
    direction: KlDirection,
) -> Result<(GnnModel, TrainHistory)> {
    cfg.validate()?;
    if gamma.len() != cg.num_nodes() {
        return Err(Error::Shape(format!(
            "{} gamma weights for {} nodes",
            gamma.len(),
            cg.num_nodes()
        )));
    }
    let adj = cg.graph.normalized_adjacency();
    let (teacher_logits, _) = model_forward(teacher, &adj, &cg.features)?;

    let train: Vec<usize> = cg.splits.nodes_with(Split::Train);
    let val: Vec<usize> = cg.splits.nodes_with(Split::Val);
    let labels = cg.labels.raw();
    let hyper = cfg.adam();

    let mut model = init;
    let mut state = AdamState::new(model.params());
    let mut history = TrainHistory::default();

    let mut best_params = model.params().to_vec();
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut since_improvement = 0usize;

    for epoch in 0..=cfg.epochs {
        let (logits, cache) = model_forward(&model, &adj, &cg.features)?;
        let (ce, dce) = if train.is_empty() {
            (0.0, ndarray::Array2::zeros(logits.raw_dim()))
        } else {
            cross_entropy_loss(&logits, labels, &train)?
        };
        let (kl, dkl) = kl_divergence_loss(&logits, &teacher_logits, gamma, direction)?;
        let loss = ce + kl;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "stage-2 fine-tuning diverged at epoch {epoch}: loss {loss}"
            )));
        }
        history.train_loss.push(loss);

        if val.is_empty() {
            if loss < best_loss {
                best_loss = loss;
                best_params = model.params().to_vec();
                best_epoch = epoch;
            }
        } else {
            let val_acc = accuracy_on(&logits, labels, &val);
            history.val_accuracy.push(val_acc);
            if val_acc > best_val {
                best_val = val_acc;
                best_params = model.params().to_vec();
                best_epoch = epoch;
                since_improvement = 0;
            } else {
                since_improvement += 1;
                if since_improvement > cfg.patience {
                    break;
                }
            }
        }

        if epoch == cfg.epochs {
            break;
        }
        let grads = model_backward(&model, &adj, &cache, &(dce + dkl));
        adam_step(model.params_mut(), &grads, &mut state, &hyper)?;
    }

    for (dst, src) in model.params_mut().iter_mut().zip(best_params) {
        *dst = src;
    }
    history.best_epoch = best_epoch;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, LabelVector, SplitMasks};
    use crate::stats::HomophilyProfile;
    use ndarray::Array2;
    use rand::Rng as _;

    fn profile(class: Vec<f64>) -> HomophilyProfile {
        HomophilyProfile {
            node: Vec::new(),
            class,
        }
    }

    #[test]
    fn w_dist_fixed_points() {
        let w = compute_w_dist(&profile(vec![0.0, std::f64::consts::E - 1.0]));
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn w_dist_is_strictly_antitone() {
        let w = compute_w_dist(&profile(vec![0.0, 0.5, 1.0, 3.0, 10.0]));
        for pair in w.windows(2) {
            assert!(pair[0] > pair[1]);
        }
        assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    fn soft_from(rows: Vec<Vec<f64>>) -> SoftLabels {
        let n = rows.len();
        let c = rows[0].len();
        SoftLabels {
            matrix: Array2::from_shape_fn((n, c), |(i, j)| rows[i][j]),
        }
    }

    #[test]
    fn gamma_one_hot_and_uniform_and_mixed() {
        let w = vec![1.0, 0.5];
        let soft = soft_from(vec![
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.0, 0.0], // unreached
        ]);
        let gamma = compute_gamma(&soft, &w, 0.5);
        assert!((gamma[0] - 0.5).abs() < 1e-15);
        assert!((gamma[1] - 0.375).abs() < 1e-15);
        assert!((gamma[2] - 0.5).abs() < 1e-15); // beta * max(w)
    }

    #[test]
    fn gamma_uniform_soft_label_is_beta_times_mean() {
        let w = vec![0.9, 0.6, 0.3];
        let soft = soft_from(vec![vec![1.0 / 3.0; 3]]);
        let gamma = compute_gamma(&soft, &w, 1.0);
        assert!((gamma[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn gamma_bounds_hold_on_random_inputs() {
        let mut rng = crate::rng::rng_from_seed(8);
        for _ in 0..50 {
            let c = rng.random_range(2..6);
            let n = rng.random_range(1..20);
            let h: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..20.0)).collect();
            let w = compute_w_dist(&profile(h));
            let beta = rng.random_range(0.1..1.0);
            let mut matrix = Array2::zeros((n, c));
            for mut row in matrix.rows_mut() {
                if rng.random_range(0.0..1.0) < 0.2 {
                    continue; // unreached row
                }
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = rng.random_range(0.0..1.0);
                    sum += *v;
                }
                row.mapv_inplace(|v| v / sum);
            }
            let gamma = compute_gamma(&SoftLabels { matrix }, &w, beta);
            let bound = beta * w.iter().copied().fold(0.0f64, f64::max);
            for g in gamma {
                assert!(g >= 0.0 && g <= bound + 1e-12);
            }
        }
    }

    fn toy_client(seed: u64) -> ClientGraph {
        let mut rng = crate::rng::rng_from_seed(seed);
        let n = 16;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if (u < n / 2) == (v < n / 2) && rng.random_range(0.0..1.0) < 0.4 {
                    edges.push((u, v));
                }
            }
        }
        let features = Array2::from_shape_fn((n, 3), |(i, j)| {
            let base = if i < n / 2 { 1.0 } else { -1.0 };
            base * (j as f64 + 1.0) * 0.3 + rng.random_range(-0.1..0.1)
        });
        let labels: Vec<i64> = (0..n).map(|i| i64::from(i >= n / 2)).collect();
        let splits: Vec<Split> = (0..n)
            .map(|i| match i % 4 {
                0 => Split::Train,
                1 => Split::Val,
                _ => Split::Test,
            })
            .collect();
        ClientGraph {
            client_id: 0,
            graph: Graph::from_edges(n, &edges).unwrap(),
            features,
            labels: LabelVector::new(labels, 2).unwrap(),
            splits: SplitMasks::new(splits),
            global_node_ids: (0..n).collect(),
        }
    }

    fn toy_surrogate() -> DatasetBundle {
        // Edgeless: with a single edge the normalized adjacency would
        // average both rows into identical propagated features.
        let graph = Graph::from_edges(2, &[]).unwrap();
        let features = ndarray::array![[0.3, 0.6, 0.9], [-0.3, -0.6, -0.9]];
        let labels = LabelVector::new(vec![0, 1], 2).unwrap();
        let splits = SplitMasks::new(vec![Split::Train, Split::Train]);
        DatasetBundle::new("surrogate", graph, features, labels, splits).unwrap()
    }

    #[test]
    fn stage1_teacher_and_init_are_identical() {
        let surrogate = toy_surrogate();
        let cfg = TrainConfig {
            epochs: 50,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (teacher, init, _) =
            stage1_train_global(&surrogate, ModelSpec::Gcn2 { hidden: 4 }, &cfg, 3).unwrap();
        assert_eq!(teacher.params(), init.params());

        let (teacher2, _, _) =
            stage1_train_global(&surrogate, ModelSpec::Gcn2 { hidden: 4 }, &cfg, 3).unwrap();
        assert_eq!(teacher.params(), teacher2.params());
    }

    #[test]
    fn stage1_fits_separable_surrogate() {
        let surrogate = toy_surrogate();
        let cfg = TrainConfig {
            epochs: 200,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (teacher, _, _) =
            stage1_train_global(&surrogate, ModelSpec::Gcn2 { hidden: 8 }, &cfg, 5).unwrap();
        let adj = surrogate.graph.normalized_adjacency();
        let (logits, _) = model_forward(&teacher, &adj, &surrogate.features).unwrap();
        let preds = crate::gnn::predictions(&logits);
        assert_eq!(preds, vec![0, 1]);
    }

    #[test]
    fn stage2_with_zero_gamma_is_plain_finetuning() {
        let cg = toy_client(7);
        let teacher = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 99);
        let init = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 1);
        let cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        let gamma = vec![0.0; cg.num_nodes()];
        let (tuned, h1) = stage2_finetune(
            init.clone(),
            &teacher,
            &cg,
            &gamma,
            &cfg,
            KlDirection::TeacherReference,
        )
        .unwrap();

        let adj = cg.graph.normalized_adjacency();
        let (plain, h2) = train_supervised(
            init,
            &adj,
            &cg.features,
            cg.labels.raw(),
            &cg.splits.nodes_with(Split::Train),
            &cg.splits.nodes_with(Split::Val),
            &cfg,
        )
        .unwrap();
        assert_eq!(tuned.params(), plain.params());
        assert_eq!(h1.train_loss, h2.train_loss);
    }

    #[test]
    fn stage2_with_huge_gamma_follows_the_teacher() {
        let cg = toy_client(11);
        let surrogate = toy_surrogate();
        let (teacher, init, _) = stage1_train_global(
            &surrogate,
            ModelSpec::Gcn2 { hidden: 8 },
            &TrainConfig {
                epochs: 100,
                weight_decay: 0.0,
                ..TrainConfig::default()
            },
            3,
        )
        .unwrap();
        let gamma = vec![100.0; cg.num_nodes()];
        let cfg = TrainConfig {
            epochs: 300,
            weight_decay: 0.0,
            patience: 300,
            ..TrainConfig::default()
        };
        let (student, _) = stage2_finetune(
            init,
            &teacher,
            &cg,
            &gamma,
            &cfg,
            KlDirection::TeacherReference,
        )
        .unwrap();
        let adj = cg.graph.normalized_adjacency();
        let (slog, _) = model_forward(&student, &adj, &cg.features).unwrap();
        let (tlog, _) = model_forward(&teacher, &adj, &cg.features).unwrap();
        let sp = crate::gnn::predictions(&slog);
        let tp = crate::gnn::predictions(&tlog);
        let agree = sp.iter().zip(&tp).filter(|(a, b)| a == b).count();
        assert!(
            agree as f64 >= 0.99 * cg.num_nodes() as f64,
            "only {agree}/{} argmax agreement",
            cg.num_nodes()
        );
    }

    #[test]
    fn stage2_leaves_the_teacher_untouched() {
        let cg = toy_client(13);
        let teacher = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 42);
        let before = teacher.clone();
        let init = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 1);
        let gamma = vec![0.3; cg.num_nodes()];
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        stage2_finetune(
            init,
            &teacher,
            &cg,
            &gamma,
            &cfg,
            KlDirection::TeacherReference,
        )
        .unwrap();
        assert_eq!(teacher.params(), before.params());
    }

    #[test]
    fn effective_gamma_modes() {
        let full = vec![0.1, 0.2, 0.3];
        assert_eq!(effective_gamma(Ablation::Full, &full), full);
        assert_eq!(effective_gamma(Ablation::FtOnly, &full), vec![0.0; 3]);
        assert_eq!(
            effective_gamma(Ablation::FixedGamma(0.7), &full),
            vec![0.7; 3]
        );
    }
}
