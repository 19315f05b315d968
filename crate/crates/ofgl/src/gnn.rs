//! From-scratch graph models (two-layer GCN and SGC) with analytic
//! gradients, cross-entropy and weighted KL losses, and Adam.
//!
//! Parameters live in a `Vec<Array2<f64>>` (biases as single-row
//! matrices) in a fixed declaration order, which is also the checkpoint
//! order. Nothing in this module ever compares or combines parameters
//! across model instances: clients may hold different hidden dimensions or
//! architectures, and the protocol never aggregates them.

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::rng::rng_from_seed;
use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `A ReLU(A X W1 + b1) W2 + b2`
    Gcn2 { hidden: usize },
    /// `A^power X W + b`
    Sgc { power: usize },
}

/// A model instance: spec, dimensions, and flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub num_classes: usize,
    params: Vec<Array2<f64>>,
}

fn glorot(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(spec: ModelSpec, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let params = match spec {
            ModelSpec::Gcn2 { hidden } => vec![
                glorot(input_dim, hidden, &mut rng),
                Array2::zeros((1, hidden)),
                glorot(hidden, num_classes, &mut rng),
                Array2::zeros((1, num_classes)),
            ],
            ModelSpec::Sgc { .. } => vec![
                glorot(input_dim, num_classes, &mut rng),
                Array2::zeros((1, num_classes)),
            ],
        };
        GnnModel {
            spec,
            input_dim,
            num_classes,
            params,
        }
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }
}

/// Cached activations from a forward pass, consumed by [`model_backward`].
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Gcn2 {
        /// `A X`
        m1: Array2<f64>,
        /// `A X W1 + b1` (pre-activation)
        z1: Array2<f64>,
        /// `A ReLU(z1)`
        m2: Array2<f64>,
    },
    Sgc {
        /// `A^power X`
        px: Array2<f64>,
    },
}

/// Forward pass; returns logits and the activation cache.
pub fn model_forward(
    model: &GnnModel,
    adj: &SparseMatrix,
    x: &Array2<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != model.input_dim || adj.rows() != x.nrows() {
        return Err(Error::Shape(format!(
            "forward shapes: adj {}x{}, x {}x{}, model input {}",
            adj.rows(),
            adj.cols(),
            x.nrows(),
            x.ncols(),
            model.input_dim
        )));
    }
    match model.spec {
        ModelSpec::Gcn2 { .. } => {
            let (w1, b1, w2, b2) = (
                &model.params[0],
                &model.params[1],
                &model.params[2],
                &model.params[3],
            );
            let m1 = adj.mul_dense(x);
            let z1 = m1.dot(w1) + b1;
            let h1 = z1.mapv(|v| v.max(0.0));
            let m2 = adj.mul_dense(&h1);
            let logits = m2.dot(w2) + b2;
            Ok((logits, ForwardCache::Gcn2 { m1, z1, m2 }))
        }
        ModelSpec::Sgc { power } => {
            let (w, b) = (&model.params[0], &model.params[1]);
            let px = adj.pow_mul(power, x);
            let logits = px.dot(w) + b;
            Ok((logits, ForwardCache::Sgc { px }))
        }
    }
}

/// Backward pass: gradient of the loss w.r.t. every parameter, given the
/// loss gradient w.r.t. the logits. The adjacency is symmetric, so its
/// transpose is itself.
pub fn model_backward(
    model: &GnnModel,
    adj: &SparseMatrix,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
) -> Vec<Array2<f64>> {
    match (&model.spec, cache) {
        (ModelSpec::Gcn2 { .. }, ForwardCache::Gcn2 { m1, z1, m2 }) => {
            let w2 = &model.params[2];
            let dw2 = m2.t().dot(dlogits);
            let db2 = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dm2 = dlogits.dot(&w2.t());
            let dh1 = adj.mul_dense(&dm2);
            let dz1 = &dh1 * &z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let dw1 = m1.t().dot(&dz1);
            let db1 = dz1.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![dw1, db1, dw2, db2]
        }
        (ModelSpec::Sgc { .. }, ForwardCache::Sgc { px }) => {
            let dw = px.t().dot(dlogits);
            let db = dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![dw, db]
        }
        _ => unreachable!("cache does not match architecture"),
    }
}

/// Row-wise softmax, shift-stabilized.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Predicted class per node (argmax of the logits; ties toward the
/// smaller class id).
pub fn predictions(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy over the masked nodes and its gradient w.r.t. the
/// logits (zero outside the mask).
pub fn cross_entropy_loss(
    logits: &Array2<f64>,
    labels: &[i64],
    mask: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if mask.is_empty() {
        return Err(Error::Shape("cross-entropy over an empty mask".into()));
    }
    let probs = softmax_rows(logits);
    let scale = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for &v in mask {
        let y = labels[v];
        if y < 0 {
            return Err(Error::Shape(format!("masked node {v} has no label")));
        }
        let y = y as usize;
        loss -= probs[(v, y)].max(f64::MIN_POSITIVE).ln();
        for c in 0..logits.ncols() {
            grad[(v, c)] = (probs[(v, c)] - if c == y { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Which distribution anchors the pointwise KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(teacher || student)`: matches the teacher everywhere it has mass.
    TeacherReference,
    /// `KL(student || teacher)`.
    StudentReference,
}

/// Weighted sum over nodes of pointwise KL divergence between the softmax
/// distributions, with the teacher treated as a constant. Returns the loss
/// and its gradient w.r.t. the student logits. Temperature is 1.
pub fn kl_divergence_loss(
    student_logits: &Array2<f64>,
    teacher_logits: &Array2<f64>,
    weights: &[f64],
    direction: KlDirection,
) -> Result<(f64, Array2<f64>)> {
    if student_logits.raw_dim() != teacher_logits.raw_dim()
        || weights.len() != student_logits.nrows()
    {
        return Err(Error::Shape(format!(
            "kl shapes: student {:?}, teacher {:?}, {} weights",
            student_logits.shape(),
            teacher_logits.shape(),
            weights.len()
        )));
    }
    let s = softmax_rows(student_logits);
    let t = softmax_rows(teacher_logits);
    let mut loss = 0.0;
    let mut grad = Array2::zeros(student_logits.raw_dim());
    for (i, &gamma) in weights.iter().enumerate() {
        if gamma == 0.0 {
            continue;
        }
        match direction {
            KlDirection::TeacherReference => {
                let mut kl = 0.0;
                for c in 0..s.ncols() {
                    let tc = t[(i, c)];
                    if tc > 0.0 {
                        kl += tc * (tc.ln() - s[(i, c)].max(f64::MIN_POSITIVE).ln());
                    }
                    grad[(i, c)] = gamma * (s[(i, c)] - tc);
                }
                loss += gamma * kl;
            }
            KlDirection::StudentReference => {
                let mut kl = 0.0;
                for c in 0..s.ncols() {
                    let sc = s[(i, c)].max(f64::MIN_POSITIVE);
                    let tc = t[(i, c)].max(f64::MIN_POSITIVE);
                    kl += sc * (sc.ln() - tc.ln());
                }
                for c in 0..s.ncols() {
                    let sc = s[(i, c)].max(f64::MIN_POSITIVE);
                    let tc = t[(i, c)].max(f64::MIN_POSITIVE);
                    grad[(i, c)] = gamma * sc * (sc.ln() - tc.ln() - kl);
                }
                loss += gamma * kl;
            }
        }
    }
    Ok((loss, grad))
}

/// Adam hyper-parameters; weight decay is applied as an L2 gradient term.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Errors on non-finite gradients.
pub fn adam_step(
    params: &mut [Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for ((p, &g), (m, v)) in param
            .iter_mut()
            .zip(grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            if !g.is_finite() {
                return Err(Error::Numeric("non-finite gradient in adam_step".into()));
            }
            let g = g + hyper.weight_decay * *p;
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

/// Supervised training knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Early-stop patience on validation accuracy.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamHyper::default()
        }
    }
}

/// Loss/accuracy trace of a training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Index of the returned snapshot in the trace (0 = initialization).
    pub best_epoch: usize,
}

pub(crate) fn accuracy_on(logits: &Array2<f64>, labels: &[i64], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let preds = predictions(logits);
    let correct = mask
        .iter()
        .filter(|&&v| labels[v] == preds[v] as i64)
        .count();
    correct as f64 / mask.len() as f64
}

/// Full-batch supervised training with Adam and best-snapshot selection.
///
/// The snapshot with the best validation accuracy is returned; without
/// validation nodes, the best-train-loss snapshot (which is never worse
/// than the initialization). Early-stops after `patience` epochs without
/// validation improvement.
pub fn train_supervised(
    model: GnnModel,
    adj: &SparseMatrix,
    x: &Array2<f64>,
    labels: &[i64],
    train_mask: &[usize],
    val_mask: &[usize],
    cfg: &TrainConfig,
) -> Result<(GnnModel, TrainHistory)> {
    cfg.validate()?;
    if train_mask.is_empty() {
        return Err(Error::Shape(
            "training requires at least one train node".into(),
        ));
    }
    let mut model = model;
    let mut state = AdamState::new(model.params());
    let hyper = cfg.adam();
    let mut history = TrainHistory::default();

    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_loss = f64::INFINITY;
    let mut since_improvement = 0usize;

    for epoch in 0..=cfg.epochs {
        let (logits, cache) = model_forward(&model, adj, x)?;
        let (loss, dlogits) = cross_entropy_loss(&logits, labels, train_mask)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: loss {loss}"
            )));
        }
        history.train_loss.push(loss);

        if val_mask.is_empty() {
            if loss < best_loss {
                best_loss = loss;
                best_params = model.params.clone();
                best_epoch = epoch;
            }
        } else {
            let val_acc = accuracy_on(&logits, labels, val_mask);
            history.val_accuracy.push(val_acc);
            if val_acc > best_val {
                best_val = val_acc;
                best_params = model.params.clone();
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
        let grads = model_backward(&model, adj, &cache, &dlogits);
        adam_step(&mut model.params, &grads, &mut state, &hyper)?;
    }

    model.params = best_params;
    history.best_epoch = best_epoch;
    Ok((model, history))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    #[serde(flatten)]
    spec: ModelSpec,
    input_dim: usize,
    num_classes: usize,
}

/// Checkpoint layout: u32 little-endian JSON length, the JSON meta
/// (architecture and dimensions), then all parameters as little-endian
/// f64 in declaration order.
pub fn save_checkpoint(model: &GnnModel, w: &mut impl Write) -> std::io::Result<()> {
    let meta = CheckpointMeta {
        spec: model.spec,
        input_dim: model.input_dim,
        num_classes: model.num_classes,
    };
    let json = serde_json::to_vec(&meta).expect("meta serializes");
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &model.params {
        for &x in p.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(r: &mut impl Read, path: &str) -> Result<GnnModel> {
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf).map_err(|e| Error::io(path, e))?;
    let json_len = u32::from_le_bytes(len_buf) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&json).map_err(|e| Error::format(path, e.to_string()))?;

    let mut template = GnnModel::init(meta.spec, meta.input_dim, meta.num_classes, 0);
    for p in template.params.iter_mut() {
        for slot in p.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            *slot = f64::from_le_bytes(buf);
        }
    }
    Ok(template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    fn identity_adj(n: usize) -> SparseMatrix {
        Graph::from_edges(n, &[]).unwrap().normalized_adjacency()
    }

    /// Central finite differences of `loss_of(model)` w.r.t. every
    /// parameter entry, compared to `analytic` at relative tolerance.
    fn check_gradients(
        model: &GnnModel,
        analytic: &[Array2<f64>],
        tol: f64,
        mut loss_of: impl FnMut(&GnnModel) -> f64,
    ) {
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for pi in 0..model.params().len() {
            for idx in 0..model.params()[pi].len() {
                let mut probe = model.clone();
                let orig = probe.params()[pi].as_slice().unwrap()[idx];
                probe.params_mut()[pi].as_slice_mut().unwrap()[idx] = orig + eps;
                let up = loss_of(&probe);
                probe.params_mut()[pi].as_slice_mut().unwrap()[idx] = orig - eps;
                let down = loss_of(&probe);
                let numeric = (up - down) / (2.0 * eps);
                let exact = analytic[pi].as_slice().unwrap()[idx];
                let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < tol, "worst relative gradient error {worst}");
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut model = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 1);
        for p in model.params_mut() {
            p.fill(0.0);
        }
        let adj = identity_adj(2);
        let x = array![[1.0, -2.0, 0.5], [0.0, 1.0, 3.0]];
        let (logits, _) = model_forward(&model, &adj, &x).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_node_gcn2_is_mlp() {
        let model = GnnModel::init(ModelSpec::Gcn2 { hidden: 5 }, 3, 2, 7);
        let adj = identity_adj(1);
        let x = array![[0.3, -1.0, 2.0]];
        let (logits, _) = model_forward(&model, &adj, &x).unwrap();
        let z1 = x.dot(&model.params()[0]) + &model.params()[1];
        let h1 = z1.mapv(|v| v.max(0.0));
        let expected = h1.dot(&model.params()[2]) + &model.params()[3];
        for (a, b) in logits.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgc_power_zero_is_linear() {
        let model = GnnModel::init(ModelSpec::Sgc { power: 0 }, 3, 2, 7);
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let adj = g.normalized_adjacency();
        let x = array![[1.0, 0.0, 2.0], [0.5, 1.0, -1.0]];
        let (logits, _) = model_forward(&model, &adj, &x).unwrap();
        let expected = x.dot(&model.params()[0]) + &model.params()[1];
        assert_eq!(logits, expected);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = GnnModel::init(ModelSpec::Gcn2 { hidden: 4 }, 3, 2, 1);
        let adj = identity_adj(2);
        let x = Array2::zeros((2, 5));
        assert!(model_forward(&model, &adj, &x).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Array2::zeros((3, 4));
        let labels = vec![0, 1, 3];
        let (loss, _) = cross_entropy_loss(&logits, &labels, &[0, 1, 2]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_with_large_margin() {
        let mut logits = Array2::zeros((1, 3));
        logits[(0, 1)] = 50.0;
        let (loss, _) = cross_entropy_loss(&logits, &[1], &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn cross_entropy_empty_mask_errors() {
        let logits = Array2::zeros((2, 2));
        assert!(cross_entropy_loss(&logits, &[0, 1], &[]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let logits = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
        let labels = vec![0, 2, 1, 1, 0];
        let mask = vec![0, 2, 3];
        let (_, grad) = cross_entropy_loss(&logits, &labels, &mask).unwrap();
        let eps = 1e-6;
        for i in 0..5 {
            for c in 0..3 {
                let mut up = logits.clone();
                up[(i, c)] += eps;
                let mut down = logits.clone();
                down[(i, c)] -= eps;
                let lu = cross_entropy_loss(&up, &labels, &mask).unwrap().0;
                let ld = cross_entropy_loss(&down, &labels, &mask).unwrap().0;
                let numeric = (lu - ld) / (2.0 * eps);
                let rel = (numeric - grad[(i, c)]).abs()
                    / numeric.abs().max(grad[(i, c)].abs()).max(1e-8);
                assert!(rel < 1e-6, "entry ({i},{c}) rel {rel}");
            }
        }
    }

    #[test]
    fn kl_zero_for_identical_distributions_and_zero_weights() {
        let mut rng = rng_from_seed(5);
        let logits = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let other = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        for dir in [KlDirection::TeacherReference, KlDirection::StudentReference] {
            let (loss, grad) = kl_divergence_loss(&logits, &logits, &[1.0; 4], dir).unwrap();
            assert!(loss.abs() < 1e-12);
            assert!(grad.iter().all(|&g| g.abs() < 1e-12));
            let (loss, _) = kl_divergence_loss(&logits, &other, &[0.0; 4], dir).unwrap();
            assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let student = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let teacher = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let weights = [0.5, 0.0, 2.0, 1.5];
        for dir in [KlDirection::TeacherReference, KlDirection::StudentReference] {
            let (_, grad) = kl_divergence_loss(&student, &teacher, &weights, dir).unwrap();
            let eps = 1e-6;
            for i in 0..4 {
                for c in 0..3 {
                    let mut up = student.clone();
                    up[(i, c)] += eps;
                    let mut down = student.clone();
                    down[(i, c)] -= eps;
                    let lu = kl_divergence_loss(&up, &teacher, &weights, dir).unwrap().0;
                    let ld = kl_divergence_loss(&down, &teacher, &weights, dir)
                        .unwrap()
                        .0;
                    let numeric = (lu - ld) / (2.0 * eps);
                    let rel = (numeric - grad[(i, c)]).abs()
                        / numeric.abs().max(grad[(i, c)].abs()).max(1e-8);
                    assert!(rel < 1e-6, "{dir:?} entry ({i},{c}) rel {rel}");
                }
            }
        }
    }

    fn random_graph_setup(
        spec: ModelSpec,
        n: usize,
        seed: u64,
    ) -> (GnnModel, SparseMatrix, Array2<f64>, Vec<i64>) {
        let mut rng = rng_from_seed(seed);
        let f = 4;
        let c = 3;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random_range(0.0..1.0) < 0.2 {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(n, &edges).unwrap();
        let x = Array2::from_shape_fn((n, f), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..c as i64)).collect();
        let model = GnnModel::init(spec, f, c, seed ^ 0xabc);
        (model, g.normalized_adjacency(), x, labels)
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        // Combined loss: cross-entropy on half the nodes plus weighted KL
        // toward a fixed teacher on all nodes, for both architectures.
        for spec in [ModelSpec::Gcn2 { hidden: 6 }, ModelSpec::Sgc { power: 2 }] {
            let (model, adj, x, labels) = random_graph_setup(spec, 20, 17);
            let teacher =
                Array2::from_shape_fn((20, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
            let mask: Vec<usize> = (0..10).collect();
            let gamma: Vec<f64> = (0..20).map(|i| 0.1 * i as f64 / 19.0).collect();

            let loss_of = |m: &GnnModel| {
                let (logits, _) = model_forward(m, &adj, &x).unwrap();
                let (ce, _) = cross_entropy_loss(&logits, &labels, &mask).unwrap();
                let (kl, _) = kl_divergence_loss(
                    &logits,
                    &teacher,
                    &gamma,
                    KlDirection::TeacherReference,
                )
                .unwrap();
                ce + kl
            };

            let (logits, cache) = model_forward(&model, &adj, &x).unwrap();
            let (_, dce) = cross_entropy_loss(&logits, &labels, &mask).unwrap();
            let (_, dkl) =
                kl_divergence_loss(&logits, &teacher, &gamma, KlDirection::TeacherReference)
                    .unwrap();
            let grads = model_backward(&model, &adj, &cache, &(dce + dkl));
            check_gradients(&model, &grads, 1e-4, loss_of);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut params = vec![array![[1.0, -2.0], [0.5, 3.0]]];
        let grads = vec![Array2::zeros((2, 2))];
        let mut state = AdamState::new(&params);
        let before = params[0].clone();
        adam_step(&mut params, &grads, &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        // Adam's bounded-step property: with constant gradient the update
        // magnitude tends to the learning rate.
        let hyper = AdamHyper {
            learning_rate: 0.05,
            ..AdamHyper::default()
        };
        let mut params = vec![Array2::zeros((1, 1))];
        let grads = vec![array![[3.7]]];
        let mut state = AdamState::new(&params);
        let mut last = params[0][(0, 0)];
        let mut step = 0.0;
        for _ in 0..500 {
            adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
            step = (params[0][(0, 0)] - last).abs();
            last = params[0][(0, 0)];
        }
        assert!((step - hyper.learning_rate).abs() < 0.01 * hyper.learning_rate);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![Array2::zeros((1, 1))];
        let grads = vec![array![[f64::NAN]]];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, &AdamHyper::default()).is_err());
    }

    #[test]
    fn training_fits_separable_classes() {
        // Two linearly separable classes on an edgeless graph: a logistic
        // regression problem any architecture must solve.
        let n = 20;
        let adj = identity_adj(n);
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let side = if i < n / 2 { 1.0 } else { -1.0 };
            side * (j as f64 + 1.0)
        });
        let labels: Vec<i64> = (0..n).map(|i| i64::from(i >= n / 2)).collect();
        let mask: Vec<usize> = (0..n).collect();
        let model = GnnModel::init(ModelSpec::Gcn2 { hidden: 8 }, 2, 2, 5);
        let cfg = TrainConfig {
            epochs: 200,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (trained, history) =
            train_supervised(model, &adj, &x, &labels, &mask, &[], &cfg).unwrap();
        let (logits, _) = model_forward(&trained, &adj, &x).unwrap();
        assert_eq!(accuracy_on(&logits, &labels, &mask), 1.0);
        assert!(history.train_loss.last().unwrap() <= &history.train_loss[0]);
    }

    #[test]
    fn best_snapshot_never_exceeds_initial_loss() {
        let (model, adj, x, labels) =
            random_graph_setup(ModelSpec::Gcn2 { hidden: 4 }, 15, 23);
        let mask: Vec<usize> = (0..15).collect();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let (trained, history) =
            train_supervised(model, &adj, &x, &labels, &mask, &[], &cfg).unwrap();
        let (logits, _) = model_forward(&trained, &adj, &x).unwrap();
        let (final_loss, _) = cross_entropy_loss(&logits, &labels, &mask).unwrap();
        assert!(final_loss <= history.train_loss[0] + 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (model, adj, x, labels) = random_graph_setup(ModelSpec::Sgc { power: 2 }, 12, 31);
        let mask: Vec<usize> = (0..12).collect();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (a, _) =
            train_supervised(model.clone(), &adj, &x, &labels, &mask, &[], &cfg).unwrap();
        let (b, _) = train_supervised(model, &adj, &x, &labels, &mask, &[], &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn logits_are_permutation_equivariant() {
        let (model, adj, x, _) = random_graph_setup(ModelSpec::Gcn2 { hidden: 6 }, 10, 41);
        let (logits, _) = model_forward(&model, &adj, &x).unwrap();

        // Reverse permutation of node ids.
        let n = 10;
        let perm: Vec<usize> = (0..n).rev().collect();
        let dense = adj.to_dense();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if dense[(u, v)] > 0.0 {
                    edges.push((perm[u], perm[v]));
                }
            }
        }
        let permuted_graph = Graph::from_edges(n, &edges).unwrap();
        let mut px = Array2::zeros((n, x.ncols()));
        for i in 0..n {
            px.row_mut(perm[i]).assign(&x.row(i));
        }
        let (plogits, _) =
            model_forward(&model, &permuted_graph.normalized_adjacency(), &px).unwrap();
        for i in 0..n {
            for c in 0..plogits.ncols() {
                assert!((plogits[(perm[i], c)] - logits[(i, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = rng_from_seed(77);
        let logits = Array2::from_shape_fn((6, 5), |_| rng.random_range(-30.0..30.0));
        let s = softmax_rows(&logits);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        for spec in [ModelSpec::Gcn2 { hidden: 3 }, ModelSpec::Sgc { power: 2 }] {
            let model = GnnModel::init(spec, 4, 2, 9);
            let mut buf = Vec::new();
            save_checkpoint(&model, &mut buf).unwrap();
            let loaded = load_checkpoint(&mut buf.as_slice(), "mem").unwrap();
            assert_eq!(model, loaded);
        }
    }
}
