//! End-to-end one-shot protocol execution and evaluation.
//!
//! A run partitions the dataset, fans the clients out in parallel for
//! statistics estimation and masked uploads, pools the global statistics
//! on the server, generates the surrogate graph (on the server or,
//! in the server-efficient variant, on every client from the broadcast
//! statistics), trains per-client personalized models in two stages, and
//! scores accuracy and F1-macro on the local test nodes.
//!
//! Exactly one client-to-server and one server-to-client transfer happens
//! per client, tracked by counters with exact serialized byte sizes. The
//! server-side code path ([`server`]) accepts only masked uploads, pooled
//! statistics, and surrogate types; no client graph, raw feature, or model
//! parameter crosses that boundary.
//!
//! All stage seeds derive from the run seed: `partition` for the split,
//! `dealer` for the mask-seed setup, `surrogate` for generation, and
//! per-client `client-init/k` and `stage1/k` for model initialization.

use crate::config::{FederationConfig, GenerationMode, Pipeline};
use crate::error::{Error, Result};
use crate::gnn::{model_forward, predictions, train_supervised, GnnModel};
use crate::graph::{label_imbalance_split, load_bundle, ClientGraph, DatasetBundle, Split};
use crate::personalize::{
    compute_gamma, compute_w_dist, effective_gamma, stage1_train_global, stage2_finetune,
};
use crate::rng::{derive_seed, derive_seed_indexed};
use crate::secure::{
    build_masked_upload, write_upload, MaskSeedMatrix, MaskedUpload, PersonalMask, StatsLayout,
    StatsVector,
};
use crate::stats::{
    class_homophily, estimate_class_stats, hre_expand, label_propagation, propagate_features,
    HomophilyProfile, SoftLabels,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-client evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientOutcome {
    pub client_id: usize,
    pub num_nodes: usize,
    pub test_count: usize,
    pub correct: usize,
    /// Accuracy in percent over the local test nodes.
    pub accuracy: f64,
    /// F1-macro in percent over all dataset classes.
    pub f1_macro: f64,
    /// F1-macro over the classes present locally (truth or prediction).
    pub f1_macro_local: f64,
    pub best_train_loss: f64,
}

/// Outcome of one seed of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Accuracy in percent over the union of all clients' test nodes.
    pub accuracy: f64,
    /// Mean of the per-client all-class F1-macro.
    pub f1_macro: f64,
    pub f1_macro_local: f64,
    pub clients: Vec<ClientOutcome>,
    pub upload_bytes_per_client: usize,
    pub download_bytes_per_client: usize,
    pub upload_transfers: usize,
    pub download_transfers: usize,
    /// Surrogate optimization loss per step (best-iterate selection).
    pub surrogate_loss: Vec<f64>,
}

/// Full run report: one entry per seed plus mean/std summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub runs: Vec<SeedOutcome>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1_macro: f64,
    pub std_f1_macro: f64,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-client metrics as CSV (one row per seed and client).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,client_id,num_nodes,test_count,accuracy,f1_macro,f1_macro_local\n");
        for run in &self.runs {
            for c in &run.clients {
                out.push_str(&format!(
                    "{},{},{},{},{:.4},{:.4},{:.4}\n",
                    run.seed,
                    c.client_id,
                    c.num_nodes,
                    c.test_count,
                    c.accuracy,
                    c.f1_macro,
                    c.f1_macro_local
                ));
            }
        }
        out
    }
}

/// Accuracy and F1 metrics of a prediction vector on the test nodes.
///
/// `f1_macro` averages per-class F1 over all dataset classes (a class
/// absent from both truth and prediction counts as 0); `f1_macro_local`
/// averages only over the classes present locally.
pub fn evaluate_metrics(
    preds: &[usize],
    labels: &[i64],
    test_mask: &[usize],
    num_classes: usize,
) -> Result<(f64, f64, f64)> {
    if test_mask.is_empty() {
        return Err(Error::Shape("evaluation over an empty test set".into()));
    }
    let mut correct = 0usize;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fne = vec![0usize; num_classes];
    for &v in test_mask {
        let truth = labels[v];
        let pred = preds[v];
        if truth < 0 {
            return Err(Error::Shape(format!("test node {v} has no label")));
        }
        let truth = truth as usize;
        if truth == pred {
            correct += 1;
            tp[truth] += 1;
        } else {
            fp[pred] += 1;
            fne[truth] += 1;
        }
    }
    let f1_of = |c: usize| -> f64 {
        let denom = 2 * tp[c] + fp[c] + fne[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    };
    let accuracy = 100.0 * correct as f64 / test_mask.len() as f64;
    let f1_all = 100.0 * (0..num_classes).map(f1_of).sum::<f64>() / num_classes as f64;
    let local: Vec<usize> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fne[c] > 0)
        .collect();
    let f1_local = 100.0 * local.iter().map(|&c| f1_of(c)).sum::<f64>() / local.len() as f64;
    Ok((accuracy, f1_all, f1_local))
}

/// What a client retains locally after the upload phase.
struct ClientArtifacts {
    upload: MaskedUpload,
    personal_mask: PersonalMask,
    upload_bytes: usize,
    soft: SoftLabels,
    profile: HomophilyProfile,
}

/// Client-side statistics phase: propagation, homophily, label
/// propagation, optional HRE, class moments, and the masked upload.
fn client_statistics_phase(
    cg: &ClientGraph,
    cfg: &FederationConfig,
    seeds: &MaskSeedMatrix,
) -> Result<ClientArtifacts> {
    let propagated = propagate_features(cg, cfg.stats.prop_depth);
    let profile = class_homophily(cg);
    let soft = label_propagation(cg, &cfg.hre);
    let hre_nodes = if cfg.stats.enable_hre {
        hre_expand(cg, &soft, &profile, &cfg.hre)
    } else {
        Vec::new()
    };
    let class_stats = estimate_class_stats(cg, &propagated, &cfg.stats, &hre_nodes);
    let vector = StatsVector::from_class_stats(&class_stats);
    let (upload, personal_mask) =
        build_masked_upload(&vector, cg.client_id, seeds, &cfg.codec)?;
    let mut wire = Vec::new();
    write_upload(&mut wire, cg.client_id, &upload.values)
        .map_err(|e| Error::io("<memory>", e))?;
    Ok(ClientArtifacts {
        upload,
        personal_mask,
        upload_bytes: wire.len(),
        soft,
        profile,
    })
}

/// Server-side code path.
///
/// Only masked uploads, pooled statistics, and surrogate/config types may
/// appear in these signatures; the privacy boundary of the protocol is
/// this module boundary.
pub mod server {
    use super::*;
    use crate::secure::{aggregate_unmask, pooled_stats, DenominatorMode, FixedPointCodec, GlobalStats};
    use crate::surrogate::{finalize_adjacency, init_surrogate, optimize_surrogate, GenConfig};

    /// Unmask the summed uploads and pool the global class moments.
    pub fn pool_statistics(
        uploads: &[MaskedUpload],
        personal_masks: &[PersonalMask],
        num_clients: usize,
        codec: &FixedPointCodec,
        layout: StatsLayout,
        mode: DenominatorMode,
    ) -> Result<GlobalStats> {
        let summed = aggregate_unmask(uploads, personal_masks, num_clients, codec)?;
        pooled_stats(&summed, layout, mode)
    }

    /// Optimize and finalize a surrogate graph from pooled statistics;
    /// returns the bundle and the loss trajectory.
    pub fn generate_surrogate(
        stats: &GlobalStats,
        cfg: &GenConfig,
        seed: u64,
    ) -> Result<(DatasetBundle, Vec<f64>)> {
        let (mut sg, mut lp) = init_surrogate(stats, cfg, seed)?;
        let trajectory = optimize_surrogate(&mut sg, &mut lp, stats, cfg)?;
        finalize_adjacency(&mut sg, cfg.sparsity)?;
        Ok((sg.to_bundle("surrogate")?, trajectory))
    }
}

fn evaluate_client(model: &GnnModel, cg: &ClientGraph, best_train_loss: f64) -> Result<ClientOutcome> {
    let adj = cg.graph.normalized_adjacency();
    let (logits, _) = model_forward(model, &adj, &cg.features)?;
    let preds = predictions(&logits);
    let test = cg.splits.nodes_with(Split::Test);
    let (accuracy, f1_macro, f1_macro_local, correct) = if test.is_empty() {
        (0.0, 0.0, 0.0, 0)
    } else {
        let (a, f, fl) = evaluate_metrics(&preds, cg.labels.raw(), &test, cg.num_classes())?;
        let correct = test
            .iter()
            .filter(|&&v| cg.labels.raw()[v] == preds[v] as i64)
            .count();
        (a, f, fl, correct)
    };
    Ok(ClientOutcome {
        client_id: cg.client_id,
        num_nodes: cg.num_nodes(),
        test_count: test.len(),
        correct,
        accuracy,
        f1_macro,
        f1_macro_local,
        best_train_loss,
    })
}

fn run_single_seed(
    bundle: &DatasetBundle,
    cfg: &FederationConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let clients = label_imbalance_split(bundle, cfg.num_clients, derive_seed(seed, "partition"))
        .map_err(|e| e.at_stage("partition"))?;

    let (outcomes, upload_bytes, download_bytes, transfers, surrogate_loss) = match cfg.pipeline {
        Pipeline::Standalone => {
            let outcomes: Vec<ClientOutcome> = clients
                .par_iter()
                .map(|cg| -> Result<ClientOutcome> {
                    let spec = cfg.model_for(cg.client_id);
                    let model = GnnModel::init(
                        spec,
                        cg.feature_dim(),
                        cg.num_classes(),
                        derive_seed_indexed(seed, "client-init", cg.client_id as u64),
                    );
                    let train = cg.splits.nodes_with(Split::Train);
                    let val = cg.splits.nodes_with(Split::Val);
                    let adj = cg.graph.normalized_adjacency();
                    let (trained, history) = if train.is_empty() {
                        (model, crate::gnn::TrainHistory::default())
                    } else {
                        train_supervised(
                            model,
                            &adj,
                            &cg.features,
                            cg.labels.raw(),
                            &train,
                            &val,
                            &cfg.stage2,
                        )?
                    };
                    let best = history
                        .train_loss
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min);
                    evaluate_client(&trained, cg, best)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_stage("standalone-train"))?;
            (outcomes, 0, 0, 0, Vec::new())
        }
        Pipeline::OneShot => {
            // Trusted dealer simulates the key exchange.
            let seeds = MaskSeedMatrix::trusted_setup(derive_seed(seed, "dealer"), cfg.num_clients);

            // Client statistics + masked uploads (parallel fan-out).
            let artifacts: Vec<ClientArtifacts> = clients
                .par_iter()
                .map(|cg| client_statistics_phase(cg, cfg, &seeds))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_stage("client-stats"))?;
            let upload_bytes = artifacts[0].upload_bytes;
            let upload_transfers = artifacts.len();

            // Server: unmask, pool.
            let layout = StatsLayout {
                num_classes: bundle.num_classes(),
                dim: (cfg.stats.prop_depth + 1) * bundle.feature_dim(),
            };
            let uploads: Vec<MaskedUpload> =
                artifacts.iter().map(|a| a.upload.clone()).collect();
            let masks: Vec<PersonalMask> =
                artifacts.iter().map(|a| a.personal_mask.clone()).collect();
            let global_stats = server::pool_statistics(
                &uploads,
                &masks,
                cfg.num_clients,
                &cfg.codec,
                layout,
                cfg.denominator,
            )
            .map_err(|e| e.at_stage("aggregate"))?;

            // Surrogate generation and the per-client download.
            let surrogate_seed = derive_seed(seed, "surrogate");
            let (surrogates, download_bytes, trajectory): (Vec<DatasetBundle>, usize, Vec<f64>) =
                match cfg.mode {
                    GenerationMode::ServerGen => {
                        let (surrogate, trajectory) =
                            server::generate_surrogate(&global_stats, &cfg.generation, surrogate_seed)
                                .map_err(|e| e.at_stage("gen-surrogate"))?;
                        let bytes: usize = crate::graph::serialize_bundle(&surrogate)
                            .iter()
                            .map(|(_, b)| b.len())
                            .sum();
                        (
                            vec![surrogate; cfg.num_clients],
                            bytes,
                            trajectory,
                        )
                    }
                    GenerationMode::ClientGen => {
                        // Broadcast the pooled statistics; every client runs the
                        // same deterministic generation.
                        let broadcast =
                            serde_json::to_vec(&global_stats).expect("stats serialize");
                        let bytes = broadcast.len();
                        let results: Vec<(DatasetBundle, Vec<f64>)> = (0..cfg.num_clients)
                            .into_par_iter()
                            .map(|_| {
                                let received: crate::secure::GlobalStats =
                                    serde_json::from_slice(&broadcast)
                                        .map_err(|e| Error::Config(e.to_string()))?;
                                server::generate_surrogate(
                                    &received,
                                    &cfg.generation,
                                    surrogate_seed,
                                )
                            })
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| e.at_stage("gen-surrogate"))?;
                        let trajectory = results[0].1.clone();
                        (
                            results.into_iter().map(|(b, _)| b).collect(),
                            bytes,
                            trajectory,
                        )
                    }
                };
            let download_transfers = surrogates.len();

            // Two-stage personalization per client.
            let outcomes: Vec<ClientOutcome> = clients
                .par_iter()
                .zip(artifacts.par_iter())
                .zip(surrogates.par_iter())
                .map(|((cg, art), surrogate)| -> Result<ClientOutcome> {
                    let spec = cfg.model_for(cg.client_id);
                    let stage1_seed = derive_seed_indexed(seed, "stage1", cg.client_id as u64);
                    let (teacher, init, _) =
                        stage1_train_global(surrogate, spec, &cfg.stage1, stage1_seed)?;
                    let w_dist = compute_w_dist(&art.profile);
                    let gamma = compute_gamma(&art.soft, &w_dist, cfg.beta);
                    let gamma = effective_gamma(cfg.ablation, &gamma);
                    let (personalized, history) = stage2_finetune(
                        init,
                        &teacher,
                        cg,
                        &gamma,
                        &cfg.stage2,
                        cfg.kl_direction,
                    )?;
                    let best = history
                        .train_loss
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min);
                    evaluate_client(&personalized, cg, best)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_stage("personalize"))?;

            debug_assert_eq!(upload_transfers, cfg.num_clients);
            debug_assert_eq!(download_transfers, cfg.num_clients);
            (
                outcomes,
                upload_bytes,
                download_bytes,
                upload_transfers,
                trajectory,
            )
        }
    };

    // Weighted accuracy over all test nodes; unweighted client mean for F1.
    let total_test: usize = outcomes.iter().map(|c| c.test_count).sum();
    let total_correct: usize = outcomes.iter().map(|c| c.correct).sum();
    let accuracy = if total_test > 0 {
        100.0 * total_correct as f64 / total_test as f64
    } else {
        0.0
    };
    let scored: Vec<&ClientOutcome> = outcomes.iter().filter(|c| c.test_count > 0).collect();
    let f1_macro = scored.iter().map(|c| c.f1_macro).sum::<f64>() / scored.len().max(1) as f64;
    let f1_macro_local =
        scored.iter().map(|c| c.f1_macro_local).sum::<f64>() / scored.len().max(1) as f64;

    Ok(SeedOutcome {
        seed,
        accuracy,
        f1_macro,
        f1_macro_local,
        clients: outcomes,
        upload_bytes_per_client: upload_bytes,
        download_bytes_per_client: download_bytes,
        upload_transfers: transfers,
        download_transfers: transfers,
        surrogate_loss,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the configured pipeline on an already-loaded bundle.
pub fn run_one_shot_on(bundle: &DatasetBundle, cfg: &FederationConfig) -> Result<RunReport> {
    cfg.validate()?;
    let run = || -> Result<Vec<SeedOutcome>> {
        cfg.run_seeds()
            .into_iter()
            .map(|seed| run_single_seed(bundle, cfg, seed))
            .collect()
    };
    let runs = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    }?;

    let (mean_accuracy, std_accuracy) =
        mean_std(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let (mean_f1_macro, std_f1_macro) =
        mean_std(&runs.iter().map(|r| r.f1_macro).collect::<Vec<_>>());
    Ok(RunReport {
        config: cfg.to_value(),
        runs,
        mean_accuracy,
        std_accuracy,
        mean_f1_macro,
        std_f1_macro,
    })
}

/// Load the configured dataset and run the pipeline.
pub fn run_one_shot(cfg: &FederationConfig) -> Result<RunReport> {
    let bundle = load_bundle(Path::new(&cfg.dataset)).map_err(|e| e.at_stage("load"))?;
    run_one_shot_on(&bundle, cfg)
}
