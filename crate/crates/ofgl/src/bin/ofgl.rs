//! Command-line front end: config parsing, pipeline subcommands, and
//! artifact emission.
//!
//! `run` executes the whole one-shot pipeline; `partition`, `stats`,
//! `aggregate`, `gen-surrogate`, and `train` execute it stage by stage
//! through on-disk artifacts and reproduce `run` bit-exactly under the
//! same master seed. Every output directory receives a
//! `resolved_config.json` manifest with the exact configuration and
//! SHA-256 hashes of the inputs.
//!
//! Exit codes: 0 success, 2 configuration errors, 1 runtime errors.

use clap::{Args, Parser, Subcommand, ValueEnum};
use ofgl::config::{apply_override, parse_override, FederationConfig};
use ofgl::error::Error;
use ofgl::gnn::{load_checkpoint, model_forward, predictions, save_checkpoint};
use ofgl::graph::{
    label_imbalance_split, load_bundle, save_bundle, ClientGraph, DatasetBundle, Graph,
    LabelVector, Split, SplitMasks,
};
use ofgl::orchestrator::{self, evaluate_metrics, server, ClientOutcome};
use ofgl::personalize::{compute_gamma, compute_w_dist, effective_gamma};
use ofgl::rng::{derive_seed, derive_seed_indexed, rng_from_seed};
use ofgl::secure::{
    read_upload, write_upload, GlobalStats, MaskSeedMatrix, MaskedUpload, PersonalMask,
    StatsLayout,
};
use rand::Rng as _;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ofgl",
    about = "One-shot personalized federated graph learning simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ServerGen,
    ClientGen,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    Ft,
    FixedGamma,
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    OneShot,
    Standalone,
}

/// Flags shared by the config-driven subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (strict JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Surrogate generation location.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Stage-2 ablation.
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    /// Fixed gamma value used with `--ablation fixed-gamma`.
    #[arg(long, default_value_t = 0.5)]
    fixed_gamma: f64,
    /// Pipeline selector (one-shot protocol or standalone baseline).
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    /// Dotted-path config overrides, e.g. `--set stats.prop_depth=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<FederationConfig, Error> {
        let mut value = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => FederationConfig::default().to_value(),
        };
        for spec in &self.overrides {
            let (key, raw) = parse_override(spec)?;
            apply_override(&mut value, key, raw)?;
        }
        if let Some(seed) = self.seed {
            apply_override(&mut value, "seed", &seed.to_string())?;
        }
        if let Some(threads) = self.threads {
            apply_override(&mut value, "threads", &threads.to_string())?;
        }
        if let Some(mode) = self.mode {
            let raw = match mode {
                ModeArg::ServerGen => "\"server_gen\"",
                ModeArg::ClientGen => "\"client_gen\"",
            };
            apply_override(&mut value, "mode", raw)?;
        }
        if let Some(ablation) = self.ablation {
            let raw = match ablation {
                AblationArg::Full => "\"full\"".to_string(),
                AblationArg::Ft => "\"ft_only\"".to_string(),
                AblationArg::FixedGamma => format!("{{\"fixed_gamma\": {}}}", self.fixed_gamma),
            };
            apply_override(&mut value, "ablation", &raw)?;
        }
        if let Some(pipeline) = self.pipeline {
            let raw = match pipeline {
                PipelineArg::OneShot => "\"one_shot\"",
                PipelineArg::Standalone => "\"standalone\"",
            };
            apply_override(&mut value, "pipeline", raw)?;
        }
        FederationConfig::from_value(value)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute the full one-shot pipeline and write report.json.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Partition the dataset into per-client bundles.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of clients (overrides the config).
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compute client statistics and write masked uploads.
    Stats {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory containing client_<k> bundles from `partition`.
        #[arg(long)]
        clients_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Unmask, sum, and pool the uploads into global statistics.
    Aggregate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory containing uploads/ and masks/ from `stats`.
        #[arg(long)]
        uploads_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate the global surrogate graph from pooled statistics.
    GenSurrogate {
        #[command(flatten)]
        config: ConfigArgs,
        /// global_stats.json from `aggregate`.
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Two-stage personalized training against a surrogate bundle.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        clients_dir: PathBuf,
        /// Surrogate bundle directory from `gen-surrogate`.
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute metrics from saved checkpoints.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        clients_dir: PathBuf,
        /// Directory containing client_<k>.ckpt files from `train`.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Build a dataset bundle from a plain edge list and feature CSV.
    Convert {
        /// Edge list: two whitespace-separated node ids per line.
        #[arg(long)]
        edges: PathBuf,
        /// Feature CSV: one comma-separated row per node.
        #[arg(long)]
        features: PathBuf,
        /// Labels: one integer per line (-1 = unknown).
        #[arg(long)]
        labels: PathBuf,
        /// Split tokens (train/val/test, one per line); random split when
        /// absent.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.4)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset name recorded in meta.json.
        #[arg(long, default_value = "converted")]
        name: String,
        /// Number of classes; inferred from the labels when absent.
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Hash a file, or every file under a directory (sorted), into one digest.
fn hash_input(path: &Path) -> Result<String, Error> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for file in entries {
            let bytes =
                fs::read(&file).map_err(|e| Error::io(file.display().to_string(), e))?;
            hasher.update(file.file_name().unwrap().to_string_lossy().as_bytes());
            hasher.update(bytes);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        hasher.update(bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Make each artifact directory self-describing.
fn write_manifest(
    out: &Path,
    command: &str,
    config: Option<&FederationConfig>,
    inputs: &[(&str, &Path)],
) -> Result<(), Error> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut hashes = serde_json::Map::new();
    for (label, path) in inputs {
        if path.exists() {
            hashes.insert(
                (*label).to_string(),
                serde_json::Value::String(hash_input(path)?),
            );
        }
    }
    let manifest = serde_json::json!({
        "command": command,
        "config": config.map(|c| c.to_value()),
        "input_sha256": hashes,
    });
    let path = out.join("resolved_config.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn client_dirs(root: &Path) -> Result<Vec<(usize, PathBuf)>, Error> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_prefix("client_") {
            if let Ok(id) = id.parse::<usize>() {
                dirs.push((id, entry.path()));
            }
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no client_<k> directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

fn load_client(id: usize, dir: &Path) -> Result<ClientGraph, Error> {
    let bundle = load_bundle(dir)?;
    Ok(ClientGraph {
        client_id: id,
        global_node_ids: (0..bundle.num_nodes()).collect(),
        graph: bundle.graph,
        features: bundle.features,
        labels: bundle.labels,
        splits: bundle.splits,
    })
}

fn client_to_bundle(cg: &ClientGraph, name: String) -> Result<DatasetBundle, Error> {
    DatasetBundle::new(
        name,
        cg.graph.clone(),
        cg.features.clone(),
        cg.labels.clone(),
        cg.splits.clone(),
    )
}

fn cmd_run(config: ConfigArgs, out: PathBuf) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(&out, "run", Some(&cfg), &[("dataset", Path::new(&cfg.dataset))])?;
    let report = orchestrator::run_one_shot(&cfg)?;
    let report_path = out.join("report.json");
    fs::write(&report_path, report.to_json_pretty())
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    let csv_path = out.join("report.csv");
    fs::write(&csv_path, report.to_csv())
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    println!(
        "run: accuracy {:.2} +/- {:.2}, f1-macro {:.2} +/- {:.2} over {} seed(s)",
        report.mean_accuracy,
        report.std_accuracy,
        report.mean_f1_macro,
        report.std_f1_macro,
        report.runs.len()
    );
    println!("report written to {}", report_path.display());
    Ok(())
}

fn cmd_partition(config: ConfigArgs, clients: Option<usize>, out: PathBuf) -> Result<(), Error> {
    let mut cfg = config.resolve()?;
    if let Some(m) = clients {
        cfg.num_clients = m;
        cfg.validate()?;
    }
    write_manifest(&out, "partition", Some(&cfg), &[("dataset", Path::new(&cfg.dataset))])?;
    let bundle = load_bundle(Path::new(&cfg.dataset)).map_err(|e| e.at_stage("load"))?;
    let clients =
        label_imbalance_split(&bundle, cfg.num_clients, derive_seed(cfg.seed, "partition"))
            .map_err(|e| e.at_stage("partition"))?;
    for cg in &clients {
        let dir = out.join(format!("client_{}", cg.client_id));
        let name = format!("{}-client{}", bundle.name, cg.client_id);
        save_bundle(&client_to_bundle(cg, name)?, &dir)?;
        let ids = cg
            .global_node_ids
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        let ids_path = dir.join("global_ids.tsv");
        fs::write(&ids_path, ids + "\n")
            .map_err(|e| Error::io(ids_path.display().to_string(), e))?;
        println!(
            "client {}: {} nodes -> {}",
            cg.client_id,
            cg.num_nodes(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_stats(config: ConfigArgs, clients_dir: PathBuf, out: PathBuf) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(&out, "stats", Some(&cfg), &[("clients_dir", clients_dir.as_path())])?;
    let dirs = client_dirs(&clients_dir)?;
    if dirs.len() != cfg.num_clients {
        return Err(Error::Config(format!(
            "{} client bundles found but num_clients = {}",
            dirs.len(),
            cfg.num_clients
        )));
    }
    let seeds = MaskSeedMatrix::trusted_setup(derive_seed(cfg.seed, "dealer"), cfg.num_clients);
    let uploads = out.join("uploads");
    let masks = out.join("masks");
    fs::create_dir_all(&uploads).map_err(|e| Error::io(uploads.display().to_string(), e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(masks.display().to_string(), e))?;
    for (id, dir) in &dirs {
        let cg = load_client(*id, dir)?;
        let propagated = ofgl::stats::propagate_features(&cg, cfg.stats.prop_depth);
        let profile = ofgl::stats::class_homophily(&cg);
        let soft = ofgl::stats::label_propagation(&cg, &cfg.hre);
        let hre = if cfg.stats.enable_hre {
            ofgl::stats::hre_expand(&cg, &soft, &profile, &cfg.hre)
        } else {
            Vec::new()
        };
        let stats = ofgl::stats::estimate_class_stats(&cg, &propagated, &cfg.stats, &hre);
        let vector = ofgl::secure::StatsVector::from_class_stats(&stats);
        let (upload, mask) = ofgl::secure::build_masked_upload(&vector, *id, &seeds, &cfg.codec)?;

        let upath = uploads.join(format!("upload_{id}.bin"));
        let mut buf = Vec::new();
        write_upload(&mut buf, *id, &upload.values)
            .map_err(|e| Error::io(upath.display().to_string(), e))?;
        fs::write(&upath, buf).map_err(|e| Error::io(upath.display().to_string(), e))?;

        let mpath = masks.join(format!("mask_{id}.bin"));
        let mut buf = Vec::new();
        write_upload(&mut buf, *id, &mask.values)
            .map_err(|e| Error::io(mpath.display().to_string(), e))?;
        fs::write(&mpath, buf).map_err(|e| Error::io(mpath.display().to_string(), e))?;
        println!("client {id}: upload {} bytes", 16 + 8 * upload.values.len());
    }
    Ok(())
}

fn read_wire_dir(dir: &Path, prefix: &str) -> Result<Vec<(usize, Vec<u64>)>, Error> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with(prefix) && name.ends_with(".bin") {
            let bytes = fs::read(entry.path())
                .map_err(|e| Error::io(entry.path().display().to_string(), e))?;
            out.push(read_upload(
                &mut bytes.as_slice(),
                &entry.path().display().to_string(),
            )?);
        }
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

fn cmd_aggregate(config: ConfigArgs, uploads_dir: PathBuf, out: PathBuf) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(&out, "aggregate", Some(&cfg), &[("uploads_dir", uploads_dir.as_path())])?;
    let uploads: Vec<MaskedUpload> = read_wire_dir(&uploads_dir.join("uploads"), "upload_")?
        .into_iter()
        .map(|(client_id, values)| MaskedUpload { client_id, values })
        .collect();
    let masks: Vec<PersonalMask> = read_wire_dir(&uploads_dir.join("masks"), "mask_")?
        .into_iter()
        .map(|(client_id, values)| PersonalMask { client_id, values })
        .collect();

    // The layout comes from the dataset's public schema, not client data.
    let meta_path = Path::new(&cfg.dataset).join("meta.json");
    let meta: serde_json::Value = serde_json::from_slice(
        &fs::read(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?,
    )
    .map_err(|e| Error::format(meta_path.display().to_string(), e.to_string()))?;
    let num_classes = meta["num_classes"].as_u64().unwrap_or(0) as usize;
    let feature_dim = meta["feature_dim"].as_u64().unwrap_or(0) as usize;
    let layout = StatsLayout {
        num_classes,
        dim: (cfg.stats.prop_depth + 1) * feature_dim,
    };

    let stats = server::pool_statistics(
        &uploads,
        &masks,
        cfg.num_clients,
        &cfg.codec,
        layout,
        cfg.denominator,
    )
    .map_err(|e| e.at_stage("aggregate"))?;
    let path = out.join("global_stats.json");
    fs::write(&path, serde_json::to_vec_pretty(&stats).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "aggregated {} uploads; {} classes present -> {}",
        uploads.len(),
        stats.present_classes().len(),
        path.display()
    );
    Ok(())
}

fn cmd_gen_surrogate(config: ConfigArgs, stats: PathBuf, out: PathBuf) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(&out, "gen-surrogate", Some(&cfg), &[("stats", stats.as_path())])?;
    let gs: GlobalStats = serde_json::from_slice(
        &fs::read(&stats).map_err(|e| Error::io(stats.display().to_string(), e))?,
    )
    .map_err(|e| Error::format(stats.display().to_string(), e.to_string()))?;
    let (surrogate, trajectory) =
        server::generate_surrogate(&gs, &cfg.generation, derive_seed(cfg.seed, "surrogate"))
            .map_err(|e| e.at_stage("gen-surrogate"))?;
    save_bundle(&surrogate, &out.join("surrogate"))?;
    let traj_path = out.join("trajectory.json");
    fs::write(&traj_path, serde_json::to_vec(&trajectory).unwrap())
        .map_err(|e| Error::io(traj_path.display().to_string(), e))?;
    println!(
        "surrogate: {} nodes, {} edges, loss {:.6} -> {:.6}",
        surrogate.num_nodes(),
        surrogate.graph.num_edges(),
        trajectory.first().unwrap_or(&f64::NAN),
        trajectory.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_train(
    config: ConfigArgs,
    clients_dir: PathBuf,
    surrogate: PathBuf,
    out: PathBuf,
) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(
        &out,
        "train",
        Some(&cfg),
        &[
            ("clients_dir", clients_dir.as_path()),
            ("surrogate", surrogate.as_path()),
        ],
    )?;
    let surrogate_bundle = load_bundle(&surrogate)?;
    let dirs = client_dirs(&clients_dir)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;

    let mut outcomes: Vec<ClientOutcome> = Vec::new();
    for (id, dir) in &dirs {
        let cg = load_client(*id, dir)?;
        let spec = cfg.model_for(*id);
        let stage1_seed = derive_seed_indexed(cfg.seed, "stage1", *id as u64);
        let (teacher, init, _) = ofgl::personalize::stage1_train_global(
            &surrogate_bundle,
            spec,
            &cfg.stage1,
            stage1_seed,
        )?;
        let profile = ofgl::stats::class_homophily(&cg);
        let soft = ofgl::stats::label_propagation(&cg, &cfg.hre);
        let w_dist = compute_w_dist(&profile);
        let gamma = effective_gamma(cfg.ablation, &compute_gamma(&soft, &w_dist, cfg.beta));
        let (personalized, history) = ofgl::personalize::stage2_finetune(
            init,
            &teacher,
            &cg,
            &gamma,
            &cfg.stage2,
            cfg.kl_direction,
        )?;

        let ckpt_path = ckpt_dir.join(format!("client_{id}.ckpt"));
        let mut buf = Vec::new();
        save_checkpoint(&personalized, &mut buf)
            .map_err(|e| Error::io(ckpt_path.display().to_string(), e))?;
        fs::write(&ckpt_path, buf)
            .map_err(|e| Error::io(ckpt_path.display().to_string(), e))?;

        let adj = cg.graph.normalized_adjacency();
        let (logits, _) = model_forward(&personalized, &adj, &cg.features)?;
        let preds = predictions(&logits);
        let test = cg.splits.nodes_with(Split::Test);
        let (accuracy, f1_macro, f1_macro_local) = if test.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            evaluate_metrics(&preds, cg.labels.raw(), &test, cg.num_classes())?
        };
        let correct = test
            .iter()
            .filter(|&&v| cg.labels.raw()[v] == preds[v] as i64)
            .count();
        outcomes.push(ClientOutcome {
            client_id: *id,
            num_nodes: cg.num_nodes(),
            test_count: test.len(),
            correct,
            accuracy,
            f1_macro,
            f1_macro_local,
            best_train_loss: history
                .train_loss
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        });
        println!("client {id}: accuracy {accuracy:.2}, f1-macro {f1_macro:.2}");
    }

    let total_test: usize = outcomes.iter().map(|c| c.test_count).sum();
    let total_correct: usize = outcomes.iter().map(|c| c.correct).sum();
    let scored: Vec<&ClientOutcome> = outcomes.iter().filter(|c| c.test_count > 0).collect();
    let metrics = serde_json::json!({
        "accuracy": 100.0 * total_correct as f64 / total_test.max(1) as f64,
        "f1_macro": scored.iter().map(|c| c.f1_macro).sum::<f64>() / scored.len().max(1) as f64,
        "f1_macro_local": scored.iter().map(|c| c.f1_macro_local).sum::<f64>()
            / scored.len().max(1) as f64,
        "clients": outcomes,
    });
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_vec_pretty(&metrics).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("metrics written to {}", path.display());
    Ok(())
}

fn cmd_eval(
    config: ConfigArgs,
    clients_dir: PathBuf,
    checkpoints: PathBuf,
    out: PathBuf,
) -> Result<(), Error> {
    let cfg = config.resolve()?;
    write_manifest(
        &out,
        "eval",
        Some(&cfg),
        &[
            ("clients_dir", clients_dir.as_path()),
            ("checkpoints", checkpoints.as_path()),
        ],
    )?;
    let dirs = client_dirs(&clients_dir)?;
    let mut rows = Vec::new();
    for (id, dir) in &dirs {
        let cg = load_client(*id, dir)?;
        let ckpt_path = checkpoints.join(format!("client_{id}.ckpt"));
        let bytes =
            fs::read(&ckpt_path).map_err(|e| Error::io(ckpt_path.display().to_string(), e))?;
        let model = load_checkpoint(&mut bytes.as_slice(), &ckpt_path.display().to_string())?;
        let adj = cg.graph.normalized_adjacency();
        let (logits, _) = model_forward(&model, &adj, &cg.features)?;
        let preds = predictions(&logits);
        let test = cg.splits.nodes_with(Split::Test);
        let (accuracy, f1_macro, f1_macro_local) =
            evaluate_metrics(&preds, cg.labels.raw(), &test, cg.num_classes())?;
        println!("client {id}: accuracy {accuracy:.2}, f1-macro {f1_macro:.2}");
        rows.push(serde_json::json!({
            "client_id": id,
            "accuracy": accuracy,
            "f1_macro": f1_macro,
            "f1_macro_local": f1_macro_local,
        }));
    }
    let path = out.join("metrics.json");
    fs::write(
        &path,
        serde_json::to_vec_pretty(&serde_json::Value::Array(rows)).unwrap(),
    )
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("metrics written to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_convert(
    edges: PathBuf,
    features: PathBuf,
    labels: PathBuf,
    splits: Option<PathBuf>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
    name: String,
    num_classes: Option<usize>,
    out: PathBuf,
) -> Result<(), Error> {
    let read = |p: &Path| -> Result<String, Error> {
        fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))
    };

    // Features define the node count.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in read(&features)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, Error> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::format(
                        features.display().to_string(),
                        format!("line {}: bad float '{tok}'", lineno + 1),
                    )
                })
            })
            .collect();
        rows.push(row?);
    }
    let n = rows.len();
    let dim = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::format(
            features.display().to_string(),
            "ragged feature rows",
        ));
    }
    let mut feats = ndarray::Array2::zeros((n, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            feats[(i, j)] = v;
        }
    }

    // Raw edge lists commonly carry duplicates and self-loops; drop both.
    let mut edge_list = Vec::new();
    for (lineno, line) in read(&edges)?.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(Error::format(
                edges.display().to_string(),
                format!("line {}: expected two node ids", lineno + 1),
            ));
        }
        let u: usize = toks[0].parse().map_err(|_| {
            Error::format(edges.display().to_string(), format!("line {}", lineno + 1))
        })?;
        let v: usize = toks[1].parse().map_err(|_| {
            Error::format(edges.display().to_string(), format!("line {}", lineno + 1))
        })?;
        if u != v {
            edge_list.push((u, v));
        }
    }
    let graph = Graph::from_edges(n, &edge_list)?;

    let mut label_vec: Vec<i64> = Vec::new();
    for (lineno, line) in read(&labels)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        label_vec.push(line.trim().parse().map_err(|_| {
            Error::format(labels.display().to_string(), format!("line {}", lineno + 1))
        })?);
    }
    if label_vec.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            label_vec.len(),
            n
        )));
    }
    let classes = num_classes
        .unwrap_or_else(|| (label_vec.iter().copied().max().unwrap_or(-1) + 1).max(0) as usize);
    let label_vec = LabelVector::new(label_vec, classes)?;

    let tags: Vec<Split> = match splits {
        Some(path) => {
            let mut tags = Vec::new();
            for (lineno, line) in read(&path)?.lines().enumerate() {
                tags.push(Split::parse(line.trim()).ok_or_else(|| {
                    Error::format(path.display().to_string(), format!("line {}", lineno + 1))
                })?);
            }
            tags
        }
        None => {
            let mut rng = rng_from_seed(seed);
            (0..n)
                .map(|v| {
                    // Unlabeled nodes cannot be train nodes.
                    let r: f64 = rng.random_range(0.0..1.0);
                    if r < train_frac && label_vec.get(v).is_some() {
                        Split::Train
                    } else if r < train_frac + val_frac {
                        Split::Val
                    } else {
                        Split::Test
                    }
                })
                .collect()
        }
    };

    let bundle = DatasetBundle::new(name, graph, feats, label_vec, SplitMasks::new(tags))?;
    save_bundle(&bundle, &out)?;
    write_manifest(
        &out,
        "convert",
        None,
        &[
            ("edges", edges.as_path()),
            ("features", features.as_path()),
            ("labels", labels.as_path()),
        ],
    )?;
    println!(
        "bundle: {} nodes, {} edges, {} classes -> {}",
        bundle.num_nodes(),
        bundle.graph.num_edges(),
        bundle.num_classes(),
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Partition {
            config,
            clients,
            out,
        } => cmd_partition(config, clients, out),
        Command::Stats {
            config,
            clients_dir,
            out,
        } => cmd_stats(config, clients_dir, out),
        Command::Aggregate {
            config,
            uploads_dir,
            out,
        } => cmd_aggregate(config, uploads_dir, out),
        Command::GenSurrogate { config, stats, out } => cmd_gen_surrogate(config, stats, out),
        Command::Train {
            config,
            clients_dir,
            surrogate,
            out,
        } => cmd_train(config, clients_dir, surrogate, out),
        Command::Eval {
            config,
            clients_dir,
            checkpoints,
            out,
        } => cmd_eval(config, clients_dir, checkpoints, out),
        Command::Convert {
            edges,
            features,
            labels,
            splits,
            train_frac,
            val_frac,
            seed,
            name,
            num_classes,
            out,
        } => cmd_convert(
            edges, features, labels, splits, train_frac, val_frac, seed, name, num_classes, out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ Error::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
