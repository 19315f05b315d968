//! Dataset bundle directory codec and the per-client subgraph type.
//!
//! A bundle directory holds five files:
//!
//! * `meta.json` — `{"name", "num_nodes", "num_edges", "feature_dim", "num_classes"}`
//! * `edges.tsv` — one undirected edge per line, two base-10 node ids
//!   separated by one tab
//! * `features.bin` — little-endian IEEE-754 32-bit floats, row-major
//!   `num_nodes x feature_dim`, no header
//! * `labels.tsv` — one base-10 integer per line, `-1` allowed
//! * `splits.tsv` — one token per line in `{train, val, test}`
//!
//! `load(save(b))` reproduces `b` bit-exactly; features are 32-bit floats
//! on disk, so in-memory bundles are kept at f32 precision.

use super::{Graph, LabelVector, Split, SplitMasks};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    name: String,
    num_nodes: usize,
    num_edges: usize,
    feature_dim: usize,
    num_classes: usize,
}

/// A whole dataset: graph, features, labels, and split masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: LabelVector,
    pub splits: SplitMasks,
}

impl DatasetBundle {
    /// Assemble a bundle, validating cross-field consistency.
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: Array2<f64>,
        labels: LabelVector,
        splits: SplitMasks,
    ) -> Result<Self> {
        let bundle = DatasetBundle {
            name: name.into(),
            graph,
            features,
            labels,
            splits,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.nrows() != n {
            return Err(Error::Shape(format!(
                "features have {} rows for {} nodes",
                self.features.nrows(),
                n
            )));
        }
        if self.labels.len() != n || self.splits.len() != n {
            return Err(Error::Shape(format!(
                "labels ({}) or splits ({}) length differs from {} nodes",
                self.labels.len(),
                self.splits.len(),
                n
            )));
        }
        for &x in self.features.iter() {
            if !x.is_finite() {
                return Err(Error::Shape("non-finite feature entry".into()));
            }
        }
        for v in 0..n {
            if self.splits.tag(v) == Split::Train && self.labels.get(v).is_none() {
                return Err(Error::Shape(format!("train node {v} has no label")));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }
}

/// One simulated client: an induced subgraph with densely remapped ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientGraph {
    pub client_id: usize,
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: LabelVector,
    pub splits: SplitMasks,
    /// Original node ids in the source dataset, indexed by local id.
    pub global_node_ids: Vec<usize>,
}

impl ClientGraph {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Train-labeled node ids (the only labels a client may consume).
    pub fn train_nodes(&self) -> Vec<usize> {
        self.splits.nodes_with(Split::Train)
    }
}

/// Serialize a bundle into its five files as in-memory byte buffers.
///
/// The keys are the on-disk file names; byte counts of the buffers are the
/// exact transfer sizes used in communication accounting.
pub fn serialize_bundle(bundle: &DatasetBundle) -> Vec<(&'static str, Vec<u8>)> {
    let meta = Meta {
        name: bundle.name.clone(),
        num_nodes: bundle.num_nodes(),
        num_edges: bundle.graph.num_edges(),
        feature_dim: bundle.feature_dim(),
        num_classes: bundle.num_classes(),
    };
    let meta_bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");

    let mut edges = String::new();
    for (u, v) in bundle.graph.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }

    let mut features = Vec::with_capacity(bundle.features.len() * 4);
    for &x in bundle.features.iter() {
        features.extend_from_slice(&(x as f32).to_le_bytes());
    }

    let mut labels = String::new();
    for &y in bundle.labels.raw() {
        let _ = writeln!(labels, "{y}");
    }

    let mut splits = String::new();
    for &t in bundle.splits.tags() {
        let _ = writeln!(splits, "{}", t.as_str());
    }

    vec![
        ("meta.json", meta_bytes),
        ("edges.tsv", edges.into_bytes()),
        ("features.bin", features),
        ("labels.tsv", labels.into_bytes()),
        ("splits.tsv", splits.into_bytes()),
    ]
}

/// Write a bundle directory, creating it if needed.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (name, bytes) in serialize_bundle(bundle) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let bytes = read_file(dir, name)?;
    String::from_utf8(bytes)
        .map_err(|_| Error::format(dir.join(name).display().to_string(), "not valid UTF-8"))
}

/// Load and validate a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join("meta.json").display().to_string();
    let meta: Meta = serde_json::from_slice(&read_file(dir, "meta.json")?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let edges_path = dir.join("edges.tsv").display().to_string();
    let mut edges = Vec::new();
    for (lineno, line) in read_text(dir, "edges.tsv")?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| {
                Error::format(&edges_path, format!("line {}: malformed edge", lineno + 1))
            })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::format(
                &edges_path,
                format!("line {}: expected two fields", lineno + 1),
            ));
        }
        if u == v {
            return Err(Error::format(
                &edges_path,
                format!("line {}: self-loop on node {u}", lineno + 1),
            ));
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(meta.num_nodes, &edges)?;
    if graph.num_edges() != meta.num_edges {
        return Err(Error::format(
            &edges_path,
            format!(
                "meta declares {} edges, file holds {} after symmetrization",
                meta.num_edges,
                graph.num_edges()
            ),
        ));
    }

    let feat_bytes = read_file(dir, "features.bin")?;
    let expected = meta.num_nodes * meta.feature_dim * 4;
    if feat_bytes.len() != expected {
        return Err(Error::format(
            dir.join("features.bin").display().to_string(),
            format!(
                "feature byte-length mismatch: expected {expected}, found {}",
                feat_bytes.len()
            ),
        ));
    }
    let mut features = Array2::zeros((meta.num_nodes, meta.feature_dim));
    for (idx, chunk) in feat_bytes.chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        features[(idx / meta.feature_dim, idx % meta.feature_dim)] = f64::from(x);
    }

    let labels_path = dir.join("labels.tsv").display().to_string();
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for (lineno, line) in read_text(dir, "labels.tsv")?.lines().enumerate() {
        let y: i64 = line.trim().parse().map_err(|_| {
            Error::format(&labels_path, format!("line {}: malformed label", lineno + 1))
        })?;
        labels.push(y);
    }
    if labels.len() != meta.num_nodes {
        return Err(Error::format(
            &labels_path,
            format!("{} labels for {} nodes", labels.len(), meta.num_nodes),
        ));
    }
    let labels = LabelVector::new(labels, meta.num_classes)?;

    let splits_path = dir.join("splits.tsv").display().to_string();
    let mut tags = Vec::with_capacity(meta.num_nodes);
    for (lineno, line) in read_text(dir, "splits.tsv")?.lines().enumerate() {
        let tag = Split::parse(line.trim()).ok_or_else(|| {
            Error::format(
                &splits_path,
                format!("line {}: unknown split token '{}'", lineno + 1, line),
            )
        })?;
        tags.push(tag);
    }
    if tags.len() != meta.num_nodes {
        return Err(Error::format(
            &splits_path,
            format!("{} split tags for {} nodes", tags.len(), meta.num_nodes),
        ));
    }

    DatasetBundle::new(meta.name, graph, features, labels, SplitMasks::new(tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_bundle() -> DatasetBundle {
        let graph = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let features = ndarray::array![[1.0, 2.0], [0.5, -1.0], [0.0, 0.0]];
        let labels = LabelVector::new(vec![0, 1, -1], 2).unwrap();
        let splits = SplitMasks::new(vec![Split::Train, Split::Train, Split::Test]);
        DatasetBundle::new("tiny", graph, features, labels, splits).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempdir().unwrap();
        let b = tiny_bundle();
        save_bundle(&b, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(b, loaded);
    }

    #[test]
    fn load_reads_back_neighbor_lists() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.graph.neighbors(0), &[1]);
        assert_eq!(b.graph.neighbors(1), &[0]);
        assert_eq!(b.graph.neighbors(2), &[] as &[usize]);
    }

    #[test]
    fn duplicate_directed_edges_collapse() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t0\n").unwrap();
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(b.graph.num_edges(), 1);
    }

    #[test]
    fn zero_edge_bundle_round_trips() {
        let dir = tempdir().unwrap();
        let graph = Graph::from_edges(2, &[]).unwrap();
        let features = ndarray::array![[0.0], [1.0]];
        let labels = LabelVector::new(vec![0, 0], 1).unwrap();
        let splits = SplitMasks::new(vec![Split::Train, Split::Test]);
        let b = DatasetBundle::new("empty", graph, features, labels, splits).unwrap();
        save_bundle(&b, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), b);
    }

    #[test]
    fn truncated_features_reports_byte_length_mismatch() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        let mut bytes = fs::read(dir.path().join("features.bin")).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        fs::write(dir.path().join("features.bin"), bytes).unwrap();
        let err = load_bundle(dir.path()).unwrap_err().to_string();
        assert!(err.contains("feature byte-length mismatch"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("labels.tsv")).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("labels.tsv"), "0\n5\n-1\n").unwrap();
        assert!(load_bundle(dir.path()).is_err());
    }

    #[test]
    fn self_loop_rejected() {
        let dir = tempdir().unwrap();
        save_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("edges.tsv"), "0\t0\n").unwrap();
        assert!(load_bundle(dir.path()).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let b = tiny_bundle();
        let err = save_bundle(&b, Path::new("/proc/ofgl-no-such-place/bundle"));
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
