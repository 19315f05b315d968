//! Client partitioning: Louvain communities packed onto clients.
//!
//! Communities are kept intact and greedily assigned (largest first) to the
//! currently smallest client, which balances node counts while the label
//! skew of the communities produces the label imbalance across clients.
//! When there are fewer communities than clients, the largest parts are
//! split by BFS region growing, so the split succeeds for any
//! `m <= num_nodes`.

use super::{ClientGraph, DatasetBundle, Graph, LabelVector, SplitMasks};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use ndarray::Array2;
use std::collections::VecDeque;

/// Induced subgraph on `node_set`, ids remapped densely in ascending order
/// of the original ids (recorded in `global_node_ids`).
pub fn induced_subgraph(
    graph: &Graph,
    features: &Array2<f64>,
    labels: &LabelVector,
    splits: &SplitMasks,
    node_set: &[usize],
    client_id: usize,
) -> Result<ClientGraph> {
    let mut nodes: Vec<usize> = node_set.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if let Some(&v) = nodes.last() {
        if v >= graph.num_nodes() {
            return Err(Error::Shape(format!(
                "node id {v} out of range for {} nodes",
                graph.num_nodes()
            )));
        }
    }

    let mut local_of = vec![usize::MAX; graph.num_nodes()];
    for (local, &global) in nodes.iter().enumerate() {
        local_of[global] = local;
    }

    let mut edges = Vec::new();
    for (local_u, &u) in nodes.iter().enumerate() {
        for &v in graph.neighbors(u) {
            let local_v = local_of[v];
            if local_v != usize::MAX && local_u < local_v {
                edges.push((local_u, local_v));
            }
        }
    }
    let sub = Graph::from_edges(nodes.len(), &edges)?;

    let mut feats = Array2::zeros((nodes.len(), features.ncols()));
    for (local, &global) in nodes.iter().enumerate() {
        feats.row_mut(local).assign(&features.row(global));
    }
    let raw_labels: Vec<i64> = nodes.iter().map(|&v| labels.raw()[v]).collect();
    let tags = nodes.iter().map(|&v| splits.tag(v)).collect();

    Ok(ClientGraph {
        client_id,
        graph: sub,
        features: feats,
        labels: LabelVector::new(raw_labels, labels.num_classes())?,
        splits: SplitMasks::new(tags),
        global_node_ids: nodes,
    })
}

/// Split the part in half by BFS region growing from its smallest node id;
/// disconnected remainders seed new BFS fronts.
fn region_grow_split(graph: &Graph, part: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let target = part.len().div_ceil(2);
    let in_part: std::collections::HashSet<usize> = part.iter().copied().collect();
    let mut taken = Vec::with_capacity(target);
    let mut visited: std::collections::HashSet<usize> = std::collections::HashSet::new();
    let mut order: Vec<usize> = part.to_vec();
    order.sort_unstable();

    let mut queue = VecDeque::new();
    let mut next_seed = 0usize;
    while taken.len() < target {
        if queue.is_empty() {
            while next_seed < order.len() && visited.contains(&order[next_seed]) {
                next_seed += 1;
            }
            queue.push_back(order[next_seed]);
            visited.insert(order[next_seed]);
        }
        let u = queue.pop_front().unwrap();
        taken.push(u);
        for &v in graph.neighbors(u) {
            if in_part.contains(&v) && visited.insert(v) {
                queue.push_back(v);
            }
        }
    }
    let rest: Vec<usize> = order
        .iter()
        .copied()
        .filter(|v| !taken.contains(v))
        .collect();
    (taken, rest)
}

/// Partition a dataset into `m` client subgraphs along Louvain communities.
///
/// The client node sets are pairwise disjoint and cover every node; masks
/// and labels are inherited from the bundle. Deterministic given the seed.
pub fn label_imbalance_split(
    bundle: &DatasetBundle,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientGraph>> {
    let n = bundle.num_nodes();
    if num_clients == 0 {
        return Err(Error::Config("num_clients must be >= 1".into()));
    }
    if num_clients > n {
        return Err(Error::Config(format!(
            "cannot split {n} nodes into {num_clients} clients"
        )));
    }

    let assignment = super::louvain_partition(&bundle.graph, derive_seed(seed, "louvain"));
    let num_comms = assignment.iter().copied().max().map_or(0, |c| c + 1);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); num_comms];
    for (v, &c) in assignment.iter().enumerate() {
        parts[c].push(v);
    }

    // Fewer communities than clients: split the largest part in half until
    // there are enough parts.
    while parts.len() < num_clients {
        let largest = parts
            .iter()
            .enumerate()
            .max_by_key(|(i, p)| (p.len(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
            .unwrap();
        let part = parts.swap_remove(largest);
        let (a, b) = region_grow_split(&bundle.graph, &part);
        parts.push(a);
        parts.push(b);
    }

    // Largest community first onto the currently smallest client.
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(parts[i].len()), parts[i][0]));
    let mut client_nodes: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for &i in &order {
        let smallest = (0..num_clients)
            .min_by_key(|&k| (client_nodes[k].len(), k))
            .unwrap();
        client_nodes[smallest].extend_from_slice(&parts[i]);
    }

    client_nodes
        .into_iter()
        .enumerate()
        .map(|(k, nodes)| {
            induced_subgraph(
                &bundle.graph,
                &bundle.features,
                &bundle.labels,
                &bundle.splits,
                &nodes,
                k,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Split;

    fn clique_edges(nodes: &[usize]) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                edges.push((nodes[i], nodes[j]));
            }
        }
        edges
    }

    fn bundle_with(num_nodes: usize, edges: &[(usize, usize)]) -> DatasetBundle {
        let graph = Graph::from_edges(num_nodes, edges).unwrap();
        let features =
            Array2::from_shape_fn((num_nodes, 2), |(i, j)| (i * 2 + j) as f64 * 0.25);
        let labels = LabelVector::new(vec![0; num_nodes], 2).unwrap();
        let splits = SplitMasks::new(vec![Split::Train; num_nodes]);
        DatasetBundle::new("t", graph, features, labels, splits).unwrap()
    }

    #[test]
    fn induced_subgraph_full_set_is_copy() {
        let b = bundle_with(4, &[(0, 1), (1, 2), (2, 3)]);
        let cg = induced_subgraph(
            &b.graph,
            &b.features,
            &b.labels,
            &b.splits,
            &[0, 1, 2, 3],
            0,
        )
        .unwrap();
        assert_eq!(cg.graph, b.graph);
        assert_eq!(cg.features, b.features);
        assert_eq!(cg.global_node_ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn induced_subgraph_single_node() {
        let b = bundle_with(3, &[(0, 1), (1, 2)]);
        let cg =
            induced_subgraph(&b.graph, &b.features, &b.labels, &b.splits, &[1], 0).unwrap();
        assert_eq!(cg.num_nodes(), 1);
        assert_eq!(cg.graph.num_edges(), 0);
        assert_eq!(cg.global_node_ids, vec![1]);
    }

    #[test]
    fn induced_subgraph_drops_outside_edges() {
        // Triangle restricted to two nodes leaves a single edge.
        let b = bundle_with(3, &[(0, 1), (1, 2), (0, 2)]);
        let cg =
            induced_subgraph(&b.graph, &b.features, &b.labels, &b.splits, &[0, 2], 0).unwrap();
        assert_eq!(cg.num_nodes(), 2);
        assert_eq!(cg.graph.num_edges(), 1);
        assert!(cg.graph.has_edge(0, 1));
    }

    #[test]
    fn induced_subgraph_rejects_out_of_range() {
        let b = bundle_with(3, &[(0, 1)]);
        assert!(
            induced_subgraph(&b.graph, &b.features, &b.labels, &b.splits, &[0, 7], 0).is_err()
        );
    }

    #[test]
    fn single_client_gets_everything() {
        let b = bundle_with(5, &[(0, 1), (2, 3), (3, 4)]);
        let clients = label_imbalance_split(&b, 1, 9).unwrap();
        assert_eq!(clients.len(), 1);
        assert_eq!(clients[0].global_node_ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(clients[0].graph, b.graph);
    }

    #[test]
    fn two_cliques_one_per_client() {
        let mut edges = clique_edges(&[0, 1, 2, 3]);
        edges.extend(clique_edges(&[4, 5, 6, 7]));
        let b = bundle_with(8, &edges);
        let clients = label_imbalance_split(&b, 2, 3).unwrap();
        let mut sets: Vec<Vec<usize>> =
            clients.iter().map(|c| c.global_node_ids.clone()).collect();
        sets.sort();
        assert_eq!(sets, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
    }

    #[test]
    fn partition_property_holds_for_many_m() {
        let mut edges = clique_edges(&[0, 1, 2, 3, 4]);
        edges.extend(clique_edges(&[5, 6, 7]));
        edges.extend([(4, 5), (7, 8), (8, 9)]);
        let b = bundle_with(10, &edges);
        for m in 1..=10 {
            let clients = label_imbalance_split(&b, m, 11).unwrap();
            assert_eq!(clients.len(), m);
            let mut seen = vec![false; 10];
            for c in &clients {
                for &v in &c.global_node_ids {
                    assert!(!seen[v], "node {v} assigned twice");
                    seen[v] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "m={m}: not all nodes covered");
        }
    }

    #[test]
    fn more_clients_than_communities_splits_by_region_growing() {
        let b = bundle_with(6, &clique_edges(&[0, 1, 2, 3, 4, 5]));
        let clients = label_imbalance_split(&b, 3, 1).unwrap();
        assert_eq!(clients.len(), 3);
        let total: usize = clients.iter().map(|c| c.num_nodes()).sum();
        assert_eq!(total, 6);
        assert!(clients.iter().all(|c| c.num_nodes() >= 1));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut edges = clique_edges(&[0, 1, 2, 3]);
        edges.extend(clique_edges(&[4, 5, 6, 7]));
        edges.push((0, 4));
        let b = bundle_with(8, &edges);
        let a = label_imbalance_split(&b, 3, 5).unwrap();
        let c = label_imbalance_split(&b, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.global_node_ids, y.global_node_ids);
        }
    }
}
