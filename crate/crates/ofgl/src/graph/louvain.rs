//! Modularity-maximizing Louvain community detection.
//!
//! The sweep order is fixed (ascending node id) and ties between equal
//! modularity gains are broken by a seeded RNG, so the partition is a pure
//! function of `(graph, seed)`. Each level moves nodes until a full sweep
//! yields no positive gain, then aggregates communities into a weighted
//! graph (intra-community weight becomes a self-loop) and repeats.

use super::Graph;
use crate::rng::rng_from_seed;
use rand::Rng as _;

const GAIN_EPS: f64 = 1e-12;

/// Weighted multigraph for the aggregation levels.
struct Level {
    /// Neighbor lists with weights; self-loops stored once.
    adj: Vec<Vec<(usize, f64)>>,
    /// Weighted degree; a self-loop of weight w contributes 2w.
    strength: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_graph(g: &Graph) -> Self {
        let n = g.num_nodes();
        let mut adj = vec![Vec::new(); n];
        for u in 0..n {
            for &v in g.neighbors(u) {
                adj[u].push((v, 1.0));
            }
        }
        let strength: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();
        let two_m = strength.iter().sum();
        Level {
            adj,
            strength,
            two_m,
        }
    }

    fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    /// One level of local moves; returns the community of each node and
    /// whether any node moved.
    fn local_moves(&self, rng: &mut crate::rng::Rng) -> (Vec<usize>, bool) {
        let n = self.num_nodes();
        let mut community: Vec<usize> = (0..n).collect();
        let mut total_strength: Vec<f64> = self.strength.clone();
        let m = self.two_m / 2.0;
        let mut any_moved = false;

        loop {
            let mut moved_this_sweep = false;
            for i in 0..n {
                let old_comm = community[i];

                // Weight from i to each neighboring community (self excluded).
                let mut comm_weights: Vec<(usize, f64)> = Vec::new();
                for &(j, w) in &self.adj[i] {
                    if j == i {
                        continue;
                    }
                    let c = community[j];
                    match comm_weights.binary_search_by_key(&c, |&(c, _)| c) {
                        Ok(pos) => comm_weights[pos].1 += w,
                        Err(pos) => comm_weights.insert(pos, (c, w)),
                    }
                }

                total_strength[old_comm] -= self.strength[i];

                // Gain of joining community c relative to staying singleton.
                let mut best_gain = 0.0f64;
                let mut ties: Vec<usize> = vec![old_comm];
                for &(c, w) in &comm_weights {
                    let gain = w / m - total_strength[c] * self.strength[i] / (2.0 * m * m);
                    if gain > best_gain + GAIN_EPS {
                        best_gain = gain;
                        ties.clear();
                        ties.push(c);
                    } else if (gain - best_gain).abs() <= GAIN_EPS && best_gain > GAIN_EPS {
                        if !ties.contains(&c) {
                            ties.push(c);
                        }
                    }
                }

                let target = if best_gain > GAIN_EPS {
                    ties[rng.random_range(0..ties.len())]
                } else {
                    old_comm
                };

                total_strength[target] += self.strength[i];
                if target != old_comm {
                    community[i] = target;
                    moved_this_sweep = true;
                    any_moved = true;
                }
            }
            if !moved_this_sweep {
                break;
            }
        }
        (community, any_moved)
    }

    /// Collapse communities into nodes; intra weight becomes a self-loop.
    fn aggregate(&self, community: &[usize], dense: &[usize], k: usize) -> Level {
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        for u in 0..self.num_nodes() {
            let cu = dense[community[u]];
            for &(v, w) in &self.adj[u] {
                if v < u {
                    continue; // each undirected edge once; keep self-loops (v == u)
                }
                let cv = dense[community[v]];
                let (a, b, weight) = if cu == cv {
                    // Intra edge u < v folds into a self-loop once; an existing
                    // self-loop keeps its weight.
                    (cu, cu, w)
                } else {
                    (cu.min(cv), cu.max(cv), w)
                };
                upsert(&mut adj[a], b, weight);
                if a != b {
                    upsert(&mut adj[b], a, weight);
                }
            }
        }
        let strength: Vec<f64> = (0..k)
            .map(|c| {
                adj[c]
                    .iter()
                    .map(|&(j, w)| if j == c { 2.0 * w } else { w })
                    .sum()
            })
            .collect();
        let two_m = strength.iter().sum();
        Level {
            adj,
            strength,
            two_m,
        }
    }
}

fn upsert(row: &mut Vec<(usize, f64)>, key: usize, w: f64) {
    match row.binary_search_by_key(&key, |&(k, _)| k) {
        Ok(pos) => row[pos].1 += w,
        Err(pos) => row.insert(pos, (key, w)),
    }
}

/// Relabel community ids densely in order of first appearance by node id;
/// returns the relabeled assignment, the raw-to-dense map, and the count.
fn densify(community: &[usize]) -> (Vec<usize>, Vec<usize>, usize) {
    let max = community.iter().copied().max().map_or(0, |c| c + 1);
    let mut dense = vec![usize::MAX; max];
    let mut next = 0;
    for &c in community {
        if dense[c] == usize::MAX {
            dense[c] = next;
            next += 1;
        }
    }
    let relabeled = community.iter().map(|&c| dense[c]).collect();
    (relabeled, dense, next)
}

/// Louvain community assignment, deterministic given the seed.
///
/// An edgeless graph yields the singleton partition.
pub fn louvain_partition(g: &Graph, seed: u64) -> Vec<usize> {
    let n = g.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    if g.num_edges() == 0 {
        return (0..n).collect();
    }
    let mut rng = rng_from_seed(seed);

    // membership[v] = community of original node v in the current level.
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = Level::from_graph(g);

    loop {
        let (community, moved) = level.local_moves(&mut rng);
        if !moved {
            break;
        }
        let (relabeled, dense, count) = densify(&community);
        for slot in membership.iter_mut() {
            *slot = relabeled[*slot];
        }
        let next = level.aggregate(&community, &dense, count);
        if next.num_nodes() == level.num_nodes() {
            break;
        }
        level = next;
    }
    densify(&membership).0
}

/// Modularity of a community assignment on an unweighted simple graph.
///
/// Returns 0 for an edgeless graph.
pub fn modularity(g: &Graph, community: &[usize]) -> f64 {
    let two_m = (2 * g.num_edges()) as f64;
    if two_m == 0.0 {
        return 0.0;
    }
    let k = community.iter().copied().max().map_or(0, |c| c + 1);
    let mut intra = vec![0.0f64; k];
    let mut total_deg = vec![0.0f64; k];
    for (u, v) in g.edges() {
        if community[u] == community[v] {
            intra[community[u]] += 1.0;
        }
    }
    for v in 0..g.num_nodes() {
        total_deg[community[v]] += g.degree(v) as f64;
    }
    (0..k)
        .map(|c| 2.0 * intra[c] / two_m - (total_deg[c] / two_m).powi(2))
        .sum()
}
