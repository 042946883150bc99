//! Community detection and core/periphery labelling of road networks.
//!
//! Test-set construction samples origin–destination pairs across
//! community boundaries, so it needs (a) a partition of the vertices —
//! Louvain modularity optimisation on the undirected projection — and
//! (b) a split of the communities into "inner" (core) and "outer"
//! (periphery), which we derive from sampled vertex betweenness since a
//! synthetic graph has no geography to consult.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::network::RoadNetwork;

/// A vertex partition with its modularity score.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityAssignment {
    /// Community id per vertex, ids contiguous from 0, numbered by first
    /// appearance in vertex order.
    pub assignment: Vec<usize>,
    pub n_communities: usize,
    /// Modularity of the partition on the undirected unit-weight
    /// projection.
    pub modularity: f64,
}

impl CommunityAssignment {
    /// Vertices belonging to community `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &a)| a == c).map(|(v, _)| v).collect()
    }
}

/// Undirected unit-weight projection: parallel and anti-parallel edges
/// collapse to a single edge, self-loops are dropped.
fn undirected_projection(network: &RoadNetwork) -> Vec<Vec<(usize, f64)>> {
    let n = network.n_vertices();
    let mut seen = std::collections::BTreeSet::new();
    for s in network.segments() {
        if s.from != s.to {
            let key = (s.from.min(s.to), s.from.max(s.to));
            seen.insert(key);
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (a, b) in seen {
        adj[a].push((b, 1.0));
        adj[b].push((a, 1.0));
    }
    adj
}

/// Modularity of `assignment` on a weighted adjacency list (self-loop
/// weights counted twice in degrees, the usual convention).
fn modularity(adj: &[Vec<(usize, f64)>], assignment: &[usize]) -> f64 {
    let m2: f64 = adj.iter().flatten().map(|&(_, w)| w).sum();
    if m2 == 0.0 {
        return 0.0;
    }
    let n_comms = assignment.iter().copied().max().map_or(0, |c| c + 1);
    let mut internal = vec![0.0f64; n_comms];
    let mut total = vec![0.0f64; n_comms];
    for (v, neighbors) in adj.iter().enumerate() {
        for &(u, w) in neighbors {
            total[assignment[v]] += w;
            if assignment[v] == assignment[u] {
                internal[assignment[v]] += w;
            }
        }
    }
    (0..n_comms).map(|c| internal[c] / m2 - (total[c] / m2) * (total[c] / m2)).sum()
}

/// One Louvain local-moving phase. Returns the assignment (community ids
/// are arbitrary but valid indices) and whether any move strictly
/// improved modularity.
fn local_move(adj: &[Vec<(usize, f64)>], rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = adj.len();
    let m2: f64 = adj.iter().flatten().map(|&(_, w)| w).sum();
    let degree: Vec<f64> =
        adj.iter().map(|neighbors| neighbors.iter().map(|&(_, w)| w).sum()).collect();
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = degree.clone();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut improved_any = false;
    if m2 == 0.0 {
        return (assignment, false);
    }
    loop {
        let mut moved = false;
        for &v in &order {
            let old = assignment[v];
            // Pull v out of its community.
            tot[old] -= degree[v];
            // Weight from v to each adjacent community (self-loops are
            // links to v's own community-in-waiting and don't count).
            let mut to_comm: std::collections::BTreeMap<usize, f64> =
                std::collections::BTreeMap::new();
            for &(u, w) in &adj[v] {
                if u != v {
                    *to_comm.entry(assignment[u]).or_insert(0.0) += w;
                }
            }
            to_comm.entry(old).or_insert(0.0);

            // Insertion gain, up to a positive constant: k_{v,in}(c) −
            // Σtot(c)·k_v/m2. BTreeMap iteration ascends by community
            // id, so taking strict improvements picks the smallest id
            // among ties.
            let mut best_comm = old;
            let mut best_gain = f64::NEG_INFINITY;
            let gain_old = to_comm[&old] - tot[old] * degree[v] / m2;
            for (&c, &k_in) in &to_comm {
                let gain = k_in - tot[c] * degree[v] / m2;
                if gain > best_gain {
                    best_gain = gain;
                    best_comm = c;
                }
            }
            // Move on a strict gain over staying; on an exact tie, move
            // only toward a smaller id (Q-neutral, terminates because
            // ids strictly decrease).
            let dest = if best_gain > gain_old || (best_gain == gain_old && best_comm < old) {
                best_comm
            } else {
                old
            };
            tot[dest] += degree[v];
            if dest != old {
                assignment[v] = dest;
                moved = true;
                if best_gain > gain_old {
                    improved_any = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    (assignment, improved_any)
}

/// Collapse communities into supervertices; returns the aggregated
/// adjacency and the dense renumbering used.
fn aggregate(
    adj: &[Vec<(usize, f64)>],
    assignment: &[usize],
) -> (Vec<Vec<(usize, f64)>>, Vec<usize>) {
    // Renumber communities densely by first appearance.
    let mut dense = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for &c in assignment {
        if dense[c] == usize::MAX {
            dense[c] = next;
            next += 1;
        }
    }
    let mut weights: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    for (v, neighbors) in adj.iter().enumerate() {
        let cv = dense[assignment[v]];
        for &(u, w) in neighbors {
            let cu = dense[assignment[u]];
            *weights.entry((cv, cu)).or_insert(0.0) += w;
        }
    }
    let mut agg = vec![Vec::new(); next];
    for (&(a, b), &w) in &weights {
        // Every undirected edge was visited from both endpoints, so the
        // accumulated weights are already symmetric; self-entries carry
        // twice the internal weight, which is the degree convention
        // `modularity` and `local_move` expect.
        agg[a].push((b, w));
    }
    (agg, dense)
}

/// Louvain community detection on the undirected projection of the
/// network. Deterministic for a fixed seed: the seed orders the vertex
/// sweeps, and all tie-breaking is by smallest community id.
pub fn detect_communities(network: &RoadNetwork, seed: u64) -> CommunityAssignment {
    let base_adj = undirected_projection(network);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // `membership[v]` tracks the original vertex's community through the
    // aggregation levels.
    let mut membership: Vec<usize> = (0..base_adj.len()).collect();
    let mut adj = base_adj.clone();
    loop {
        let (assignment, improved) = local_move(&adj, &mut rng);
        let (agg, dense) = aggregate(&adj, &assignment);
        for slot in membership.iter_mut() {
            *slot = dense[assignment[*slot]];
        }
        if !improved || agg.len() == adj.len() {
            break;
        }
        adj = agg;
    }

    // Renumber final communities by first appearance in vertex order.
    let mut dense = std::collections::BTreeMap::new();
    let mut next = 0;
    let mut assignment = Vec::with_capacity(membership.len());
    for &c in &membership {
        let id = *dense.entry(c).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        assignment.push(id);
    }
    let q = modularity(&base_adj, &assignment);
    CommunityAssignment { assignment, n_communities: next, modularity: q }
}

/// Brandes betweenness centrality accumulated from a subset of source
/// vertices (unweighted, undirected).
fn betweenness_from_sources(adj: &[Vec<(usize, f64)>], sources: &[usize]) -> Vec<f64> {
    let n = adj.len();
    let mut centrality = vec![0.0f64; n];
    for &s in sources {
        // BFS shortest-path DAG from s.
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![-1i64; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut order = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &(u, _) in &adj[v] {
                if dist[u] < 0 {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
                if dist[u] == dist[v] + 1 {
                    sigma[u] += sigma[v];
                    preds[u].push(v);
                }
            }
        }
        // Dependency accumulation in reverse BFS order.
        let mut delta = vec![0.0f64; n];
        for &v in order.iter().rev() {
            for &p in &preds[v] {
                delta[p] += sigma[p] / sigma[v] * (1.0 + delta[v]);
            }
            if v != s {
                centrality[v] += delta[v];
            }
        }
    }
    centrality
}

/// Label each community inner (core) or outer (periphery): communities
/// are ranked by the mean sampled betweenness of their members and the
/// top half (rounded down) is inner. Returns one flag per community id.
pub fn label_inner_outer(
    network: &RoadNetwork,
    communities: &CommunityAssignment,
    seed: u64,
    sample_size: usize,
) -> Vec<bool> {
    let adj = undirected_projection(network);
    let n = adj.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices: Vec<usize> = (0..n).collect();
    vertices.shuffle(&mut rng);
    vertices.truncate(sample_size.max(1).min(n));
    let centrality = betweenness_from_sources(&adj, &vertices);

    let c = communities.n_communities;
    let mut score = vec![0.0f64; c];
    let mut count = vec![0usize; c];
    for (v, &comm) in communities.assignment.iter().enumerate() {
        score[comm] += centrality[v];
        count[comm] += 1;
    }
    for i in 0..c {
        if count[i] > 0 {
            score[i] /= count[i] as f64;
        }
    }
    // Rank descending; stable sort keeps ties in community-id order.
    let mut ranked: Vec<usize> = (0..c).collect();
    ranked.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).expect("scores are finite"));
    let inner_count = c / 2;
    let mut inner = vec![false; c];
    for &comm in ranked.iter().take(inner_count) {
        inner[comm] = true;
    }
    inner
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Segment;

    fn seg(edge_id: usize, from: usize, to: usize, row: usize) -> Segment {
        Segment { edge_id, from, to, segment_row: row }
    }

    /// Directed edges covering each undirected pair once.
    fn clique_edges(vertices: &[usize], start_id: usize) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, &a) in vertices.iter().enumerate() {
            for &b in &vertices[i + 1..] {
                pairs.push((a, b));
            }
        }
        let _ = start_id;
        pairs
    }

    fn network_from_pairs(pairs: &[(usize, usize)]) -> RoadNetwork {
        let segments: Vec<Segment> =
            pairs.iter().enumerate().map(|(i, &(a, b))| seg(i, a, b, i)).collect();
        RoadNetwork::new(segments).unwrap()
    }

    #[test]
    fn two_cliques_give_two_communities() {
        let mut pairs = clique_edges(&[0, 1, 2, 3, 4], 0);
        pairs.extend(clique_edges(&[5, 6, 7, 8, 9], 0));
        pairs.push((0, 5)); // the bridge
        let net = network_from_pairs(&pairs);
        let result = detect_communities(&net, 7);
        assert_eq!(result.n_communities, 2);
        // Each clique is one community.
        for v in 1..5 {
            assert_eq!(result.assignment[v], result.assignment[0]);
        }
        for v in 6..10 {
            assert_eq!(result.assignment[v], result.assignment[5]);
        }
        assert_ne!(result.assignment[0], result.assignment[5]);
        assert!(result.modularity > 0.0);
    }

    #[test]
    fn complete_graph_is_one_community() {
        let pairs = clique_edges(&[0, 1, 2, 3, 4, 5], 0);
        let net = network_from_pairs(&pairs);
        let result = detect_communities(&net, 3);
        assert_eq!(result.n_communities, 1);
        assert_eq!(result.modularity, 0.0);
    }

    #[test]
    fn beats_singleton_partition() {
        // Modularity of the singleton partition for comparison.
        let mut pairs = clique_edges(&[0, 1, 2], 0);
        pairs.extend(clique_edges(&[3, 4, 5], 0));
        pairs.push((2, 3));
        let net = network_from_pairs(&pairs);
        let adj = undirected_projection(&net);
        let singleton: Vec<usize> = (0..6).collect();
        let q_singleton = modularity(&adj, &singleton);
        let result = detect_communities(&net, 1);
        assert!(result.modularity >= q_singleton, "{} < {q_singleton}", result.modularity);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut pairs = clique_edges(&[0, 1, 2, 3], 0);
        pairs.extend(clique_edges(&[4, 5, 6, 7], 0));
        pairs.push((1, 4));
        pairs.push((3, 6));
        let net = network_from_pairs(&pairs);
        let a = detect_communities(&net, 42);
        let b = detect_communities(&net, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn inner_outer_split_prefers_central_community() {
        // A hub clique bridged to two peripheral paths: the clique's
        // members sit on most shortest paths.
        let mut pairs = clique_edges(&[0, 1, 2, 3], 0);
        // Two dangling chains.
        pairs.extend_from_slice(&[(0, 4), (4, 5), (5, 6)]);
        pairs.extend_from_slice(&[(2, 7), (7, 8), (8, 9)]);
        let net = network_from_pairs(&pairs);
        let communities = detect_communities(&net, 11);
        assert!(communities.n_communities >= 2, "need a split to label");
        let inner = label_inner_outer(&net, &communities, 13, 64);
        assert_eq!(inner.len(), communities.n_communities);
        assert_eq!(inner.iter().filter(|&&b| b).count(), communities.n_communities / 2);
        // The community containing the clique core should be labelled
        // inner: vertices 0 and 2 carry all cross-chain paths.
        let core_comm = communities.assignment[0];
        assert!(inner[core_comm]);
    }
}
