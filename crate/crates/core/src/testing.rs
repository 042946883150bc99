//! Brute-force reference implementations for the test suites.
//!
//! Everything here trades efficiency for obviousness: exhaustive
//! enumeration and direct transcriptions of definitions, against which
//! the real algorithms are checked. Exposed as a normal module so
//! integration tests can reuse the same oracles, but none of it is meant
//! for production callers.

use crate::error::{Error, Result};
use crate::network::{ODQuery, RoadNetwork};
use crate::routing::realized_time;
use crate::traffic::TrafficMatrix;

/// All simple paths (vertex-repetition-free) from `source` to `target`,
/// as edge-id lists, in DFS order following ascending edge ids.
pub fn all_simple_paths(network: &RoadNetwork, source: usize, target: usize) -> Vec<Vec<usize>> {
    let mut paths = Vec::new();
    let mut visited = vec![false; network.n_vertices()];
    let mut stack = Vec::new();
    visited[source] = true;
    dfs(network, source, target, &mut visited, &mut stack, &mut paths);
    paths
}

fn dfs(
    network: &RoadNetwork,
    u: usize,
    target: usize,
    visited: &mut Vec<bool>,
    stack: &mut Vec<usize>,
    paths: &mut Vec<Vec<usize>>,
) {
    if u == target {
        paths.push(stack.clone());
        return;
    }
    for &ei in network.out_edges(u) {
        let seg = network.segment(ei);
        if visited[seg.to] {
            continue;
        }
        visited[seg.to] = true;
        stack.push(seg.edge_id);
        dfs(network, seg.to, target, visited, stack, paths);
        stack.pop();
        visited[seg.to] = false;
    }
}

/// Compare two equal-cost paths the way the routing tie-break rule does:
/// lexicographically by edge id, read from the *end* of the path (the
/// per-vertex "smallest incoming edge id" rule resolves the last hop
/// first).
fn reversed_lex(a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

/// The clairvoyant fixed-path optimum: every simple path evaluated under
/// true realized weights, minimum by (cost, reversed edge-id order).
/// This is the unbeatable bound every causal router is tested against.
pub fn clairvoyant_optimum(
    network: &RoadNetwork,
    truth: &TrafficMatrix,
    query: ODQuery,
) -> Result<(f64, Vec<usize>)> {
    let paths = all_simple_paths(network, query.origin, query.destination);
    if paths.is_empty() {
        return Err(Error::Unreachable { from: query.origin, to: query.destination });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut first_failure: Option<Error> = None;
    for path in paths {
        match realized_time(network, truth, &path, query.departure) {
            Ok((total, _)) => {
                let better = match &best {
                    None => true,
                    Some((bc, bp)) => {
                        total < *bc
                            || (total == *bc && reversed_lex(&path, bp) == std::cmp::Ordering::Less)
                    }
                };
                if better {
                    best = Some((total, path));
                }
            }
            Err(e) => {
                // A path that outruns the horizon cannot be the optimum
                // of a completed trip; remember the error in case nothing
                // completes.
                if first_failure.is_none() {
                    first_failure = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| {
        first_failure.unwrap_or(Error::Unreachable { from: query.origin, to: query.destination })
    })
}

/// Literal transcription of the upper-quantile definition: the smallest
/// value y in the empirical support with Pr(R > y) ≤ α.
pub fn brute_force_upper_quantile(samples: &[f64], alpha: f64) -> f64 {
    assert!(!samples.is_empty());
    let n = samples.len() as f64;
    let mut support: Vec<f64> = samples.to_vec();
    support.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    support.dedup();
    for &y in &support {
        let exceed = samples.iter().filter(|&&s| s > y).count() as f64 / n;
        if exceed <= alpha {
            return y;
        }
    }
    *support.last().unwrap()
}
