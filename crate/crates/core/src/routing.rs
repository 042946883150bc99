//! Shortest paths over predicted weights and realized travel times over
//! true ones.
//!
//! Semantics throughout: edge weights are piecewise constant per grid
//! interval and *frozen at entry* — a traversal costs the weight in force
//! at the instant the edge is entered, even if the interval rolls over
//! mid-edge. Entry times follow the recursion t_i = t_1 + Σ_{j<i} w_{e_j},
//! accumulated left to right, and every function here reproduces that
//! arithmetic bit-for-bit so costs computed by different code paths can
//! be compared with `==`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::network::{ODQuery, RoadNetwork};
use crate::predictors::FrozenPredictor;
use crate::traffic::TrafficMatrix;

/// Default multiplier for the re-routing cycle guard: a walk longer than
/// `|E| * guard` edges is treated as a livelock, not a route.
pub const DEFAULT_GUARD_FACTOR: usize = 4;

/// The outcome of routing one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    /// Traversed edges, by edge id, in order.
    pub edges: Vec<usize>,
    /// Entry time of each edge; `entry_times[i]` is exactly
    /// `departure + Σ_{j<i} true w_{e_j}`.
    pub entry_times: Vec<f64>,
    /// Total realized travel time in seconds under true weights.
    pub realized_total: f64,
    /// Number of shortest-path invocations it took.
    pub reroute_count: usize,
    /// Set when the result may be suboptimal because the instance
    /// violates FIFO over the searched horizon (static oracle only;
    /// label-setting is exact under FIFO).
    pub approximate: bool,
}

// ---------------------------------------------------------------------------
// Static Dijkstra
// ---------------------------------------------------------------------------

#[derive(Debug, PartialEq)]
struct HeapEntry {
    cost: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap via reversal; costs are finite by construction, and
        // the vertex id keeps pop order fully deterministic.
        other
            .cost
            .partial_cmp(&self.cost)
            .expect("costs are finite")
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path under a static per-segment weight vector.
///
/// Returns the traversed edge ids and the path cost (left-to-right sum
/// of its weights). Ties are broken deterministically: among relaxations
/// yielding the same cost at a vertex, the smallest edge id wins, so the
/// returned path minimises (cost, edge-id sequence read from the end).
#[allow(clippy::neg_cmp_op_on_partial_ord)] // `!(w > 0.0)` also rejects NaN weights
pub fn dijkstra(
    network: &RoadNetwork,
    weights: ArrayView1<'_, f64>,
    source: usize,
    target: usize,
) -> Result<(Vec<usize>, f64)> {
    if weights.len() != network.n_segments() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} segments",
            weights.len(),
            network.n_segments()
        )));
    }
    if source >= network.n_vertices() || target >= network.n_vertices() {
        return Err(Error::OutOfRange(format!(
            "query endpoints ({source}, {target}) exceed vertex count {}",
            network.n_vertices()
        )));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight of segment row {i} is {w}; Dijkstra needs strictly positive weights"
            )));
        }
    }

    let n = network.n_vertices();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n]; // segment index of the best incoming edge
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { cost: 0.0, vertex: source });

    while let Some(HeapEntry { cost, vertex: u }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        if u == target {
            // Keep relaxing nothing further; remaining heap entries are
            // at least this cost, so the label is final.
            break;
        }
        for &ei in network.out_edges(u) {
            let seg = network.segment(ei);
            let nd = cost + weights[seg.segment_row];
            match nd.partial_cmp(&dist[seg.to]).expect("costs are finite") {
                Ordering::Less => {
                    dist[seg.to] = nd;
                    pred[seg.to] = Some(ei);
                    heap.push(HeapEntry { cost: nd, vertex: seg.to });
                }
                Ordering::Equal => {
                    // Equal-cost relaxation: lexicographic edge-id rule.
                    if let Some(cur) = pred[seg.to] {
                        if network.segment(ei).edge_id < network.segment(cur).edge_id {
                            pred[seg.to] = Some(ei);
                        }
                    }
                }
                Ordering::Greater => {}
            }
        }
    }

    if dist[target].is_infinite() {
        return Err(Error::Unreachable { from: source, to: target });
    }
    let mut edges = Vec::new();
    let mut v = target;
    while v != source {
        let ei = pred[v].expect("finite label has a predecessor");
        edges.push(network.segment(ei).edge_id);
        v = network.segment(ei).from;
    }
    edges.reverse();
    Ok((edges, dist[target]))
}

// ---------------------------------------------------------------------------
// Realized travel time (the ground-truth recursion)
// ---------------------------------------------------------------------------

/// Evaluate a fixed walk under true weights, frozen at each entry.
///
/// Returns the realized total and per-edge entry times. The accumulation
/// is the reference arithmetic: `total += w; t = t_start + total`, so any
/// route whose cost was built the same way reproduces `realized_total`
/// exactly on re-evaluation.
pub fn realized_time(
    network: &RoadNetwork,
    truth: &TrafficMatrix,
    edges: &[usize],
    t_start: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0f64;
    let mut entry_times = Vec::with_capacity(edges.len());
    let mut prev_to: Option<usize> = None;
    let mut t = t_start;
    for &edge_id in edges {
        let ei = network
            .index_of_edge(edge_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown edge id {edge_id}")))?;
        let seg = network.segment(ei);
        if let Some(p) = prev_to {
            if seg.from != p {
                return Err(Error::InvalidInput(format!(
                    "edges do not form a walk: edge {edge_id} starts at {} after arriving at {p}",
                    seg.from
                )));
            }
        }
        if !truth.grid.contains(t) {
            return Err(Error::HorizonExceeded { t, end: truth.grid.end_epoch() });
        }
        let w = truth.weight_at(seg.segment_row, t)?;
        entry_times.push(t);
        total += w;
        t = t_start + total;
        prev_to = Some(seg.to);
    }
    Ok((total, entry_times))
}

// ---------------------------------------------------------------------------
// Greedy re-routing
// ---------------------------------------------------------------------------

/// Greedy re-routing under a frozen predictor, with an explicit cycle
/// guard factor. At each reached vertex: predict the full weight vector
/// at the current time, solve a static shortest path to the destination,
/// commit its first edge, and advance the clock by that edge's *true*
/// realized weight. Prediction errors steer the walk; physics stays
/// honest.
pub fn greedy_reroute_with_guard(
    network: &RoadNetwork,
    predictor: &FrozenPredictor,
    truth: &TrafficMatrix,
    query: ODQuery,
    guard_factor: usize,
) -> Result<RouteResult> {
    if query.origin >= network.n_vertices() || query.destination >= network.n_vertices() {
        return Err(Error::OutOfRange(format!(
            "query endpoints ({}, {}) exceed vertex count {}",
            query.origin,
            query.destination,
            network.n_vertices()
        )));
    }
    let limit = network.n_segments().saturating_mul(guard_factor);
    let mut edges = Vec::new();
    let mut entry_times = Vec::new();
    let mut total = 0.0f64;
    let mut reroutes = 0usize;
    let mut u = query.origin;
    let mut t = query.departure;

    while u != query.destination {
        if edges.len() >= limit {
            return Err(Error::CycleGuard { committed: edges.len(), limit });
        }
        if !truth.grid.contains(t) {
            return Err(Error::HorizonExceeded { t, end: truth.grid.end_epoch() });
        }
        let predicted = predictor.predict_weights(t, truth)?;
        let (path, _) = dijkstra(network, predicted.view(), u, query.destination)?;
        reroutes += 1;
        let first = path[0];
        let seg = network.segment(network.index_of_edge(first).expect("edge from own dijkstra"));
        let w_true = truth.weight_at(seg.segment_row, t)?;
        edges.push(first);
        entry_times.push(t);
        total += w_true;
        t = query.departure + total;
        u = seg.to;
    }

    Ok(RouteResult {
        edges,
        entry_times,
        realized_total: total,
        reroute_count: reroutes,
        approximate: false,
    })
}

/// [`greedy_reroute_with_guard`] with the default guard factor.
pub fn greedy_reroute(
    network: &RoadNetwork,
    predictor: &FrozenPredictor,
    truth: &TrafficMatrix,
    query: ODQuery,
) -> Result<RouteResult> {
    greedy_reroute_with_guard(network, predictor, truth, query, DEFAULT_GUARD_FACTOR)
}

/// The real-time benchmark T_rt: greedy re-routing fed by the live
/// weights themselves. Every regret in the evaluation layer is measured
/// against this.
pub fn realtime_benchmark(
    network: &RoadNetwork,
    truth: &TrafficMatrix,
    query: ODQuery,
) -> Result<RouteResult> {
    use crate::predictors::{PredictorHandle, Variant};
    let rt = PredictorHandle::new("realtime", Variant::Realtime).freeze();
    greedy_reroute(network, &rt, truth, query)
}

// ---------------------------------------------------------------------------
// Clairvoyant static oracle
// ---------------------------------------------------------------------------

/// Best fixed path under full knowledge of realized weights, found by
/// time-dependent label-setting on cumulative travel time (equivalently
/// earliest arrival). Exact when the touched weights satisfy FIFO;
/// otherwise the result is a valid route flagged `approximate`, since a
/// settled label may cease to be optimal when waiting could pay off.
pub fn static_oracle(
    network: &RoadNetwork,
    truth: &TrafficMatrix,
    query: ODQuery,
) -> Result<RouteResult> {
    if query.origin >= network.n_vertices() || query.destination >= network.n_vertices() {
        return Err(Error::OutOfRange(format!(
            "query endpoints ({}, {}) exceed vertex count {}",
            query.origin,
            query.destination,
            network.n_vertices()
        )));
    }
    let n = network.n_vertices();
    // Labels are cumulative travel times, accumulated with the same
    // arithmetic as realized_time, so the chosen path's label equals its
    // realized_total bit-for-bit.
    let mut cum = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    cum[query.origin] = 0.0;
    heap.push(HeapEntry { cost: 0.0, vertex: query.origin });

    while let Some(HeapEntry { cost, vertex: u }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        if u == query.destination {
            break;
        }
        let t_entry = query.departure + cost;
        if !truth.grid.contains(t_entry) {
            // This frontier has outrun the horizon; if the destination's
            // label is also beyond it, we fail below.
            continue;
        }
        for &ei in network.out_edges(u) {
            let seg = network.segment(ei);
            let w = truth.weight_at(seg.segment_row, t_entry)?;
            let nd = cost + w;
            match nd.partial_cmp(&cum[seg.to]).expect("labels are finite") {
                Ordering::Less => {
                    cum[seg.to] = nd;
                    pred[seg.to] = Some(ei);
                    heap.push(HeapEntry { cost: nd, vertex: seg.to });
                }
                Ordering::Equal => {
                    if let Some(cur) = pred[seg.to] {
                        if network.segment(ei).edge_id < network.segment(cur).edge_id {
                            pred[seg.to] = Some(ei);
                        }
                    }
                }
                Ordering::Greater => {}
            }
        }
    }

    if cum[query.destination].is_infinite() {
        // Distinguish "ran out of horizon" from "no path at all".
        if settled.iter().any(|&s| s) && !truth.grid.contains(query.departure) {
            return Err(Error::HorizonExceeded { t: query.departure, end: truth.grid.end_epoch() });
        }
        let horizon_starved = (0..n).any(|v| {
            !settled[v] && cum[v].is_finite() && !truth.grid.contains(query.departure + cum[v])
        });
        if horizon_starved {
            return Err(Error::HorizonExceeded {
                t: query.departure + cum[query.destination].min(truth.grid.span()),
                end: truth.grid.end_epoch(),
            });
        }
        return Err(Error::Unreachable { from: query.origin, to: query.destination });
    }

    let mut edges = Vec::new();
    let mut v = query.destination;
    while v != query.origin {
        let ei = pred[v].expect("finite label has a predecessor");
        edges.push(network.segment(ei).edge_id);
        v = network.segment(ei).from;
    }
    edges.reverse();

    let (realized_total, entry_times) = realized_time(network, truth, &edges, query.departure)?;
    debug_assert_eq!(realized_total, cum[query.destination]);

    // FIFO window: any fixed path that could beat this one finishes no
    // later than our arrival (weights are positive), so all weights that
    // matter live between departure and arrival. If that window is
    // nondecreasing per segment, label-setting is exact; otherwise flag.
    let from_interval = truth.grid.interval_index(query.departure)?;
    let arrival = query.departure + realized_total;
    let to_interval = if truth.grid.contains(arrival) {
        truth.grid.interval_index(arrival)?
    } else {
        truth.grid.n_intervals - 1
    };
    let approximate = violates_fifo(truth, from_interval, to_interval);
    Ok(RouteResult { edges, entry_times, realized_total, reroute_count: 1, approximate })
}

/// Conservative FIFO check over the searched horizon: with
/// frozen-at-entry piecewise-constant weights, *any* strict decrease of
/// a segment's weight between consecutive intervals lets a later
/// departure arrive earlier, which breaks the label-setting argument.
fn violates_fifo(truth: &TrafficMatrix, from_interval: usize, to_interval: usize) -> bool {
    for r in 0..truth.m() {
        for j in from_interval..to_interval {
            if truth.is_observed(r, j)
                && truth.is_observed(r, j + 1)
                && truth.values[[r, j + 1]] < truth.values[[r, j]]
            {
                return true;
            }
        }
    }
    false
}
