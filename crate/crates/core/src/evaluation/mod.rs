//! Regret evaluation of predictor-driven routing against the real-time
//! benchmark.
//!
//! The quantity of interest for a query I is the regret
//! R(I) = T_pred(I) − T_rt(I): the extra realized travel time incurred by
//! trusting a predictor instead of live data. Negative values are real
//! and kept — an offline predictor can beat greedy real-time routing when
//! conditions shift mid-trip. Aggregation reports means, upper quantiles
//! q^up(α) = inf{y : Pr(R > y) ≤ α}, full CCDF curves, and breakdowns by
//! time-of-day/week partitions and by path hop length.

pub mod community;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ODQuery, RoadNetwork};
use crate::predictors::FrozenPredictor;
use crate::routing::{greedy_reroute, realtime_benchmark, static_oracle};
use crate::traffic::TrafficMatrix;

pub use community::{detect_communities, label_inner_outer, CommunityAssignment};

/// Default α levels for upper quantiles.
pub const DEFAULT_ALPHAS: [f64; 2] = [0.10, 0.01];

/// Hop-length bins with fewer samples than this are suppressed in the
/// per-hop quantile table.
pub const DEFAULT_HOP_BIN_MIN_SAMPLES: usize = 1000;

// ---------------------------------------------------------------------------
// Regret primitives
// ---------------------------------------------------------------------------

/// R = T_pred − T_rt, in seconds. May be negative.
pub fn regret(t_pred: f64, t_rt: f64) -> f64 {
    t_pred - t_rt
}

/// Upper α-quantile: the smallest value y in the empirical support with
/// Pr(R > y) ≤ α.
pub fn upper_quantile(samples: &[f64], alpha: f64) -> f64 {
    assert!(!samples.is_empty(), "quantile of an empty sample set");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        // Advance to the last occurrence of this value; Pr(R > y) counts
        // strictly greater samples.
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let exceed = (n - 1 - j) as f64 / n as f64;
        if exceed <= alpha {
            return sorted[i];
        }
        i = j + 1;
    }
    sorted[n - 1]
}

/// An empirical CCDF: sorted unique support values with their exceedance
/// probabilities Pr(R > support[i]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfCurve {
    pub support: Vec<f64>,
    pub exceedance: Vec<f64>,
}

impl CcdfCurve {
    /// Pr(R > y) for arbitrary y, read off the curve.
    pub fn prob_greater(&self, y: f64) -> f64 {
        // Largest support value ≤ y carries the answer; below the whole
        // support the probability is 1.
        match self.support.partition_point(|&v| v <= y) {
            0 => 1.0,
            idx => self.exceedance[idx - 1],
        }
    }

    /// Smallest support value with exceedance ≤ α — the quantile readout
    /// that must agree with [`upper_quantile`].
    pub fn quantile(&self, alpha: f64) -> f64 {
        for (v, e) in self.support.iter().zip(&self.exceedance) {
            if *e <= alpha {
                return *v;
            }
        }
        *self.support.last().expect("curve is nonempty")
    }
}

/// Empirical CCDF of a nonempty sample set.
pub fn ccdf(samples: &[f64]) -> CcdfCurve {
    assert!(!samples.is_empty(), "CCDF of an empty sample set");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let n = sorted.len();
    let mut support = Vec::new();
    let mut exceedance = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        support.push(sorted[i]);
        exceedance.push((n - 1 - j) as f64 / n as f64);
        i = j + 1;
    }
    CcdfCurve { support, exceedance }
}

// ---------------------------------------------------------------------------
// Samples and statistics
// ---------------------------------------------------------------------------

/// Travel direction across the community core/periphery divide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    InnerToOuter,
    OuterToInner,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::InnerToOuter => "inner_to_outer",
            Direction::OuterToInner => "outer_to_inner",
        }
    }
}

/// Partition keys of one query, for breakdown statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionKeys {
    /// Hour of day of the departure, 0..24.
    pub hour: u32,
    /// Day of week of the departure, 0..7 (day 0 = first grid day).
    pub weekday: u32,
    pub workday: bool,
    pub direction: Direction,
}

/// One evaluated (query, predictor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSample {
    pub query: ODQuery,
    pub predictor: String,
    pub t_pred: f64,
    pub t_rt: f64,
    /// Exactly `t_pred − t_rt`.
    pub regret: f64,
    /// Unweighted shortest-path hop count for the OD pair.
    pub hop_length: usize,
    pub keys: PartitionKeys,
}

/// Aggregate regret statistics of one sample group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretStats {
    pub count: usize,
    pub mean: f64,
    /// (α, q^up(α)) pairs, in the α order given at aggregation.
    pub quantiles: Vec<(f64, f64)>,
    pub ccdf: CcdfCurve,
}

impl RegretStats {
    pub fn from_regrets(regrets: &[f64], alphas: &[f64]) -> Self {
        let count = regrets.len();
        let mean = regrets.iter().sum::<f64>() / count as f64;
        let quantiles = alphas.iter().map(|&a| (a, upper_quantile(regrets, a))).collect();
        RegretStats { count, mean, quantiles, ccdf: ccdf(regrets) }
    }

    /// The q^up value for a given α, if it was computed.
    pub fn quantile(&self, alpha: f64) -> Option<f64> {
        self.quantiles.iter().find(|(a, _)| *a == alpha).map(|(_, q)| *q)
    }
}

// ---------------------------------------------------------------------------
// Test-set construction
// ---------------------------------------------------------------------------

/// Parameters of test-set construction. Departures are expanded as
/// (day, hour) pairs over the grid's calendar; rest days tag the workday
/// partition flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetSpec {
    /// Hours of day to depart at (default 06:00–18:00 inclusive, hourly —
    /// 13 per day).
    pub departure_hours: Vec<u32>,
    /// Day indices (0 = first day of the grid) to depart on.
    pub days: Vec<u32>,
    /// Queries with real-time benchmark travel time below this are
    /// dropped (default 1800 s — short trips tell us little).
    pub min_travel_seconds: f64,
    /// Days-of-week (day index mod 7) that do not count as workdays.
    pub rest_days: Vec<u32>,
    /// Seed for node sampling within communities.
    pub seed: u64,
}

impl TestSetSpec {
    pub fn new(days: Vec<u32>, seed: u64) -> Self {
        TestSetSpec {
            departure_hours: (6..=18).collect(),
            days,
            min_travel_seconds: 1800.0,
            rest_days: vec![5, 6],
            seed,
        }
    }
}

/// One test query with its precomputed partition keys and hop length.
#[derive(Debug, Clone, PartialEq)]
pub struct TestQuery {
    pub query: ODQuery,
    pub keys: PartitionKeys,
    pub hop_length: usize,
}

/// Unweighted directed shortest-path hop count.
fn hop_distance(network: &RoadNetwork, from: usize, to: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; network.n_vertices()];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        if v == to {
            return Some(dist[v]);
        }
        for &ei in network.out_edges(v) {
            let u = network.segment(ei).to;
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    None
}

/// Build the OD/departure test set.
///
/// For every ordered (inner, outer) and (outer, inner) community pair,
/// one origin and one destination vertex are drawn uniformly (seeded)
/// from the respective communities; each OD pair is expanded over all
/// configured departure days and hours; queries whose real-time
/// benchmark travel time falls below the filter (or which fail to route)
/// are discarded.
pub fn build_test_set(
    network: &RoadNetwork,
    communities: &CommunityAssignment,
    inner: &[bool],
    spec: &TestSetSpec,
    truth: &TrafficMatrix,
) -> Result<Vec<TestQuery>> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    if communities.n_communities < 2 {
        return Err(Error::InvalidInput(
            "test-set construction needs at least two communities".into(),
        ));
    }
    let inner_comms: Vec<usize> = (0..communities.n_communities).filter(|&c| inner[c]).collect();
    let outer_comms: Vec<usize> = (0..communities.n_communities).filter(|&c| !inner[c]).collect();
    if inner_comms.is_empty() || outer_comms.is_empty() {
        return Err(Error::InvalidInput("inner/outer labelling left one side empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut od_pairs: Vec<(usize, usize, Direction)> = Vec::new();
    // Ordered pairs, both directions, one sampled vertex per endpoint.
    for &ci in &inner_comms {
        for &co in &outer_comms {
            let members_i = communities.members(ci);
            let members_o = communities.members(co);
            let a = members_i[rng.random_range(0..members_i.len())];
            let b = members_o[rng.random_range(0..members_o.len())];
            od_pairs.push((a, b, Direction::InnerToOuter));
            let a = members_o[rng.random_range(0..members_o.len())];
            let b = members_i[rng.random_range(0..members_i.len())];
            od_pairs.push((a, b, Direction::OuterToInner));
        }
    }

    // Expand departures and filter by realized real-time travel time.
    // The filter pass parallelises over candidates; results are collected
    // in order, so the set is independent of worker count.
    let mut candidates = Vec::new();
    for &(origin, destination, direction) in &od_pairs {
        let hop_length = match hop_distance(network, origin, destination) {
            Some(h) if h >= 1 => h,
            _ => continue,
        };
        for &day in &spec.days {
            for &hour in &spec.departure_hours {
                let departure =
                    truth.grid.start_epoch as f64 + day as f64 * 86_400.0 + hour as f64 * 3600.0;
                if !truth.grid.contains(departure) {
                    continue;
                }
                let keys = PartitionKeys {
                    hour,
                    weekday: day % 7,
                    workday: !spec.rest_days.contains(&(day % 7)),
                    direction,
                };
                candidates.push(TestQuery {
                    query: ODQuery { origin, destination, departure },
                    keys,
                    hop_length,
                });
            }
        }
    }

    let kept: Vec<TestQuery> = candidates
        .into_par_iter()
        .filter_map(|tq| match realtime_benchmark(network, truth, tq.query) {
            Ok(route) if route.realized_total >= spec.min_travel_seconds => Some(tq),
            _ => None,
        })
        .collect();

    if kept.is_empty() {
        return Err(Error::NoEligiblePairs);
    }
    Ok(kept)
}

// ---------------------------------------------------------------------------
// Suite evaluation
// ---------------------------------------------------------------------------

/// A hop-length bin of the Fig.-2-style breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopBin {
    pub count: usize,
    pub q10: f64,
}

/// Everything measured for one predictor over the suite.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorReport {
    pub name: String,
    pub stats: RegretStats,
    pub by_hour: BTreeMap<u32, RegretStats>,
    pub by_weekday: BTreeMap<u32, RegretStats>,
    pub by_workday: BTreeMap<bool, RegretStats>,
    pub by_direction: BTreeMap<Direction, RegretStats>,
    /// q^up(0.10) per hop length, bins under the sample threshold
    /// suppressed.
    pub hop_quantiles: BTreeMap<usize, HopBin>,
    /// Per-query failures: (index into the test set, error description).
    pub errors: Vec<(usize, String)>,
    pub samples: Vec<RegretSample>,
}

/// Suite-level results: per-predictor reports plus benchmark failures.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub per_predictor: Vec<PredictorReport>,
    /// Queries whose real-time benchmark itself failed, excluded for all
    /// predictors: (index, error description).
    pub benchmark_errors: Vec<(usize, String)>,
    /// Total queries attempted.
    pub n_queries: usize,
}

/// Options for [`evaluate_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub alphas: Vec<f64>,
    /// Minimum samples for a hop-length bin to be reported.
    pub hop_bin_min_samples: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
            hop_bin_min_samples: DEFAULT_HOP_BIN_MIN_SAMPLES,
        }
    }
}

/// Evaluate every predictor over the test set.
///
/// Each query is routed once with the real-time benchmark (the shared
/// T_rt) and once per predictor — greedy re-routing, except the static
/// oracle variant which runs its exact fixed-path search. Queries are
/// processed in parallel; per-query outputs are collected in test-set
/// order and reduced serially, so the report is bit-identical for any
/// worker count. Per-query failures are recorded and excluded, never
/// silently dropped.
pub fn evaluate_suite(
    network: &RoadNetwork,
    truth: &TrafficMatrix,
    predictors: &[FrozenPredictor],
    test_set: &[TestQuery],
    config: &SuiteConfig,
) -> Result<SuiteReport> {
    if test_set.is_empty() {
        return Err(Error::NoEligiblePairs);
    }

    // Per query: Ok((t_rt, per-predictor Result<t_pred>)) or the
    // benchmark's own error.
    type QueryOutcome = std::result::Result<(f64, Vec<std::result::Result<f64, String>>), String>;
    let outcomes: Vec<QueryOutcome> = test_set
        .par_iter()
        .map(|tq| {
            let bench = realtime_benchmark(network, truth, tq.query).map_err(|e| e.to_string())?;
            let per_pred = predictors
                .iter()
                .map(|p| {
                    let route = if p.is_static_oracle() {
                        static_oracle(network, truth, tq.query)
                    } else {
                        greedy_reroute(network, p, truth, tq.query)
                    };
                    route.map(|r| r.realized_total).map_err(|e| e.to_string())
                })
                .collect();
            Ok((bench.realized_total, per_pred))
        })
        .collect();

    let mut benchmark_errors = Vec::new();
    let mut per_predictor: Vec<PredictorReport> = Vec::with_capacity(predictors.len());

    for (pi, predictor) in predictors.iter().enumerate() {
        let mut samples = Vec::new();
        let mut errors = Vec::new();
        for (qi, outcome) in outcomes.iter().enumerate() {
            match outcome {
                Err(e) => {
                    if pi == 0 {
                        benchmark_errors.push((qi, e.clone()));
                    }
                }
                Ok((t_rt, per_pred)) => match &per_pred[pi] {
                    Ok(t_pred) => {
                        let tq = &test_set[qi];
                        samples.push(RegretSample {
                            query: tq.query,
                            predictor: predictor.name().to_string(),
                            t_pred: *t_pred,
                            t_rt: *t_rt,
                            regret: regret(*t_pred, *t_rt),
                            hop_length: tq.hop_length,
                            keys: tq.keys,
                        });
                    }
                    Err(e) => errors.push((qi, e.clone())),
                },
            }
        }
        if samples.is_empty() {
            return Err(Error::InsufficientData(format!(
                "predictor {} produced no successful routes ({} errors)",
                predictor.name(),
                errors.len()
            )));
        }

        let regrets: Vec<f64> = samples.iter().map(|s| s.regret).collect();
        let stats = RegretStats::from_regrets(&regrets, &config.alphas);

        let group = |key: fn(&RegretSample) -> u64| -> BTreeMap<u64, Vec<f64>> {
            let mut map: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for s in &samples {
                map.entry(key(s)).or_default().push(s.regret);
            }
            map
        };
        let stats_of = |groups: BTreeMap<u64, Vec<f64>>| -> BTreeMap<u64, RegretStats> {
            groups
                .into_iter()
                .map(|(k, v)| (k, RegretStats::from_regrets(&v, &config.alphas)))
                .collect()
        };

        let by_hour = stats_of(group(|s| s.keys.hour as u64))
            .into_iter()
            .map(|(k, v)| (k as u32, v))
            .collect();
        let by_weekday = stats_of(group(|s| s.keys.weekday as u64))
            .into_iter()
            .map(|(k, v)| (k as u32, v))
            .collect();
        let by_workday = stats_of(group(|s| s.keys.workday as u64))
            .into_iter()
            .map(|(k, v)| (k == 1, v))
            .collect();
        let by_direction = stats_of(group(|s| s.keys.direction as u64))
            .into_iter()
            .map(|(k, v)| {
                let d = if k == 0 { Direction::InnerToOuter } else { Direction::OuterToInner };
                (d, v)
            })
            .collect();

        let mut hop_groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in &samples {
            hop_groups.entry(s.hop_length).or_default().push(s.regret);
        }
        let hop_quantiles = hop_groups
            .into_iter()
            .filter(|(_, v)| v.len() >= config.hop_bin_min_samples)
            .map(|(h, v)| (h, HopBin { count: v.len(), q10: upper_quantile(&v, 0.10) }))
            .collect();

        per_predictor.push(PredictorReport {
            name: predictor.name().to_string(),
            stats,
            by_hour,
            by_weekday,
            by_workday,
            by_direction,
            hop_quantiles,
            errors,
            samples,
        });
    }

    // The benchmark-error bookkeeping above only runs when there is at
    // least one predictor; cover the degenerate zero-predictor call too.
    if predictors.is_empty() {
        for (qi, outcome) in outcomes.iter().enumerate() {
            if let Err(e) = outcome {
                benchmark_errors.push((qi, e.clone()));
            }
        }
    }

    Ok(SuiteReport { per_predictor, benchmark_errors, n_queries: test_set.len() })
}
