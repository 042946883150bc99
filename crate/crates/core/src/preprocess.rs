//! Data conditioning: grid alignment, outlier masking, short-gap
//! interpolation, blackout dropping, spatio-temporal imputation, and
//! restriction to the largest strongly connected component.
//!
//! The stages are exposed individually (each is a pure function, so
//! rows can be conditioned in parallel with results identical to a
//! serial run) plus as a [`preprocess_pipeline`] that chains them in
//! the canonical order and reports what it changed.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::network::{RoadNetwork, Segment};
use crate::traffic::TrafficMatrix;

/// Irregularly sampled travel times of one segment, as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    /// Row of the traffic matrix this series belongs to.
    pub segment_id: usize,
    /// (timestamp, travel time seconds), strictly increasing timestamps.
    pub samples: Vec<(f64, f64)>,
}

impl RawSeries {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // `!(v > 0.0)` also rejects NaN values
    pub fn new(segment_id: usize, samples: Vec<(f64, f64)>) -> Result<Self> {
        for pair in samples.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidInput(format!(
                    "segment {segment_id}: timestamps not strictly increasing at t={}",
                    pair[1].0
                )));
            }
        }
        if let Some((t, v)) = samples.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "segment {segment_id}: nonpositive travel time {v} at t={t}"
            )));
        }
        Ok(RawSeries { segment_id, samples })
    }
}

/// Knobs of the conditioning stages. Defaults follow the dataset's
/// 10-minute recording convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub grid: TimeGrid,
    /// A sample within this of a slot is taken verbatim (default 300 s).
    pub snap_tolerance: f64,
    /// Maximum distance of the interpolation anchors on either side of a
    /// slot (default 600 s).
    pub interp_window: f64,
    /// Longest missing run filled by temporal interpolation (default 2).
    pub max_gap_intervals: usize,
    /// Observations below this fraction of the row mean are masked
    /// (default 0.2).
    pub outlier_fraction: f64,
    /// Rows with a contiguous missing run longer than this are dropped
    /// (default 3 h).
    pub blackout_hours: f64,
    /// Rows missing more than this fraction overall are dropped
    /// (default 0.3).
    pub max_missing_fraction: f64,
}

impl PreprocessConfig {
    pub fn new(grid: TimeGrid) -> Self {
        PreprocessConfig {
            grid,
            snap_tolerance: 300.0,
            interp_window: 600.0,
            max_gap_intervals: 2,
            outlier_fraction: 0.2,
            blackout_hours: 3.0,
            max_missing_fraction: 0.3,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
    fn validate(&self) -> Result<()> {
        if !(self.snap_tolerance > 0.0)
            || !(self.interp_window > 0.0)
            || !(self.blackout_hours > 0.0)
        {
            return Err(Error::InvalidInput("durations must be positive".into()));
        }
        for (name, f) in [
            ("outlier_fraction", self.outlier_fraction),
            ("max_missing_fraction", self.max_missing_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::InvalidInput(format!("{name} {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One conditioned matrix row: values plus observation mask. Masked
/// cells hold 0.0 and are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GridRow {
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

// ---------------------------------------------------------------------------
// Row-level stages
// ---------------------------------------------------------------------------

/// Resample one raw series onto the grid.
///
/// For each slot: take a sample within `snap_tolerance` of the slot
/// start if one exists (nearest wins, earlier on a tie); otherwise
/// interpolate linearly between the nearest samples on either side when
/// both lie within `interp_window`; otherwise the slot is missing.
pub fn align_to_grid(raw: &RawSeries, cfg: &PreprocessConfig) -> GridRow {
    let n = cfg.grid.n_intervals;
    let mut values = vec![0.0; n];
    let mut mask = vec![false; n];
    for i in 0..n {
        let target = cfg.grid.interval_start(i);
        let p = raw.samples.partition_point(|&(ts, _)| ts <= target);
        let left = p.checked_sub(1).map(|q| raw.samples[q]);
        let right = raw.samples.get(p).copied();
        let nearest = match (left, right) {
            (Some(l), Some(r)) => {
                // Tie goes to the earlier sample.
                if target - l.0 <= r.0 - target {
                    Some(l)
                } else {
                    Some(r)
                }
            }
            (Some(l), None) => Some(l),
            (None, Some(r)) => Some(r),
            (None, None) => None,
        };
        if let Some((ts, v)) = nearest {
            if (ts - target).abs() <= cfg.snap_tolerance {
                values[i] = v;
                mask[i] = true;
                continue;
            }
        }
        if let (Some((tl, vl)), Some((tr, vr))) = (left, right) {
            if target - tl <= cfg.interp_window && tr - target <= cfg.interp_window {
                values[i] = vl + (vr - vl) * (target - tl) / (tr - tl);
                mask[i] = true;
            }
        }
    }
    GridRow { values, mask }
}

/// Mask implausibly small observations.
///
/// The reference mean is computed once over the observed cells, before
/// any masking, so the outcome does not depend on scan order.
pub fn remove_outliers(row: &GridRow, cfg: &PreprocessConfig) -> GridRow {
    let mut out = row.clone();
    let observed: Vec<f64> =
        row.values.iter().zip(&row.mask).filter_map(|(&v, &m)| m.then_some(v)).collect();
    if observed.is_empty() {
        return out;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let threshold = cfg.outlier_fraction * mean;
    for i in 0..out.values.len() {
        if out.mask[i] && out.values[i] < threshold {
            out.mask[i] = false;
            out.values[i] = 0.0;
        }
    }
    out
}

/// Fill missing runs of at most `max_gap_intervals` cells that have
/// observed cells on both sides, by linear interpolation. Runs touching
/// the row boundary are left missing.
pub fn interpolate_short_gaps(row: &GridRow, cfg: &PreprocessConfig) -> GridRow {
    let mut out = row.clone();
    let n = row.mask.len();
    let mut i = 0;
    while i < n {
        if row.mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !row.mask[i] {
            i += 1;
        }
        let end = i; // exclusive
        let len = end - start;
        if start == 0 || end == n || len > cfg.max_gap_intervals {
            continue;
        }
        let (vl, vr) = (row.values[start - 1], row.values[end]);
        let span = (end - (start - 1)) as f64;
        for j in start..end {
            let frac = (j - (start - 1)) as f64 / span;
            out.values[j] = vl + (vr - vl) * frac;
            out.mask[j] = true;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Matrix-level stages
// ---------------------------------------------------------------------------

/// Copy the given rows (in the given order) into a new matrix.
pub fn select_rows(matrix: &TrafficMatrix, rows: &[usize]) -> Result<TrafficMatrix> {
    for &r in rows {
        if r >= matrix.m() {
            return Err(Error::OutOfRange(format!("row {r} out of 0..{}", matrix.m())));
        }
    }
    TrafficMatrix::new(
        matrix.values.select(Axis(0), rows),
        matrix.mask.select(Axis(0), rows),
        matrix.grid,
    )
}

/// Drop rows with a blackout (contiguous missing run longer than
/// `blackout_hours`) or with overall missing fraction above
/// `max_missing_fraction`. Returns the surviving matrix and the dropped
/// row indices.
pub fn drop_blackout_segments(
    matrix: &TrafficMatrix,
    cfg: &PreprocessConfig,
) -> Result<(TrafficMatrix, Vec<usize>)> {
    let n = matrix.n();
    let blackout_limit = cfg.blackout_hours * 3600.0;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in 0..matrix.m() {
        let mut longest_run = 0usize;
        let mut run = 0usize;
        let mut missing = 0usize;
        for j in 0..n {
            if matrix.is_observed(r, j) {
                run = 0;
            } else {
                run += 1;
                missing += 1;
                longest_run = longest_run.max(run);
            }
        }
        let run_seconds = longest_run as f64 * matrix.grid.resolution as f64;
        let missing_fraction = missing as f64 / n as f64;
        if run_seconds > blackout_limit || missing_fraction > cfg.max_missing_fraction {
            dropped.push(r);
        } else {
            kept.push(r);
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData("every row was dropped by the blackout rules".into()));
    }
    Ok((select_rows(matrix, &kept)?, dropped))
}

/// Rows of segments sharing at least one endpoint with each segment.
fn row_neighbors(network: &RoadNetwork) -> Vec<Vec<usize>> {
    let m = network.n_segments();
    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); network.n_vertices()];
    for s in network.segments() {
        touching[s.from].push(s.segment_row);
        if s.to != s.from {
            touching[s.to].push(s.segment_row);
        }
    }
    let mut neighbors = vec![Vec::new(); m];
    for s in network.segments() {
        let r = s.segment_row;
        let mut nb: Vec<usize> =
            touching[s.from].iter().chain(&touching[s.to]).copied().filter(|&r2| r2 != r).collect();
        nb.sort_unstable();
        nb.dedup();
        neighbors[r] = nb;
    }
    neighbors
}

/// Fill every missing cell from the segment's own temporal context and
/// from graph-adjacent segments.
///
/// The temporal estimate interpolates linearly between the nearest
/// observed cells on both sides; the spatial estimate averages, over
/// adjacent segments observed in the same interval, their value scaled
/// by the ratio of segment means (observed cells only, computed before
/// imputation). When both estimates exist they are averaged with equal
/// weight. Observed cells pass through bit-exactly; all estimates read
/// only original observations, so rows can be imputed in parallel.
pub fn impute_spatiotemporal(
    matrix: &TrafficMatrix,
    network: &RoadNetwork,
) -> Result<TrafficMatrix> {
    let (m, n) = (matrix.m(), matrix.n());
    if network.n_segments() != m {
        return Err(Error::DimensionMismatch(format!(
            "network has {} segments but the matrix has {m} rows",
            network.n_segments()
        )));
    }
    if matrix.is_complete() {
        return Ok(matrix.clone());
    }

    let mut means = vec![0.0; m];
    for (r, mean) in means.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..n {
            if matrix.is_observed(r, j) {
                sum += matrix.values[[r, j]];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::IsolatedSegment(r));
        }
        *mean = sum / count as f64;
    }
    let neighbors = row_neighbors(network);

    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut out: Vec<f64> = (0..n).map(|j| matrix.values[[r, j]]).collect();
            // Nearest observed column on each side of every cell.
            let mut prev = vec![None; n];
            let mut last = None;
            for (j, slot) in prev.iter_mut().enumerate() {
                if matrix.is_observed(r, j) {
                    last = Some(j);
                }
                *slot = last;
            }
            let mut next = vec![None; n];
            let mut first = None;
            for j in (0..n).rev() {
                if matrix.is_observed(r, j) {
                    first = Some(j);
                }
                next[j] = first;
            }
            for j in 0..n {
                if matrix.is_observed(r, j) {
                    continue;
                }
                let temporal = match (prev[j], next[j]) {
                    (Some(jl), Some(jr)) => {
                        let (vl, vr) = (matrix.values[[r, jl]], matrix.values[[r, jr]]);
                        Some(vl + (vr - vl) * (j - jl) as f64 / (jr - jl) as f64)
                    }
                    _ => None,
                };
                let mut spatial_sum = 0.0;
                let mut spatial_count = 0usize;
                for &nb in &neighbors[r] {
                    if matrix.is_observed(nb, j) {
                        spatial_sum += matrix.values[[nb, j]] * means[r] / means[nb];
                        spatial_count += 1;
                    }
                }
                let spatial = (spatial_count > 0).then(|| spatial_sum / spatial_count as f64);
                out[j] = match (temporal, spatial) {
                    (Some(t), Some(s)) => (t + s) / 2.0,
                    (Some(t), None) => t,
                    (None, Some(s)) => s,
                    (None, None) => return Err(Error::IsolatedSegment(r)),
                };
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::zeros((m, n));
    for (r, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[r, j]] = v;
        }
    }
    TrafficMatrix::fully_observed(values, matrix.grid)
}

// ---------------------------------------------------------------------------
// Largest strongly connected component
// ---------------------------------------------------------------------------

/// Outcome of [`largest_scc`]: the induced subnetwork plus the maps back
/// to the original ids.
#[derive(Debug, Clone)]
pub struct SccResult {
    /// Induced subnetwork on the winning component, with vertices and
    /// edges reindexed densely. `None` when the component contains no
    /// edges (a single vertex without a self-loop).
    pub network: Option<RoadNetwork>,
    /// Original vertex id of each new vertex, ascending.
    pub vertices: Vec<usize>,
    /// Original matrix row of each new row — apply with [`select_rows`]
    /// to restrict a traffic matrix alongside the network.
    pub rows: Vec<usize>,
}

/// Tarjan's algorithm, iteratively; components' vertex lists are sorted.
fn strongly_connected_components(network: &RoadNetwork) -> Vec<Vec<usize>> {
    let n = network.n_vertices();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|v| network.out_edges(v).iter().map(|&e| network.segment(e).to).collect())
        .collect();

    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut call: Vec<(usize, usize)> = Vec::new();
    let mut next_index = 0usize;
    let mut components = Vec::new();

    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        call.push((root, 0));
        while let Some(&(v, pos)) = call.last() {
            if pos == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if pos < succ[v].len() {
                call.last_mut().unwrap().1 += 1;
                let w = succ[v][pos];
                if index[w] == UNSET {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("Tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    components.push(comp);
                }
            }
        }
    }
    components
}

/// Restrict the network to its largest strongly connected component.
/// Ties between equally sized components go to the one containing the
/// smallest vertex id.
pub fn largest_scc(network: &RoadNetwork) -> SccResult {
    let components = strongly_connected_components(network);
    let winner = components
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b[0].cmp(&a[0])))
        .expect("a nonempty network has at least one SCC");

    let mut vertex_new = vec![usize::MAX; network.n_vertices()];
    for (new, &old) in winner.iter().enumerate() {
        vertex_new[old] = new;
    }
    let mut segments = Vec::new();
    let mut rows = Vec::new();
    for s in network.segments() {
        let (f, t) = (vertex_new[s.from], vertex_new[s.to]);
        if f == usize::MAX || t == usize::MAX {
            continue;
        }
        // Vertices and rows are renumbered densely; `edge_id` is the
        // edge's persistent identity and survives restriction, so
        // downstream consumers can map cleaned rows back to source rows.
        let row = rows.len();
        segments.push(Segment { edge_id: s.edge_id, from: f, to: t, segment_row: row });
        rows.push(s.segment_row);
    }
    let network = if segments.is_empty() {
        None
    } else {
        Some(RoadNetwork::new(segments).expect("reindexed segments are valid by construction"))
    };
    SccResult { network, vertices: winner.clone(), rows }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// What the pipeline changed, for the preprocessing report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub rows_in: usize,
    /// Cells observed directly after grid alignment.
    pub cells_aligned: usize,
    pub outlier_cells_masked: usize,
    pub gap_cells_filled: usize,
    /// Original rows dropped by the blackout rules.
    pub blackout_rows_dropped: Vec<usize>,
    /// Original rows dropped with the SCC restriction.
    pub scc_rows_dropped: Vec<usize>,
    pub cells_imputed: usize,
}

/// View an already-gridded matrix as raw series — one sample per
/// observed cell, timestamped at its interval start — so gridded inputs
/// and genuinely irregular recordings share one pipeline entry.
pub fn series_from_matrix(matrix: &TrafficMatrix) -> Result<Vec<RawSeries>> {
    (0..matrix.m())
        .map(|r| {
            let samples = (0..matrix.n())
                .filter(|&j| matrix.is_observed(r, j))
                .map(|j| (matrix.grid.interval_start(j), matrix.values[[r, j]]))
                .collect();
            RawSeries::new(r, samples)
        })
        .collect()
}

/// Run the full conditioning chain: align → outliers → short gaps →
/// blackout drop → largest SCC → impute. Returns the cleaned network,
/// the fully observed matrix (rows in the cleaned network's row order),
/// and the report.
pub fn preprocess_pipeline(
    series: &[RawSeries],
    network: &RoadNetwork,
    cfg: &PreprocessConfig,
) -> Result<(RoadNetwork, TrafficMatrix, PreprocessReport)> {
    cfg.validate()?;
    let m = network.n_segments();
    let n = cfg.grid.n_intervals;

    let mut by_row: Vec<Option<&RawSeries>> = vec![None; m];
    for s in series {
        if s.segment_id >= m {
            return Err(Error::OutOfRange(format!(
                "series segment_id {} out of 0..{m}",
                s.segment_id
            )));
        }
        if by_row[s.segment_id].replace(s).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate series for segment {}",
                s.segment_id
            )));
        }
    }

    // Row-level conditioning, in parallel; order of results is fixed.
    let conditioned: Vec<(GridRow, usize, usize, usize)> = by_row
        .par_iter()
        .map(|slot| match slot {
            None => (GridRow { values: vec![0.0; n], mask: vec![false; n] }, 0, 0, 0),
            Some(raw) => {
                let aligned = align_to_grid(raw, cfg);
                let observed = aligned.observed_count();
                let masked = remove_outliers(&aligned, cfg);
                let outliers = observed - masked.observed_count();
                let filled = interpolate_short_gaps(&masked, cfg);
                let gaps = filled.observed_count() + outliers - observed;
                (filled, observed, outliers, gaps)
            }
        })
        .collect();

    let mut values = Array2::zeros((m, n));
    let mut mask = Array2::from_elem((m, n), false);
    let (mut cells_aligned, mut outlier_cells_masked, mut gap_cells_filled) = (0, 0, 0);
    for (r, (row, observed, outliers, gaps)) in conditioned.iter().enumerate() {
        for j in 0..n {
            values[[r, j]] = row.values[j];
            mask[[r, j]] = row.mask[j];
        }
        cells_aligned += observed;
        outlier_cells_masked += outliers;
        gap_cells_filled += gaps;
    }
    let matrix = TrafficMatrix::new(values, mask, cfg.grid)?;

    let (matrix, blackout_rows_dropped) = drop_blackout_segments(&matrix, cfg)?;
    let kept_rows: Vec<usize> = (0..m).filter(|r| !blackout_rows_dropped.contains(r)).collect();

    // Restrict the network to the surviving rows. Rows are renumbered
    // densely in edge order; `edge_id` keeps its original value so the
    // cleaned graph still names the same physical edges.
    let row_rank: std::collections::HashMap<usize, usize> =
        kept_rows.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let mut restricted = Vec::new();
    for s in network.segments() {
        if let Some(&new_row) = row_rank.get(&s.segment_row) {
            restricted.push(Segment {
                edge_id: s.edge_id,
                from: s.from,
                to: s.to,
                segment_row: new_row,
            });
        }
    }
    let restricted = RoadNetwork::new(restricted)?;

    let scc = largest_scc(&restricted);
    let cleaned = scc.network.ok_or_else(|| {
        Error::InsufficientData("largest strongly connected component has no edges".into())
    })?;
    let matrix = select_rows(&matrix, &scc.rows)?;
    let scc_kept: std::collections::HashSet<usize> = scc.rows.iter().copied().collect();
    let scc_rows_dropped: Vec<usize> =
        (0..kept_rows.len()).filter(|r| !scc_kept.contains(r)).map(|r| kept_rows[r]).collect();

    let cells_imputed = matrix.mask.iter().filter(|&&b| !b).count();
    let matrix = impute_spatiotemporal(&matrix, &cleaned)?;

    let report = PreprocessReport {
        rows_in: m,
        cells_aligned,
        outlier_cells_masked,
        gap_cells_filled,
        blackout_rows_dropped,
        scc_rows_dropped,
        cells_imputed,
    };
    Ok((cleaned, matrix, report))
}
