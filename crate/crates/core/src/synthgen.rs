//! Synthetic road networks and ground-truth traffic with planted
//! low-rank cyclostationary structure.
//!
//! The generator is the test substrate for the whole workbench: it plants
//! a known spatial basis, known cycle-periodic temporal modes, and known
//! noise/transient/missingness processes, so every downstream estimate
//! (rank selection, spectra, prediction error, routing regret) can be
//! checked against planted truth.
//!
//! The clean signal is
//!
//! ```text
//! W[e, j] = base[e] + √m · Σ_k U₀[e, k] · a_k(t_j)
//! ```
//!
//! with `base` lognormal per edge, `U₀` a random orthonormal m×k_true
//! matrix, and each `a_k` a harmonic series of its template's period —
//! exactly rank ≤ k_true + 1 and exactly cycle-periodic. Relative
//! Gaussian noise and multiplicative localized transients then perturb
//! it, and travel times are floor-clamped at 1 s.
//!
//! Every random sub-process reads a separate, documented stream of one
//! seeded counter-based generator, so regenerating (say) the network
//! never disturbs the noise draw.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::network::{RoadNetwork, Segment};
use crate::traffic::TrafficMatrix;

/// RNG stream ids, one per generated sub-process. All streams share the
/// spec seed; fixing the stream makes each sub-result independently
/// reproducible.
pub mod streams {
    pub const NETWORK: u64 = 1;
    pub const BASE: u64 = 2;
    pub const BASIS: u64 = 3;
    pub const TEMPORAL: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const TRANSIENTS: u64 = 6;
    pub const MISSINGNESS: u64 = 7;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One planted temporal mode: a harmonic series of a single fundamental
/// period. Harmonic h (1-based) oscillates at h cycles per period with
/// amplitude `harmonics[h-1]` seconds; phases are drawn from the
/// temporal stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTemplate {
    /// Fundamental period in seconds; must be a multiple of the grid
    /// resolution so the mode is exactly periodic on the grid.
    pub period_seconds: u64,
    /// Amplitude (seconds) per harmonic of the fundamental.
    pub harmonics: Vec<f64>,
}

impl ModeTemplate {
    /// Pure daily sinusoid.
    pub fn daily(amplitude: f64) -> Self {
        ModeTemplate { period_seconds: 86_400, harmonics: vec![amplitude] }
    }

    /// Pure weekly sinusoid.
    pub fn weekly(amplitude: f64) -> Self {
        ModeTemplate { period_seconds: 604_800, harmonics: vec![amplitude] }
    }
}

/// Full description of one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    // Network.
    pub n_vertices: usize,
    /// Target average out-degree; the spanning cycle provides 1, extra
    /// edges make up the rest.
    pub avg_out_degree: f64,
    /// Keep extra edges local to the layout grid (planar-ish) rather
    /// than uniform over vertex pairs.
    pub planar_layout: bool,

    // Time axis.
    pub duration_days: u32,
    pub resolution: u32,
    pub start_epoch: i64,

    // Planted structure.
    pub k_true: usize,
    /// One template per planted mode; length must equal `k_true`.
    pub templates: Vec<ModeTemplate>,
    /// Lognormal base travel time: mean of ln(seconds).
    pub base_log_mean: f64,
    /// Lognormal base travel time: std of ln(seconds).
    pub base_log_std: f64,

    // Perturbations.
    /// Relative i.i.d. Gaussian noise std (0 disables).
    pub noise_std: f64,
    /// Expected congestion events per day (0 disables).
    pub transient_rate_per_day: f64,
    /// Travel-time multiplier inside an event (> 1 slows traffic).
    pub transient_magnitude: f64,
    /// Mean event duration in seconds (exponentially distributed).
    pub transient_duration_mean: f64,
    /// Event footprint: edges within this many hops (shared-vertex
    /// adjacency) of the event's center edge.
    pub transient_radius: usize,

    // Missingness.
    /// Probability an individual cell is masked.
    pub missing_rate: f64,
    /// Probability a row receives one contiguous blackout.
    pub blackout_rate: f64,
    /// Mean blackout length in intervals (exponentially distributed).
    pub blackout_mean_intervals: f64,

    pub seed: u64,
}

impl SynthSpec {
    /// A mid-sized default world: daily + weekly structure, mild noise,
    /// occasional transients, sparse missingness.
    pub fn default_world(n_vertices: usize, duration_days: u32, seed: u64) -> Self {
        SynthSpec {
            n_vertices,
            avg_out_degree: 3.0,
            planar_layout: true,
            duration_days,
            resolution: 600,
            start_epoch: 0,
            k_true: 3,
            templates: vec![
                ModeTemplate::daily(120.0),
                ModeTemplate { period_seconds: 86_400, harmonics: vec![0.0, 60.0] },
                ModeTemplate::weekly(45.0),
            ],
            base_log_mean: (600.0f64).ln(),
            base_log_std: 0.4,
            noise_std: 0.1,
            transient_rate_per_day: 2.0,
            transient_magnitude: 2.5,
            transient_duration_mean: 3600.0,
            transient_radius: 2,
            missing_rate: 0.055,
            blackout_rate: 0.02,
            blackout_mean_intervals: 12.0,
            seed,
        }
    }

    fn n_intervals(&self) -> usize {
        (self.duration_days as u64 * 86_400 / self.resolution as u64) as usize
    }

    fn validate_network(&self) -> Result<()> {
        if self.n_vertices < 2 {
            return Err(Error::InvalidInput(format!(
                "n_vertices must be at least 2, got {}",
                self.n_vertices
            )));
        }
        if self.avg_out_degree < 1.0 {
            return Err(Error::InvalidInput(
                "avg_out_degree below 1 cannot keep the graph strongly connected".into(),
            ));
        }
        Ok(())
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN
    fn validate_truth(&self, m: usize) -> Result<()> {
        if self.k_true > m {
            return Err(Error::InvalidInput(format!(
                "k_true {} exceeds the edge count {m}",
                self.k_true
            )));
        }
        if self.templates.len() != self.k_true {
            return Err(Error::InvalidInput(format!(
                "{} templates for k_true={}",
                self.templates.len(),
                self.k_true
            )));
        }
        for tpl in &self.templates {
            if tpl.period_seconds == 0 || tpl.period_seconds % self.resolution as u64 != 0 {
                return Err(Error::InvalidInput(format!(
                    "template period {} s is not a positive multiple of the resolution {} s",
                    tpl.period_seconds, self.resolution
                )));
            }
        }
        if self.resolution == 0 || 86_400 % self.resolution as u64 != 0 {
            return Err(Error::InvalidInput(format!(
                "resolution {} s must divide a day",
                self.resolution
            )));
        }
        if self.duration_days == 0 {
            return Err(Error::InvalidInput("duration_days must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.transient_rate_per_day >= 0.0) {
            return Err(Error::InvalidInput(
                "noise_std and transient_rate_per_day must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    fn validate_missingness(&self) -> Result<()> {
        for (name, rate) in
            [("missing_rate", self.missing_rate), ("blackout_rate", self.blackout_rate)]
        {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidInput(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Network generation
// ---------------------------------------------------------------------------

/// Generate a random strongly connected directed graph.
///
/// Vertices sit on an implicit √n×√n layout grid. A spanning cycle in
/// boustrophedon (snake) order guarantees strong connectivity; extra
/// edges are then added until the average out-degree target is met —
/// drawn between nearby grid cells when `planar_layout` is set, uniformly
/// otherwise. Deterministic per seed (network stream).
pub fn generate_network(spec: &SynthSpec) -> Result<RoadNetwork> {
    spec.validate_network()?;
    let n = spec.n_vertices;
    let mut rng = stream_rng(spec.seed, streams::NETWORK);

    let cols = (n as f64).sqrt().ceil() as usize;
    // Snake order over the layout grid: even rows left-to-right, odd rows
    // right-to-left, so consecutive vertices are always grid neighbors.
    let mut order = Vec::with_capacity(n);
    let rows = n.div_ceil(cols);
    for r in 0..rows {
        let row_ids: Vec<usize> = (r * cols..((r + 1) * cols).min(n)).collect();
        if r % 2 == 0 {
            order.extend(row_ids);
        } else {
            order.extend(row_ids.into_iter().rev());
        }
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for w in order.windows(2) {
        edges.push((w[0], w[1]));
    }
    edges.push((*order.last().unwrap(), order[0]));

    let target_edges = (n as f64 * spec.avg_out_degree).round() as usize;
    while edges.len() < target_edges {
        let from = rng.random_range(0..n);
        let to = if spec.planar_layout {
            // A vertex within Chebyshev distance 2 on the layout grid;
            // fall back to uniform if the neighborhood draw keeps missing
            // the grid (corner cells with tiny n).
            let (fr, fc) = (from / cols, from % cols);
            let mut pick = None;
            for _ in 0..32 {
                let dr = rng.random_range(-2i64..=2);
                let dc = rng.random_range(-2i64..=2);
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (tr, tc) = (fr as i64 + dr, fc as i64 + dc);
                if tr < 0 || tc < 0 || tc >= cols as i64 {
                    continue;
                }
                let cand = tr as usize * cols + tc as usize;
                if cand < n && cand != from {
                    pick = Some(cand);
                    break;
                }
            }
            pick.unwrap_or_else(|| rng.random_range(0..n))
        } else {
            rng.random_range(0..n)
        };
        if to == from {
            continue;
        }
        edges.push((from, to));
    }

    let segments = edges
        .into_iter()
        .enumerate()
        .map(|(id, (from, to))| Segment { edge_id: id, from, to, segment_row: id })
        .collect();
    RoadNetwork::new(segments)
}

// ---------------------------------------------------------------------------
// Truth generation
// ---------------------------------------------------------------------------

/// Orthonormalize the columns of a random Gaussian m×k matrix by
/// modified Gram–Schmidt. For k ≪ m the columns are near-orthogonal to
/// begin with, so no re-orthogonalization pass is needed.
fn random_orthonormal(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let mut u = Array2::from_shape_fn((m, k), |_| normal.sample(rng));
    for j in 0..k {
        for i in 0..j {
            let proj = u.column(i).dot(&u.column(j));
            let ui = u.column(i).to_owned();
            u.column_mut(j).scaled_add(-proj, &ui);
        }
        let norm = u.column(j).dot(&u.column(j)).sqrt();
        u.column_mut(j).mapv_inplace(|x| x / norm);
    }
    u
}

/// Shared-vertex adjacency: edges within `radius` hops of `center`,
/// where one hop connects edges sharing an endpoint.
fn edge_neighborhood(network: &RoadNetwork, center: usize, radius: usize) -> Vec<usize> {
    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); network.n_vertices()];
    for (idx, s) in network.segments().iter().enumerate() {
        touching[s.from].push(idx);
        if s.to != s.from {
            touching[s.to].push(idx);
        }
    }
    let mut dist = vec![usize::MAX; network.n_segments()];
    let mut queue = std::collections::VecDeque::new();
    dist[center] = 0;
    queue.push_back(center);
    let mut hood = vec![center];
    while let Some(e) = queue.pop_front() {
        if dist[e] == radius {
            continue;
        }
        let s = network.segment(e);
        for &v in &[s.from, s.to] {
            for &e2 in &touching[v] {
                if dist[e2] == usize::MAX {
                    dist[e2] = dist[e] + 1;
                    queue.push_back(e2);
                    hood.push(e2);
                }
            }
        }
    }
    hood
}

/// Generate the fully observed ground-truth matrix for a network.
///
/// Base times, spatial basis, harmonic phases, noise, and transients
/// each consume their own RNG stream, so e.g. two specs differing only
/// in `noise_std` share the identical clean signal.
pub fn generate_truth(spec: &SynthSpec, network: &RoadNetwork) -> Result<TrafficMatrix> {
    let m = network.n_segments();
    spec.validate_truth(m)?;
    let n = spec.n_intervals();
    let grid = TimeGrid::new(spec.start_epoch, spec.resolution, n);

    // Per-edge lognormal base travel times.
    let mut base_rng = stream_rng(spec.seed, streams::BASE);
    let lognormal = LogNormal::new(spec.base_log_mean, spec.base_log_std)
        .map_err(|e| Error::InvalidInput(format!("lognormal params: {e}")))?;
    let base: Vec<f64> = (0..m).map(|_| lognormal.sample(&mut base_rng)).collect();

    // Random orthonormal spatial basis for the planted modes.
    let mut basis_rng = stream_rng(spec.seed, streams::BASIS);
    let u0 = random_orthonormal(m, spec.k_true, &mut basis_rng);

    // One period's worth of each temporal mode, tiled across the horizon.
    // Evaluating a single period and indexing by j mod L makes the clean
    // signal exactly periodic, bit for bit.
    let mut temporal_rng = stream_rng(spec.seed, streams::TEMPORAL);
    let mut mode_tables: Vec<Vec<f64>> = Vec::with_capacity(spec.k_true);
    for tpl in &spec.templates {
        let l = (tpl.period_seconds / spec.resolution as u64) as usize;
        let phases: Vec<f64> = (0..tpl.harmonics.len())
            .map(|_| temporal_rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let table: Vec<f64> = (0..l)
            .map(|slot| {
                let frac = slot as f64 / l as f64;
                tpl.harmonics
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(h, (amp, phase))| {
                        amp * (std::f64::consts::TAU * (h + 1) as f64 * frac + phase).sin()
                    })
                    .sum()
            })
            .collect();
        mode_tables.push(table);
    }

    // Clean signal: base + √m · U₀ · a(t).
    let scale = (m as f64).sqrt();
    let mut values = Array2::<f64>::zeros((m, n));
    for e in 0..m {
        for j in 0..n {
            let mut w = base[e];
            for (k, table) in mode_tables.iter().enumerate() {
                w += scale * u0[[e, k]] * table[j % table.len()];
            }
            values[[e, j]] = w;
        }
    }

    // Relative Gaussian noise.
    if spec.noise_std > 0.0 {
        let mut noise_rng = stream_rng(spec.seed, streams::NOISE);
        let normal = Normal::new(0.0, spec.noise_std).expect("noise std validated nonnegative");
        for e in 0..m {
            for j in 0..n {
                values[[e, j]] *= 1.0 + normal.sample(&mut noise_rng);
            }
        }
    }

    // Localized multiplicative transients (congestion events).
    if spec.transient_rate_per_day > 0.0 {
        let mut ev_rng = stream_rng(spec.seed, streams::TRANSIENTS);
        let lambda = spec.transient_rate_per_day * spec.duration_days as f64;
        let n_events = Poisson::new(lambda)
            .map_err(|e| Error::InvalidInput(format!("transient rate: {e}")))?
            .sample(&mut ev_rng) as usize;
        let duration = Exp::new(1.0 / spec.transient_duration_mean)
            .map_err(|e| Error::InvalidInput(format!("transient duration: {e}")))?;
        for _ in 0..n_events {
            let center = ev_rng.random_range(0..m);
            let start = grid.start_epoch as f64 + ev_rng.random_range(0.0..grid.span());
            let dur = duration.sample(&mut ev_rng);
            let hood = edge_neighborhood(network, center, spec.transient_radius);
            let first = ((start - grid.start_epoch as f64) / grid.resolution as f64) as usize;
            let last = ((start + dur - grid.start_epoch as f64) / grid.resolution as f64) as usize;
            for j in first..=last.min(n - 1) {
                for &edge in &hood {
                    let row = network.segment(edge).segment_row;
                    values[[row, j]] *= spec.transient_magnitude;
                }
            }
        }
    }

    // Travel times stay positive.
    values.mapv_inplace(|x| x.max(1.0));
    TrafficMatrix::fully_observed(values, grid)
}

// ---------------------------------------------------------------------------
// Missingness injection
// ---------------------------------------------------------------------------

/// Degrade a fully observed truth matrix with random missing cells and
/// per-row contiguous blackouts (missingness stream). The truth itself
/// is untouched; the returned copy is the preprocessing test input.
pub fn inject_missingness(truth: &TrafficMatrix, spec: &SynthSpec) -> Result<TrafficMatrix> {
    spec.validate_missingness()?;
    let (m, n) = (truth.m(), truth.n());
    let mut rng = stream_rng(spec.seed, streams::MISSINGNESS);
    let mut mask = Array2::from_elem((m, n), true);

    if spec.missing_rate > 0.0 {
        for e in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < spec.missing_rate {
                    mask[[e, j]] = false;
                }
            }
        }
    }

    if spec.blackout_rate > 0.0 {
        let length = Exp::new(1.0 / spec.blackout_mean_intervals)
            .map_err(|e| Error::InvalidInput(format!("blackout length: {e}")))?;
        for e in 0..m {
            if rng.random::<f64>() < spec.blackout_rate {
                let len = (length.sample(&mut rng).ceil() as usize).clamp(1, n);
                let start = rng.random_range(0..=(n - len));
                for j in start..start + len {
                    mask[[e, j]] = false;
                }
            }
        }
    }

    TrafficMatrix::new(truth.values.clone(), mask, truth.grid)
}
