//! Travel-time predictors: the cyclostationary low-rank model and the
//! baselines it is judged against.
//!
//! The central object is a [`CycleModel`]: a spatial basis Ū plus one
//! coefficient vector α_l per interval of a daily or weekly cycle,
//! maintained as equal-weight running means across observed cycles. A
//! prediction for time t is Ū·α_{l(t)} — the model never looks at live
//! data, which is exactly what makes it cheap to serve and interesting
//! to benchmark against predictors that do (lag and real-time variants).

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::SpatialBasis;
use crate::traffic::TrafficMatrix;

/// Orthonormality budget under which the least-squares projection may use
/// the transpose shortcut Ūᵀw.
const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Default lower clamp for predicted weights, in seconds.
pub const DEFAULT_PREDICTION_FLOOR: f64 = 1.0;

pub const DAY_SECONDS: u64 = 86_400;
pub const WEEK_SECONDS: u64 = 604_800;

// ---------------------------------------------------------------------------
// Cycle configuration and model
// ---------------------------------------------------------------------------

/// Shape of one cycle: its period, the grid resolution it is sampled at,
/// and the epoch that anchors phase 0.
///
/// The anchor matters: phases are computed as
/// `l(t) = floor(((t − anchor) mod period) / resolution)`, so two models
/// with different anchors index their cycles differently. Fitting sets the
/// anchor to the training grid's start epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Cycle period in seconds (86 400 for daily, 604 800 for weekly).
    pub cycle_period: u64,
    /// Interval length in seconds; must match the grid resolution.
    pub resolution: u32,
    /// Epoch at which phase 0 begins.
    pub anchor_epoch: i64,
}

impl CycleConfig {
    pub fn new(cycle_period: u64, resolution: u32, anchor_epoch: i64) -> Result<Self> {
        if resolution == 0 || cycle_period == 0 {
            return Err(Error::InvalidInput("cycle period and resolution must be positive".into()));
        }
        if !cycle_period.is_multiple_of(resolution as u64) {
            return Err(Error::InvalidInput(format!(
                "cycle period {cycle_period} not divisible by resolution {resolution}"
            )));
        }
        Ok(CycleConfig { cycle_period, resolution, anchor_epoch })
    }

    pub fn daily(resolution: u32, anchor_epoch: i64) -> Result<Self> {
        CycleConfig::new(DAY_SECONDS, resolution, anchor_epoch)
    }

    pub fn weekly(resolution: u32, anchor_epoch: i64) -> Result<Self> {
        CycleConfig::new(WEEK_SECONDS, resolution, anchor_epoch)
    }

    /// A degenerate single-interval cycle — the static (non-periodic)
    /// variant reuses all the cycle machinery with L = 1.
    pub fn static_single(resolution: u32, anchor_epoch: i64) -> Self {
        CycleConfig { cycle_period: resolution as u64, resolution, anchor_epoch }
    }

    /// Intervals per cycle, L.
    pub fn intervals_per_cycle(&self) -> usize {
        (self.cycle_period / self.resolution as u64) as usize
    }

    /// Phase index l(t) ∈ 0..L of the cycle interval containing `t`.
    pub fn phase_of(&self, t: f64) -> usize {
        let rel = (t - self.anchor_epoch as f64).rem_euclid(self.cycle_period as f64);
        let l = (rel / self.resolution as f64) as usize;
        l.min(self.intervals_per_cycle() - 1)
    }
}

/// A fitted cyclostationary model: per-phase running-mean coefficients
/// over a fixed spatial basis.
///
/// Beyond the basis, the state is exactly L·k coefficients plus L
/// counters — the compactness that makes the approach storable per city.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleModel {
    pub basis: SpatialBasis,
    pub cfg: CycleConfig,
    /// L×k running means; row l is the equal-weight mean of every α̂
    /// ingested for phase l. Rows with `cycles_seen[l] == 0` are zero.
    pub alphas: Array2<f64>,
    /// p_l: how many coefficient vectors each phase has absorbed.
    pub cycles_seen: Vec<u64>,
}

impl CycleModel {
    /// An empty model: all-zero coefficients, zero counts.
    pub fn new(basis: SpatialBasis, cfg: CycleConfig) -> Result<Self> {
        let l = cfg.intervals_per_cycle();
        let k = basis.u_bar.ncols();
        if l == 0 {
            return Err(Error::InvalidInput("cycle has no intervals".into()));
        }
        Ok(CycleModel { basis, cfg, alphas: Array2::zeros((l, k)), cycles_seen: vec![0; l] })
    }

    /// Predicted weight vector Ū·α_{l(t)} for time `t`, unclamped.
    ///
    /// Fails with `ColdStart` while phase l(t) has absorbed no data —
    /// returning the zero vector instead would silently corrupt routing.
    pub fn predict(&self, t: f64) -> Result<Array1<f64>> {
        let l = self.cfg.phase_of(t);
        if self.cycles_seen[l] == 0 {
            return Err(Error::ColdStart(format!("cycle interval {l} has no training data")));
        }
        Ok(self.basis.u_bar.dot(&self.alphas.row(l)))
    }
}

// ---------------------------------------------------------------------------
// Least-squares projection
// ---------------------------------------------------------------------------

/// Least-squares coefficients of `w` in the basis: argmin_α ‖w − Ūα‖₂².
///
/// For an orthonormal basis (the invariant) this is just Ūᵀw; a basis
/// that fails the orthonormality check falls back to the full normal
/// equations, so the operation stays a correct least squares either way.
pub fn project_coefficients(w: ArrayView1<'_, f64>, basis: &SpatialBasis) -> Result<Array1<f64>> {
    let m = basis.u_bar.nrows();
    if w.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} entries, basis expects {m}",
            w.len()
        )));
    }
    let rhs = basis.u_bar.t().dot(&w);
    if basis.orthonormality_defect() <= ORTHONORMALITY_TOL {
        return Ok(rhs);
    }
    let gram = basis.u_bar.t().dot(&basis.u_bar);
    solve_spd(&gram, rhs)
}

/// Solve Ax = b for symmetric positive-definite A by Cholesky.
fn solve_spd(a: &Array2<f64>, b: Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::InvalidInput(
                        "normal equations are singular: basis columns are linearly dependent"
                            .into(),
                    ));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    // Forward then back substitution.
    let mut y = b;
    for i in 0..n {
        for p in 0..i {
            let v = y[p];
            y[i] -= l[[i, p]] * v;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let v = y[p];
            y[i] -= l[[p, i]] * v;
        }
        y[i] /= l[[i, i]];
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Fold one coefficient vector into phase `l`'s running mean:
/// α_{l,p} = ((p−1)/p)·α_{l,p−1} + (1/p)·α̂.
///
/// The recursion keeps row l the exact equal-weight mean of everything
/// ingested so far (to rounding), which is what makes the model a plain
/// per-phase average rather than a forgetting filter.
pub fn update_running_mean(model: &mut CycleModel, l: usize, alpha_hat: ArrayView1<'_, f64>) {
    assert!(l < model.cfg.intervals_per_cycle(), "phase {l} out of range");
    assert_eq!(alpha_hat.len(), model.alphas.ncols(), "coefficient length mismatch");
    let p = model.cycles_seen[l] + 1;
    let keep = (p - 1) as f64 / p as f64;
    let add = 1.0 / p as f64;
    let mut row = model.alphas.row_mut(l);
    for (slot, &a) in row.iter_mut().zip(alpha_hat.iter()) {
        *slot = keep * *slot + add * a;
    }
    model.cycles_seen[l] = p;
}

/// Fit a cycle model on a training matrix.
///
/// Every fully observed column is projected onto the basis and folded
/// into the running mean of its cycle phase; columns with any missing
/// cell are skipped. Phases the training window never covers stay at
/// p_l = 0 (and predicting them raises `ColdStart`), so training shorter
/// than a full cycle yields a usable partial model.
pub fn fit_cyclo(
    training: &TrafficMatrix,
    basis: SpatialBasis,
    cfg: CycleConfig,
) -> Result<CycleModel> {
    if basis.u_bar.nrows() != training.m() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} rows, matrix has {} segments",
            basis.u_bar.nrows(),
            training.m()
        )));
    }
    if cfg.resolution != training.grid.resolution {
        return Err(Error::DimensionMismatch(format!(
            "cycle resolution {} != grid resolution {}",
            cfg.resolution, training.grid.resolution
        )));
    }
    let mut model = CycleModel::new(basis, cfg)?;

    // Project all columns in one matrix product (the per-column loop
    // below only routes results to phases). The orthonormal shortcut is
    // checked once here rather than per column.
    let orthonormal = model.basis.orthonormality_defect() <= ORTHONORMALITY_TOL;
    let projected: Array2<f64> = if orthonormal {
        model.basis.u_bar.t().dot(&training.values)
    } else {
        let gram = model.basis.u_bar.t().dot(&model.basis.u_bar);
        let rhs = model.basis.u_bar.t().dot(&training.values);
        let mut out = Array2::zeros(rhs.dim());
        for (j, col) in rhs.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&solve_spd(&gram, col.to_owned())?);
        }
        out
    };

    let mut ingested = 0usize;
    for j in 0..training.n() {
        if !(0..training.m()).all(|r| training.is_observed(r, j)) {
            continue;
        }
        let l = model.cfg.phase_of(training.grid.interval_start(j));
        update_running_mean(&mut model, l, projected.column(j));
        ingested += 1;
    }
    if ingested == 0 {
        return Err(Error::InsufficientData(
            "no interval of the training window is fully observed".into(),
        ));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Predictor handles
// ---------------------------------------------------------------------------

/// Which forecasting rule a handle applies.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// Ū·α_{l(t)} from a fitted low-rank cycle model.
    CycloLowrank(CycleModel),
    /// Per-phase running mean of raw weight vectors (k = m equivalent).
    CycloFullrank(CycleModel),
    /// Single global mean coefficient vector — the cycle machinery with
    /// L = 1, i.e. low-rank without cyclostationarity.
    LowrankStatic(CycleModel),
    /// Live weights from `delta_seconds` ago (previous day/week).
    Lag { delta_seconds: f64 },
    /// Live weights at the query instant — the T_rt reference itself.
    Realtime,
    /// Clairvoyant fixed path; intercepted by the evaluation layer, which
    /// routes it through `static_oracle` instead of greedy re-routing.
    StaticOracle,
}

/// A named predictor with its variant state and the routing weight floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorHandle {
    pub name: String,
    pub variant: Variant,
    /// Lower clamp applied to every predicted weight before routing.
    pub floor: f64,
}

impl PredictorHandle {
    pub fn new(name: impl Into<String>, variant: Variant) -> Self {
        PredictorHandle { name: name.into(), variant, floor: DEFAULT_PREDICTION_FLOOR }
    }

    /// Handle with a conventional name derived from the variant
    /// ("cyclo_daily", "lag_week", ...).
    pub fn named_after_variant(variant: Variant) -> Self {
        let name = match &variant {
            Variant::CycloLowrank(m) => match m.cfg.cycle_period {
                DAY_SECONDS => "cyclo_daily".to_string(),
                WEEK_SECONDS => "cyclo_weekly".to_string(),
                p => format!("cyclo_{p}s"),
            },
            Variant::CycloFullrank(m) => match m.cfg.cycle_period {
                DAY_SECONDS => "cyclo_fullrank_daily".to_string(),
                WEEK_SECONDS => "cyclo_fullrank_weekly".to_string(),
                p => format!("cyclo_fullrank_{p}s"),
            },
            Variant::LowrankStatic(_) => "lowrank_static".to_string(),
            Variant::Lag { delta_seconds } => {
                if *delta_seconds == DAY_SECONDS as f64 {
                    "lag_day".to_string()
                } else if *delta_seconds == WEEK_SECONDS as f64 {
                    "lag_week".to_string()
                } else {
                    format!("lag_{}s", delta_seconds)
                }
            }
            Variant::Realtime => "realtime".to_string(),
            Variant::StaticOracle => "static_oracle".to_string(),
        };
        PredictorHandle::new(name, variant)
    }

    /// Predicted, floor-clamped weight vector for departure/arrival time
    /// `t`. `live` is the ground-truth matrix the dynamic baselines read.
    pub fn predict_weights(&self, t: f64, live: &TrafficMatrix) -> Result<Array1<f64>> {
        let raw = match &self.variant {
            Variant::CycloLowrank(m) | Variant::CycloFullrank(m) | Variant::LowrankStatic(m) => {
                m.predict(t)?
            }
            Variant::Lag { delta_seconds } => {
                let lagged = t - delta_seconds;
                if lagged < live.grid.start_epoch as f64 {
                    return Err(Error::ColdStart(format!(
                        "lag source time {lagged} precedes the grid start"
                    )));
                }
                live_column(live, lagged)?
            }
            Variant::Realtime => live_column(live, t)?,
            // Answers with the live column so the handle is total; the
            // evaluation layer never routes this variant step-by-step.
            Variant::StaticOracle => live_column(live, t)?,
        };
        Ok(raw.mapv(|x| x.max(self.floor)))
    }

    /// Immutable snapshot for the evaluation harness. Cyclic variants
    /// pre-compute their per-phase weight tables, so serving a prediction
    /// is a row lookup.
    pub fn freeze(&self) -> FrozenPredictor {
        let kind = match &self.variant {
            Variant::CycloLowrank(m) | Variant::CycloFullrank(m) | Variant::LowrankStatic(m) => {
                let l_count = m.cfg.intervals_per_cycle();
                // Row by row with the same matrix-vector product the live
                // handle uses, so frozen and live predictions are
                // bit-identical, not merely close.
                let mut table = Array2::zeros((l_count, m.basis.u_bar.nrows()));
                for l in 0..l_count {
                    let row = m.basis.u_bar.dot(&m.alphas.row(l));
                    table.row_mut(l).assign(&row.mapv(|x| x.max(self.floor)));
                }
                FrozenKind::Cyclic { cfg: m.cfg, cycles_seen: m.cycles_seen.clone(), table }
            }
            Variant::Lag { delta_seconds } => FrozenKind::Lag { delta_seconds: *delta_seconds },
            Variant::Realtime => FrozenKind::Realtime,
            Variant::StaticOracle => FrozenKind::StaticOracle,
        };
        FrozenPredictor { name: self.name.clone(), floor: self.floor, kind }
    }
}

/// Read the live weight column in force at time `t`, erroring on any
/// masked cell (dynamic baselines have no business inventing data).
fn live_column(live: &TrafficMatrix, t: f64) -> Result<Array1<f64>> {
    let j = live.grid.interval_index(t)?;
    for r in 0..live.m() {
        if !live.is_observed(r, j) {
            return Err(Error::MissingValue { row: r, interval: j });
        }
    }
    Ok(live.column(j).to_owned())
}

/// Read-only predictor snapshot shared across evaluation workers.
#[derive(Debug, Clone)]
pub struct FrozenPredictor {
    name: String,
    floor: f64,
    kind: FrozenKind,
}

#[derive(Debug, Clone)]
enum FrozenKind {
    Cyclic {
        cfg: CycleConfig,
        cycles_seen: Vec<u64>,
        /// L×m floor-clamped predicted weights, one row per phase.
        table: Array2<f64>,
    },
    Lag {
        delta_seconds: f64,
    },
    Realtime,
    StaticOracle,
}

impl FrozenPredictor {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// True for the clairvoyant fixed-path variant, which the evaluation
    /// layer must route through `static_oracle` rather than re-routing.
    pub fn is_static_oracle(&self) -> bool {
        matches!(self.kind, FrozenKind::StaticOracle)
    }

    /// Same contract as [`PredictorHandle::predict_weights`].
    pub fn predict_weights(&self, t: f64, live: &TrafficMatrix) -> Result<Array1<f64>> {
        match &self.kind {
            FrozenKind::Cyclic { cfg, cycles_seen, table } => {
                let l = cfg.phase_of(t);
                if cycles_seen[l] == 0 {
                    return Err(Error::ColdStart(format!(
                        "cycle interval {l} has no training data"
                    )));
                }
                Ok(table.row(l).to_owned())
            }
            FrozenKind::Lag { delta_seconds } => {
                let lagged = t - delta_seconds;
                if lagged < live.grid.start_epoch as f64 {
                    return Err(Error::ColdStart(format!(
                        "lag source time {lagged} precedes the grid start"
                    )));
                }
                Ok(live_column(live, lagged)?.mapv(|x| x.max(self.floor)))
            }
            FrozenKind::Realtime | FrozenKind::StaticOracle => {
                Ok(live_column(live, t)?.mapv(|x| x.max(self.floor)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::lowrank::truncated_svd;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn wrap(values: Array2<f64>, resolution: u32) -> TrafficMatrix {
        let n = values.ncols();
        TrafficMatrix::fully_observed(values, TimeGrid::new(0, resolution, n)).unwrap()
    }

    /// Random m×k orthonormal basis, obtained from an SVD of noise.
    fn random_basis(m: usize, k: usize, seed: u64) -> SpatialBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_fn((m, 2 * m), |_| rng.random_range(-1.0..1.0f64));
        truncated_svd(&wrap(w, 600), k).unwrap().0
    }

    #[test]
    fn projection_recovers_exact_coefficients() {
        let basis = random_basis(8, 3, 1);
        let a = array![2.0, -1.0, 0.5];
        let w = basis.u_bar.dot(&a);
        let ahat = project_coefficients(w.view(), &basis).unwrap();
        for i in 0..3 {
            assert!((ahat[i] - a[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_of_orthogonal_vector_is_zero() {
        // Basis = first two unit vectors; w lives on the third axis.
        let mut u = Array2::zeros((4, 2));
        u[[0, 0]] = 1.0;
        u[[1, 1]] = 1.0;
        let basis = SpatialBasis {
            u_bar: u,
            singular_values: Array1::zeros(0),
            k: 2,
            trained_on: crate::lowrank::Provenance { start_epoch: 0, resolution: 600, m: 4, n: 0 },
        };
        let w = array![0.0, 0.0, 7.0, -3.0];
        let ahat = project_coefficients(w.view(), &basis).unwrap();
        assert_eq!(ahat.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn projection_matches_normal_equations_oracle() {
        let basis = random_basis(10, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array1::from_shape_fn(10, |_| rng.random_range(-5.0..5.0f64));
        let fast = project_coefficients(w.view(), &basis).unwrap();
        // Oracle: explicit (ŪᵀŪ)⁻¹Ūᵀw via the Cholesky solver.
        let gram = basis.u_bar.t().dot(&basis.u_bar);
        let oracle = solve_spd(&gram, basis.u_bar.t().dot(&w)).unwrap();
        for i in 0..4 {
            assert!((fast[i] - oracle[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn running_mean_is_batch_mean() {
        let basis = random_basis(6, 2, 4);
        let cfg = CycleConfig::new(1200, 600, 0).unwrap(); // L = 2
        let mut model = CycleModel::new(basis, cfg).unwrap();

        // First update is the mean of one.
        let v = array![1.0, 2.0];
        update_running_mean(&mut model, 0, v.view());
        assert_eq!(model.alphas.row(0).to_vec(), vec![1.0, 2.0]);

        // Second is the mean of two.
        let w = array![3.0, 0.0];
        update_running_mean(&mut model, 0, w.view());
        assert_eq!(model.alphas.row(0).to_vec(), vec![2.0, 1.0]);

        // 100 random updates match the batch mean to 1e-12.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut batch = Vec::new();
        for _ in 0..100 {
            let a = Array1::from_shape_fn(2, |_| rng.random_range(-10.0..10.0f64));
            update_running_mean(&mut model, 1, a.view());
            batch.push(a);
        }
        let mean = batch.iter().fold(Array1::<f64>::zeros(2), |acc, a| acc + a) / 100.0;
        for i in 0..2 {
            assert!((model.alphas[[1, i]] - mean[i]).abs() <= 1e-12);
        }
        assert_eq!(model.cycles_seen, vec![2, 100]);
    }

    /// Noiseless cycle-constant world: columns w_{l+pL} = Ū·a_l.
    fn cyclic_world(
        basis: &SpatialBasis,
        coeffs: &[Array1<f64>],
        cycles: usize,
        resolution: u32,
    ) -> TrafficMatrix {
        let l_count = coeffs.len();
        let m = basis.u_bar.nrows();
        let n = l_count * cycles;
        let mut w = Array2::zeros((m, n));
        for j in 0..n {
            w.column_mut(j).assign(&basis.u_bar.dot(&coeffs[j % l_count]));
        }
        wrap(w, resolution)
    }

    #[test]
    fn fit_recovers_cycle_constant_coefficients() {
        let basis = random_basis(7, 2, 5);
        let coeffs = vec![array![1.0, 0.0], array![0.0, 2.0], array![3.0, -1.0]];
        let training = cyclic_world(&basis, &coeffs, 4, 600);
        let cfg = CycleConfig::new(1800, 600, 0).unwrap(); // L = 3
        let model = fit_cyclo(&training, basis, cfg).unwrap();
        for (l, a) in coeffs.iter().enumerate() {
            assert_eq!(model.cycles_seen[l], 4);
            for i in 0..2 {
                assert!((model.alphas[[l, i]] - a[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fit_averages_two_cycles() {
        let basis = random_basis(5, 2, 6);
        let a = array![1.0, 1.0];
        let delta = array![0.5, -0.5];
        let m = basis.u_bar.nrows();
        let mut w = Array2::zeros((m, 2));
        w.column_mut(0).assign(&basis.u_bar.dot(&a));
        w.column_mut(1).assign(&basis.u_bar.dot(&(&a + &delta)));
        let training = wrap(w, 600);
        let cfg = CycleConfig::new(600, 600, 0).unwrap(); // L = 1, both columns hit phase 0
        let model = fit_cyclo(&training, basis, cfg).unwrap();
        for i in 0..2 {
            assert!((model.alphas[[0, i]] - (a[i] + delta[i] / 2.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn fit_shorter_than_cycle_leaves_unseen_phases_cold() {
        let basis = random_basis(5, 2, 7);
        let coeffs = vec![array![1.0, 0.0], array![0.0, 1.0]];
        // Only 2 columns, but the cycle has 4 phases.
        let training = cyclic_world(&basis, &coeffs, 1, 600);
        let cfg = CycleConfig::new(2400, 600, 0).unwrap();
        let model = fit_cyclo(&training, basis.clone(), cfg).unwrap();
        assert_eq!(model.cycles_seen, vec![1, 1, 0, 0]);
        assert_eq!(model.alphas.row(2).to_vec(), vec![0.0, 0.0]);
        // Predicting a cold phase errors rather than returning zeros.
        assert!(matches!(model.predict(1500.0), Err(Error::ColdStart(_))));
    }

    #[test]
    fn fit_skips_partially_observed_columns() {
        let basis = random_basis(4, 2, 8);
        let coeffs = vec![array![2.0, 1.0]];
        let mut training = cyclic_world(&basis, &coeffs, 3, 600);
        training.mask[[2, 1]] = false; // damage the middle column
        let cfg = CycleConfig::new(600, 600, 0).unwrap();
        let model = fit_cyclo(&training, basis, cfg).unwrap();
        assert_eq!(model.cycles_seen[0], 2);

        // All columns damaged → InsufficientData.
        let mut hopeless = cyclic_world(&random_basis(4, 2, 8), &coeffs, 3, 600);
        for j in 0..3 {
            hopeless.mask[[0, j]] = false;
        }
        assert!(matches!(
            fit_cyclo(&hopeless, random_basis(4, 2, 8), cfg),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn cyclo_prediction_exact_and_cycle_invariant() {
        let basis = random_basis(6, 3, 10);
        let coeffs = vec![array![4.0, 1.0, 0.0], array![2.0, -2.0, 1.0]];
        let training = cyclic_world(&basis, &coeffs, 2, 600);
        let cfg = CycleConfig::new(1200, 600, 0).unwrap();
        let model = fit_cyclo(&training, basis.clone(), cfg).unwrap();
        let handle = PredictorHandle::new("cyclo", Variant::CycloLowrank(model));

        let truth = cyclic_world(&basis, &coeffs, 2, 600);
        let predicted = handle.predict_weights(600.0, &truth).unwrap();
        let expected = truth.column(1);
        for i in 0..6 {
            // Exact up to the floor clamp (these columns may be negative,
            // so compare against the clamped truth).
            assert!((predicted[i] - expected[i].max(1.0)).abs() <= 1e-9);
        }

        // Same phase one cycle later gives the identical prediction.
        let again = handle.predict_weights(1800.0, &truth).unwrap();
        assert_eq!(predicted, again);
    }

    #[test]
    fn lag_zero_is_realtime_and_lag_cold_starts() {
        let values = array![[10.0, 20.0], [30.0, 40.0]];
        let truth = wrap(values, 600);
        let lag0 = PredictorHandle::new("lag0", Variant::Lag { delta_seconds: 0.0 });
        let rt = PredictorHandle::new("rt", Variant::Realtime);
        assert_eq!(
            lag0.predict_weights(700.0, &truth).unwrap(),
            rt.predict_weights(700.0, &truth).unwrap()
        );
        let lag = PredictorHandle::new("lag", Variant::Lag { delta_seconds: 600.0 });
        assert!(matches!(lag.predict_weights(300.0, &truth), Err(Error::ColdStart(_))));
        assert_eq!(lag.predict_weights(700.0, &truth).unwrap().to_vec(), vec![10.0, 30.0]);
    }

    #[test]
    fn floor_clamp_applies() {
        let values = array![[0.2, 20.0]];
        let truth = wrap(values, 600);
        let rt = PredictorHandle::new("rt", Variant::Realtime);
        assert_eq!(rt.predict_weights(10.0, &truth).unwrap()[0], 1.0);
    }

    #[test]
    fn frozen_matches_live_and_survives_updates() {
        let basis = random_basis(6, 2, 11);
        let coeffs = vec![array![1.0, 2.0], array![3.0, 4.0]];
        let training = cyclic_world(&basis, &coeffs, 3, 600);
        let cfg = CycleConfig::new(1200, 600, 0).unwrap();
        let model = fit_cyclo(&training, basis.clone(), cfg).unwrap();
        let mut handle = PredictorHandle::new("cyclo", Variant::CycloLowrank(model));
        let frozen = handle.freeze();

        let truth = cyclic_world(&basis, &coeffs, 3, 600);
        for t in [0.0, 650.0, 1300.0] {
            assert_eq!(
                handle.predict_weights(t, &truth).unwrap(),
                frozen.predict_weights(t, &truth).unwrap()
            );
        }

        // Mutating the handle after freezing must not affect the snapshot.
        let before = frozen.predict_weights(0.0, &truth).unwrap();
        if let Variant::CycloLowrank(m) = &mut handle.variant {
            update_running_mean(m, 0, array![100.0, 100.0].view());
        }
        assert_ne!(
            handle.predict_weights(0.0, &truth).unwrap(),
            before,
            "the live handle should have moved"
        );
        assert_eq!(frozen.predict_weights(0.0, &truth).unwrap(), before);
    }

    #[test]
    fn fullrank_agrees_with_full_k_lowrank() {
        // With k = m the projection is invertible, so averaging
        // coefficients equals averaging raw columns.
        let m = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Array2::from_shape_fn((m, 8), |_| rng.random_range(1.0..100.0f64));
        let training = wrap(w, 600);
        let cfg = CycleConfig::new(2400, 600, 0).unwrap(); // L = 4

        let full_basis = truncated_svd(&training, m).unwrap().0;
        let lowrank = fit_cyclo(&training, full_basis, cfg).unwrap();
        let identity_basis = SpatialBasis::identity(m, lowrank.basis.trained_on.clone());
        let fullrank = fit_cyclo(&training, identity_basis, cfg).unwrap();

        let h_low = PredictorHandle::new("a", Variant::CycloLowrank(lowrank));
        let h_full = PredictorHandle::new("b", Variant::CycloFullrank(fullrank));
        for t in [0.0, 600.0, 1200.0, 1800.0] {
            let a = h_low.predict_weights(t, &training).unwrap();
            let b = h_full.predict_weights(t, &training).unwrap();
            for i in 0..m {
                assert!((a[i] - b[i]).abs() <= 1e-9, "t={t}, i={i}: {} vs {}", a[i], b[i]);
            }
        }
    }

    #[test]
    fn model_state_is_l_by_k_plus_l_counters() {
        let basis = random_basis(9, 3, 13);
        let cfg = CycleConfig::weekly(600, 0).unwrap();
        let model = CycleModel::new(basis, cfg).unwrap();
        assert_eq!(model.alphas.dim(), (1008, 3));
        assert_eq!(model.cycles_seen.len(), 1008);
    }

    #[test]
    fn cycle_config_validation_and_phases() {
        assert!(CycleConfig::new(1000, 600, 0).is_err());
        let cfg = CycleConfig::daily(600, 0).unwrap();
        assert_eq!(cfg.intervals_per_cycle(), 144);
        assert_eq!(cfg.phase_of(0.0), 0);
        assert_eq!(cfg.phase_of(599.0), 0);
        assert_eq!(cfg.phase_of(600.0), 1);
        assert_eq!(cfg.phase_of(86_400.0), 0);
        // Times before the anchor wrap around, they don't go negative.
        assert_eq!(cfg.phase_of(-600.0), 143);
        // A non-zero anchor shifts the phase origin.
        let anchored = CycleConfig::daily(600, 3600).unwrap();
        assert_eq!(anchored.phase_of(3600.0), 0);
        assert_eq!(anchored.phase_of(0.0), 138);
    }
}
