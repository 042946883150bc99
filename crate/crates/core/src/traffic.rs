//! Segment-by-interval travel-time matrices.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// An `m x n` matrix of travel times: one row per road segment, one column
/// per interval of the associated [`TimeGrid`]. The mask tracks which cells
/// hold an actual observation; values under a `false` mask are meaningless
/// (they are written as 0.0 but must never be read).
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
    pub grid: TimeGrid,
}

impl TrafficMatrix {
    /// Build from explicit values and mask. Dimensions of both arrays and
    /// the grid must agree.
    pub fn new(values: Array2<f64>, mask: Array2<bool>, grid: TimeGrid) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::DimensionMismatch(format!(
                "values {:?} vs mask {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        if values.ncols() != grid.n_intervals {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns but grid has {} intervals",
                values.ncols(),
                grid.n_intervals
            )));
        }
        Ok(TrafficMatrix { values, mask, grid })
    }

    /// Wrap a dense matrix with every cell observed.
    pub fn fully_observed(values: Array2<f64>, grid: TimeGrid) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        TrafficMatrix::new(values, mask, grid)
    }

    /// Number of segments (rows).
    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    /// Number of intervals (columns).
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    /// Travel time of segment `row` for entry at time `t`.
    ///
    /// Looks up the grid interval containing `t`; the weight is constant
    /// across the interval (frozen-at-entry semantics live in the routing
    /// layer — this is a plain table lookup).
    pub fn weight_at(&self, row: usize, t: f64) -> Result<f64> {
        if row >= self.m() {
            return Err(Error::OutOfRange(format!("row {row} >= {}", self.m())));
        }
        let interval = self.grid.interval_index(t)?;
        if !self.mask[[row, interval]] {
            return Err(Error::MissingValue { row, interval });
        }
        Ok(self.values[[row, interval]])
    }

    /// Whether cell `(row, interval)` holds an observation.
    pub fn is_observed(&self, row: usize, interval: usize) -> bool {
        self.mask[[row, interval]]
    }

    /// Fraction of observed cells in `row`.
    pub fn observed_fraction(&self, row: usize) -> f64 {
        let observed = self.mask.row(row).iter().filter(|&&b| b).count();
        observed as f64 / self.n() as f64
    }

    /// The column of weights in force during interval `i`.
    pub fn column(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    /// True if every cell is observed.
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// The first `n_intervals` columns as a matrix of their own (same
    /// start epoch) — the training-window slice.
    pub fn prefix(&self, n_intervals: usize) -> Result<TrafficMatrix> {
        if n_intervals == 0 || n_intervals > self.n() {
            return Err(Error::OutOfRange(format!(
                "prefix of {n_intervals} columns from a {}-column matrix",
                self.n()
            )));
        }
        TrafficMatrix::new(
            self.values.slice(ndarray::s![.., ..n_intervals]).to_owned(),
            self.mask.slice(ndarray::s![.., ..n_intervals]).to_owned(),
            TimeGrid::new(self.grid.start_epoch, self.grid.resolution, n_intervals),
        )
    }
}
