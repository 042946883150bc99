//! Uniform time grid underlying traffic matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default interval length, in seconds.
pub const DEFAULT_RESOLUTION: u32 = 600;

/// A uniform partition of a time span into half-open intervals
/// `[start + i*res, start + (i+1)*res)` for `i in 0..n_intervals`.
///
/// Epochs are Unix seconds. Interval starts are integral, but queries
/// accept fractional timestamps because realized travel times are real
/// valued and arrivals land between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Unix epoch of the left edge of interval 0.
    pub start_epoch: i64,
    /// Interval length in seconds.
    pub resolution: u32,
    /// Number of intervals (columns of an aligned traffic matrix).
    pub n_intervals: usize,
}

impl TimeGrid {
    pub fn new(start_epoch: i64, resolution: u32, n_intervals: usize) -> Self {
        assert!(resolution > 0, "resolution must be positive");
        TimeGrid { start_epoch, resolution, n_intervals }
    }

    /// First instant not covered by the grid.
    pub fn end_epoch(&self) -> f64 {
        self.start_epoch as f64 + self.resolution as f64 * self.n_intervals as f64
    }

    /// Whether `t` falls inside the covered span `[start_epoch, end_epoch)`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_epoch as f64 && t < self.end_epoch()
    }

    /// Index of the interval containing `t`.
    ///
    /// Intervals are half-open, so `t` exactly on a boundary belongs to the
    /// interval starting there; `t == end_epoch()` is already out of range.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        if !self.contains(t) {
            return Err(Error::OutOfRange(format!(
                "t={t} outside grid [{}, {})",
                self.start_epoch,
                self.end_epoch()
            )));
        }
        let idx = ((t - self.start_epoch as f64) / self.resolution as f64).floor() as usize;
        // Guard against floating-point edge cases just below end_epoch.
        Ok(idx.min(self.n_intervals - 1))
    }

    /// Left edge of interval `i`.
    pub fn interval_start(&self, i: usize) -> f64 {
        self.start_epoch as f64 + self.resolution as f64 * i as f64
    }

    /// Total covered duration in seconds.
    pub fn span(&self) -> f64 {
        self.resolution as f64 * self.n_intervals as f64
    }
}
