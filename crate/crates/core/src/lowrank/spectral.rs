//! Welch power-spectral-density diagnostics of temporal factors.
//!
//! The periodicity of each temporal singular vector tells us which cycle
//! the mode rides on: commuter modes concentrate power at 1 cycle/day,
//! weekday/weekend modes at 1/7 cycle/day. Frequencies throughout are in
//! cycles per day, matching a sampling rate given in samples per day.

use ndarray::ArrayView2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Welch estimator parameters. The defaults mirror the diagnostic setup
/// used throughout: 10-minute samples (144/day), four-week FFT window,
/// half-overlapping Hann segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    /// Sampling rate in samples per day.
    pub fs: f64,
    /// Samples per segment.
    pub segment_len: usize,
    /// Overlapping samples between consecutive segments.
    pub overlap: usize,
    /// FFT size; segments shorter than this are zero-padded.
    pub nfft: usize,
}

impl Default for WelchConfig {
    fn default() -> Self {
        let nfft = 144 * 28;
        WelchConfig { fs: 144.0, segment_len: nfft, overlap: nfft / 2, nfft }
    }
}

/// One-sided PSD of a single temporal mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Which mode (column of the right-factor matrix) this spectrum is of.
    pub mode: usize,
    /// Bin centres in cycles/day, strictly increasing from 0 to Nyquist.
    pub frequencies: Vec<f64>,
    /// Power density per bin (power per cycle/day).
    pub psd: Vec<f64>,
    pub config: WelchConfig,
}

impl SpectrumReport {
    /// Frequency of the strongest bin.
    pub fn peak_frequency(&self) -> f64 {
        let argmax = self
            .psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("psd is finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.frequencies[argmax]
    }

    /// Width of one frequency bin, in cycles/day.
    pub fn bin_width(&self) -> f64 {
        self.config.fs / self.config.nfft as f64
    }
}

/// Periodic Hann window of length `n`: w[i] = 0.5·(1 − cos(2πi/n)).
fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())).collect()
}

/// Welch PSD estimate of a real series.
///
/// Segments of `segment_len` samples advance by `segment_len − overlap`;
/// each is Hann-windowed (no detrending — a constant series genuinely has
/// all its power at DC), zero-padded to `nfft`, and transformed. The
/// averaged periodogram is scaled to a one-sided density, 1/(fs·Σw²),
/// with interior bins doubled.
pub fn welch_psd(series: &[f64], config: &WelchConfig) -> Result<SpectrumReport> {
    let n = series.len();
    let seg = config.segment_len;
    if seg == 0 || n < seg {
        return Err(Error::SeriesTooShort { len: n, need: seg.max(1) });
    }
    if config.overlap >= seg {
        return Err(Error::InvalidInput(format!(
            "overlap {} must be smaller than segment length {seg}",
            config.overlap
        )));
    }
    if config.nfft < seg {
        return Err(Error::InvalidInput(format!(
            "nfft {} smaller than segment length {seg}",
            config.nfft
        )));
    }
    if config.fs <= 0.0 {
        return Err(Error::InvalidInput("sampling rate must be positive".into()));
    }

    let window = hann_window(seg);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let hop = seg - config.overlap;
    let nfft = config.nfft;
    let n_bins = nfft / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut acc = vec![0.0f64; n_bins];
    let mut n_segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];

    let mut start = 0;
    while start + seg <= n {
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < seg { series[start + i] * window[i] } else { 0.0 };
            *slot = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (b, slot) in buf.iter().take(n_bins).enumerate() {
            acc[b] += slot.norm_sqr();
        }
        n_segments += 1;
        start += hop;
    }
    debug_assert!(n_segments > 0);

    let scale = 1.0 / (config.fs * window_power * n_segments as f64);
    let mut psd = Vec::with_capacity(n_bins);
    for (b, &power) in acc.iter().enumerate() {
        // One-sided: interior bins absorb the mirrored negative
        // frequencies; DC and Nyquist have no mirror.
        let one_sided =
            if b == 0 || (nfft.is_multiple_of(2) && b == n_bins - 1) { 1.0 } else { 2.0 };
        psd.push(power * scale * one_sided);
    }
    let frequencies = (0..n_bins).map(|b| b as f64 * config.fs / nfft as f64).collect();

    Ok(SpectrumReport { mode: 0, frequencies, psd, config: *config })
}

/// Welch PSD of selected temporal modes.
///
/// `right_factors` is the n×k matrix whose columns are the temporal
/// singular vectors ξ_i; `modes` are zero-based column indices.
pub fn psd_of_modes(
    right_factors: ArrayView2<'_, f64>,
    modes: &[usize],
    config: &WelchConfig,
) -> Result<Vec<SpectrumReport>> {
    let k = right_factors.ncols();
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        if mode >= k {
            return Err(Error::OutOfRange(format!(
                "mode index {mode} out of range for {k} retained modes"
            )));
        }
        let series: Vec<f64> = right_factors.column(mode).to_vec();
        let mut report = welch_psd(&series, config)?;
        report.mode = mode;
        reports.push(report);
    }
    Ok(reports)
}
