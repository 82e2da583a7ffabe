//! Passband filter scales and their digitized forms.
//!
//! The wavelet scale combines `K` constant-Q filters, whose centers are
//! spaced by a factor of `2^(1/Q)` down from the upper bound, with `P`
//! evenly-spaced filters covering the band below `2Q / T_max`. Below that
//! frequency a constant-Q wavelet would need a window longer than
//! `T_max / 2`, so the low band switches to a fixed bandwidth of `2 / T_max`.
//!
//! The Mel scale uses `m(f) = 781 log2(1 + f / 700)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterBankError {
    #[error("invalid scale parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate scale: T_max * f_h = {product} must exceed 2Q = {two_q}")]
    DegenerateScale { product: f64, two_q: f64 },
    #[error("fft size {0} is not a power of two")]
    FftSize(usize),
    #[error("filter center {center} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { center: f64, nyquist: f64 },
    #[error("filter {index} has no bin weight above threshold")]
    DegenerateFilter { index: usize },
}

pub type Result<T> = std::result::Result<T, FilterBankError>;

/// Lowest weight that counts a filter row as non-empty.
pub const ROW_THRESHOLD: f64 = 1e-6;
/// Gaussian weights below this are stored as exact zeros.
pub const GAUSSIAN_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletScaleParams {
    /// Upper frequency bound in Hz.
    pub f_high: f64,
    /// Lower frequency bound in Hz.
    pub f_low: f64,
    /// Maximum window length in seconds.
    pub t_max: f64,
    /// Filters per octave.
    pub q: u32,
}

impl WaveletScaleParams {
    pub fn new(f_high: f64, f_low: f64, t_max: f64, q: u32) -> Self {
        Self {
            f_high,
            f_low,
            t_max,
            q,
        }
    }

    /// The long-term scalogram configuration: 24 kHz, 0.5 Hz, 341 ms, Q = 35.
    pub fn reference() -> Self {
        Self::new(24_000.0, 0.5, 0.341, 35)
    }

    /// Lowest constant-Q center frequency, `2Q / T_max`.
    pub fn junction_frequency(&self) -> f64 {
        2.0 * f64::from(self.q) / self.t_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(FilterBankError::InvalidParams("Q must be at least 1".into()));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(FilterBankError::InvalidParams(format!("T_max = {}", self.t_max)));
        }
        let junction = self.junction_frequency();
        if !(self.f_low >= 0.0) || self.f_low >= junction {
            return Err(FilterBankError::InvalidParams(format!(
                "f_l = {} must lie in [0, 2Q/T_max = {junction})",
                self.f_low
            )));
        }
        if !(self.f_high > junction) {
            return Err(FilterBankError::DegenerateScale {
                product: self.t_max * self.f_high,
                two_q: 2.0 * f64::from(self.q),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    Gaussian,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Wavelet,
    Mel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleParams {
    Wavelet(WaveletScaleParams),
    Mel { f_low: f64, f_high: f64, n_mel: usize },
}

impl ScaleParams {
    pub fn f_high(&self) -> f64 {
        match self {
            Self::Wavelet(p) => p.f_high,
            Self::Mel { f_high, .. } => *f_high,
        }
    }
}

/// Center frequencies and bandwidths of a filter bank, ascending in frequency.
///
/// Serializes to `{scale_kind, params, centers, bandwidths, shape, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub scale_kind: ScaleKind,
    pub params: ScaleParams,
    pub centers: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub shape: FilterShape,
    /// Number of constant-Q filters (`K`); equals the filter count on the Mel scale.
    pub constant_q: usize,
    /// Number of evenly-spaced low-frequency filters (`P`); zero on the Mel scale.
    pub evenly_spaced: usize,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn with_shape(mut self, shape: FilterShape) -> Self {
        self.shape = shape;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("filter bank serializes")
    }

    /// Reorders filters by `order[new] = old`. Used to check that feature
    /// columns follow filter order; the result no longer satisfies the
    /// ascending-center invariant.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.centers = order.iter().map(|&i| self.centers[i]).collect();
        out.bandwidths = order.iter().map(|&i| self.bandwidths[i]).collect();
        out
    }
}

/// `K = floor(1 + Q log2(T_max f_h / 2Q))`.
pub fn count_constant_q(params: &WaveletScaleParams) -> Result<usize> {
    params.validate()?;
    let q = f64::from(params.q);
    let k = 1.0 + q * (params.t_max * params.f_high / (2.0 * q)).log2();
    Ok(k.floor() as usize)
}

/// `P = floor(1 / (2^(1/Q) - 1))`.
pub fn count_evenly_spaced(q: u32) -> usize {
    assert!(q >= 1, "Q must be at least 1");
    (1.0 / ((1.0 / f64::from(q)).exp2() - 1.0)).floor() as usize
}

pub fn build_wavelet_scale(params: &WaveletScaleParams) -> Result<FilterBank> {
    let k = count_constant_q(params)?;
    let p = count_evenly_spaced(params.q);
    let q = f64::from(params.q);
    let junction = params.junction_frequency();
    let low_bandwidth = 2.0 / params.t_max;

    let mut centers = Vec::with_capacity(k + p);
    let mut bandwidths = Vec::with_capacity(k + p);
    for j in 0..p {
        centers.push(params.f_low + (junction - params.f_low) * j as f64 / p as f64);
        bandwidths.push(low_bandwidth);
    }
    for j in 0..k {
        let lambda = junction * (j as f64 / q).exp2();
        centers.push(lambda);
        bandwidths.push(lambda / q);
    }
    Ok(FilterBank {
        scale_kind: ScaleKind::Wavelet,
        params: ScaleParams::Wavelet(*params),
        centers,
        bandwidths,
        shape: FilterShape::Gaussian,
        constant_q: k,
        evenly_spaced: p,
    })
}

/// Mel frequency of `f` Hz.
pub fn mel_of(f: f64) -> f64 {
    781.0 * (1.0 + f / 700.0).log2()
}

pub fn hz_of_mel(m: f64) -> f64 {
    700.0 * ((m / 781.0).exp2() - 1.0)
}

/// Triangle-shaped filters centered evenly in Mel between `f_low` and `f_high`.
pub fn build_mel_scale(f_low: f64, f_high: f64, n_mel: usize) -> Result<FilterBank> {
    if !(f_low >= 0.0) || !(f_high > f_low) {
        return Err(FilterBankError::InvalidParams(format!(
            "Mel bounds must satisfy 0 <= f_l < f_h, got {f_low}, {f_high}"
        )));
    }
    if n_mel == 0 {
        return Err(FilterBankError::InvalidParams("N_mel must be at least 1".into()));
    }
    let (m_low, m_high) = (mel_of(f_low), mel_of(f_high));
    let base = 700.0 * (m_low / 781.0).exp2();
    let step = (m_high - m_low) / (781.0 * (n_mel as f64 + 1.0));
    let centers: Vec<f64> = (0..n_mel)
        .map(|i| base * (step * (i as f64 + 1.0)).exp2() - 700.0)
        .collect();
    let edges = triangle_feet(&centers, f_high);
    let bandwidths = (0..n_mel).map(|i| (edges.1[i] - edges.0[i]) / 2.0).collect();
    Ok(FilterBank {
        scale_kind: ScaleKind::Mel,
        params: ScaleParams::Mel {
            f_low,
            f_high,
            n_mel,
        },
        centers,
        bandwidths,
        shape: FilterShape::Triangle,
        constant_q: n_mel,
        evenly_spaced: 0,
    })
}

/// Left and right triangle feet: neighbouring centers, with the first foot
/// at 0 Hz and the last at the upper bound.
fn triangle_feet(centers: &[f64], f_high: f64) -> (Vec<f64>, Vec<f64>) {
    let n = centers.len();
    let left = (0..n).map(|j| if j == 0 { 0.0 } else { centers[j - 1] }).collect();
    let right = (0..n)
        .map(|j| if j + 1 == n { f_high } else { centers[j + 1] })
        .collect();
    (left, right)
}

/// Filter gains over the `fft_size / 2 + 1` magnitude bins, one row per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalFilterMatrix {
    weights: Vec<f64>,
    /// Half-open range of bins holding nonzero weights, per row.
    support: Vec<(usize, usize)>,
    num_filters: usize,
    num_bins: usize,
    fft_size: usize,
    sample_rate: f64,
}

impl DigitalFilterMatrix {
    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.num_bins..(j + 1) * self.num_bins]
    }

    /// The nonzero slice of row `j` and the bin index it starts at.
    pub fn row_support(&self, j: usize) -> (usize, &[f64]) {
        let (lo, hi) = self.support[j];
        (lo, &self.row(j)[lo..hi])
    }

    pub fn bin_frequency(&self, b: usize) -> f64 {
        b as f64 * self.sample_rate / self.fft_size as f64
    }
}

pub fn digitize(bank: &FilterBank, fft_size: usize, sample_rate: f64) -> Result<DigitalFilterMatrix> {
    if fft_size == 0 || !fft_size.is_power_of_two() {
        return Err(FilterBankError::FftSize(fft_size));
    }
    let nyquist = sample_rate / 2.0;
    if let Some(&max) = bank.centers.iter().max_by(|a, b| a.total_cmp(b)) {
        if max > nyquist {
            return Err(FilterBankError::AboveNyquist { center: max, nyquist });
        }
    }
    let num_bins = fft_size / 2 + 1;
    let num_filters = bank.len();
    let bin_hz = sample_rate / fft_size as f64;
    let mut weights = vec![0.0; num_filters * num_bins];

    match bank.shape {
        FilterShape::Gaussian => {
            for (j, row) in weights.chunks_exact_mut(num_bins).enumerate() {
                let (center, width) = (bank.centers[j], bank.bandwidths[j]);
                let denom = 2.0 * width * width;
                for (b, w) in row.iter_mut().enumerate() {
                    let d = center - b as f64 * bin_hz;
                    let g = (-d * d / denom).exp();
                    if g >= GAUSSIAN_CUTOFF {
                        *w = g;
                    }
                }
            }
        }
        FilterShape::Triangle => {
            let (left, right) = triangle_feet(&bank.centers, bank.params.f_high());
            for (j, row) in weights.chunks_exact_mut(num_bins).enumerate() {
                let (lo, apex, hi) = (left[j], bank.centers[j], right[j]);
                for (b, w) in row.iter_mut().enumerate() {
                    let f = b as f64 * bin_hz;
                    *w = if f == apex {
                        1.0
                    } else if f > lo && f < apex {
                        (f - lo) / (apex - lo)
                    } else if f > apex && f < hi {
                        (hi - f) / (hi - apex)
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    let mut support = Vec::with_capacity(num_filters);
    for (j, row) in weights.chunks_exact(num_bins).enumerate() {
        if !row.iter().any(|&w| w > ROW_THRESHOLD) {
            return Err(FilterBankError::DegenerateFilter { index: j });
        }
        let lo = row.iter().position(|&w| w != 0.0).unwrap_or(0);
        let hi = row.iter().rposition(|&w| w != 0.0).map_or(lo, |i| i + 1);
        support.push((lo, hi));
    }

    Ok(DigitalFilterMatrix {
        weights,
        support,
        num_filters,
        num_bins,
        fft_size,
        sample_rate,
    })
}
