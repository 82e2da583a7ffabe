//! Brute-force references for the STFT-domain scalogram.
//!
//! A Gaussian passband `exp(-(f - λ)^2 / 2δ^2)` has the closed-form time
//! response `sqrt(2π) δ exp(-2π^2 δ^2 t^2) exp(i 2π λ t)`: a complex tone under
//! a Gaussian envelope with time standard deviation `1 / (2π δ)`. Convolving a
//! signal with that response directly, sample by sample, gives filter
//! energies that do not depend on the STFT framing or on `apply_filterbank`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError, FeatureMap, StftConfig};
use crate::filterbank::{self, FilterBankError, WaveletScaleParams};
use crate::signal_io::AudioClip;

/// Envelope standard deviations kept on each side of the wavelet center.
pub const TRUNCATION_STDS: f64 = 4.0;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("center {center} Hz must lie below the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { center: f64, nyquist: f64 },
    #[error("signal of {found} samples is shorter than the {needed}-tap wavelet")]
    TooShort { needed: usize, found: usize },
    #[error("filter index {index} out of range for {len} filters")]
    FilterIndex { index: usize, len: usize },
    #[error("expected a mono clip, got {0} channels")]
    NotMono(usize),
    #[error("need at least {needed} frames, map has {found}")]
    TooFewFrames { needed: usize, found: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    FilterBank(#[from] FilterBankError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomainWavelet {
    /// Taps for `t = -half_len .. =half_len` samples.
    pub taps: Vec<Complex64>,
    pub center: f64,
    pub bandwidth: f64,
    pub sample_rate: f64,
    pub half_len: usize,
}

impl TimeDomainWavelet {
    /// Half-width of the truncated support in seconds.
    pub fn support(&self) -> f64 {
        self.half_len as f64 / self.sample_rate
    }

    /// Envelope standard deviation in seconds.
    pub fn envelope_std(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.bandwidth)
    }

    pub fn tap_at(&self, offset: isize) -> Complex64 {
        self.taps[(offset + self.half_len as isize) as usize]
    }
}

/// Sampled impulse response of the Gaussian passband at `center` Hz with
/// standard deviation `bandwidth` Hz, scaled by `1 / rate` so that its DFT
/// approximates the passband gain itself.
pub fn synthesize_wavelet(center: f64, bandwidth: f64, rate: f64) -> Result<TimeDomainWavelet> {
    if center >= rate / 2.0 {
        return Err(OracleError::AboveNyquist {
            center,
            nyquist: rate / 2.0,
        });
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let sigma_t = 1.0 / (two_pi * bandwidth);
    let half_len = (TRUNCATION_STDS * sigma_t * rate).floor() as usize;
    let gain = (two_pi).sqrt() * bandwidth / rate;
    let taps = (-(half_len as isize)..=half_len as isize)
        .map(|n| {
            let t = n as f64 / rate;
            let envelope = gain * (-t * t / (2.0 * sigma_t * sigma_t)).exp();
            Complex64::from_polar(envelope, two_pi * center * t)
        })
        .collect();
    Ok(TimeDomainWavelet {
        taps,
        center,
        bandwidth,
        sample_rate: rate,
        half_len,
    })
}

/// Direct convolution `y[t] = sum_m h[m] x[t - m]`, then the mean of `|y|^2`
/// over each STFT frame interval (clipped to the signal).
pub fn convolve_energy(signal: &[f64], wavelet: &TimeDomainWavelet, framing: &StftConfig) -> Result<Vec<f64>> {
    let taps = wavelet.taps.len();
    if signal.len() <= taps {
        return Err(OracleError::TooShort {
            needed: taps,
            found: signal.len(),
        });
    }
    let rate = wavelet.sample_rate.round() as u32;
    let half = wavelet.half_len as isize;
    let n = signal.len() as isize;
    let power: Vec<f64> = (0..n)
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            let lo = (t - n + 1).max(-half);
            let hi = t.min(half);
            for m in lo..=hi {
                acc += wavelet.taps[(m + half) as usize] * signal[(t - m) as usize];
            }
            acc.norm_sqr()
        })
        .collect();

    let hop = framing.shift_samples(rate);
    let win = framing.window_samples(rate);
    let frames = framing.num_frames(signal.len(), rate);
    Ok((0..frames)
        .map(|f| {
            let start = f * hop;
            let end = (start + win).min(signal.len());
            power[start..end].iter().sum::<f64>() / (end - start) as f64
        })
        .collect())
}

/// A scale, a framing and a sample rate shared by both extraction routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub scale: WaveletScaleParams,
    pub stft: StftConfig,
    pub rate: u32,
}

impl OracleConfig {
    pub fn new(scale: WaveletScaleParams, window: f64, shift: f64, rate: u32) -> Self {
        Self {
            scale,
            stft: StftConfig::new(window, shift, rate),
            rate,
        }
    }

    /// The long-term scalogram configuration at 48 kHz.
    pub fn reference() -> Self {
        Self::new(WaveletScaleParams::reference(), 0.512, 0.171, 48_000)
    }

    /// A 22-filter scale at 8 kHz, small enough to convolve every filter.
    pub fn desk() -> Self {
        Self::new(WaveletScaleParams::new(2800.0, 0.5, 0.05, 4), 0.128, 0.064, 8000)
    }

    /// Frames whose window, widened by `margin` samples on each side, lies
    /// inside the signal.
    pub fn interior_frames(&self, num_samples: usize, margin: usize) -> std::ops::Range<usize> {
        let hop = self.stft.shift_samples(self.rate);
        let win = self.stft.window_samples(self.rate);
        let frames = self.stft.num_frames(num_samples, self.rate);
        let first = margin.div_ceil(hop);
        let last = (0..frames)
            .rev()
            .find(|&f| f * hop + win + margin <= num_samples)
            .map_or(0, |f| f + 1);
        first..last.max(first)
    }
}

/// Per-frame energy trajectories of one filter along both routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComparison {
    pub filter_index: usize,
    /// Interior-frame energies from STFT magnitudes, mean-normalized.
    pub stft_path: Vec<f64>,
    /// Interior-frame energies from direct convolution, mean-normalized.
    pub time_path: Vec<f64>,
    pub max_rel_err: f64,
    pub frames_compared: usize,
    /// Set when either route is at the numerical floor and no ratio exists.
    pub at_floor: bool,
}

/// The JSON record emitted for one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub filter_index: usize,
    pub max_rel_err: f64,
    pub frames_compared: usize,
}

impl PathComparison {
    pub fn report(&self) -> OracleReport {
        OracleReport {
            filter_index: self.filter_index,
            max_rel_err: self.max_rel_err,
            frames_compared: self.frames_compared,
        }
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string(&self.report()).expect("report serializes")
    }
}

fn mono(clip: &AudioClip) -> Result<&[f64]> {
    if clip.num_channels() != 1 {
        return Err(OracleError::NotMono(clip.num_channels()));
    }
    Ok(clip.channel(0))
}

/// STFT-route energy of one digitized filter row: weights times squared
/// magnitudes, summed per frame.
fn stft_route(signal: &[f64], config: &OracleConfig, row: &[f64]) -> Result<Vec<f64>> {
    let spec = features::stft_magnitude(signal, config.rate, &config.stft)?;
    Ok(spec
        .magnitudes
        .outer_iter()
        .map(|mags| row.iter().zip(mags).map(|(w, m)| w * m * m).sum())
        .collect())
}

const FLOOR: f64 = 1e-20;

pub fn compare_paths(clip: &AudioClip, filter_index: usize, config: &OracleConfig) -> Result<PathComparison> {
    let signal = mono(clip)?;
    let bank = filterbank::build_wavelet_scale(&config.scale)?;
    if filter_index >= bank.len() {
        return Err(OracleError::FilterIndex {
            index: filter_index,
            len: bank.len(),
        });
    }
    let rate = f64::from(config.rate);
    let digital = filterbank::digitize(&bank, config.stft.fft_size, rate)?;
    let wavelet = synthesize_wavelet(bank.centers[filter_index], bank.bandwidths[filter_index], rate)?;

    let stft = stft_route(signal, config, digital.row(filter_index))?;
    let time = convolve_energy(signal, &wavelet, &config.stft)?;
    let interior = config.interior_frames(signal.len(), wavelet.half_len);
    let stft = stft[interior.clone()].to_vec();
    let time = time[interior].to_vec();
    let frames_compared = stft.len();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (ms, mt) = (mean(&stft), mean(&time));
    if frames_compared == 0 || ms <= FLOOR || mt <= FLOOR {
        return Ok(PathComparison {
            filter_index,
            stft_path: stft,
            time_path: time,
            max_rel_err: 0.0,
            frames_compared,
            at_floor: true,
        });
    }
    let stft: Vec<f64> = stft.iter().map(|e| e / ms).collect();
    let time: Vec<f64> = time.iter().map(|e| e / mt).collect();
    let max_rel_err = stft
        .iter()
        .zip(&time)
        .map(|(s, t)| (s - t).abs() / t.max(FLOOR))
        .fold(0.0, f64::max);
    Ok(PathComparison {
        filter_index,
        stft_path: stft,
        time_path: time,
        max_rel_err,
        frames_compared,
        at_floor: false,
    })
}

/// Per-frame dominant filter along both routes, over every filter of the scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantAgreement {
    pub stft_argmax: Vec<usize>,
    pub time_argmax: Vec<usize>,
    pub frames_compared: usize,
    pub agreeing: usize,
}

impl DominantAgreement {
    pub fn fraction(&self) -> f64 {
        if self.frames_compared == 0 {
            return 1.0;
        }
        self.agreeing as f64 / self.frames_compared as f64
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    // lowest index wins ties
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn dominant_filter_agreement(clip: &AudioClip, config: &OracleConfig) -> Result<DominantAgreement> {
    let signal = mono(clip)?;
    let bank = filterbank::build_wavelet_scale(&config.scale)?;
    let rate = f64::from(config.rate);
    let digital = filterbank::digitize(&bank, config.stft.fft_size, rate)?;
    let spec = features::stft_magnitude(signal, config.rate, &config.stft)?;

    let mut longest = 0;
    let mut stft_energy = Vec::with_capacity(bank.len());
    let mut time_energy = Vec::with_capacity(bank.len());
    for j in 0..bank.len() {
        let row = digital.row(j);
        stft_energy.push(
            spec.magnitudes
                .outer_iter()
                .map(|mags| row.iter().zip(mags).map(|(w, m)| w * m * m).sum::<f64>())
                .collect::<Vec<_>>(),
        );
        let wavelet = synthesize_wavelet(bank.centers[j], bank.bandwidths[j], rate)?;
        longest = longest.max(wavelet.half_len);
        time_energy.push(convolve_energy(signal, &wavelet, &config.stft)?);
    }

    let interior = config.interior_frames(signal.len(), longest);
    let stft_argmax: Vec<usize> = interior
        .clone()
        .map(|t| argmax(stft_energy.iter().map(|e| e[t])))
        .collect();
    let time_argmax: Vec<usize> = interior
        .map(|t| argmax(time_energy.iter().map(|e| e[t])))
        .collect();
    let agreeing = stft_argmax.iter().zip(&time_argmax).filter(|(a, b)| a == b).count();
    Ok(DominantAgreement {
        frames_compared: stft_argmax.len(),
        stft_argmax,
        time_argmax,
        agreeing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSimilarity {
    pub mean: f64,
    pub pairs: usize,
    /// Pairs skipped because one of the frames has zero norm.
    pub excluded: usize,
}

/// Mean cosine similarity between frames `t` and `t + stride`, with each
/// frame flattened over channels and filters.
pub fn adjacent_cosine_similarity(map: &FeatureMap, stride: usize) -> Result<CosineSimilarity> {
    let flat = features::flatten_frames(map);
    let frames = flat.nrows();
    if stride == 0 || frames < stride + 1 {
        return Err(OracleError::TooFewFrames {
            needed: stride.max(1) + 1,
            found: frames,
        });
    }
    let norms: Vec<f64> = flat.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let (mut sum, mut pairs, mut excluded) = (0.0, 0, 0);
    for t in 0..frames - stride {
        let (na, nb) = (norms[t], norms[t + stride]);
        if na == 0.0 || nb == 0.0 {
            excluded += 1;
            continue;
        }
        sum += flat.row(t).dot(&flat.row(t + stride)) / (na * nb);
        pairs += 1;
    }
    Ok(CosineSimilarity {
        mean: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        pairs,
        excluded,
    })
}
