//! Short-time spectra, filter-bank energies and the feature maps built on them.
//!
//! Extraction follows four steps per derived channel: frame and Hann-window
//! the signal and take STFT magnitudes, digitize the filters onto the FFT
//! bins, sum the filter-weighted power per frame, and take the logarithm.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::filterbank::{
    build_mel_scale, build_wavelet_scale, digitize, DigitalFilterMatrix, FilterBank,
    FilterBankError, FilterShape, WaveletScaleParams,
};
use crate::signal_io::{derive_channels, AudioClip, ChannelMode, SignalError};

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
/// Floor applied to normalization standard deviations.
pub const STD_FLOOR: f64 = 1e-6;
/// Half-width of the delta regression window.
pub const DELTA_HALF_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid stft config: {0}")]
    Config(String),
    #[error("signal of {found} samples is shorter than one {needed}-sample window")]
    TooShort { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("feature map is already normalized")]
    AlreadyNormalized,
    #[error("bad feature file magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {0}")]
    Version(u16),
    #[error("unknown feature kind code {0:#04x}")]
    KindCode(u8),
    #[error("feature dimensions {0:?} overflow the payload size")]
    DimOverflow([u32; 3]),
    #[error("truncated feature file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    FilterBank(#[from] FilterBankError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowFunction {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    /// Frame length in seconds.
    pub window: f64,
    /// Frame shift in seconds.
    pub shift: f64,
    pub fft_size: usize,
    #[serde(default)]
    pub window_function: WindowFunction,
}

impl StftConfig {
    /// Picks the smallest power-of-two FFT covering one window at `rate`.
    pub fn new(window: f64, shift: f64, rate: u32) -> Self {
        let samples = (window * f64::from(rate)).round().max(1.0) as usize;
        Self {
            window,
            shift,
            fft_size: samples.next_power_of_two(),
            window_function: WindowFunction::Hann,
        }
    }

    /// 512 ms windows every 171 ms.
    pub fn long_term(rate: u32) -> Self {
        Self::new(0.512, 0.171, rate)
    }

    /// 40 ms windows every 20 ms.
    pub fn short_term(rate: u32) -> Self {
        Self::new(0.040, 0.020, rate)
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.window * f64::from(rate)).round() as usize
    }

    pub fn shift_samples(&self, rate: u32) -> usize {
        (self.shift * f64::from(rate)).round() as usize
    }

    /// `floor(duration / shift)`, evaluated on integer sample counts.
    pub fn num_frames(&self, num_samples: usize, rate: u32) -> usize {
        num_samples / self.shift_samples(rate).max(1)
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        let (win, hop) = (self.window_samples(rate), self.shift_samples(rate));
        if win == 0 || hop == 0 {
            return Err(FeatureError::Config("window and shift must span at least one sample".into()));
        }
        if hop > win {
            return Err(FeatureError::Config(format!("shift {hop} exceeds window {win} samples")));
        }
        if self.fft_size < win {
            return Err(FeatureError::Config(format!(
                "fft size {} is smaller than the {win}-sample window",
                self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(FeatureError::Config(format!("fft size {} is not a power of two", self.fft_size)));
        }
        Ok(())
    }
}

/// STFT magnitudes, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub frame_times: Vec<f64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.magnitudes.ncols()
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reusable framing state for one configuration and sample rate.
pub struct StftPlan {
    config: StftConfig,
    rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(config: StftConfig, rate: u32) -> Result<Self> {
        config.validate(rate)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            window: hann_window(config.window_samples(rate)),
            hop: config.shift_samples(rate),
            config,
            rate,
            fft,
        })
    }

    pub fn magnitude(&self, signal: &[f64]) -> Result<Spectrogram> {
        let win = self.window.len();
        if signal.len() < win {
            return Err(FeatureError::TooShort {
                needed: win,
                found: signal.len(),
            });
        }
        let frames = self.config.num_frames(signal.len(), self.rate);
        let n = self.config.fft_size;
        let bins = n / 2 + 1;
        let mut magnitudes = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, mut row) in magnitudes.outer_iter_mut().enumerate() {
            let start = t * self.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                if let Some(&x) = signal.get(start + i) {
                    buf[i].re = x * w;
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in row.iter_mut().zip(&buf) {
                *m = c.norm();
            }
        }
        let frame_times = (0..frames)
            .map(|t| (t * self.hop) as f64 / f64::from(self.rate))
            .collect();
        Ok(Spectrogram {
            magnitudes,
            frame_times,
            config: self.config,
            sample_rate: self.rate,
        })
    }
}

/// Frames `signal`, applies a Hann window, zero-pads each frame to the FFT
/// size and returns real-FFT magnitudes. Trailing frames that run past the
/// end of the signal are zero-padded, giving `floor(duration / shift)` frames.
pub fn stft_magnitude(signal: &[f64], rate: u32, config: &StftConfig) -> Result<Spectrogram> {
    StftPlan::new(*config, rate)?.magnitude(signal)
}

/// `energy[t, j] = sum_b weight[j, b] * magnitude[t, b]^2`.
pub fn apply_filterbank(spec: &Spectrogram, filt: &DigitalFilterMatrix) -> Result<Array2<f64>> {
    if spec.num_bins() != filt.num_bins() {
        return Err(FeatureError::Shape(format!(
            "spectrogram has {} bins, filter matrix expects {}",
            spec.num_bins(),
            filt.num_bins()
        )));
    }
    let frames = spec.num_frames();
    let mut energies = Array2::zeros((frames, filt.num_filters()));
    for (t, mags) in spec.magnitudes.outer_iter().enumerate() {
        let power: Vec<f64> = mags.iter().map(|m| m * m).collect();
        for j in 0..filt.num_filters() {
            let (start, weights) = filt.row_support(j);
            energies[[t, j]] = weights
                .iter()
                .zip(&power[start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
    Ok(energies)
}

/// `ln(max(energy, 1e-10))`.
pub fn log_compress(energies: &Array2<f64>) -> Array2<f64> {
    energies.mapv(|e| e.max(LOG_FLOOR).ln())
}

/// Regression deltas along the frame axis with edge frames replicated.
pub fn deltas(features: ArrayView2<f64>) -> Array2<f64> {
    let frames = features.nrows();
    let n = DELTA_HALF_WINDOW as isize;
    let norm = 2.0 * (1..=n).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Array2::zeros(features.raw_dim());
    if frames == 0 {
        return out;
    }
    let clamp = |t: isize| t.clamp(0, frames as isize - 1) as usize;
    for t in 0..frames as isize {
        let mut row = out.row_mut(t as usize);
        for k in 1..=n {
            let fwd = features.row(clamp(t + k));
            let back = features.row(clamp(t - k));
            row.zip_mut_with(&(&fwd - &back), |o, d| *o += k as f64 * d);
        }
        row.mapv_inplace(|v| v / norm);
    }
    out
}

// ---------------------------------------------------------------------------
// Feature maps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Scalogram,
    Fbank,
    FbankLong,
    /// Generated by the augmentation scheme.
    Synthetic,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            Self::Scalogram => 0,
            Self::Fbank => 1,
            Self::FbankLong => 2,
            Self::Synthetic => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Scalogram,
            1 => Self::Fbank,
            2 => Self::FbankLong,
            3 => Self::Synthetic,
            _ => return None,
        })
    }
}

/// A `frames x channels x filters` feature array.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array3<f64>,
    pub kind: FeatureKind,
    pub channel_mode: ChannelMode,
    pub normalized: bool,
    /// Hash of the extraction configuration; zero when unknown.
    pub fingerprint: u64,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>, kind: FeatureKind, channel_mode: ChannelMode) -> Self {
        Self {
            data,
            kind,
            channel_mode,
            normalized: false,
            fingerprint: 0,
        }
    }

    /// `(frames, channels, filters)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rounds every value to the nearest `f32`, the precision of feature files.
    pub fn quantize(&mut self) {
        self.data.mapv_inplace(|x| f64::from(x as f32));
    }
}

/// Hash of a serializable configuration, used as a feature fingerprint.
pub fn fingerprint_of<T: Serialize>(config: &T) -> u64 {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Which feature to extract and with what settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureConfig {
    Scalogram {
        scale: WaveletScaleParams,
        window: f64,
        shift: f64,
    },
    Fbank {
        window: f64,
        shift: f64,
        n_mel: usize,
        f_low: f64,
        f_high: f64,
        with_deltas: bool,
    },
    FbankLong {
        window: f64,
        shift: f64,
        n_mel: usize,
        f_low: f64,
        f_high: f64,
    },
}

impl FeatureConfig {
    /// 290-filter wavelet scalogram on 512/171 ms frames.
    pub fn reference_scalogram() -> Self {
        Self::Scalogram {
            scale: WaveletScaleParams::reference(),
            window: 0.512,
            shift: 0.171,
        }
    }

    /// 128-band log Mel energies on 40/20 ms frames, optionally with deltas.
    pub fn reference_fbank(with_deltas: bool) -> Self {
        Self::Fbank {
            window: 0.040,
            shift: 0.020,
            n_mel: 128,
            f_low: 0.0,
            f_high: 24_000.0,
            with_deltas,
        }
    }

    /// Mel energies with the scalogram's frames and filter count.
    pub fn reference_long_fbank() -> Self {
        Self::FbankLong {
            window: 0.512,
            shift: 0.171,
            n_mel: 290,
            f_low: 0.0,
            f_high: 24_000.0,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::Scalogram { .. } => FeatureKind::Scalogram,
            Self::Fbank { .. } => FeatureKind::Fbank,
            Self::FbankLong { .. } => FeatureKind::FbankLong,
        }
    }

    pub fn bank(&self) -> Result<FilterBank> {
        Ok(match *self {
            Self::Scalogram { scale, .. } => build_wavelet_scale(&scale)?,
            Self::Fbank {
                n_mel, f_low, f_high, ..
            }
            | Self::FbankLong {
                n_mel, f_low, f_high, ..
            } => build_mel_scale(f_low, f_high, n_mel)?,
        })
    }

    pub fn stft(&self, rate: u32) -> StftConfig {
        match *self {
            Self::Scalogram { window, shift, .. }
            | Self::Fbank { window, shift, .. }
            | Self::FbankLong { window, shift, .. } => StftConfig::new(window, shift, rate),
        }
    }
}

/// Digitized filters and STFT plan for one configuration at one sample rate.
/// Shareable across threads; extraction of one clip is pure.
pub struct FeatureExtractor {
    config: FeatureConfig,
    plan: StftPlan,
    filters: DigitalFilterMatrix,
    rate: u32,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, rate: u32) -> Result<Self> {
        let stft = config.stft(rate);
        let plan = StftPlan::new(stft, rate)?;
        let filters = digitize(&config.bank()?, stft.fft_size, f64::from(rate))?;
        Ok(Self {
            config,
            plan,
            filters,
            rate,
        })
    }

    /// Builds an extractor around an explicit filter bank (e.g. triangle
    /// filters on the wavelet scale, or a permuted bank).
    pub fn with_bank(config: FeatureConfig, bank: &FilterBank, rate: u32) -> Result<Self> {
        let stft = config.stft(rate);
        let plan = StftPlan::new(stft, rate)?;
        let filters = digitize(bank, stft.fft_size, f64::from(rate))?;
        Ok(Self {
            config,
            plan,
            filters,
            rate,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filters(&self) -> &DigitalFilterMatrix {
        &self.filters
    }

    /// Log filter energies of one mono signal, `frames x filters`.
    pub fn log_energies(&self, signal: &[f64]) -> Result<Array2<f64>> {
        let spec = self.plan.magnitude(signal)?;
        Ok(log_compress(&apply_filterbank(&spec, &self.filters)?))
    }

    pub fn extract(&self, clip: &AudioClip, mode: ChannelMode) -> Result<FeatureMap> {
        if clip.sample_rate() != self.rate {
            return Err(FeatureError::Shape(format!(
                "clip rate {} Hz does not match extractor rate {} Hz",
                clip.sample_rate(),
                self.rate
            )));
        }
        let pair = derive_channels(clip, mode)?;
        let (a, b) = rayon::join(|| self.log_energies(&pair.a), || self.log_energies(&pair.b));
        let mut channels = vec![a?, b?];
        if let FeatureConfig::Fbank {
            with_deltas: true, ..
        } = self.config
        {
            let d: Vec<_> = channels.iter().map(|c| deltas(c.view())).collect();
            let dd: Vec<_> = d.iter().map(|c| deltas(c.view())).collect();
            channels.extend(d);
            channels.extend(dd);
        }
        let views: Vec<_> = channels.iter().map(|c| c.view()).collect();
        let data = ndarray::stack(Axis(1), &views).expect("channels share a shape");
        let mut map = FeatureMap::new(data, self.config.kind(), mode);
        map.fingerprint = fingerprint_of(&(self.config, mode, self.rate));
        map.quantize();
        Ok(map)
    }
}

/// Gaussian wavelet-scale scalogram of a stereo clip, `(frames, 2, J)`.
pub fn extract_scalogram(
    clip: &AudioClip,
    mode: ChannelMode,
    params: &WaveletScaleParams,
    stft: &StftConfig,
) -> Result<FeatureMap> {
    let config = FeatureConfig::Scalogram {
        scale: *params,
        window: stft.window,
        shift: stft.shift,
    };
    let bank = build_wavelet_scale(params)?.with_shape(FilterShape::Gaussian);
    let rate = clip.sample_rate();
    let plan = StftPlan::new(*stft, rate)?;
    let filters = digitize(&bank, stft.fft_size, f64::from(rate))?;
    FeatureExtractor {
        config,
        plan,
        filters,
        rate,
    }
    .extract(clip, mode)
}

/// Log Mel energies on 40/20 ms frames up to the Nyquist frequency; with
/// deltas the channels are `[a, b, da, db, dda, ddb]`.
pub fn extract_fbank(clip: &AudioClip, mode: ChannelMode, n_mel: usize, with_deltas: bool) -> Result<FeatureMap> {
    let config = FeatureConfig::Fbank {
        window: 0.040,
        shift: 0.020,
        n_mel,
        f_low: 0.0,
        f_high: f64::from(clip.sample_rate()) / 2.0,
        with_deltas,
    };
    FeatureExtractor::new(config, clip.sample_rate())?.extract(clip, mode)
}

/// 290 Mel filters on the 512/171 ms long-term frames.
pub fn extract_longterm_fbank(clip: &AudioClip, mode: ChannelMode) -> Result<FeatureMap> {
    let config = FeatureConfig::FbankLong {
        window: 0.512,
        shift: 0.171,
        n_mel: 290,
        f_low: 0.0,
        f_high: f64::from(clip.sample_rate()) / 2.0,
    };
    FeatureExtractor::new(config, clip.sample_rate())?.extract(clip, mode)
}

// ---------------------------------------------------------------------------
// Normalization

/// Per (channel, filter) statistics over every frame of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: usize,
    pub filters: usize,
    /// Row-major `channels x filters`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub corpus_id: String,
}

impl NormStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Two-pass fit: sums and sums of squares accumulated per map in corpus order.
pub fn fit_normalization(corpus: &[FeatureMap], corpus_id: &str) -> Result<NormStats> {
    let first = corpus
        .first()
        .ok_or_else(|| FeatureError::Shape("normalization corpus is empty".into()))?;
    let (_, c, n) = first.shape();
    let mut sum = Array2::<f64>::zeros((c, n));
    let mut sum_sq = Array2::<f64>::zeros((c, n));
    let mut count = 0usize;
    for map in corpus {
        let (l, mc, mn) = map.shape();
        if (mc, mn) != (c, n) {
            return Err(FeatureError::Shape(format!(
                "corpus maps have (c, n) = ({c}, {n}) and ({mc}, {mn})"
            )));
        }
        for frame in map.data.outer_iter() {
            sum += &frame;
            sum_sq.zip_mut_with(&frame, |s, &x| *s += x * x);
        }
        count += l;
    }
    if count == 0 {
        return Err(FeatureError::Shape("normalization corpus has no frames".into()));
    }
    let total = count as f64;
    let mean = &sum / total;
    // second pass for a numerically stable variance
    let mut sq_dev = Array2::<f64>::zeros((c, n));
    for map in corpus {
        for frame in map.data.outer_iter() {
            ndarray::Zip::from(&mut sq_dev)
                .and(&frame)
                .and(&mean)
                .for_each(|s, &x, &m| *s += (x - m) * (x - m));
        }
    }
    let std = sq_dev.mapv(|v| (v / total).sqrt().max(STD_FLOOR));
    Ok(NormStats {
        channels: c,
        filters: n,
        mean: mean.into_raw_vec(),
        std: std.into_raw_vec(),
        corpus_id: corpus_id.to_string(),
    })
}

pub fn apply_normalization(map: &FeatureMap, stats: &NormStats) -> Result<FeatureMap> {
    if map.normalized {
        return Err(FeatureError::AlreadyNormalized);
    }
    let (_, c, n) = map.shape();
    if (c, n) != (stats.channels, stats.filters) {
        return Err(FeatureError::Shape(format!(
            "map has (c, n) = ({c}, {n}), stats cover ({}, {})",
            stats.channels, stats.filters
        )));
    }
    let mean = ArrayView2::from_shape((c, n), &stats.mean).expect("stats shape checked");
    let std = ArrayView2::from_shape((c, n), &stats.std).expect("stats shape checked");
    let mut out = map.clone();
    for mut frame in out.data.outer_iter_mut() {
        ndarray::Zip::from(&mut frame)
            .and(&mean)
            .and(&std)
            .for_each(|x, &m, &s| *x = (*x - m) / s);
    }
    out.normalized = true;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binary format
//
//   "SCLF" | version u16 | kind u8 | L, c, n u32 | f32 payload | crc32
//
// All integers little endian. The kind byte carries the feature kind in its
// low nibble, bit 4 for ave-diff channels and bit 5 for normalized maps. The
// checksum covers every preceding byte.

pub const FEATURE_MAGIC: [u8; 4] = *b"SCLF";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 12;
const FLAG_AVE_DIFF: u8 = 0x10;
const FLAG_NORMALIZED: u8 = 0x20;

pub fn encode_features(map: &FeatureMap) -> Vec<u8> {
    let (l, c, n) = map.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * l * c * n + 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    let mut kind = map.kind.code();
    if map.channel_mode == ChannelMode::AveDiff {
        kind |= FLAG_AVE_DIFF;
    }
    if map.normalized {
        kind |= FLAG_NORMALIZED;
    }
    out.push(kind);
    for d in [l, c, n] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    // standard layout iterates frame-major, then channel, then filter
    for &x in map.data.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(FeatureError::Truncated {
            expected: HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != FEATURE_MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(FeatureError::Version(version));
    }
    let kind_byte = bytes[6];
    let kind = FeatureKind::from_code(kind_byte & 0x0F).ok_or(FeatureError::KindCode(kind_byte))?;
    let dim = |i: usize| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().expect("4 bytes"));
    let dims = [dim(0), dim(1), dim(2)];
    let payload = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&p| p <= isize::MAX as usize - HEADER_LEN - 4)
        .ok_or(FeatureError::DimOverflow(dims))?;
    let expected = HEADER_LEN + payload + 4;
    if bytes.len() < expected {
        return Err(FeatureError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[..HEADER_LEN + payload];
    let stored = u32::from_le_bytes(bytes[HEADER_LEN + payload..expected].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FeatureError::Checksum { stored, computed });
    }
    let values: Vec<f64> = body[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect();
    let data = Array3::from_shape_vec((dims[0] as usize, dims[1] as usize, dims[2] as usize), values)
        .expect("payload length matches dims");
    Ok(FeatureMap {
        data,
        kind,
        channel_mode: if kind_byte & FLAG_AVE_DIFF != 0 {
            ChannelMode::AveDiff
        } else {
            ChannelMode::LeftRight
        },
        normalized: kind_byte & FLAG_NORMALIZED != 0,
        fingerprint: 0,
    })
}

/// Writes `map` as a feature file. Values are stored as `f32`; maps produced
/// by the extractors are already on the `f32` grid and round-trip exactly.
pub fn save_features(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(map))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_features(&fs::read(path)?)
}

/// Frames of a map flattened over `(channel, filter)`, `frames x (c * n)`.
pub fn flatten_frames(map: &FeatureMap) -> Array2<f64> {
    let (l, c, n) = map.shape();
    map.data
        .as_standard_layout()
        .into_owned()
        .into_shape((l, c * n))
        .expect("standard layout")
}

/// Frames `[start, end)` of a map.
pub fn frame_range(map: &FeatureMap, start: usize, end: usize) -> FeatureMap {
    FeatureMap {
        data: map.data.slice(s![start..end, .., ..]).to_owned(),
        ..map.clone()
    }
}
