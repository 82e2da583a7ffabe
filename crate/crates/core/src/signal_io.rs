//! Audio ingestion: PCM WAV decoding, channel-pair derivation, seeded test
//! signals and dataset manifests.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed wav: {0}")]
    Format(String),
    #[error("unsupported wav encoding: {0}")]
    Unsupported(String),
    #[error("truncated wav data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("expected {expected} channel(s), clip has {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error("frequency {freq} Hz is at or above the Nyquist limit {nyquist} Hz")]
    Aliasing { freq: f64, nyquist: f64 },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("duplicate manifest id '{0}'")]
    Duplicate(String),
    #[error("manifest schema error at line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("invalid synthetic source '{0}'")]
    SyntheticSpec(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Multi-channel audio at its native sample rate. Amplitudes live in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidClip("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(SignalError::InvalidClip(format!(
                "clip must have 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(SignalError::InvalidClip("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(SignalError::InvalidClip("non-finite amplitude".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![left, right], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// The raw left and right channels.
    LeftRight,
    /// Mean and half-difference of the two channels.
    #[default]
    AveDiff,
}

impl std::str::FromStr for ChannelMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "left-right" => Ok(Self::LeftRight),
            "ave-diff" => Ok(Self::AveDiff),
            other => Err(format!("unknown channel mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub mode: ChannelMode,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn derive_channels(clip: &AudioClip, mode: ChannelMode) -> Result<ChannelPair> {
    if clip.num_channels() != 2 {
        return Err(SignalError::ChannelCount {
            expected: 2,
            found: clip.num_channels(),
        });
    }
    let (l, r) = (clip.channel(0), clip.channel(1));
    let (a, b) = match mode {
        ChannelMode::LeftRight => (l.to_vec(), r.to_vec()),
        ChannelMode::AveDiff => l
            .iter()
            .zip(r)
            .map(|(&l, &r)| ((l + r) / 2.0, (l - r) / 2.0))
            .unzip(),
    };
    Ok(ChannelPair { mode, a, b })
}

// ---------------------------------------------------------------------------
// WAV

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes)
}

/// Decodes an in-memory RIFF/WAVE file holding 16- or 24-bit integer PCM.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(SignalError::Format("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(SignalError::Format(format!(
            "bad magic {:?}, expected RIFF",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(SignalError::Format("missing WAVE form type".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(SignalError::Format("fmt chunk too short".into()));
                }
                let c = &bytes[body..];
                let mut format = le_u16(&c[0..2]);
                if format == WAVE_FORMAT_EXTENSIBLE && size >= 40 && body + 26 <= bytes.len() {
                    // sub-format GUID starts with the actual format tag
                    format = le_u16(&c[24..26]);
                }
                fmt = Some((format, le_u16(&c[2..4]), le_u32(&c[4..8]), le_u16(&c[14..16])));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| SignalError::Format("data chunk before fmt chunk".into()))?;
                if format != WAVE_FORMAT_PCM {
                    return Err(SignalError::Unsupported(format!("format tag {format}")));
                }
                if bits != 16 && bits != 24 {
                    return Err(SignalError::Unsupported(format!("{bits}-bit samples")));
                }
                if channels == 0 || channels > 2 {
                    return Err(SignalError::Unsupported(format!("{channels} channels")));
                }
                if rate == 0 {
                    return Err(SignalError::Format("zero sample rate".into()));
                }
                let found = bytes.len() - body;
                if found < size {
                    return Err(SignalError::Truncated {
                        expected: size,
                        found,
                    });
                }
                return decode_pcm(&bytes[body..body + size], channels as usize, rate, bits);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    if fmt.is_none() {
        Err(SignalError::Format("no fmt chunk".into()))
    } else {
        Err(SignalError::Format("no data chunk".into()))
    }
}

fn decode_pcm(data: &[u8], channels: usize, rate: u32, bits: u16) -> Result<AudioClip> {
    let width = usize::from(bits / 8);
    let frame = width * channels;
    if data.len() % frame != 0 {
        let expected = data.len().div_ceil(frame) * frame;
        return Err(SignalError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let frames = data.len() / frame;
    let scale = f64::from(1u32 << (bits - 1));
    let mut out = vec![Vec::with_capacity(frames); channels];
    for chunk in data.chunks_exact(frame) {
        for (ch, sample) in chunk.chunks_exact(width).enumerate() {
            let v = match width {
                2 => i32::from(i16::from_le_bytes([sample[0], sample[1]])),
                // sign-extend via the top byte
                _ => i32::from_le_bytes([0, sample[0], sample[1], sample[2]]) >> 8,
            };
            out[ch].push(f64::from(v) / scale);
        }
    }
    AudioClip::new(out, rate)
}

/// Encodes a clip as integer PCM. Amplitudes are clamped to the representable
/// range and rounded to the nearest code.
pub fn encode_wav(clip: &AudioClip, bits: u16) -> Result<Vec<u8>> {
    if bits != 16 && bits != 24 {
        return Err(SignalError::Unsupported(format!("{bits}-bit samples")));
    }
    let width = usize::from(bits / 8);
    let channels = clip.num_channels();
    let data_len = clip.len() * width * channels;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&(channels as u16).to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    let block = (width * channels) as u32;
    out.extend_from_slice(&(clip.sample_rate() * block).to_le_bytes());
    out.extend_from_slice(&(block as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let scale = f64::from(1u32 << (bits - 1));
    let (lo, hi) = (-scale, scale - 1.0);
    for i in 0..clip.len() {
        for ch in clip.channels() {
            let code = (ch[i] * scale).round().clamp(lo, hi) as i32;
            out.extend_from_slice(&code.to_le_bytes()[..width]);
        }
    }
    Ok(out)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, bits: u16) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, bits)?;
    let mut f = fs::File::create(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Synthetic signals

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Tone,
    /// Linear sweep from 0 Hz up to `freq` over the clip.
    Chirp,
    WhiteNoise,
    Silence,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tone" => Ok(Self::Tone),
            "chirp" => Ok(Self::Chirp),
            "white-noise" | "noise" => Ok(Self::WhiteNoise),
            "silence" => Ok(Self::Silence),
            other => Err(format!("unknown signal kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub freq: f64,
    pub duration: f64,
    pub rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, freq: f64, duration: f64, rate: u32, seed: u64) -> Self {
        Self {
            kind,
            freq,
            duration,
            rate,
            seed,
        }
    }

    /// Parses `synth:<kind>:<freq>:<duration>:<rate>:<seed>`.
    pub fn parse(source: &str) -> Result<Self> {
        let bad = || SignalError::SyntheticSpec(source.to_string());
        let rest = source.strip_prefix("synth:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            kind: parts[0].parse().map_err(|_| bad())?,
            freq: parts[1].parse().map_err(|_| bad())?,
            duration: parts[2].parse().map_err(|_| bad())?,
            rate: parts[3].parse().map_err(|_| bad())?,
            seed: parts[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Mono test signal. Deterministic in `spec`.
pub fn synth_signal(spec: &SynthSpec) -> Result<AudioClip> {
    let rate = f64::from(spec.rate);
    if matches!(spec.kind, SynthKind::Tone | SynthKind::Chirp) && spec.freq >= rate / 2.0 {
        return Err(SignalError::Aliasing {
            freq: spec.freq,
            nyquist: rate / 2.0,
        });
    }
    if !(spec.duration >= 0.0) || !spec.duration.is_finite() {
        return Err(SignalError::InvalidClip(format!("duration {}", spec.duration)));
    }
    let n = (spec.duration * rate).round() as usize;
    let two_pi = 2.0 * std::f64::consts::PI;
    let samples: Vec<f64> = match spec.kind {
        SynthKind::Silence => vec![0.0; n],
        SynthKind::Tone => (0..n)
            .map(|i| (two_pi * spec.freq * i as f64 / rate).sin())
            .collect(),
        SynthKind::Chirp => {
            let sweep = spec.freq / spec.duration.max(f64::MIN_POSITIVE);
            (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    (std::f64::consts::PI * sweep * t * t).sin()
                })
                .collect()
        }
        SynthKind::WhiteNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    };
    AudioClip::mono(samples, spec.rate)
}

/// Stereo clip for a synthetic manifest source: the left channel uses the
/// spec's seed and the right channel uses `seed + 1`.
pub fn synth_stereo(spec: &SynthSpec) -> Result<AudioClip> {
    let left = synth_signal(spec)?;
    let right = synth_signal(&SynthSpec {
        seed: spec.seed.wrapping_add(1),
        ..*spec
    })?;
    AudioClip::stereo(
        left.into_channels().remove(0),
        right.into_channels().remove(0),
        spec.rate,
    )
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Source {
    File(PathBuf),
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: Source,
    pub scene_label: String,
    pub city_label: String,
    pub split: SplitTag,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub scene_vocabulary: Vec<String>,
    pub city_vocabulary: Vec<String>,
}

const MANIFEST_HEADER: [&str; 4] = ["id", "source", "scene_label", "city_label"];

impl DatasetManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut scenes = Vec::new();
        let mut cities = Vec::new();
        for e in &entries {
            if !seen.insert(e.id.clone()) {
                return Err(SignalError::Duplicate(e.id.clone()));
            }
            if !scenes.contains(&e.scene_label) {
                scenes.push(e.scene_label.clone());
            }
            if !cities.contains(&e.city_label) {
                cities.push(e.city_label.clone());
            }
        }
        Ok(Self {
            entries,
            scene_vocabulary: scenes,
            city_vocabulary: cities,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scene_index(&self, label: &str) -> Option<usize> {
        self.scene_vocabulary.iter().position(|s| s == label)
    }

    pub fn city_index(&self, label: &str) -> Option<usize> {
        self.city_vocabulary.iter().position(|s| s == label)
    }

    pub fn scene_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.scene_index(&e.scene_label).expect("vocabulary built from entries"))
            .collect()
    }

    pub fn city_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.city_index(&e.city_label).expect("vocabulary built from entries"))
            .collect()
    }

    /// Entries carrying the given split tag, in file order.
    pub fn with_split(&self, tag: SplitTag) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == tag)
    }

    pub fn to_tsv(&self) -> String {
        let with_split = self.entries.iter().any(|e| e.split != SplitTag::Train);
        let mut out = MANIFEST_HEADER.join("\t");
        if with_split {
            out.push_str("\tsplit");
        }
        out.push('\n');
        for e in &self.entries {
            let source = match &e.source {
                Source::File(p) => p.display().to_string(),
                Source::Synthetic(s) => format!(
                    "synth:{}:{}:{}:{}:{}",
                    match s.kind {
                        SynthKind::Tone => "tone",
                        SynthKind::Chirp => "chirp",
                        SynthKind::WhiteNoise => "white-noise",
                        SynthKind::Silence => "silence",
                    },
                    s.freq,
                    s.duration,
                    s.rate,
                    s.seed
                ),
            };
            out.push_str(&format!("{}\t{}\t{}\t{}", e.id, source, e.scene_label, e.city_label));
            if with_split {
                let tag = match e.split {
                    SplitTag::Train => "train",
                    SplitTag::Val => "val",
                    SplitTag::Test => "test",
                };
                out.push('\t');
                out.push_str(tag);
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

/// Parses manifest TSV. An optional fifth `split` column tags rows as
/// `train`, `val` or `test`; rows default to `train`.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(DatasetManifest::default());
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() < 4 || cols[..4] != MANIFEST_HEADER {
        return Err(SignalError::Schema {
            line: 1,
            reason: format!("header must start with {}", MANIFEST_HEADER.join("<TAB>")),
        });
    }
    let has_split = cols.get(4) == Some(&"split");

    let mut entries = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(SignalError::Schema {
                line: line_no,
                reason: format!("expected at least 4 columns, found {}", fields.len()),
            });
        }
        let source = if fields[1].starts_with("synth:") {
            Source::Synthetic(SynthSpec::parse(fields[1])?)
        } else {
            Source::File(PathBuf::from(fields[1]))
        };
        let split = match (has_split, fields.get(4).map(|s| s.trim())) {
            (true, Some("train")) | (false, _) => SplitTag::Train,
            (true, Some("val")) => SplitTag::Val,
            (true, Some("test")) => SplitTag::Test,
            (true, other) => {
                return Err(SignalError::Schema {
                    line: line_no,
                    reason: format!("bad split value {other:?}"),
                })
            }
        };
        if fields[..4].iter().any(|f| f.trim().is_empty()) {
            return Err(SignalError::Schema {
                line: line_no,
                reason: "empty column".into(),
            });
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            source,
            scene_label: fields[2].to_string(),
            city_label: fields[3].trim_end().to_string(),
            split,
        });
    }
    DatasetManifest::from_entries(entries)
}
