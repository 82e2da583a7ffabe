use serde::{Deserialize, Serialize};

use super::acgan::Generator;
use super::dataset::SegmentSet;
use super::{AugmentError, Result};
use crate::nn::{log_softmax, FrameClassifier, NnError, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFilterConfig {
    pub classes: usize,
    /// Half-width of the acceptance window around `1 / classes`.
    pub margin: f64,
    /// Maximum number of samples kept per scene.
    pub n_sample: usize,
    /// Maximum number of generation rounds per scene and generator.
    pub t_sample: usize,
}

impl SampleFilterConfig {
    pub fn frame_wise(classes: usize) -> Self {
        Self {
            classes,
            margin: 0.03,
            n_sample: 8,
            t_sample: 10,
        }
    }

    pub fn segment_wise(classes: usize) -> Self {
        Self {
            classes,
            margin: 0.03,
            n_sample: 6,
            t_sample: 8,
        }
    }

    /// Strict check for user-supplied configs: `0 < margin < 1 / classes`.
    pub fn validate(&self) -> Result<()> {
        self.check_counts()?;
        if !(self.margin > 0.0 && self.margin < 1.0 / self.classes as f64) {
            return Err(AugmentError::Config(format!(
                "margin {} outside (0, 1/{})",
                self.margin, self.classes
            )));
        }
        Ok(())
    }

    fn check_counts(&self) -> Result<()> {
        if self.classes == 0 || self.n_sample == 0 || self.t_sample == 0 {
            return Err(AugmentError::Config("classes, n_sample and t_sample must be positive".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(AugmentError::Config(format!("margin {} must be >= 0", self.margin)));
        }
        Ok(())
    }
}

/// Open-interval margin test `1/C - m < p < 1/C + m`.
pub fn in_margin(p: f64, classes: usize, margin: f64) -> bool {
    let centre = 1.0 / classes as f64;
    centre - margin < p && p < centre + margin
}

/// Class probabilities for individual frames.
pub trait FrameScorer {
    fn frame_probabilities(&mut self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// Class probabilities for whole segments.
pub trait SegmentScorer {
    fn segment_probabilities(&mut self, segments: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

pub trait FrameGenerator {
    fn generate_frames(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>>;
}

pub trait SegmentGenerator {
    fn generate_segments(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>>;
}

impl FrameGenerator for Generator {
    fn generate_frames(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        self.generate(scene, count)
    }
}

/// Segments of `frames` consecutive draws from a frame generator.
#[derive(Debug, Clone)]
pub struct StackedFrames<G> {
    pub generator: G,
    pub frames: usize,
}

impl<G: FrameGenerator> SegmentGenerator for StackedFrames<G> {
    fn generate_segments(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        let frames = self.generator.generate_frames(scene, count * self.frames)?;
        Ok(frames.chunks(self.frames.max(1)).map(|c| c.concat()).collect())
    }
}

impl FrameClassifier {
    fn batch_tensor(&self, rows: &[Vec<f64>], frames_per_row: usize) -> Result<Tensor> {
        let (c, n) = (self.spec.channels, self.spec.filters);
        let data: Vec<f64> = rows.concat();
        Ok(Tensor::new(vec![rows.len() * frames_per_row, c, n], data)?)
    }
}

impl FrameScorer for FrameClassifier {
    fn frame_probabilities(&mut self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.batch_tensor(frames, 1)?;
        Ok(self
            .log_proba(&x)?
            .into_iter()
            .map(|lp| lp.into_iter().map(f64::exp).collect())
            .collect())
    }
}

impl SegmentScorer for FrameClassifier {
    /// Normalized geometric mean of the frame probabilities.
    fn segment_probabilities(&mut self, segments: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let frame_len = self.spec.channels * self.spec.filters;
        let mut out = Vec::with_capacity(segments.len());
        for seg in segments {
            if seg.is_empty() || seg.len() % frame_len != 0 {
                return Err(NnError::Shape {
                    op: "segment scorer",
                    expected: vec![seg.len() / frame_len.max(1), self.spec.channels, self.spec.filters],
                    found: vec![seg.len()],
                }
                .into());
            }
            let l = seg.len() / frame_len;
            let x = self.batch_tensor(std::slice::from_ref(seg), l)?;
            let lps = self.log_proba(&x)?;
            let mut mean = vec![0.0; self.spec.classes];
            for lp in &lps {
                mean.iter_mut().zip(lp).for_each(|(m, v)| *m += v / l as f64);
            }
            out.push(log_softmax(&mean).into_iter().map(f64::exp).collect());
        }
        Ok(out)
    }
}

/// Retained samples and the bookkeeping of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub samples: SegmentSet,
    /// Retained frames (frame-wise) or segments (segment-wise) per scene,
    /// before regrouping.
    pub retained: Vec<usize>,
    /// Generation rounds per scene and generator.
    pub attempts: Vec<Vec<usize>>,
    /// Retained frames dropped because they did not fill a whole segment.
    pub discarded_frames: usize,
}

impl FilterOutcome {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Frame-wise margin filter.
///
/// Each generator may contribute `floor(L * n_sample / |G|)` frames per
/// scene, drawn in rounds of that size for at most `t_sample` rounds. A round
/// stops adding frames once the generator's quota is met. Retained frames are
/// grouped per scene into segments of `L` frames; leftovers are dropped.
pub fn sample_filter_framewise<S, G>(
    scorer: &mut S,
    generators: &mut [G],
    config: &SampleFilterConfig,
    shape: (usize, usize, usize),
) -> Result<FilterOutcome>
where
    S: FrameScorer + ?Sized,
    G: FrameGenerator,
{
    config.check_counts()?;
    if generators.is_empty() {
        return Err(AugmentError::Config("at least one generator is required".into()));
    }
    let (l, c, n) = shape;
    let quota = l * config.n_sample / generators.len();
    let mut outcome = FilterOutcome {
        samples: SegmentSet::new(l, c, n),
        retained: vec![0; config.classes],
        attempts: vec![vec![0; generators.len()]; config.classes],
        discarded_frames: 0,
    };
    for scene in 0..config.classes {
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for (gi, generator) in generators.iter_mut().enumerate() {
            let mut count = 0;
            let mut rounds = 0;
            while rounds < config.t_sample && count < quota {
                let frames = generator.generate_frames(scene, quota)?;
                let probs = scorer.frame_probabilities(&frames)?;
                for (frame, p) in frames.into_iter().zip(probs) {
                    if count >= quota {
                        break;
                    }
                    if in_margin(p[scene], config.classes, config.margin) {
                        kept.push(frame);
                        count += 1;
                    }
                }
                rounds += 1;
            }
            outcome.attempts[scene][gi] = rounds;
        }
        outcome.retained[scene] = kept.len();
        let whole = if l == 0 { 0 } else { kept.len() / l };
        outcome.discarded_frames += kept.len() - whole * l;
        for seg in kept.chunks_exact(l.max(1)).take(whole) {
            outcome.samples.push(&seg.concat(), scene, None)?;
        }
    }
    Ok(outcome)
}

/// Segment-wise margin filter. `n_sample` segments per scene are shared
/// between generators, the first ones taking any remainder.
pub fn sample_filter_segmentwise<S, G>(
    scorer: &mut S,
    generators: &mut [G],
    config: &SampleFilterConfig,
    shape: (usize, usize, usize),
) -> Result<FilterOutcome>
where
    S: SegmentScorer + ?Sized,
    G: SegmentGenerator,
{
    config.check_counts()?;
    if generators.is_empty() {
        return Err(AugmentError::Config("at least one generator is required".into()));
    }
    let (l, c, n) = shape;
    let k = generators.len();
    let mut outcome = FilterOutcome {
        samples: SegmentSet::new(l, c, n),
        retained: vec![0; config.classes],
        attempts: vec![vec![0; k]; config.classes],
        discarded_frames: 0,
    };
    for scene in 0..config.classes {
        for (gi, generator) in generators.iter_mut().enumerate() {
            let quota = config.n_sample / k + usize::from(gi < config.n_sample % k);
            let mut count = 0;
            let mut rounds = 0;
            while rounds < config.t_sample && count < quota {
                let segments = generator.generate_segments(scene, quota)?;
                let probs = scorer.segment_probabilities(&segments)?;
                for (seg, p) in segments.into_iter().zip(probs) {
                    if count >= quota {
                        break;
                    }
                    if in_margin(p[scene], config.classes, config.margin) {
                        outcome.samples.push(&seg, scene, None)?;
                        count += 1;
                    }
                }
                rounds += 1;
            }
            outcome.attempts[scene][gi] = rounds;
            outcome.retained[scene] += count;
        }
    }
    Ok(outcome)
}
