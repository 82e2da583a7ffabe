use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax_xent;
use super::model::FrameClassifier;
use super::optim::{Adam, AdamConfig, EarlyStopDecision, EarlyStopMode, EarlyStopPolicy};
use super::{Mode, Module, NnError, Result, Tensor};

/// Labelled frames of shape `[channels, filters]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameSet {
    pub channels: usize,
    pub filters: usize,
    pub data: Vec<f64>,
    pub scene: Vec<usize>,
    /// City labels, one per frame, when known.
    pub city: Option<Vec<usize>>,
}

impl FrameSet {
    pub fn new(channels: usize, filters: usize) -> Self {
        Self {
            channels,
            filters,
            ..Self::default()
        }
    }

    pub fn with_cities(channels: usize, filters: usize) -> Self {
        Self {
            city: Some(Vec::new()),
            ..Self::new(channels, filters)
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.filters
    }

    pub fn len(&self) -> usize {
        self.scene.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, frame: &[f64], scene: usize, city: Option<usize>) -> Result<()> {
        if frame.len() != self.frame_len() {
            return Err(NnError::Shape {
                op: "frame set push",
                expected: vec![self.channels, self.filters],
                found: vec![frame.len()],
            });
        }
        match (&mut self.city, city) {
            (Some(cities), Some(c)) => cities.push(c),
            (None, None) => {}
            _ => return Err(NnError::Config("city labels must be given for all frames or none".into())),
        }
        self.data.extend_from_slice(frame);
        self.scene.push(scene);
        Ok(())
    }

    /// Appends every frame of `other`, dropping city labels when either side lacks them.
    pub fn extend(&mut self, other: &FrameSet) -> Result<()> {
        if other.frame_len() != self.frame_len() {
            return Err(NnError::Shape {
                op: "frame set extend",
                expected: vec![self.channels, self.filters],
                found: vec![other.channels, other.filters],
            });
        }
        self.data.extend_from_slice(&other.data);
        self.scene.extend_from_slice(&other.scene);
        self.city = match (self.city.take(), &other.city) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> FrameSet {
        let mut out = FrameSet {
            channels: self.channels,
            filters: self.filters,
            data: Vec::with_capacity(indices.len() * self.frame_len()),
            scene: Vec::with_capacity(indices.len()),
            city: self.city.as_ref().map(|_| Vec::with_capacity(indices.len())),
        };
        for &i in indices {
            out.data.extend_from_slice(self.frame(i));
            out.scene.push(self.scene[i]);
            if let (Some(dst), Some(src)) = (&mut out.city, &self.city) {
                dst.push(src[i]);
            }
        }
        out
    }

    /// `[indices.len(), channels, filters]` input tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            data.extend_from_slice(self.frame(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.filters], data).expect("consistent frame size")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub early_stop: EarlyStopMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 60,
            batch_size: 32,
            adam: AdamConfig::default(),
            early_stop: EarlyStopMode::Slow,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.curve {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        out
    }

    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.curve_csv())?;
        Ok(())
    }
}

/// Minibatch Adam training with validation-driven early stopping.
///
/// The weights with the lowest validation loss are restored at the end.
/// With an empty validation set the training loss drives the schedule.
pub fn train_classifier(
    model: &mut FrameClassifier,
    train: &FrameSet,
    val: &FrameSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(NnError::Config("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(NnError::Config("batch size must be positive".into()));
    }
    let use_city = model.has_city_branch() && train.city.is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut policy = EarlyStopPolicy::new(config.early_stop);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.flat_params();
    let mut outcome = TrainOutcome {
        curve: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let x = train.batch(idx);
            let scene: Vec<usize> = idx.iter().map(|&i| train.scene[i]).collect();
            let city: Option<Vec<usize>> = match (&train.city, use_city) {
                (Some(c), true) => Some(idx.iter().map(|&i| c[i]).collect()),
                _ => None,
            };
            model.zero_grad();
            let losses = model.loss_and_backward(&x, &scene, city.as_deref(), Mode::Train)?;
            adam.step(model)?;
            total += losses.scene_loss * idx.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(model, val)?
        };
        if !val_loss.is_finite() {
            return Err(NnError::Divergence {
                param: "validation loss".into(),
            });
        }
        outcome.curve.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr(),
        });
        if policy.improved(val_loss) {
            best = model.flat_params();
            outcome.best_epoch = epoch;
            outcome.best_val_loss = val_loss;
        }
        match policy.update(val_loss) {
            EarlyStopDecision::Continue => {}
            EarlyStopDecision::HalveLr => adam.set_lr(adam.lr() * 0.5),
            EarlyStopDecision::Stop => {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    model.set_flat_params(&best);
    Ok(outcome)
}

const EVAL_BATCH: usize = 256;

/// Mean scene cross-entropy in evaluation mode.
pub fn mean_loss(model: &mut FrameClassifier, set: &FrameSet) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (logits, _) = model.forward(&set.batch(chunk), Mode::Eval)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| set.scene[i]).collect();
        total += softmax_xent(&logits, &labels)?.loss * chunk.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Log-probabilities for every frame, batched.
pub fn frame_log_proba(model: &mut FrameClassifier, set: &FrameSet) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        out.extend(model.log_proba(&set.batch(chunk))?);
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of frames whose most probable class matches the label.
pub fn overall_accuracy(model: &mut FrameClassifier, set: &FrameSet) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let correct = frame_log_proba(model, set)?
        .iter()
        .zip(&set.scene)
        .filter(|(lp, &y)| argmax(lp) == y)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ClassifierSpec;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> FrameSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FrameSet::new(1, 8);
        for i in 0..n {
            let y = i % 3;
            let frame: Vec<f64> = (0..8)
                .map(|k| if k / 3 == y { 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5))
                .collect();
            set.push(&frame, y, None).unwrap();
        }
        set
    }

    #[test]
    fn learns_separable_blobs() {
        let mut model = FrameClassifier::new(ClassifierSpec::new(1, 8, 3)).unwrap();
        let config = TrainConfig {
            max_epochs: 30,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let outcome = train_classifier(&mut model, &blobs(120, 1), &blobs(60, 2), &config).unwrap();
        assert!(overall_accuracy(&mut model, &blobs(60, 3)).unwrap() > 0.95);
        assert!(outcome.curve_csv().starts_with("epoch,train_loss,val_loss,lr\n"));
        assert_eq!(outcome.curve_csv().lines().count(), outcome.curve.len() + 1);
    }

    #[test]
    fn best_weights_are_restored() {
        let mut model = FrameClassifier::new(ClassifierSpec::new(1, 8, 3)).unwrap();
        let config = TrainConfig {
            max_epochs: 12,
            batch_size: 8,
            early_stop: EarlyStopMode::Fast,
            ..TrainConfig::default()
        };
        let val = blobs(30, 5);
        let outcome = train_classifier(&mut model, &blobs(60, 4), &val, &config).unwrap();
        let restored = mean_loss(&mut model, &val).unwrap();
        assert!((restored - outcome.best_val_loss).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_rejected() {
        let mut model = FrameClassifier::new(ClassifierSpec::new(1, 8, 3)).unwrap();
        let empty = FrameSet::new(1, 8);
        assert!(train_classifier(&mut model, &empty, &empty, &TrainConfig::default()).is_err());
    }

    #[test]
    fn mixed_city_labels_rejected() {
        let mut set = FrameSet::with_cities(1, 2);
        assert!(set.push(&[0.0, 1.0], 0, None).is_err());
        assert!(set.push(&[0.0], 0, Some(0)).is_err());
    }
}
