use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acgan::{train_acgan, AcganConfig};
use super::dataset::{segment_accuracy, SegmentSet};
use super::filter::{sample_filter_framewise, sample_filter_segmentwise, FilterOutcome, SampleFilterConfig, StackedFrames};
use super::split::{split_dataset, SeedChain, SplitKind, SplitStrategy};
use super::{AugmentError, Result};
use crate::nn::{
    train_classifier, AdamConfig, ClassifierSpec, EarlyStopMode, FrameClassifier, NnError, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Frame,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub strategy: SplitStrategy,
    pub max_iterations: usize,
    /// The scheme stops once more than this many iterations in a row were rejected.
    pub max_rejection_streak: usize,
    pub classifier: ClassifierSpec,
    /// Training of the per-iteration classifiers on the subsets.
    pub subset_training: TrainConfig,
    /// Training of the final classifier on the whole database.
    pub final_training: TrainConfig,
    /// Share of the real data held out to validate the final classifier.
    pub validation_fraction: f64,
    pub acgan: AcganConfig,
    pub filter: SampleFilterConfig,
    pub filter_mode: FilterMode,
    pub seed: u64,
}

impl SchemeConfig {
    /// Desk-scale defaults around a classifier spec.
    pub fn new(classifier: ClassifierSpec, strategy: SplitKind, seed: u64) -> Self {
        let classes = classifier.classes;
        let subset_training = TrainConfig {
            max_epochs: 40,
            batch_size: 32,
            adam: AdamConfig::default(),
            early_stop: EarlyStopMode::Fast,
            seed,
        };
        Self {
            strategy: SplitStrategy { kind: strategy, seed },
            max_iterations: 10,
            max_rejection_streak: 3,
            classifier,
            final_training: TrainConfig {
                max_epochs: 150,
                batch_size: 64,
                adam: AdamConfig {
                    lr: 3e-4,
                    ..AdamConfig::default()
                },
                early_stop: EarlyStopMode::Slow,
                seed,
            },
            subset_training,
            validation_fraction: 0.1,
            acgan: AcganConfig {
                z_dim: 8,
                hidden: 32,
                epochs: 10,
                lr: 1e-3,
                seed,
                ..AcganConfig::default()
            },
            filter: SampleFilterConfig::frame_wise(classes),
            filter_mode: FilterMode::Frame,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.acgan.validate()?;
        self.filter.validate()?;
        if self.filter.classes != self.classifier.classes {
            return Err(AugmentError::Config(format!(
                "filter has {} classes but the classifier has {}",
                self.filter.classes, self.classifier.classes
            )));
        }
        if self.max_iterations == 0 {
            return Err(AugmentError::Config("max_iterations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(AugmentError::Config(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    /// Accepts only a strict improvement.
    pub fn compare(acc_a: f64, acc_b: f64) -> Self {
        if acc_b > acc_a {
            Self::Accept
        } else {
            Self::Reject
        }
    }
}

/// One line of the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub strategy: SplitKind,
    pub split_seed: u64,
    #[serde(rename = "acc_A")]
    pub acc_a: Option<f64>,
    #[serde(rename = "acc_B")]
    pub acc_b: Option<f64>,
    pub n_filtered: usize,
    pub verdict: Verdict,
    /// Consecutive rejections after this iteration.
    pub streak: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationState {
    pub k: usize,
    /// Generated segments from accepted iterations.
    pub accepted: SegmentSet,
    pub records: Vec<IterationRecord>,
    pub streak: usize,
    pub chain: SeedChain,
}

impl AugmentationState {
    pub fn new(frames: usize, channels: usize, filters: usize, seed: u64) -> Self {
        Self {
            k: 0,
            accepted: SegmentSet::new(frames, channels, filters),
            records: Vec::new(),
            streak: 0,
            chain: SeedChain::new(seed),
        }
    }

    pub fn for_data(data: &SegmentSet, seed: u64) -> Self {
        Self::new(data.frames, data.channels, data.filters, seed)
    }

    pub fn is_running(&self, config: &SchemeConfig) -> bool {
        self.streak <= config.max_rejection_streak && self.k < config.max_iterations
    }

    pub fn audit_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn write_audit(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.audit_jsonl())?;
        Ok(())
    }

    fn record(&mut self, record: IterationRecord) -> &IterationRecord {
        self.k += 1;
        self.records.push(record);
        self.records.last().expect("just pushed")
    }
}

fn is_divergence(e: &AugmentError) -> bool {
    matches!(e, AugmentError::Collapse { .. } | AugmentError::Nn(NnError::Divergence { .. }))
}

fn train_on(
    spec: &ClassifierSpec,
    train: &SegmentSet,
    val: &SegmentSet,
    config: &TrainConfig,
) -> Result<FrameClassifier> {
    let mut model = FrameClassifier::new(spec.clone())?;
    train_classifier(&mut model, &train.to_frames(), &val.to_frames(), config)?;
    Ok(model)
}

fn filter(
    clf: &mut FrameClassifier,
    train: &SegmentSet,
    config: &SchemeConfig,
    seed: u64,
) -> Result<FilterOutcome> {
    let acgan = AcganConfig {
        seed,
        ..config.acgan.clone()
    };
    let mut generators = train_acgan(&train.to_frames(), config.classifier.classes, &acgan)?;
    let shape = (train.frames, train.channels, train.filters);
    match config.filter_mode {
        FilterMode::Frame => sample_filter_framewise(clf, &mut generators, &config.filter, shape),
        FilterMode::Segment => {
            let mut stacked: Vec<_> = generators
                .into_iter()
                .map(|generator| StackedFrames {
                    generator,
                    frames: train.frames,
                })
                .collect();
            sample_filter_segmentwise(clf, &mut stacked, &config.filter, shape)
        }
    }
}

/// Runs one split / train / generate / filter / compare round.
pub fn run_iteration<'a>(
    state: &'a mut AugmentationState,
    data: &SegmentSet,
    config: &SchemeConfig,
) -> Result<&'a IterationRecord> {
    if !state.is_running(config) {
        return Err(AugmentError::Terminated);
    }
    let k = state.k;
    let split = split_dataset(data, &config.strategy, k)?;
    let train = data.subset(&split.train);
    let test = data.subset(&split.test);
    let seed = state.chain.seed_for(k);
    let spec = ClassifierSpec {
        seed,
        ..config.classifier.clone()
    };
    let training = TrainConfig {
        seed,
        ..config.subset_training.clone()
    };
    let mut record = IterationRecord {
        k,
        strategy: config.strategy.kind,
        split_seed: split.seed,
        acc_a: None,
        acc_b: None,
        n_filtered: 0,
        verdict: Verdict::Reject,
        streak: 0,
        cause: None,
    };

    let outcome = (|| -> Result<Option<SegmentSet>> {
        let mut clf_a = train_on(&spec, &train, &test, &training)?;
        let acc_a = segment_accuracy(&mut clf_a, &test)?;
        record.acc_a = Some(acc_a);
        let lambda = filter(&mut clf_a, &train, config, seed ^ 0x6a4)?.samples;
        record.n_filtered = lambda.len();
        if lambda.is_empty() {
            record.cause = Some("no generated sample passed the filter".into());
            return Ok(None);
        }
        let mut augmented = train.clone();
        augmented.extend(&lambda)?;
        augmented.extend(&state.accepted)?;
        let mut clf_b = train_on(&spec, &augmented, &test, &training)?;
        let acc_b = segment_accuracy(&mut clf_b, &test)?;
        record.acc_b = Some(acc_b);
        Ok((Verdict::compare(acc_a, acc_b) == Verdict::Accept).then_some(lambda))
    })();

    match outcome {
        Ok(Some(lambda)) => {
            state.accepted.extend(&lambda)?;
            state.streak = 0;
            record.verdict = Verdict::Accept;
        }
        Ok(None) => state.streak += 1,
        Err(e) if is_divergence(&e) => {
            state.streak += 1;
            record.cause = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    record.streak = state.streak;
    Ok(state.record(record))
}

#[derive(Debug, Clone)]
pub struct SchemeReport {
    pub state: AugmentationState,
    pub classifier: FrameClassifier,
    /// True when no iteration was accepted.
    pub no_augmentation: bool,
}

impl SchemeReport {
    pub fn accepted_iterations(&self) -> usize {
        self.state.records.iter().filter(|r| r.verdict == Verdict::Accept).count()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.state.records.len(),
            "accepted_iterations": self.accepted_iterations(),
            "accepted_samples": self.state.accepted.len(),
            "no_augmentation": self.no_augmentation,
            "records": self.state.records,
        })
    }
}

/// Splits real data into a training part and a validation hold-out.
fn holdout(data: &SegmentSet, config: &SchemeConfig) -> (SegmentSet, SegmentSet) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x4a11));
    let n_val = (data.len() as f64 * config.validation_fraction).round() as usize;
    let mut train = order.split_off(n_val);
    let mut val = order;
    train.sort_unstable();
    val.sort_unstable();
    (data.subset(&train), data.subset(&val))
}

fn train_final(data: &SegmentSet, fakes: &SegmentSet, config: &SchemeConfig) -> Result<FrameClassifier> {
    let (mut train, val) = holdout(data, config);
    train.extend(fakes)?;
    let spec = ClassifierSpec {
        seed: config.seed,
        ..config.classifier.clone()
    };
    train_on(&spec, &train, &val, &config.final_training)
}

/// The final classifier trained on real data alone, with the same hold-out
/// and seeds as [`run_scheme`] uses.
pub fn train_baseline(data: &SegmentSet, config: &SchemeConfig) -> Result<FrameClassifier> {
    config.validate()?;
    train_final(data, &SegmentSet::new(data.frames, data.channels, data.filters), config)
}

/// Iterates until too many consecutive rejections or the iteration limit,
/// then trains the final classifier on real data plus every accepted sample.
pub fn run_scheme(data: &SegmentSet, config: &SchemeConfig) -> Result<SchemeReport> {
    config.validate()?;
    let mut state = AugmentationState::for_data(data, config.seed);
    while state.is_running(config) {
        run_iteration(&mut state, data, config)?;
    }
    let classifier = train_final(data, &state.accepted, config)?;
    Ok(SchemeReport {
        no_augmentation: state.accepted.is_empty(),
        state,
        classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(verdict: Verdict) -> IterationRecord {
        IterationRecord {
            k: 0,
            strategy: SplitKind::Random,
            split_seed: 1,
            acc_a: Some(0.5),
            acc_b: Some(0.5),
            n_filtered: 3,
            verdict,
            streak: 1,
            cause: None,
        }
    }

    #[test]
    fn ties_are_rejected() {
        assert_eq!(Verdict::compare(0.8, 0.8), Verdict::Reject);
        assert_eq!(Verdict::compare(0.8, 0.79), Verdict::Reject);
        assert_eq!(Verdict::compare(0.8, 0.81), Verdict::Accept);
    }

    #[test]
    fn fourth_consecutive_rejection_terminates() {
        let config = SchemeConfig::new(ClassifierSpec::new(1, 8, 4), SplitKind::Random, 0);
        let mut state = AugmentationState::new(1, 1, 8, 0);
        for streak in 1..=3 {
            state.streak = streak;
            assert!(state.is_running(&config));
        }
        state.streak = 4;
        assert!(!state.is_running(&config));
    }

    #[test]
    fn iteration_limit_terminates() {
        let config = SchemeConfig::new(ClassifierSpec::new(1, 8, 4), SplitKind::Random, 0);
        let mut state = AugmentationState::new(1, 1, 8, 0);
        state.k = 10;
        assert!(!state.is_running(&config));
    }

    #[test]
    fn audit_lines_use_documented_keys() {
        let mut state = AugmentationState::new(1, 1, 8, 0);
        state.records.push(record(Verdict::Reject));
        let line = state.audit_jsonl();
        let value: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for key in ["k", "strategy", "split_seed", "acc_A", "acc_B", "n_filtered", "verdict", "streak"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert_eq!(value["verdict"], "reject");
    }

    #[test]
    fn terminated_state_refuses_to_run() {
        let config = SchemeConfig::new(ClassifierSpec::new(1, 8, 4), SplitKind::Random, 0);
        let mut state = AugmentationState::new(1, 1, 8, 0);
        state.k = 10;
        let data = SegmentSet::new(1, 1, 8);
        assert!(matches!(
            run_iteration(&mut state, &data, &config),
            Err(AugmentError::Terminated)
        ));
    }
}
