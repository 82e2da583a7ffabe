//! ACGAN-based feature augmentation with a margin sample filter and an
//! iterative accept/reject scheme.

mod acgan;
mod dataset;
mod filter;
mod scheme;
mod split;

use thiserror::Error;

use crate::nn::NnError;

pub use acgan::{
    acgan_scene_loss, acgan_source_loss, train_acgan, Acgan, AcganBatchLoss, AcganConfig, Discriminator, Generator,
    PROB_CLAMP,
};
pub use dataset::{cluster_benchmark, segment_accuracy, segment_log_proba, ClusterBenchmark, SegmentSet};
pub use filter::{
    in_margin, sample_filter_framewise, sample_filter_segmentwise, FilterOutcome, FrameGenerator, FrameScorer,
    SampleFilterConfig, SegmentGenerator, SegmentScorer, StackedFrames,
};
pub use scheme::{
    run_iteration, run_scheme, train_baseline, AugmentationState, FilterMode, IterationRecord, SchemeConfig,
    SchemeReport, Verdict,
};
pub use split::{split_dataset, split_indices, SeedChain, Split, SplitKind, SplitStrategy};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("GAN training collapsed at step {iteration}: non-finite loss")]
    Collapse { iteration: usize },
    #[error("split strategy error: {0}")]
    Strategy(String),
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("scheme already terminated")]
    Terminated,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AugmentError>;
