use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::augmentation::{AcganConfig, FilterMode, SampleFilterConfig, SchemeConfig, SplitKind, SplitStrategy};
use crate::features::FeatureConfig;
use crate::nn::{AdamConfig, ClassifierSpec, EarlyStopMode, TrainConfig};
use crate::signal_io::ChannelMode;

/// One experiment, read from a TOML file.
///
/// ```toml
/// seeds = [1, 2, 3]
/// channel_mode = "ave-diff"
///
/// [paths]
/// manifest = "manifest.tsv"
///
/// [features]
/// kind = "fbank"
/// window = 0.04
/// shift = 0.02
/// n_mel = 40
/// f_low = 0.0
/// f_high = 8000.0
/// with_deltas = false
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub channel_mode: ChannelMode,
    pub paths: PathsConfig,
    #[serde(default = "FeatureConfig::reference_scalogram")]
    pub features: FeatureConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    /// Directory holding the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

/// Paths are resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_features_dir")]
    pub features: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out: PathBuf,
}

fn default_features_dir() -> PathBuf {
    PathBuf::from("features")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub conv_width: usize,
    pub dropout: f64,
    pub city_branch: bool,
    pub gamma_adv: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub early_stop: EarlyStopMode,
    /// Share of the training entries held out for validation when the
    /// manifest tags no `val` entries.
    pub validation_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            conv_width: 3,
            dropout: 0.1,
            city_branch: false,
            gamma_adv: 0.1,
            max_epochs: 60,
            batch_size: 32,
            lr: 1e-3,
            early_stop: EarlyStopMode::Slow,
            validation_fraction: 0.1,
        }
    }
}

impl ClassifierConfig {
    pub fn spec(&self, channels: usize, filters: usize, classes: usize, cities: usize, seed: u64) -> ClassifierSpec {
        ClassifierSpec {
            channels,
            filters,
            classes,
            hidden: self.hidden,
            conv_width: self.conv_width,
            dropout: self.dropout,
            cities: self.city_branch.then_some(cities),
            gamma_adv: self.gamma_adv,
            seed,
        }
    }

    pub fn training(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            early_stop: self.early_stop,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub strategy: SplitKind,
    pub max_iterations: usize,
    pub max_rejection_streak: usize,
    pub filter_mode: FilterMode,
    pub margin: f64,
    pub n_sample: usize,
    pub t_sample: usize,
    pub gan_epochs: usize,
    pub gan_batch_size: usize,
    pub gan_hidden: usize,
    pub gan_lr: f64,
    pub z_dim: usize,
    pub gamma_aux: f64,
    pub g_steps: usize,
    /// Maximum epochs of the per-iteration classifiers.
    pub subset_epochs: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            strategy: SplitKind::City,
            max_iterations: 10,
            max_rejection_streak: 3,
            filter_mode: FilterMode::Frame,
            margin: 0.03,
            n_sample: 8,
            t_sample: 10,
            gan_epochs: 50,
            gan_batch_size: 32,
            gan_hidden: 64,
            gan_lr: 2e-4,
            z_dim: 16,
            gamma_aux: 0.2,
            g_steps: 3,
            subset_epochs: 40,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            CliError::Config(if path == "." || path.is_empty() {
                msg
            } else {
                format!("{path}: {msg}")
            })
        })
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.base_dir = base.to_path_buf();
        for p in [&mut config.paths.manifest, &mut config.paths.features, &mut config.paths.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds", format!("seeds must be distinct, got {:?}", self.seeds));
        }
        let c = &self.classifier;
        if c.hidden == 0 || c.conv_width == 0 || c.batch_size == 0 || c.max_epochs == 0 {
            return bad("classifier", "sizes, batch_size and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return bad("classifier.dropout", format!("{} outside [0, 1)", c.dropout));
        }
        if !(c.lr > 0.0) {
            return bad("classifier.lr", format!("{} must be positive", c.lr));
        }
        if !(c.gamma_adv >= 0.0) {
            return bad("classifier.gamma_adv", format!("{} must be >= 0", c.gamma_adv));
        }
        if !(0.0..1.0).contains(&c.validation_fraction) {
            return bad(
                "classifier.validation_fraction",
                format!("{} outside [0, 1)", c.validation_fraction),
            );
        }
        let a = &self.augmentation;
        if a.max_iterations == 0 {
            return bad("augmentation.max_iterations", "must be positive".into());
        }
        if !(a.margin > 0.0) {
            return bad("augmentation.margin", format!("{} must be positive", a.margin));
        }
        if a.n_sample == 0 || a.t_sample == 0 {
            return bad("augmentation", "n_sample and t_sample must be positive".into());
        }
        if !(a.gamma_aux >= 0.0) {
            return bad("augmentation.gamma_aux", format!("{} must be >= 0", a.gamma_aux));
        }
        if a.gan_epochs == 0 || a.gan_batch_size == 0 || a.gan_hidden == 0 || a.z_dim == 0 || a.g_steps == 0 {
            return bad("augmentation", "GAN sizes and step counts must be positive".into());
        }
        Ok(())
    }

    /// Scheme settings for a dataset with the given classifier spec.
    pub fn scheme(&self, spec: ClassifierSpec, seed: u64) -> SchemeConfig {
        let a = &self.augmentation;
        let classes = spec.classes;
        let subset_training = TrainConfig {
            max_epochs: a.subset_epochs,
            early_stop: EarlyStopMode::Fast,
            ..self.classifier.training(seed)
        };
        SchemeConfig {
            strategy: SplitStrategy { kind: a.strategy, seed },
            max_iterations: a.max_iterations,
            max_rejection_streak: a.max_rejection_streak,
            classifier: ClassifierSpec { cities: None, ..spec },
            subset_training,
            final_training: self.classifier.training(seed),
            validation_fraction: self.classifier.validation_fraction,
            acgan: AcganConfig {
                z_dim: a.z_dim,
                hidden: a.gan_hidden,
                gamma_aux: a.gamma_aux,
                epochs: a.gan_epochs,
                batch_size: a.gan_batch_size,
                g_steps: a.g_steps,
                lr: a.gan_lr,
                seed,
            },
            filter: SampleFilterConfig {
                classes,
                margin: a.margin,
                n_sample: a.n_sample,
                t_sample: a.t_sample,
            },
            filter_mode: a.filter_mode,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\nmanifest = \"m.tsv\"\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let config = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(config.seeds, vec![1, 2, 3]);
        assert_eq!(config.features, FeatureConfig::reference_scalogram());
        assert_eq!(config.augmentation.margin, 0.03);
        config.validate().unwrap();
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = format!("{MINIMAL}[classifier]\nhidden = \"wide\"\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("classifier.hidden"), "{err}");
        let text = format!("{MINIMAL}[augmentation]\nbogus = 1\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("augmentation") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let text = format!("seeds = [4, 4, 5]\n{MINIMAL}");
        let config = ExperimentConfig::from_toml(&text).unwrap();
        assert!(config.validate().unwrap_err().to_string().contains("seeds"));
    }

    #[test]
    fn feature_section_parses() {
        let text = format!(
            "{MINIMAL}[features]\nkind = \"scalogram\"\nwindow = 0.512\nshift = 0.171\n\
             [features.scale]\nf_high = 24000.0\nf_low = 0.5\nt_max = 0.341\nq = 35\n"
        );
        let config = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config.features, FeatureConfig::reference_scalogram());
    }
}
