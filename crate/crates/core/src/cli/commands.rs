use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::eval::{evaluate, fuse_average_voting, segment_log_probability, ScoreTable};
use super::CliError;
use crate::augmentation::{run_scheme, SegmentSet};
use crate::features::{
    apply_normalization, encode_features, fit_normalization, load_features, FeatureExtractor, FeatureMap, NormStats,
};
use crate::nn::{load_checkpoint, train_classifier, FrameClassifier};
use crate::signal_io::{load_manifest, read_wav, synth_stereo, DatasetManifest, ManifestEntry, Source, SplitTag};

const NORM_STATS: &str = "norm_stats.json";
const FEATURE_EXT: &str = "sclf";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Extract,
    Train,
    Augment,
    Evaluate,
    Fuse,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Extract => "extract",
            Self::Train => "train",
            Self::Augment => "augment",
            Self::Evaluate => "evaluate",
            Self::Fuse => "fuse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandArgs {
    pub config: PathBuf,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Inputs, seeds and output hashes of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seeds: Vec<u64>,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name, relative to the output directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandReport {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

impl CommandReport {
    pub fn exit_code(&self) -> u8 {
        u8::from(!self.manifest.failures.is_empty())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Collects outputs and failures while a command runs.
struct Run {
    /// Input paths are recorded relative to this directory.
    base: PathBuf,
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn new(command: Command, config: &ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Self {
            base: config.base_dir.clone(),
            out,
            manifest: RunManifest {
                command: command.name().to_string(),
                seeds: config.seeds.clone(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                failures: Vec::new(),
            },
        })
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let key = path.strip_prefix(&self.base).unwrap_or(path);
        self.manifest.inputs.insert(key.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn fail(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.manifest.failures.push(msg);
    }

    fn finish(self) -> Result<CommandReport, CliError> {
        let path = self.out.join(format!("run_{}.json", self.manifest.command));
        let json = serde_json::to_string_pretty(&self.manifest).expect("run manifest serializes");
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(CommandReport {
            out_dir: self.out,
            manifest: self.manifest,
        })
    }
}

fn manifest_path(config: &ExperimentConfig, args: &CommandArgs) -> PathBuf {
    args.manifest.clone().unwrap_or_else(|| config.paths.manifest.clone())
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("manifest {} does not exist", path.display())));
    }
    load_manifest(path).map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
}

fn feature_file(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{FEATURE_EXT}"))
}

fn check_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        Err(format!("entry id '{id}' cannot be used as a file name"))
    } else {
        Ok(())
    }
}

fn load_clip(entry: &ManifestEntry, base: &Path) -> Result<crate::signal_io::AudioClip, CliError> {
    Ok(match &entry.source {
        Source::File(p) => read_wav(if p.is_relative() { base.join(p) } else { p.clone() })?,
        Source::Synthetic(spec) => synth_stereo(spec)?,
    })
}

/// Extracts one feature file per manifest entry in parallel, then fits
/// normalization statistics on the `train` entries.
pub fn cmd_extract(config: &ExperimentConfig, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let manifest_file = manifest_path(config, args);
    let manifest = read_manifest(&manifest_file)?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.features.clone());
    if manifest.is_empty() {
        let msg = format!("manifest {} has no entries", manifest_file.display());
        eprintln!("warning: {msg}");
        return Ok(CommandReport {
            out_dir: out,
            manifest: RunManifest {
                command: Command::Extract.name().to_string(),
                seeds: config.seeds.clone(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                failures: vec![msg],
            },
        });
    }
    let mut run = Run::new(Command::Extract, config, out)?;
    run.input(&manifest_file)?;
    let base = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let extractors: Mutex<HashMap<u32, Arc<FeatureExtractor>>> = Mutex::new(HashMap::new());
    let extractor_for = |rate: u32| -> Result<Arc<FeatureExtractor>, CliError> {
        let mut cache = extractors.lock().expect("extractor cache lock");
        if let Some(e) = cache.get(&rate) {
            return Ok(e.clone());
        }
        let e = Arc::new(FeatureExtractor::new(config.features, rate)?);
        cache.insert(rate, e.clone());
        Ok(e)
    };
    let results: Vec<Result<FeatureMap, String>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            check_id(&entry.id)?;
            let clip = load_clip(entry, &base).map_err(|e| format!("{}: {e}", entry.id))?;
            let extractor = extractor_for(clip.sample_rate()).map_err(|e| format!("{}: {e}", entry.id))?;
            extractor
                .extract(&clip, config.channel_mode)
                .map_err(|e| format!("{}: {e}", entry.id))
        })
        .collect();
    let mut train_maps = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(map) => {
                run.write(
                    &format!("{}.{FEATURE_EXT}", entry.id),
                    &encode_features(&map),
                )?;
                if entry.split == SplitTag::Train {
                    train_maps.push(map);
                }
            }
            Err(msg) => run.fail(msg),
        }
    }
    if train_maps.is_empty() {
        run.fail("no training entries were extracted; normalization statistics not written".into());
    } else {
        let corpus_id = manifest_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "manifest".into());
        let stats = fit_normalization(&train_maps, &corpus_id)?;
        run.write(NORM_STATS, stats.to_json().as_bytes())?;
    }
    run.finish()
}

fn load_stats(dir: &Path) -> Result<NormStats, CliError> {
    let path = dir.join(NORM_STATS);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    NormStats::from_json(&text).map_err(|e| CliError::Contract(format!("{}: {e}", path.display())))
}

/// Normalized feature maps for the given entries, in manifest order.
fn load_normalized(
    config: &ExperimentConfig,
    entries: &[&ManifestEntry],
    stats: &NormStats,
) -> Result<Vec<FeatureMap>, CliError> {
    entries
        .iter()
        .map(|e| {
            let map = load_features(feature_file(&config.paths.features, &e.id))?;
            Ok(apply_normalization(&map, stats)?)
        })
        .collect()
}

fn segment_set(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    maps: &[FeatureMap],
) -> Result<SegmentSet, CliError> {
    if let Some(first) = maps.first() {
        if let Some((e, m)) = entries.iter().zip(maps).find(|(_, m)| m.shape() != first.shape()) {
            return Err(CliError::Contract(format!(
                "feature map of '{}' has shape {:?}, expected {:?}",
                e.id,
                m.shape(),
                first.shape()
            )));
        }
    }
    let scene: Vec<usize> = entries.iter().map(|e| manifest.scene_index(&e.scene_label).expect("known label")).collect();
    let city: Vec<usize> = entries.iter().map(|e| manifest.city_index(&e.city_label).expect("known label")).collect();
    Ok(SegmentSet::from_feature_maps(maps, &scene, Some(&city))?)
}

fn entries_with(manifest: &DatasetManifest, tag: SplitTag) -> Vec<&ManifestEntry> {
    manifest.with_split(tag).collect()
}

fn model_name(seed: u64) -> String {
    format!("model_seed{seed}.scck")
}

/// Trains one classifier per configured seed on the `train` entries.
pub fn cmd_train(config: &ExperimentConfig, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let manifest_file = manifest_path(config, args);
    let manifest = read_manifest(&manifest_file)?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.out.clone());
    let mut run = Run::new(Command::Train, config, out)?;
    run.input(&manifest_file)?;
    let stats_path = config.paths.features.join(NORM_STATS);
    run.input(&stats_path)?;
    let stats = load_stats(&config.paths.features)?;

    let train_entries = entries_with(&manifest, SplitTag::Train);
    if train_entries.is_empty() {
        return Err(CliError::Contract("manifest has no training entries".into()));
    }
    let val_entries = entries_with(&manifest, SplitTag::Val);
    let train_maps = load_normalized(config, &train_entries, &stats)?;
    let val_maps = load_normalized(config, &val_entries, &stats)?;
    let all_train = segment_set(&manifest, &train_entries, &train_maps)?;
    let explicit_val = if val_entries.is_empty() {
        None
    } else {
        Some(segment_set(&manifest, &val_entries, &val_maps)?)
    };
    let classes = manifest.scene_vocabulary.len();
    let cities = manifest.city_vocabulary.len();

    let trained: Vec<Result<(u64, Vec<u8>, String), CliError>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train, val) = match &explicit_val {
                Some(val) => (all_train.clone(), val.clone()),
                None => holdout(&all_train, config.classifier.validation_fraction, seed),
            };
            let spec = config.classifier.spec(train.channels, train.filters, classes, cities, seed);
            let mut model = FrameClassifier::new(spec)?;
            let outcome = train_classifier(&mut model, &train.to_frames(), &val.to_frames(), &config.classifier.training(seed))?;
            Ok((seed, model.to_bytes()?, outcome.curve_csv()))
        })
        .collect();
    for result in trained {
        let (seed, checkpoint, curve) = result?;
        run.write(&model_name(seed), &checkpoint)?;
        run.write(&format!("curve_seed{seed}.csv"), curve.as_bytes())?;
    }
    let labels = serde_json::to_string_pretty(&manifest.scene_vocabulary).expect("labels serialize");
    run.write("labels.json", labels.as_bytes())?;
    run.finish()
}

fn holdout(data: &SegmentSet, fraction: f64, seed: u64) -> (SegmentSet, SegmentSet) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((data.len() as f64 * fraction).round() as usize).min(data.len().saturating_sub(1));
    let mut train = order.split_off(n_val);
    let mut val = order;
    train.sort_unstable();
    val.sort_unstable();
    (data.subset(&train), data.subset(&val))
}

/// Per-system score tables on the `test` entries.
fn score_systems(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    model_dir: &Path,
) -> Result<(Vec<(u64, ScoreTable)>, Vec<PathBuf>), CliError> {
    let test = entries_with(manifest, SplitTag::Test);
    if test.is_empty() {
        return Err(CliError::Contract("manifest has no test entries".into()));
    }
    let stats = load_stats(&config.paths.features)?;
    let maps = load_normalized(config, &test, &stats)?;
    let mut tables = Vec::new();
    let mut inputs = Vec::new();
    for &seed in &config.seeds {
        let path = model_dir.join(model_name(seed));
        let mut model = load_checkpoint(&path)?;
        let log_probs = maps
            .iter()
            .map(|m| segment_log_probability(&mut model, m))
            .collect::<Result<Vec<_>, _>>()?;
        tables.push((
            seed,
            ScoreTable {
                ids: test.iter().map(|e| e.id.clone()).collect(),
                log_probs,
            },
        ));
        inputs.push(path);
    }
    Ok((tables, inputs))
}

/// Scores every trained system and their fusion on the `test` entries.
pub fn cmd_evaluate(config: &ExperimentConfig, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let manifest_file = manifest_path(config, args);
    let manifest = read_manifest(&manifest_file)?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.out.clone());
    let (systems, inputs) = score_systems(config, &manifest, &out)?;
    let mut run = Run::new(Command::Evaluate, config, out)?;
    run.input(&manifest_file)?;
    for p in &inputs {
        run.input(p)?;
    }
    for (seed, table) in &systems {
        let report = evaluate(&table.predictions(), &manifest)?;
        run.write(&format!("scores_seed{seed}.tsv"), table.to_tsv().as_bytes())?;
        run.write(&format!("report_seed{seed}.json"), report.to_json().as_bytes())?;
        run.write(&format!("confusion_seed{seed}.csv"), report.confusion_csv().as_bytes())?;
    }
    let tables: Vec<ScoreTable> = systems.into_iter().map(|(_, t)| t).collect();
    let fused = evaluate(&fuse_average_voting(&tables, None)?, &manifest)?;
    run.write("report_fused.json", fused.to_json().as_bytes())?;
    run.write("confusion_fused.csv", fused.confusion_csv().as_bytes())?;
    run.finish()
}

/// Average-voting fusion of every trained system into one prediction file.
pub fn cmd_fuse(config: &ExperimentConfig, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let manifest_file = manifest_path(config, args);
    let manifest = read_manifest(&manifest_file)?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.out.clone());
    let (systems, inputs) = score_systems(config, &manifest, &out)?;
    let mut run = Run::new(Command::Fuse, config, out)?;
    run.input(&manifest_file)?;
    for p in &inputs {
        run.input(p)?;
    }
    let tables: Vec<ScoreTable> = systems.into_iter().map(|(_, t)| t).collect();
    let mut text = String::from("id\tscene_label\n");
    for (id, class) in fuse_average_voting(&tables, None)? {
        text.push_str(&format!("{id}\t{}\n", manifest.scene_vocabulary[class]));
    }
    run.write("predictions.tsv", text.as_bytes())?;
    run.finish()
}

/// Runs the augmentation scheme on the `train` entries with the first seed.
pub fn cmd_augment(config: &ExperimentConfig, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let manifest_file = manifest_path(config, args);
    let manifest = read_manifest(&manifest_file)?;
    let out = args.out.clone().unwrap_or_else(|| config.paths.out.clone());
    let mut run = Run::new(Command::Augment, config, out)?;
    run.input(&manifest_file)?;
    let stats = load_stats(&config.paths.features)?;
    let train_entries = entries_with(&manifest, SplitTag::Train);
    if train_entries.is_empty() {
        return Err(CliError::Contract("manifest has no training entries".into()));
    }
    let maps = load_normalized(config, &train_entries, &stats)?;
    let data = segment_set(&manifest, &train_entries, &maps)?;
    let seed = config.seeds[0];
    let spec = config.classifier.spec(
        data.channels,
        data.filters,
        manifest.scene_vocabulary.len(),
        manifest.city_vocabulary.len(),
        seed,
    );
    let scheme = config.scheme(spec, seed);
    let mut report = run_scheme(&data, &scheme)?;
    run.write("audit.jsonl", report.state.audit_jsonl().as_bytes())?;
    let summary = serde_json::to_string_pretty(&report.summary_json()).expect("summary serializes");
    run.write("augment_summary.json", summary.as_bytes())?;
    for (i, map) in report.state.accepted.to_feature_maps(config.channel_mode).iter().enumerate() {
        let label = &manifest.scene_vocabulary[report.state.accepted.scene[i]];
        run.write(
            &format!("fakes/fake_{i:05}_{label}.{FEATURE_EXT}"),
            &encode_features(map),
        )?;
    }
    run.write("model_augmented.scck", &report.classifier.to_bytes()?)?;
    run.finish()
}

/// Loads the config and runs one command.
pub fn run_command(command: Command, args: &CommandArgs) -> Result<CommandReport, CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    match command {
        Command::Extract => cmd_extract(&config, args),
        Command::Train => cmd_train(&config, args),
        Command::Augment => cmd_augment(&config, args),
        Command::Evaluate => cmd_evaluate(&config, args),
        Command::Fuse => cmd_fuse(&config, args),
    }
}
