use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::features::FeatureMap;
use crate::nn::{argmax, FrameClassifier, Tensor};
use crate::signal_io::{DatasetManifest, SplitTag};

/// Mean of the frame-wise log-probabilities of one normalized segment.
pub fn segment_log_probability(model: &mut FrameClassifier, map: &FeatureMap) -> Result<Vec<f64>, CliError> {
    if !map.normalized {
        return Err(CliError::Contract("segment scoring expects normalized features".into()));
    }
    let (l, c, n) = map.shape();
    let data: Vec<f64> = map.data.iter().copied().collect();
    let rows = model.log_proba(&Tensor::new(vec![l, c, n], data)?)?;
    let mut mean = vec![0.0; model.spec.classes];
    for row in &rows {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= l.max(1) as f64);
    Ok(mean)
}

/// Per-segment log-probabilities of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub log_probs: Vec<Vec<f64>>,
}

impl ScoreTable {
    /// Tab-separated `id` followed by one column per class.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.ids.iter().zip(&self.log_probs) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CliError> {
        let mut table = ScoreTable {
            ids: Vec::new(),
            log_probs: Vec::new(),
        };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or_default().to_string();
            let row = cols
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Contract(format!("score line {}: {e}", i + 1)))?;
            table.ids.push(id);
            table.log_probs.push(row);
        }
        Ok(table)
    }

    pub fn predictions(&self) -> Vec<(String, usize)> {
        self.ids.iter().cloned().zip(self.log_probs.iter().map(|r| argmax(r))).collect()
    }
}

/// Argmax of the (weighted) mean log-probability across systems. Ties go
/// to the lowest class index.
pub fn fuse_average_voting(systems: &[ScoreTable], weights: Option<&[f64]>) -> Result<Vec<(String, usize)>, CliError> {
    let first = systems
        .first()
        .ok_or_else(|| CliError::Contract("no systems to fuse".into()))?;
    let uniform = vec![1.0; systems.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != systems.len() {
        return Err(CliError::Contract(format!(
            "{} weights for {} systems",
            weights.len(),
            systems.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    for (k, s) in systems.iter().enumerate() {
        if s.ids != first.ids {
            return Err(CliError::Contract(format!("system {k} is not aligned with system 0")));
        }
        if s.log_probs.iter().zip(&first.log_probs).any(|(a, b)| a.len() != b.len()) {
            return Err(CliError::Contract(format!("system {k} has a different class count")));
        }
    }
    Ok(first
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let classes = first.log_probs[i].len();
            let mut mean = vec![0.0; classes];
            for (s, w) in systems.iter().zip(weights) {
                mean.iter_mut().zip(&s.log_probs[i]).for_each(|(m, v)| *m += w * v);
            }
            mean.iter_mut().for_each(|m| *m /= total);
            (id.clone(), argmax(&mean))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityAccuracy {
    pub city: String,
    /// Whether the city appears among the training entries.
    pub seen: bool,
    pub support: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub total: usize,
    pub overall: f64,
    /// Per-class accuracy; `None` for classes without segments.
    pub class_wise: Vec<Option<f64>>,
    /// Mean of the defined class-wise accuracies.
    pub class_mean: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_city: Vec<CityAccuracy>,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header row of predicted labels, one row per true label.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(l);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scores predictions against the manifest labels. Every `test` entry must
/// have a prediction, and every prediction must name a manifest entry.
pub fn evaluate(predictions: &[(String, usize)], manifest: &DatasetManifest) -> Result<EvalReport, CliError> {
    let labels = manifest.scene_vocabulary.clone();
    let c = labels.len();
    let by_id: HashMap<&str, usize> = manifest.entries.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let predicted: HashSet<&str> = predictions.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(e) = manifest.with_split(SplitTag::Test).find(|e| !predicted.contains(e.id.as_str())) {
        return Err(CliError::Contract(format!("missing prediction for '{}'", e.id)));
    }
    let seen: HashSet<&str> = manifest.with_split(SplitTag::Train).map(|e| e.city_label.as_str()).collect();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut cities: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (id, pred) in predictions {
        let &i = by_id
            .get(id.as_str())
            .ok_or_else(|| CliError::Contract(format!("prediction for unknown entry '{id}'")))?;
        if *pred >= c {
            return Err(CliError::Contract(format!("prediction {pred} for '{id}' exceeds {c} classes")));
        }
        let entry = &manifest.entries[i];
        let truth = manifest.scene_index(&entry.scene_label).expect("vocabulary built from entries");
        confusion[truth][*pred] += 1;
        let slot = cities.entry(entry.city_label.as_str()).or_default();
        slot.0 += 1;
        slot.1 += usize::from(truth == *pred);
    }
    let total = predictions.len();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let class_wise: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| ratio(row[k], support))
        })
        .collect();
    let defined: Vec<f64> = class_wise.iter().flatten().copied().collect();
    let per_city: Vec<CityAccuracy> = cities
        .iter()
        .map(|(&city, &(support, hits))| CityAccuracy {
            city: city.to_string(),
            seen: seen.contains(city),
            support,
            accuracy: ratio(hits, support),
        })
        .collect();
    let group = |want: bool| {
        let (s, h) = cities
            .iter()
            .filter(|(city, _)| seen.contains(*city) == want)
            .fold((0, 0), |(s, h), (_, &(cs, ch))| (s + cs, h + ch));
        (s > 0).then(|| ratio(h, s))
    };
    Ok(EvalReport {
        labels,
        total,
        overall: ratio(correct, total),
        class_mean: if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        },
        class_wise,
        confusion,
        seen_accuracy: group(true),
        unseen_accuracy: group(false),
        per_city,
    })
}
