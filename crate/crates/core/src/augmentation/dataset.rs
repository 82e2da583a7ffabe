use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AugmentError, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::nn::{argmax, FrameClassifier, FrameSet, NnError};
use crate::signal_io::ChannelMode;

/// Labelled segments of `frames x channels x filters`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub frames: usize,
    pub channels: usize,
    pub filters: usize,
    pub data: Vec<f64>,
    pub scene: Vec<usize>,
    /// City labels, absent for generated segments.
    pub city: Option<Vec<usize>>,
}

impl SegmentSet {
    pub fn new(frames: usize, channels: usize, filters: usize) -> Self {
        Self {
            frames,
            channels,
            filters,
            data: Vec::new(),
            scene: Vec::new(),
            city: None,
        }
    }

    pub fn with_cities(frames: usize, channels: usize, filters: usize) -> Self {
        Self {
            city: Some(Vec::new()),
            ..Self::new(frames, channels, filters)
        }
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.filters
    }

    pub fn segment_len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn len(&self) -> usize {
        self.scene.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene.is_empty()
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        let n = self.segment_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, segment: &[f64], scene: usize, city: Option<usize>) -> Result<()> {
        if segment.len() != self.segment_len() {
            return Err(NnError::Shape {
                op: "segment set push",
                expected: vec![self.frames, self.channels, self.filters],
                found: vec![segment.len()],
            }
            .into());
        }
        match (&mut self.city, city) {
            (Some(cities), Some(c)) => cities.push(c),
            (None, None) => {}
            _ => return Err(AugmentError::Config("city labels must be given for all segments or none".into())),
        }
        self.data.extend_from_slice(segment);
        self.scene.push(scene);
        Ok(())
    }

    pub fn extend(&mut self, other: &SegmentSet) -> Result<()> {
        if other.segment_len() != self.segment_len() || other.frames != self.frames {
            return Err(NnError::Shape {
                op: "segment set extend",
                expected: vec![self.frames, self.channels, self.filters],
                found: vec![other.frames, other.channels, other.filters],
            }
            .into());
        }
        let was_empty = self.is_empty();
        self.data.extend_from_slice(&other.data);
        self.scene.extend_from_slice(&other.scene);
        self.city = match (self.city.take(), &other.city) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (_, city) if was_empty => city.clone(),
            (Some(a), None) if other.is_empty() => Some(a),
            _ => None,
        };
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> SegmentSet {
        let mut out = SegmentSet {
            data: Vec::with_capacity(indices.len() * self.segment_len()),
            scene: Vec::with_capacity(indices.len()),
            city: self.city.as_ref().map(|_| Vec::with_capacity(indices.len())),
            ..SegmentSet::new(self.frames, self.channels, self.filters)
        };
        for &i in indices {
            out.data.extend_from_slice(self.segment(i));
            out.scene.push(self.scene[i]);
            if let (Some(dst), Some(src)) = (&mut out.city, &self.city) {
                dst.push(src[i]);
            }
        }
        out
    }

    /// Every frame, labelled with its segment's scene and city.
    pub fn to_frames(&self) -> FrameSet {
        let mut set = FrameSet {
            channels: self.channels,
            filters: self.filters,
            data: self.data.clone(),
            scene: Vec::with_capacity(self.len() * self.frames),
            city: self.city.as_ref().map(|_| Vec::with_capacity(self.len() * self.frames)),
        };
        for i in 0..self.len() {
            for _ in 0..self.frames {
                set.scene.push(self.scene[i]);
                if let (Some(dst), Some(src)) = (&mut set.city, &self.city) {
                    dst.push(src[i]);
                }
            }
        }
        set
    }

    /// Builds a set from equally shaped feature maps.
    pub fn from_feature_maps(maps: &[FeatureMap], scene: &[usize], city: Option<&[usize]>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| AugmentError::Config("no feature maps given".into()))?;
        let (l, c, n) = first.shape();
        let mut set = match city {
            Some(_) => Self::with_cities(l, c, n),
            None => Self::new(l, c, n),
        };
        for (i, map) in maps.iter().enumerate() {
            let values: Vec<f64> = map.data.iter().copied().collect();
            set.push(&values, scene[i], city.map(|c| c[i]))?;
        }
        Ok(set)
    }

    /// One synthetic, normalized feature map per segment.
    pub fn to_feature_maps(&self, channel_mode: ChannelMode) -> Vec<FeatureMap> {
        (0..self.len())
            .map(|i| {
                let data = Array3::from_shape_vec((self.frames, self.channels, self.filters), self.segment(i).to_vec())
                    .expect("segment length matches shape");
                let mut map = FeatureMap::new(data, FeatureKind::Synthetic, channel_mode);
                map.normalized = true;
                map
            })
            .collect()
    }
}

/// Per-segment scene log-probabilities: the mean of the frame log-probabilities.
pub fn segment_log_proba(model: &mut FrameClassifier, set: &SegmentSet) -> Result<Vec<Vec<f64>>> {
    let frames = crate::nn::frame_log_proba(model, &set.to_frames())?;
    let l = set.frames.max(1);
    Ok(frames
        .chunks(l)
        .map(|chunk| {
            let mut mean = vec![0.0; chunk[0].len()];
            for row in chunk {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= l as f64);
            mean
        })
        .collect())
}

/// Fraction of segments whose highest mean log-probability matches the label.
pub fn segment_accuracy(model: &mut FrameClassifier, set: &SegmentSet) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let correct = segment_log_proba(model, set)?
        .iter()
        .zip(&set.scene)
        .filter(|(lp, &y)| argmax(lp) == y)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Overlapping Gaussian clusters recorded in two "cities".
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBenchmark {
    pub classes: usize,
    pub cities: usize,
    pub filters: usize,
    pub spread: f64,
    pub city_shift: f64,
}

impl Default for ClusterBenchmark {
    fn default() -> Self {
        Self {
            classes: 4,
            cities: 2,
            filters: 8,
            spread: 0.65,
            city_shift: 0.6,
        }
    }
}

impl ClusterBenchmark {
    /// Class means are bumps at evenly spaced positions along the filter
    /// axis; each city adds its own offset pattern.
    fn mean(&self, class: usize, city: usize) -> Vec<f64> {
        let centre = (class as f64 + 0.5) * self.filters as f64 / self.classes as f64;
        (0..self.filters)
            .map(|k| {
                let d = k as f64 + 0.5 - centre;
                let bump = 1.5 * (-d * d / 2.0).exp();
                let shift = self.city_shift * if (k + city) % 2 == 0 { 1.0 } else { -1.0 } * city as f64;
                bump + shift
            })
            .collect()
    }

    /// Draws `n` single-frame, single-channel segments with balanced classes
    /// and uniformly random cities.
    pub fn sample(&self, n: usize, seed: u64) -> SegmentSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.spread).expect("positive spread");
        let mut set = SegmentSet::with_cities(1, 1, self.filters);
        for i in 0..n {
            let class = i % self.classes;
            let city = rng.gen_range(0..self.cities);
            let point: Vec<f64> = self
                .mean(class, city)
                .into_iter()
                .map(|m| m + noise.sample(&mut rng))
                .collect();
            set.push(&point, class, Some(city)).expect("consistent shape");
        }
        set
    }
}

/// `(train, test)` sets of the default cluster benchmark.
pub fn cluster_benchmark(n_train: usize, n_test: usize, seed: u64) -> (SegmentSet, SegmentSet) {
    let bench = ClusterBenchmark::default();
    (bench.sample(n_train, seed), bench.sample(n_test, seed ^ 0x7e57))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_inherit_segment_labels() {
        let mut set = SegmentSet::with_cities(2, 1, 2);
        set.push(&[1.0, 2.0, 3.0, 4.0], 1, Some(0)).unwrap();
        set.push(&[5.0, 6.0, 7.0, 8.0], 0, Some(1)).unwrap();
        let frames = set.to_frames();
        assert_eq!(frames.len(), 4);
        assert_eq!(frames.scene, vec![1, 1, 0, 0]);
        assert_eq!(frames.city, Some(vec![0, 0, 1, 1]));
        assert_eq!(frames.frame(2), &[5.0, 6.0]);
    }

    #[test]
    fn feature_map_round_trip() {
        let mut set = SegmentSet::new(2, 1, 3);
        set.push(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, None).unwrap();
        let maps = set.to_feature_maps(ChannelMode::LeftRight);
        assert_eq!(maps[0].kind, FeatureKind::Synthetic);
        let back = SegmentSet::from_feature_maps(&maps, &[2], None).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn benchmark_is_seeded_and_balanced() {
        let (a, _) = cluster_benchmark(400, 10, 3);
        let (b, _) = cluster_benchmark(400, 10, 3);
        assert_eq!(a, b);
        for c in 0..4 {
            assert_eq!(a.scene.iter().filter(|&&s| s == c).count(), 100);
        }
        let cities = a.city.as_ref().unwrap();
        assert!(cities.iter().any(|&c| c == 0) && cities.iter().any(|&c| c == 1));
    }

    #[test]
    fn fakes_drop_city_labels_on_merge() {
        let mut real = SegmentSet::with_cities(1, 1, 2);
        real.push(&[0.0, 1.0], 0, Some(1)).unwrap();
        let mut fake = SegmentSet::new(1, 1, 2);
        fake.push(&[2.0, 3.0], 1, None).unwrap();
        real.extend(&fake).unwrap();
        assert_eq!(real.len(), 2);
        assert!(real.city.is_none());
    }
}
