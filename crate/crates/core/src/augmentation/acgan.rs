use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AugmentError, Result};
use crate::nn::{
    log_softmax, sigmoid, Adam, AdamConfig, Dense, FrameSet, Layer, LeakyRelu, Mode, Module, NnError, Param,
    Sequential, Tensor,
};

/// Probabilities entering a logarithm are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

const LEAK: f64 = 0.2;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `-sum(log D_real + log(1 - D_fake))` over paired real and fake probabilities.
pub fn acgan_source_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real: f64 = d_real.iter().map(|&p| -clamp_prob(p).ln()).sum();
    let fake: f64 = d_fake.iter().map(|&p| -(1.0 - clamp_prob(p)).ln()).sum();
    real + fake
}

/// `-sum(log p_real(y) + log p_fake(y))` over per-sample class distributions.
pub fn acgan_scene_loss(p_real: &[Vec<f64>], p_fake: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for dist in [&p_real[i], &p_fake[i]] {
            let p = *dist.get(y).ok_or(NnError::Label {
                label: y,
                classes: dist.len(),
            })?;
            total -= clamp_prob(p).ln();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcganBatchLoss {
    pub source: f64,
    pub scene: f64,
    pub gamma_aux: f64,
}

impl AcganBatchLoss {
    /// The discriminator objective `L_source + gamma_aux * L_scene`.
    pub fn total(&self) -> f64 {
        self.source + self.gamma_aux * self.scene
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcganConfig {
    pub z_dim: usize,
    pub hidden: usize,
    pub gamma_aux: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Generator updates per discriminator update.
    pub g_steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AcganConfig {
    fn default() -> Self {
        Self {
            z_dim: 16,
            hidden: 64,
            gamma_aux: 0.2,
            epochs: 50,
            batch_size: 32,
            g_steps: 3,
            lr: 2e-4,
            seed: 0,
        }
    }
}

impl AcganConfig {
    /// Epochs after which generator checkpoints are kept: 70, 80, 90 and 100%
    /// of the run, deduplicated.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = [7, 8, 9, 10]
            .iter()
            .map(|&tenths| (self.epochs * tenths).div_ceil(10).max(1))
            .collect();
        out.dedup();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.g_steps == 0 {
            return Err(AugmentError::Config("GAN sizes and step counts must be positive".into()));
        }
        if !(self.gamma_aux >= 0.0) {
            return Err(AugmentError::Config(format!("gamma_aux {} must be >= 0", self.gamma_aux)));
        }
        Ok(())
    }
}

fn leaky_mlp(name: &str, sizes: &[usize], rng: &mut ChaCha8Rng) -> Sequential {
    let mut layers = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        if i > 0 {
            layers.push(Layer::LeakyRelu(LeakyRelu::new(LEAK)));
        }
        layers.push(Layer::Dense(Dense::new(&format!("{name}{}", i + 1), w[0], w[1], rng)));
    }
    Sequential::new(layers)
}

/// Class-conditional frame generator: `z * E[y]` through a leaky-ReLU MLP.
#[derive(Debug, Clone)]
pub struct Generator {
    pub classes: usize,
    pub z_dim: usize,
    pub out_len: usize,
    pub embedding: Param,
    net: Sequential,
    rng: ChaCha8Rng,
    cache: Option<(Vec<f64>, Vec<usize>)>,
}

impl Generator {
    pub fn new(classes: usize, z_dim: usize, hidden: usize, out_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Param::he("gen.embedding", vec![classes, z_dim], 2, &mut rng);
        let net = leaky_mlp("gen.fc", &[z_dim, hidden, hidden, out_len], &mut rng);
        Self {
            classes,
            z_dim,
            out_len,
            embedding,
            net,
            rng,
            cache: None,
        }
    }

    /// Replaces the noise source, e.g. for a frozen checkpoint.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn sample_noise(&mut self, n: usize) -> Vec<f64> {
        (0..n * self.z_dim).map(|_| StandardNormal.sample(&mut self.rng)).collect()
    }

    /// `[labels.len(), out_len]` frames from explicit noise.
    pub fn forward(&mut self, z: &[f64], labels: &[usize]) -> Result<Tensor> {
        let n = labels.len();
        if z.len() != n * self.z_dim {
            return Err(NnError::Shape {
                op: "generator noise",
                expected: vec![n, self.z_dim],
                found: vec![z.len()],
            }
            .into());
        }
        let mut input = Vec::with_capacity(z.len());
        for (zi, &y) in z.chunks_exact(self.z_dim).zip(labels) {
            if y >= self.classes {
                return Err(NnError::Label {
                    label: y,
                    classes: self.classes,
                }
                .into());
            }
            let e = &self.embedding.value[y * self.z_dim..(y + 1) * self.z_dim];
            input.extend(zi.iter().zip(e).map(|(a, b)| a * b));
        }
        let out = self.net.forward(&Tensor::new(vec![n, self.z_dim], input)?, Mode::Train)?;
        self.cache = Some((z.to_vec(), labels.to_vec()));
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let (z, labels) = self.cache.clone().ok_or(NnError::NoCache("generator"))?;
        let d_input = self.net.backward(grad)?;
        for ((zi, gi), &y) in z.chunks_exact(self.z_dim).zip(d_input.data.chunks_exact(self.z_dim)).zip(&labels) {
            let row = &mut self.embedding.grad[y * self.z_dim..(y + 1) * self.z_dim];
            for k in 0..self.z_dim {
                row[k] += gi[k] * zi[k];
            }
        }
        Ok(())
    }

    /// Draws `count` frames of class `scene` from fresh noise.
    pub fn generate(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>> {
        let z = self.sample_noise(count);
        let out = self.forward(&z, &vec![scene; count])?;
        Ok(out.data.chunks_exact(self.out_len).map(<[f64]>::to_vec).collect())
    }
}

impl Module for Generator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.embedding);
        self.net.visit_params(f);
    }
}

/// Leaky-ReLU MLP with one source logit followed by `classes` scene logits.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub classes: usize,
    pub in_len: usize,
    net: Sequential,
}

impl Discriminator {
    pub fn new(in_len: usize, classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            classes,
            in_len,
            net: leaky_mlp("disc.fc", &[in_len, hidden, hidden, 1 + classes], &mut rng),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.net.forward(x, Mode::Train)?)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        Ok(self.net.backward(grad)?)
    }

    /// `(P(real), class distribution)` per row of logits.
    pub fn split_outputs(&self, logits: &Tensor) -> Vec<(f64, Vec<f64>)> {
        logits
            .data
            .chunks_exact(1 + self.classes)
            .map(|row| (sigmoid(row[0]), log_softmax(&row[1..]).into_iter().map(f64::exp).collect()))
            .collect()
    }
}

impl Module for Discriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.net.visit_params(f);
    }
}

/// Which source-head term a batch contributes.
#[derive(Clone, Copy, PartialEq)]
enum SourceTerm {
    /// `-log D`
    Real,
    /// `-log(1 - D)`
    Fake,
    /// `log(1 - D)`, the generator's share of `-L_source`.
    FakeForGenerator,
}

/// Summed source loss, summed scene loss and the logit gradient of
/// `source + gamma * scene`.

fn head_terms(logits: &Tensor, labels: &[usize], classes: usize, term: SourceTerm, gamma: f64) -> Result<(f64, f64, Tensor)> {
    let width = 1 + classes;
    let mut source = 0.0;
    let mut scene = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for ((row, g), &y) in logits.data.chunks_exact(width).zip(grad.chunks_exact_mut(width)).zip(labels) {
        if y >= classes {
            return Err(NnError::Label { label: y, classes }.into());
        }
        let p = sigmoid(row[0]);
        let clamped = p != clamp_prob(p);
        let pc = clamp_prob(p);
        let (loss, d) = match term {
            SourceTerm::Real => (-pc.ln(), -(1.0 - p)),
            SourceTerm::Fake => (-(1.0 - pc).ln(), p),
            SourceTerm::FakeForGenerator => ((1.0 - pc).ln(), -p),
        };
        source += loss;
        g[0] = if clamped { 0.0 } else { d };
        let lp = log_softmax(&row[1..]);
        scene -= lp[y];
        for k in 0..classes {
            let onehot = if k == y { 1.0 } else { 0.0 };
            g[1 + k] = gamma * (lp[k].exp() - onehot);
        }
    }
    Ok((source, scene, Tensor::new(logits.shape.clone(), grad)?))
}

/// An auxiliary-classifier GAN over single frames.
#[derive(Debug, Clone)]
pub struct Acgan {
    pub config: AcganConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    steps: usize,
}

impl Acgan {
    pub fn new(config: AcganConfig, frame_len: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(classes, config.z_dim, config.hidden, frame_len, config.seed);
        let discriminator = Discriminator::new(frame_len, classes, config.hidden, config.seed ^ 0xd15c);
        let adam = AdamConfig {
            lr: config.lr,
            beta1: 0.5,
            ..AdamConfig::default()
        };
        Ok(Self {
            config,
            generator,
            discriminator,
            opt_g: Adam::new(adam),
            opt_d: Adam::new(adam),
            steps: 0,
        })
    }

    /// Discriminator objective on real frames and fakes made from `z`;
    /// leaves its gradient in the discriminator parameters.
    pub fn discriminator_objective(&mut self, real: &Tensor, labels: &[usize], z: &[f64]) -> Result<AcganBatchLoss> {
        let gamma = self.config.gamma_aux;
        let classes = self.discriminator.classes;
        let fake = self.generator.forward(z, labels)?;
        self.discriminator.zero_grad();
        let logits = self.discriminator.forward(real)?;
        let (src_r, scn_r, g) = head_terms(&logits, labels, classes, SourceTerm::Real, gamma)?;
        self.discriminator.backward(&g)?;
        let logits = self.discriminator.forward(&fake)?;
        let (src_f, scn_f, g) = head_terms(&logits, labels, classes, SourceTerm::Fake, gamma)?;
        self.discriminator.backward(&g)?;
        Ok(AcganBatchLoss {
            source: src_r + src_f,
            scene: scn_r + scn_f,
            gamma_aux: gamma,
        })
    }

    /// Generator objective `sum log(1 - D(G(z, y))) + gamma_aux * sum -log p(y | G(z, y))`;
    /// leaves its gradient in the generator parameters. The discriminator's
    /// gradient buffers are overwritten but its weights are untouched.
    pub fn generator_objective(&mut self, labels: &[usize], z: &[f64]) -> Result<f64> {
        let gamma = self.config.gamma_aux;
        let classes = self.discriminator.classes;
        self.generator.zero_grad();
        let fake = self.generator.forward(z, labels)?;
        let logits = self.discriminator.forward(&fake)?;
        let (source, scene, g) = head_terms(&logits, labels, classes, SourceTerm::FakeForGenerator, gamma)?;
        let d_fake = self.discriminator.backward(&g)?;
        self.discriminator.zero_grad();
        self.generator.backward(&d_fake)?;
        Ok(source + gamma * scene)
    }

    fn check(&self, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(AugmentError::Collapse { iteration: self.steps })
        }
    }

    fn adam_err(&self, e: NnError) -> AugmentError {
        match e {
            NnError::Divergence { .. } => AugmentError::Collapse { iteration: self.steps },
            other => other.into(),
        }
    }

    /// One discriminator update with the given noise.
    pub fn discriminator_step(&mut self, real: &Tensor, labels: &[usize], z: &[f64]) -> Result<AcganBatchLoss> {
        let loss = self.discriminator_objective(real, labels, z)?;
        self.check(loss.total())?;
        self.opt_d.step(&mut self.discriminator).map_err(|e| self.adam_err(e))?;
        Ok(loss)
    }

    /// One generator update with the given noise.
    pub fn generator_step(&mut self, labels: &[usize], z: &[f64]) -> Result<f64> {
        let loss = self.generator_objective(labels, z)?;
        self.check(loss)?;
        self.opt_g.step(&mut self.generator).map_err(|e| self.adam_err(e))?;
        Ok(loss)
    }

    /// One discriminator update followed by `g_steps` generator updates.
    pub fn training_step(&mut self, real: &Tensor, labels: &[usize]) -> Result<AcganBatchLoss> {
        self.steps += 1;
        let z = self.generator.sample_noise(labels.len());
        let loss = self.discriminator_step(real, labels, &z)?;
        for _ in 0..self.config.g_steps {
            let z = self.generator.sample_noise(labels.len());
            self.generator_step(labels, &z)?;
        }
        Ok(loss)
    }
}

/// Trains an ACGAN on labelled frames and returns the generator checkpoints.
pub fn train_acgan(frames: &FrameSet, classes: usize, config: &AcganConfig) -> Result<Vec<Generator>> {
    if frames.is_empty() {
        return Err(AugmentError::Config("no frames to train the GAN on".into()));
    }
    let mut gan = Acgan::new(config.clone(), frames.frame_len(), classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0bad);
    let keep = config.checkpoint_epochs();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut checkpoints = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let x = frames.batch(idx).reshape(vec![idx.len(), frames.frame_len()])?;
            let labels: Vec<usize> = idx.iter().map(|&i| frames.scene[i]).collect();
            gan.training_step(&x, &labels)?;
        }
        if keep.contains(&epoch) {
            let mut g = gan.generator.clone();
            g.reseed(config.seed.wrapping_add(epoch as u64));
            checkpoints.push(g);
        }
    }
    Ok(checkpoints)
}
