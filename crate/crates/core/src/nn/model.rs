use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, Dense, Dropout, Flatten, GradientReversal, Layer, Relu, Sequential};
use super::loss::{log_softmax, softmax_xent};
use super::{Mode, Module, NnError, Param, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCCK";
const CHECKPOINT_VERSION: u16 = 1;

/// Shape and hyperparameters of a [`FrameClassifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub channels: usize,
    pub filters: usize,
    pub classes: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_conv_width")]
    pub conv_width: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Number of cities for the adversarial branch, if any.
    #[serde(default)]
    pub cities: Option<usize>,
    #[serde(default = "default_gamma_adv")]
    pub gamma_adv: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    64
}

fn default_conv_width() -> usize {
    3
}

fn default_gamma_adv() -> f64 {
    0.1
}

impl ClassifierSpec {
    pub fn new(channels: usize, filters: usize, classes: usize) -> Self {
        Self {
            channels,
            filters,
            classes,
            hidden: default_hidden(),
            conv_width: default_conv_width(),
            dropout: 0.0,
            cities: None,
            gamma_adv: default_gamma_adv(),
            seed: 0,
        }
    }

    pub fn with_cities(mut self, cities: usize, gamma_adv: f64) -> Self {
        self.cities = Some(cities);
        self.gamma_adv = gamma_adv;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min_filters = 2 * self.conv_width - 1;
        if self.channels == 0 || self.classes == 0 || self.hidden == 0 || self.conv_width == 0 {
            return Err(NnError::Config("classifier sizes must be positive".into()));
        }
        if self.filters < min_filters {
            return Err(NnError::Config(format!(
                "{} filters is too few for two width-{} convolutions",
                self.filters, self.conv_width
            )));
        }
        if self.cities == Some(0) {
            return Err(NnError::Config("city branch needs at least one city".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !(self.gamma_adv >= 0.0) {
            return Err(NnError::Config(format!("gamma_adv {} must be >= 0", self.gamma_adv)));
        }
        Ok(())
    }

    fn frame_len(&self) -> usize {
        self.channels * self.filters
    }

    fn trunk_len(&self) -> usize {
        let w = self.filters + 2 - 2 * self.conv_width;
        4 * self.channels * w + self.frame_len()
    }
}

/// Frame-wise scene classifier with an optional adversarial city branch.
///
/// Two width-3 convolutions along the filter axis double the channel count
/// twice; their flattened output is concatenated with the flattened input
/// frame and fed to a dense head. The city branch reads the same embedding
/// through a gradient reversal layer.
#[derive(Debug, Clone)]
pub struct FrameClassifier {
    pub spec: ClassifierSpec,
    trunk: Sequential,
    head: Sequential,
    city: Option<Sequential>,
    embed_shape: Option<(usize, usize)>,
}

/// Mean losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierGrads {
    pub scene_loss: f64,
    pub city_loss: Option<f64>,
}

impl FrameClassifier {
    pub fn new(spec: ClassifierSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (c, k) = (spec.channels, spec.conv_width);
        let trunk = Sequential::new(vec![
            Layer::Conv1d(Conv1d::new("conv1", c, 2 * c, k, &mut rng)),
            Layer::Relu(Relu::default()),
            Layer::Conv1d(Conv1d::new("conv2", 2 * c, 4 * c, k, &mut rng)),
            Layer::Relu(Relu::default()),
            Layer::Flatten(Flatten::default()),
        ]);
        let embed = spec.trunk_len();
        let head = Sequential::new(vec![
            Layer::Dense(Dense::new("fc1", embed, spec.hidden, &mut rng)),
            Layer::Relu(Relu::default()),
            Layer::Dropout(Dropout::new(spec.dropout, spec.seed ^ 0x5eed)?),
            Layer::Dense(Dense::new("fc2", spec.hidden, spec.classes, &mut rng)),
        ]);
        let city = match spec.cities {
            Some(n_city) => Some(Sequential::new(vec![
                Layer::Grl(GradientReversal::new(spec.gamma_adv)?),
                Layer::Dense(Dense::new("city1", embed, spec.hidden, &mut rng)),
                Layer::Relu(Relu::default()),
                Layer::Dense(Dense::new("city2", spec.hidden, n_city, &mut rng)),
            ])),
            None => None,
        };
        Ok(Self {
            spec,
            trunk,
            head,
            city,
            embed_shape: None,
        })
    }

    pub fn has_city_branch(&self) -> bool {
        self.city.is_some()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape.len() != 3 || x.shape[1] != self.spec.channels || x.shape[2] != self.spec.filters {
            return Err(NnError::Shape {
                op: "frame classifier",
                expected: vec![x.batch(), self.spec.channels, self.spec.filters],
                found: x.shape.clone(),
            });
        }
        Ok(())
    }

    fn embed(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let conv = self.trunk.forward(x, mode)?;
        let n = x.batch();
        let (a, b) = (conv.len() / n.max(1), self.spec.frame_len());
        let mut data = Vec::with_capacity(n * (a + b));
        for s in 0..n {
            data.extend_from_slice(&conv.data[s * a..(s + 1) * a]);
            data.extend_from_slice(&x.data[s * b..(s + 1) * b]);
        }
        self.embed_shape = Some((n, a));
        Tensor::new(vec![n, a + b], data)
    }

    /// Scene logits `[batch, classes]` and, with a city branch, city logits.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        let e = self.embed(x, mode)?;
        let scene = self.head.forward(&e, mode)?;
        let city = match &mut self.city {
            Some(branch) => Some(branch.forward(&e, mode)?),
            None => None,
        };
        Ok((scene, city))
    }

    /// Accumulates parameter gradients for upstream logit gradients.
    pub fn backward(&mut self, d_scene: &Tensor, d_city: Option<&Tensor>) -> Result<()> {
        let (n, a) = self.embed_shape.ok_or(NnError::NoCache("frame classifier"))?;
        let mut de = self.head.backward(d_scene)?;
        if let (Some(branch), Some(dc)) = (&mut self.city, d_city) {
            let reversed = branch.backward(dc)?;
            de.data.iter_mut().zip(&reversed.data).for_each(|(d, r)| *d += r);
        }
        let width = de.len() / n.max(1);
        let mut dconv = Vec::with_capacity(n * a);
        for s in 0..n {
            dconv.extend_from_slice(&de.data[s * width..s * width + a]);
        }
        self.trunk.backward(&Tensor::new(vec![n, a], dconv)?)?;
        Ok(())
    }

    /// Forward, loss and backward for one batch. Gradients accumulate, so
    /// call `zero_grad` first.
    pub fn loss_and_backward(
        &mut self,
        x: &Tensor,
        scene: &[usize],
        city: Option<&[usize]>,
        mode: Mode,
    ) -> Result<ClassifierGrads> {
        let (scene_logits, city_logits) = self.forward(x, mode)?;
        let scene_out = softmax_xent(&scene_logits, scene)?;
        let city_out = match (city_logits, city) {
            (Some(logits), Some(labels)) => Some(softmax_xent(&logits, labels)?),
            _ => None,
        };
        self.backward(&scene_out.grad, city_out.as_ref().map(|c| &c.grad))?;
        Ok(ClassifierGrads {
            scene_loss: scene_out.loss,
            city_loss: city_out.map(|c| c.loss),
        })
    }

    /// Row-wise scene log-probabilities in evaluation mode.
    pub fn log_proba(&mut self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (logits, _) = self.forward(x, Mode::Eval)?;
        let c = self.spec.classes;
        Ok(logits.data.chunks_exact(c).map(log_softmax).collect())
    }

    pub fn to_bytes(&mut self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&self.spec).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        let mut params = Vec::new();
        self.visit_params(&mut |p| params.push((p.name.clone(), p.value.clone())));
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, values) in params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| NnError::Checkpoint(msg.to_string());
        if bytes.len() < 14 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a classifier checkpoint"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(bad("checksum mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut cur = Cursor { data: body, pos: 6 };
        let spec_len = cur.u32()? as usize;
        let spec: ClassifierSpec =
            serde_json::from_slice(cur.take(spec_len)?).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(spec)?;
        let count = cur.u32()? as usize;
        let mut stored = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| bad("parameter name is not utf-8"))?;
            let numel = cur.u32()? as usize;
            let values: Vec<f64> = cur
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            stored.push((name, values));
        }
        if cur.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        let mut err = None;
        let mut idx = 0;
        model.visit_params(&mut |p: &mut Param| {
            match stored.get(idx) {
                Some((name, values)) if *name == p.name && values.len() == p.value.len() => {
                    p.value.copy_from_slice(values);
                }
                _ => {
                    err.get_or_insert_with(|| NnError::Checkpoint(format!("parameter '{}' missing or mismatched", p.name)));
                }
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != stored.len() {
            return Err(bad("unexpected extra parameters"));
        }
        Ok(model)
    }

    pub fn save_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FrameClassifier> {
    FrameClassifier::from_bytes(&std::fs::read(path)?)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Module for FrameClassifier {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_params(f);
        self.head.visit_params(f);
        if let Some(branch) = &mut self.city {
            branch.visit_params(f);
        }
    }
}

impl FrameClassifier {
    /// Visits only the shared convolutional trunk.
    pub fn visit_trunk_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trunk.visit_params(f);
    }
}
