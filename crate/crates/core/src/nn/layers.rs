use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dct::DctTemporal;
use super::{Mode, Module, NnError, Param, Result, Tensor};

pub(super) fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(NnError::Shape {
            op,
            expected: vec![0; rank],
            found: t.shape.clone(),
        });
    }
    Ok(())
}

/// Affine map `y = x W^T + b` on `[batch, in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::he(format!("{name}.weight"), vec![outputs, inputs], inputs, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
            input: None,
        }
    }

    pub fn from_params(weight: Param, bias: Param) -> Self {
        Self {
            weight,
            bias,
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (fan_in, fan_out) = (self.inputs(), self.outputs());
        if input.shape.len() != 2 || input.shape[1] != fan_in {
            return Err(NnError::Shape {
                op: "dense",
                expected: vec![input.batch(), fan_in],
                found: input.shape.clone(),
            });
        }
        let n = input.batch();
        let mut out = vec![0.0; n * fan_out];
        for (x, y) in input.data.chunks_exact(fan_in).zip(out.chunks_exact_mut(fan_out)) {
            for (o, y) in y.iter_mut().enumerate() {
                let w = &self.weight.value[o * fan_in..(o + 1) * fan_in];
                *y = self.bias.value[o] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        self.input = Some(input.clone());
        Tensor::new(vec![n, fan_out], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or(NnError::NoCache("dense"))?;
        let (fan_in, fan_out) = (self.inputs(), self.outputs());
        let n = input.batch();
        if grad.shape != [n, fan_out] {
            return Err(NnError::Shape {
                op: "dense backward",
                expected: vec![n, fan_out],
                found: grad.shape.clone(),
            });
        }
        let mut dx = vec![0.0; n * fan_in];
        for ((x, g), dx) in input
            .data
            .chunks_exact(fan_in)
            .zip(grad.data.chunks_exact(fan_out))
            .zip(dx.chunks_exact_mut(fan_in))
        {
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.bias.grad[o] += go;
                let row = o * fan_in;
                for i in 0..fan_in {
                    self.weight.grad[row + i] += go * x[i];
                    dx[i] += go * self.weight.value[row + i];
                }
            }
        }
        Tensor::new(vec![n, fan_in], dx)
    }
}

/// Valid (unpadded, stride 1) cross-correlation along the last axis of
/// `[batch, channels, width]` inputs.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Conv1d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::he(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel],
                in_channels * kernel,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
            input: None,
        }
    }

    pub fn from_params(weight: Param, bias: Param) -> Self {
        Self {
            weight,
            bias,
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.weight.shape[0], self.weight.shape[1], self.weight.shape[2])
    }

    pub fn output_width(&self, width: usize) -> usize {
        (width + 1).saturating_sub(self.dims().2)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (oc, ic, k) = self.dims();
        if input.shape.len() != 3 || input.shape[1] != ic || input.shape[2] < k {
            return Err(NnError::Shape {
                op: "conv1d",
                expected: vec![input.batch(), ic, k.max(input.shape.get(2).copied().unwrap_or(0))],
                found: input.shape.clone(),
            });
        }
        let (n, w) = (input.shape[0], input.shape[2]);
        let ow = w - k + 1;
        let mut out = vec![0.0; n * oc * ow];
        for b in 0..n {
            let x = &input.data[b * ic * w..(b + 1) * ic * w];
            for o in 0..oc {
                let y = &mut out[(b * oc + o) * ow..(b * oc + o + 1) * ow];
                y.iter_mut().for_each(|v| *v = self.bias.value[o]);
                for i in 0..ic {
                    let xi = &x[i * w..(i + 1) * w];
                    let ker = &self.weight.value[(o * ic + i) * k..(o * ic + i + 1) * k];
                    for (t, v) in y.iter_mut().enumerate() {
                        *v += ker.iter().zip(&xi[t..t + k]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        self.input = Some(input.clone());
        Tensor::new(vec![n, oc, ow], out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or(NnError::NoCache("conv1d"))?;
        let (oc, ic, k) = self.dims();
        let (n, w) = (input.shape[0], input.shape[2]);
        let ow = w - k + 1;
        if grad.shape != [n, oc, ow] {
            return Err(NnError::Shape {
                op: "conv1d backward",
                expected: vec![n, oc, ow],
                found: grad.shape.clone(),
            });
        }
        let mut dx = vec![0.0; n * ic * w];
        for b in 0..n {
            let x = &input.data[b * ic * w..(b + 1) * ic * w];
            let dxb = &mut dx[b * ic * w..(b + 1) * ic * w];
            for o in 0..oc {
                let g = &grad.data[(b * oc + o) * ow..(b * oc + o + 1) * ow];
                self.bias.grad[o] += g.iter().sum::<f64>();
                for i in 0..ic {
                    let base = (o * ic + i) * k;
                    for s in 0..k {
                        let wv = self.weight.value[base + s];
                        let mut acc = 0.0;
                        for t in 0..ow {
                            acc += g[t] * x[i * w + t + s];
                            dxb[i * w + t + s] += g[t] * wv;
                        }
                        self.weight.grad[base + s] += acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, ic, w], dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = input.data.iter().map(|&x| x > 0.0).collect();
        let data = input.data.iter().map(|&x| x.max(0.0)).collect();
        self.mask = Some(mask);
        Tensor::new(input.shape.clone(), data)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NnError::NoCache("relu"))?;
        let data = grad
            .data
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(grad.shape.clone(), data)
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    mask: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, mask: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mask: Vec<bool> = input.data.iter().map(|&x| x > 0.0).collect();
        let data = input
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { self.slope * x })
            .collect();
        self.mask = Some(mask);
        Tensor::new(input.shape.clone(), data)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NnError::NoCache("leaky_relu"))?;
        let data = grad
            .data
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { self.slope * g })
            .collect();
        Tensor::new(grad.shape.clone(), data)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training,
/// and evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(Tensor::new(input.shape.clone(), input.data.clone())?);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..input.len())
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.forward_with_mask(input, mask)
    }

    /// Applies an explicit mask of per-element multipliers.
    pub fn forward_with_mask(&mut self, input: &Tensor, mask: Vec<f64>) -> Result<Tensor> {
        if mask.len() != input.len() {
            return Err(NnError::Shape {
                op: "dropout mask",
                expected: input.shape.clone(),
                found: vec![mask.len()],
            });
        }
        let data = input.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.mask = Some(mask);
        Tensor::new(input.shape.clone(), data)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Ok(Tensor::new(grad.shape.clone(), grad.data.clone())?),
            Some(mask) => Tensor::new(
                grad.shape.clone(),
                grad.data.iter().zip(mask).map(|(g, m)| g * m).collect(),
            ),
        }
    }
}

/// Identity forward; multiplies the gradient by `-gamma` on the way back.
#[derive(Debug, Clone, Copy)]
pub struct GradientReversal {
    pub gamma: f64,
}

impl GradientReversal {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) {
            return Err(NnError::Config(format!("gradient reversal weight {gamma} must be >= 0")));
        }
        Ok(Self { gamma })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Tensor::new(input.shape.clone(), input.data.clone())
    }

    pub fn backward(&self, grad: &Tensor) -> Result<Tensor> {
        Tensor::new(grad.shape.clone(), grad.data.iter().map(|g| -self.gamma * g).collect())
    }
}

/// `[batch, ...] -> [batch, prod(...)]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.shape = Some(input.shape.clone());
        let n = input.batch();
        let rest = if n == 0 { 0 } else { input.len() / n };
        Tensor::new(vec![n, rest], input.data.clone())
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.shape.clone().ok_or(NnError::NoCache("flatten"))?;
        Tensor::new(shape, grad.data.clone())
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Relu(Relu),
    LeakyRelu(LeakyRelu),
    Dropout(Dropout),
    Grl(GradientReversal),
    Flatten(Flatten),
    DctTemporal(DctTemporal),
}

impl Layer {
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Self::Dense(l) => l.forward(input),
            Self::Conv1d(l) => l.forward(input),
            Self::Relu(l) => l.forward(input),
            Self::LeakyRelu(l) => l.forward(input),
            Self::Dropout(l) => l.forward(input, mode),
            Self::Grl(l) => l.forward(input),
            Self::Flatten(l) => l.forward(input),
            Self::DctTemporal(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Self::Dense(l) => l.backward(grad),
            Self::Conv1d(l) => l.backward(grad),
            Self::Relu(l) => l.backward(grad),
            Self::LeakyRelu(l) => l.backward(grad),
            Self::Dropout(l) => l.backward(grad),
            Self::Grl(l) => l.backward(grad),
            Self::Flatten(l) => l.backward(grad),
            Self::DctTemporal(l) => l.backward(grad),
        }
    }
}

impl Module for Layer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Self::Dense(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Self::Conv1d(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Self::DctTemporal(l) => l.visit(f),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for Sequential {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let mut d = Dense::from_params(Param::new("w", vec![3, 3], eye), Param::zeros("b", vec![3]));
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data, x.data);
    }

    #[test]
    fn identity_tap_conv_trims_edges() {
        let mut c = Conv1d::from_params(
            Param::new("w", vec![1, 1, 3], vec![0.0, 1.0, 0.0]),
            Param::zeros("b", vec![1]),
        );
        let x = Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape, vec![1, 1, 3]);
        assert_eq!(y.data, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut d = Dense::new("d", 4, 2, &mut rng());
        let err = d.forward(&Tensor::zeros(vec![3, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[3, 5]"), "{msg}");
    }

    #[test]
    fn grl_reverses_and_scales() {
        let g = GradientReversal::new(1.0).unwrap();
        let grad = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        assert_eq!(g.backward(&grad).unwrap().data, vec![-1.0, 2.0]);
        let g = GradientReversal::new(0.0).unwrap();
        assert!(g.backward(&grad).unwrap().data.iter().all(|&x| x == 0.0));
        assert!(GradientReversal::new(-0.1).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut d = Dropout::new(0.5, 3).unwrap();
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap().data, x.data);
        assert!(Dropout::new(1.0, 0).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut d = Dropout::new(0.5, 7).unwrap();
        let x = Tensor::new(vec![1, 64], (0..64).map(|i| 0.5 + i as f64 / 32.0).collect()).unwrap();
        let masks = 10_000;
        let mut ratio = 0.0;
        for _ in 0..masks {
            let y = d.forward(&x, Mode::Train).unwrap();
            ratio += y.data.iter().zip(&x.data).map(|(y, x)| y / x).sum::<f64>();
        }
        let mean = ratio / (masks * 64) as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn leaky_relu_slope() {
        let mut l = LeakyRelu::new(0.2);
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap().data, vec![-0.2, 2.0]);
        let g = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(l.backward(&g).unwrap().data, vec![0.2, 1.0]);
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut d = Dense::new("d", 2, 2, &mut rng());
        assert!(matches!(d.backward(&Tensor::zeros(vec![1, 2])), Err(NnError::NoCache("dense"))));
    }
}
