use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::layers::check_rank;
use super::{NnError, Param, Result, Tensor};

/// Orthonormal DCT-II and its inverse (DCT-III) of a fixed length, computed
/// through a `2N`-point FFT of the mirrored sequence.
#[derive(Clone)]
pub struct Dct {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `c_k exp(-iπk / 2N)` per output index.
    twiddles: Vec<Complex64>,
}

impl fmt::Debug for Dct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dct").field("len", &self.len).finish()
    }
}

fn scale(k: usize, len: usize) -> f64 {
    if k == 0 {
        (1.0 / len as f64).sqrt()
    } else {
        (2.0 / len as f64).sqrt()
    }
}

impl Dct {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "DCT length must be positive");
        let mut planner = FftPlanner::new();
        let twiddles = (0..len)
            .map(|k| {
                let phase = -std::f64::consts::PI * k as f64 / (2.0 * len as f64);
                Complex64::from_polar(scale(k, len), phase)
            })
            .collect();
        Self {
            len,
            forward: planner.plan_fft_forward(2 * len),
            inverse: planner.plan_fft_inverse(2 * len),
            twiddles,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len);
        let mut buf: Vec<Complex64> = x
            .iter()
            .chain(x.iter().rev())
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.forward.process(&mut buf);
        buf.iter()
            .zip(&self.twiddles)
            .map(|(y, t)| 0.5 * (y * t).re)
            .collect()
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len);
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * self.len];
        for (k, (&c, t)) in coeffs.iter().zip(&self.twiddles).enumerate() {
            buf[k] = c * t.conj();
        }
        self.inverse.process(&mut buf);
        buf[..self.len].iter().map(|z| z.re).collect()
    }

    /// Applies the forward transform to every column of a `len x cols` block.
    fn forward_columns(&self, block: &[f64], cols: usize) -> Vec<f64> {
        self.map_columns(block, cols, |c| self.forward(c))
    }

    fn inverse_columns(&self, block: &[f64], cols: usize) -> Vec<f64> {
        self.map_columns(block, cols, |c| self.inverse(c))
    }

    fn map_columns(&self, block: &[f64], cols: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; block.len()];
        let mut column = vec![0.0; self.len];
        for c in 0..cols {
            for (t, v) in column.iter_mut().enumerate() {
                *v = block[t * cols + c];
            }
            for (t, v) in f(&column).into_iter().enumerate() {
                out[t * cols + c] = v;
            }
        }
        out
    }
}

/// Dense orthonormal DCT-II matrix, `D[k][n] = c_k cos(πk(n + 1/2) / N)`.
pub fn dct2_matrix(len: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|k| {
            (0..len)
                .map(|n| {
                    scale(k, len)
                        * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / len as f64).cos()
                })
                .collect()
        })
        .collect()
}

/// Temporal re-weighting of a `chunk x features` block in the DCT domain.
///
/// The block `X` and its second-order statistic `Y` (element-wise square with
/// each column's time mean removed) are transformed along time, multiplied
/// by learnable weights, transformed back, concatenated to `chunk x 2N` and
/// mapped back to `chunk x N` by a per-frame linear layer.
#[derive(Debug, Clone)]
pub struct DctTemporal {
    pub chunk: usize,
    pub features: usize,
    pub weight_x: Param,
    pub weight_y: Param,
    /// `[N, 2N]`.
    pub out_weight: Param,
    pub out_bias: Param,
    dct: Dct,
    cache: Option<DctCache>,
}

#[derive(Debug, Clone)]
struct DctCache {
    input: Tensor,
    /// Per sample: DCT(X), DCT(Y), and the concatenated `[X~ | Y~]`.
    coeff_x: Vec<Vec<f64>>,
    coeff_y: Vec<Vec<f64>>,
    mixed: Vec<Vec<f64>>,
}

impl DctTemporal {
    /// Weights start at one (identity filtering) and the output map is He-initialized.
    pub fn new(name: &str, chunk: usize, features: usize, rng: &mut impl Rng) -> Self {
        let n = features;
        Self {
            chunk,
            features,
            weight_x: Param::new(format!("{name}.weight_x"), vec![chunk, n], vec![1.0; chunk * n]),
            weight_y: Param::new(format!("{name}.weight_y"), vec![chunk, n], vec![1.0; chunk * n]),
            out_weight: Param::he(format!("{name}.out_weight"), vec![n, 2 * n], 2 * n, rng),
            out_bias: Param::zeros(format!("{name}.out_bias"), vec![n]),
            dct: Dct::new(chunk),
            cache: None,
        }
    }

    /// Output map that copies the filtered `X~` and ignores `Y~`.
    pub fn select_filtered_input(&mut self) {
        let n = self.features;
        self.out_weight.value.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..n {
            self.out_weight.value[i * 2 * n + i] = 1.0;
        }
        self.out_bias.value.iter_mut().for_each(|b| *b = 0.0);
    }

    pub(super) fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight_x);
        f(&mut self.weight_y);
        f(&mut self.out_weight);
        f(&mut self.out_bias);
    }

    fn second_order(x: &[f64], chunk: usize, n: usize) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| v * v).collect();
        for c in 0..n {
            let mean = (0..chunk).map(|t| y[t * n + c]).sum::<f64>() / chunk as f64;
            for t in 0..chunk {
                y[t * n + c] -= mean;
            }
        }
        y
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        check_rank("dct_temporal", input, 3)?;
        let (t, n) = (self.chunk, self.features);
        if input.shape[1] != t {
            return Err(NnError::Chunk {
                expected: t,
                found: input.shape[1],
            });
        }
        if input.shape[2] != n {
            return Err(NnError::Shape {
                op: "dct_temporal",
                expected: vec![input.batch(), t, n],
                found: input.shape.clone(),
            });
        }
        let mut out = Vec::with_capacity(input.len());
        let mut cache = DctCache {
            input: input.clone(),
            coeff_x: Vec::new(),
            coeff_y: Vec::new(),
            mixed: Vec::new(),
        };
        for x in input.data.chunks_exact(t * n) {
            let y = Self::second_order(x, t, n);
            let cx = self.dct.forward_columns(x, n);
            let cy = self.dct.forward_columns(&y, n);
            let wx: Vec<f64> = cx.iter().zip(&self.weight_x.value).map(|(c, w)| c * w).collect();
            let wy: Vec<f64> = cy.iter().zip(&self.weight_y.value).map(|(c, w)| c * w).collect();
            let fx = self.dct.inverse_columns(&wx, n);
            let fy = self.dct.inverse_columns(&wy, n);
            let mut mixed = Vec::with_capacity(2 * t * n);
            for r in 0..t {
                mixed.extend_from_slice(&fx[r * n..(r + 1) * n]);
                mixed.extend_from_slice(&fy[r * n..(r + 1) * n]);
            }
            for row in mixed.chunks_exact(2 * n) {
                for o in 0..n {
                    let w = &self.out_weight.value[o * 2 * n..(o + 1) * 2 * n];
                    out.push(self.out_bias.value[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
                }
            }
            cache.coeff_x.push(cx);
            cache.coeff_y.push(cy);
            cache.mixed.push(mixed);
        }
        self.cache = Some(cache);
        Tensor::new(input.shape.clone(), out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(NnError::NoCache("dct_temporal"))?;
        if grad.shape != cache.input.shape {
            return Err(NnError::Shape {
                op: "dct_temporal backward",
                expected: cache.input.shape.clone(),
                found: grad.shape.clone(),
            });
        }
        let (t, n) = (self.chunk, self.features);
        let mut dx_all = Vec::with_capacity(grad.len());
        for (s, (g, x)) in grad
            .data
            .chunks_exact(t * n)
            .zip(cache.input.data.chunks_exact(t * n))
            .enumerate()
        {
            // output linear map
            let mixed = &cache.mixed[s];
            let mut dmixed = vec![0.0; 2 * t * n];
            for r in 0..t {
                let row = &mixed[r * 2 * n..(r + 1) * 2 * n];
                let drow = &mut dmixed[r * 2 * n..(r + 1) * 2 * n];
                for o in 0..n {
                    let go = g[r * n + o];
                    self.out_bias.grad[o] += go;
                    let base = o * 2 * n;
                    for i in 0..2 * n {
                        self.out_weight.grad[base + i] += go * row[i];
                        drow[i] += go * self.out_weight.value[base + i];
                    }
                }
            }
            let mut dfx = vec![0.0; t * n];
            let mut dfy = vec![0.0; t * n];
            for r in 0..t {
                dfx[r * n..(r + 1) * n].copy_from_slice(&dmixed[r * 2 * n..r * 2 * n + n]);
                dfy[r * n..(r + 1) * n].copy_from_slice(&dmixed[r * 2 * n + n..(r + 1) * 2 * n]);
            }
            // through IDCT (its adjoint is the forward DCT) and the weights
            let gx = self.dct.forward_columns(&dfx, n);
            let gy = self.dct.forward_columns(&dfy, n);
            for i in 0..t * n {
                self.weight_x.grad[i] += gx[i] * cache.coeff_x[s][i];
                self.weight_y.grad[i] += gy[i] * cache.coeff_y[s][i];
            }
            let wgx: Vec<f64> = gx.iter().zip(&self.weight_x.value).map(|(g, w)| g * w).collect();
            let wgy: Vec<f64> = gy.iter().zip(&self.weight_y.value).map(|(g, w)| g * w).collect();
            let mut dx = self.dct.inverse_columns(&wgx, n);
            let dy = self.dct.inverse_columns(&wgy, n);
            // Y = X^2 - colmean(X^2)
            for c in 0..n {
                let mean = (0..t).map(|r| dy[r * n + c]).sum::<f64>() / t as f64;
                for r in 0..t {
                    let i = r * n + c;
                    dx[i] += 2.0 * x[i] * (dy[i] - mean);
                }
            }
            dx_all.extend(dx);
        }
        self.cache = Some(cache);
        Tensor::new(grad.shape.clone(), dx_all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_dct_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [1, 2, 5, 18, 33] {
            let dct = Dct::new(len);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = dct2_matrix(len);
            let dense: Vec<f64> = m.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            for (a, b) in dct.forward(&x).iter().zip(&dense) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dct = Dct::new(18);
        for _ in 0..10 {
            let x: Vec<f64> = (0..18).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let back = dct.inverse(&dct.forward(&x));
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_weights_reproduce_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = DctTemporal::new("dct", 18, 5, &mut rng);
        m.select_filtered_input();
        let x = Tensor::new(vec![2, 18, 5], (0..180).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = m.forward(&x).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = DctTemporal::new("dct", 18, 3, &mut rng);
        m.select_filtered_input();
        m.weight_x.value.iter_mut().for_each(|w| *w = 0.0);
        let x = Tensor::new(vec![1, 18, 3], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert!(m.forward(&x).unwrap().data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_matches_dense_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (t, n) = (18, 4);
        let mut m = DctTemporal::new("dct", t, n, &mut rng);
        m.weight_x.value = (0..t * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        m.weight_y.value = (0..t * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        m.out_bias.value = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..t * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = m.forward(&Tensor::new(vec![1, t, n], x.clone()).unwrap()).unwrap();

        let d = dct2_matrix(t);
        let filter = |block: &[f64], w: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; t * n];
            for c in 0..n {
                let coeffs: Vec<f64> = (0..t)
                    .map(|k| w[k * n + c] * (0..t).map(|j| d[k][j] * block[j * n + c]).sum::<f64>())
                    .collect();
                for j in 0..t {
                    out[j * n + c] = (0..t).map(|k| d[k][j] * coeffs[k]).sum();
                }
            }
            out
        };
        let mut y: Vec<f64> = x.iter().map(|v| v * v).collect();
        for c in 0..n {
            let mean = (0..t).map(|j| y[j * n + c]).sum::<f64>() / t as f64;
            (0..t).for_each(|j| y[j * n + c] -= mean);
        }
        let fx = filter(&x, &m.weight_x.value);
        let fy = filter(&y, &m.weight_y.value);
        for r in 0..t {
            for o in 0..n {
                let w = &m.out_weight.value[o * 2 * n..(o + 1) * 2 * n];
                let expected = m.out_bias.value[o]
                    + (0..n).map(|i| w[i] * fx[r * n + i] + w[n + i] * fy[r * n + i]).sum::<f64>();
                assert!((fast.data[r * n + o] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wrong_chunk_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = DctTemporal::new("dct", 18, 3, &mut rng);
        assert!(matches!(
            m.forward(&Tensor::zeros(vec![1, 17, 3])),
            Err(NnError::Chunk { expected: 18, found: 17 })
        ));
    }
}
