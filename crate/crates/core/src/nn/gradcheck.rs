//! Central finite-difference helpers for checking analytic gradients.

/// Central differences of `f` at `x` with step `h`.
pub fn numerical_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        softmax_xent, ClassifierSpec, Conv1d, DctTemporal, Dense, Dropout, FrameClassifier, Layer, LeakyRelu, Mode,
        Module, Relu, Tensor,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;
    const TOL: f64 = 1e-4;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Checks input and parameter gradients of `layer` under the loss `<r, layer(x)>`.
    fn check_layer(mut layer: Layer, shape: Vec<usize>, rng: &mut ChaCha8Rng) {
        let numel: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), random(rng, numel)).unwrap();
        let out = layer.forward(&x, Mode::Eval).unwrap();
        let r = Tensor::new(out.shape.clone(), random(rng, out.len())).unwrap();
        let loss = |l: &mut Layer, x: &Tensor| -> f64 {
            let y = l.forward(x, Mode::Eval).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };

        layer.zero_grad();
        layer.forward(&x, Mode::Eval).unwrap();
        let dx = layer.backward(&r).unwrap();
        let analytic_params = layer.flat_grads();

        let mut probe = layer.clone();
        let numeric_x = numerical_gradient(
            |v| loss(&mut probe, &Tensor::new(shape.clone(), v.to_vec()).unwrap()),
            &x.data,
            H,
        );
        let err = relative_error(&dx.data, &numeric_x);
        assert!(err < TOL, "input grad rel err {err} for {shape:?}");

        if !analytic_params.is_empty() {
            let theta = layer.flat_params();
            let mut probe = layer.clone();
            let numeric_p = numerical_gradient(
                |v| {
                    probe.set_flat_params(v);
                    loss(&mut probe, &x)
                },
                &theta,
                H,
            );
            let err = relative_error(&analytic_params, &numeric_p);
            assert!(err < TOL, "param grad rel err {err} for {shape:?}");
        }
    }

    #[test]
    fn dense_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (n, i, o) = (rng.gen_range(1..5), rng.gen_range(1..8), rng.gen_range(1..6));
            let layer = Layer::Dense(Dense::new("d", i, o, &mut rng));
            check_layer(layer, vec![n, i], &mut rng);
        }
    }

    #[test]
    fn conv1d_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (n, ic, oc, k) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            let w = rng.gen_range(k..k + 6);
            let layer = Layer::Conv1d(Conv1d::new("c", ic, oc, k, &mut rng));
            check_layer(layer, vec![n, ic, w], &mut rng);
        }
    }

    #[test]
    fn activations_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let shape = vec![rng.gen_range(1..4), rng.gen_range(1..9)];
            check_layer(Layer::Relu(Relu::default()), shape.clone(), &mut rng);
            check_layer(Layer::LeakyRelu(LeakyRelu::new(0.2)), shape, &mut rng);
        }
    }

    #[test]
    fn dropout_with_fixed_mask_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = rng.gen_range(1..12);
            let x = random(&mut rng, n);
            let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 2.0 } else { 0.0 }).collect();
            let r = random(&mut rng, n);
            let mut d = Dropout::new(0.5, 0).unwrap();
            let t = Tensor::new(vec![1, n], x.clone()).unwrap();
            d.forward_with_mask(&t, mask.clone()).unwrap();
            let dx = d.backward(&Tensor::new(vec![1, n], r.clone()).unwrap()).unwrap();
            let numeric = numerical_gradient(
                |v| v.iter().zip(&mask).zip(&r).map(|((x, m), r)| x * m * r).sum(),
                &x,
                H,
            );
            assert!(relative_error(&dx.data, &numeric) < TOL);
        }
    }

    #[test]
    fn dct_temporal_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (b, t, n) = (rng.gen_range(1..3), rng.gen_range(2..8), rng.gen_range(1..4));
            let mut layer = DctTemporal::new("dct", t, n, &mut rng);
            layer.weight_x.value = random(&mut rng, t * n);
            layer.weight_y.value = random(&mut rng, t * n);
            check_layer(Layer::DctTemporal(layer), vec![b, t, n], &mut rng);
        }
    }

    #[test]
    fn softmax_xent_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (n, c) = (rng.gen_range(1..6), rng.gen_range(2..7));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let logits = random(&mut rng, n * c).into_iter().map(|v| 3.0 * v).collect::<Vec<_>>();
            let out = softmax_xent(&Tensor::new(vec![n, c], logits.clone()).unwrap(), &labels).unwrap();
            let numeric = numerical_gradient(
                |v| softmax_xent(&Tensor::new(vec![n, c], v.to_vec()).unwrap(), &labels).unwrap().loss,
                &logits,
                H,
            );
            let err = relative_error(&out.grad.data, &numeric);
            assert!(err < TOL, "xent rel err {err}");
        }
    }

    fn losses(model: &mut FrameClassifier, x: &Tensor, scene: &[usize], city: &[usize]) -> (f64, f64) {
        let (s, c) = model.forward(x, Mode::Eval).unwrap();
        (
            softmax_xent(&s, scene).unwrap().loss,
            softmax_xent(&c.unwrap(), city).unwrap().loss,
        )
    }

    #[test]
    fn trunk_gradient_follows_minimax_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gamma = 0.1;
        let spec = ClassifierSpec {
            hidden: 6,
            ..ClassifierSpec::new(1, 6, 3).with_cities(2, gamma)
        };
        let mut model = FrameClassifier::new(spec).unwrap();
        let x = Tensor::new(vec![4, 1, 6], random(&mut rng, 24)).unwrap();
        let scene = [0, 1, 2, 1];
        let city = [0, 1, 1, 0];
        model.zero_grad();
        model.loss_and_backward(&x, &scene, Some(&city), Mode::Eval).unwrap();

        let mut analytic_trunk = Vec::new();
        model.visit_trunk_params(&mut |p| analytic_trunk.extend_from_slice(&p.grad));
        let analytic_all = model.flat_grads();
        let theta = model.flat_params();
        let n_trunk = analytic_trunk.len();

        let mut probe = model.clone();
        let objective = numerical_gradient(
            |v| {
                probe.set_flat_params(v);
                let (ls, lc) = losses(&mut probe, &x, &scene, &city);
                ls - gamma * lc
            },
            &theta,
            H,
        );
        let err = relative_error(&analytic_trunk, &objective[..n_trunk]);
        assert!(err < TOL, "trunk rel err {err}");

        // The city branch minimizes its own loss.
        let city_grad = numerical_gradient(
            |v| {
                probe.set_flat_params(v);
                losses(&mut probe, &x, &scene, &city).1
            },
            &theta,
            H,
        );
        let tail = theta.len() - branch_param_count(&model);
        let err = relative_error(&analytic_all[tail..], &city_grad[tail..]);
        assert!(err < TOL, "branch rel err {err}");
    }

    fn branch_param_count(model: &FrameClassifier) -> usize {
        let s = &model.spec;
        let embed = {
            let w = s.filters + 2 - 2 * s.conv_width;
            4 * s.channels * w + s.channels * s.filters
        };
        let cities = s.cities.unwrap_or(0);
        embed * s.hidden + s.hidden + s.hidden * cities + cities
    }

    #[test]
    fn zero_gamma_detaches_trunk_from_city_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = ClassifierSpec::new(1, 6, 3).with_cities(2, 0.0);
        let mut with_city = FrameClassifier::new(spec).unwrap();
        let mut without = with_city.clone();
        let x = Tensor::new(vec![3, 1, 6], random(&mut rng, 18)).unwrap();
        with_city.zero_grad();
        with_city.loss_and_backward(&x, &[0, 1, 2], Some(&[0, 1, 0]), Mode::Eval).unwrap();
        without.zero_grad();
        without.loss_and_backward(&x, &[0, 1, 2], None, Mode::Eval).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        with_city.visit_trunk_params(&mut |p| a.extend_from_slice(&p.grad));
        without.visit_trunk_params(&mut |p| b.extend_from_slice(&p.grad));
        assert_eq!(a, b);
    }
}
