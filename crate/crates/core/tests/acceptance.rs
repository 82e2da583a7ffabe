//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use scaloforge::augmentation::{
    acgan_source_loss, cluster_benchmark, run_scheme, sample_filter_framewise, sample_filter_segmentwise,
    segment_accuracy, train_baseline, Acgan, AcganConfig, AugmentError, FrameGenerator, FrameScorer,
    SampleFilterConfig, SchemeConfig, SegmentGenerator, SegmentScorer, SplitKind, Verdict,
};
use scaloforge::cli::{cmd_extract, cmd_train, fuse_average_voting, evaluate, CommandArgs, ExperimentConfig, ScoreTable};
use scaloforge::features::{extract_fbank, extract_scalogram, StftConfig};
use scaloforge::filterbank::{build_wavelet_scale, count_constant_q, count_evenly_spaced, WaveletScaleParams};
use scaloforge::nn::gradcheck::{numerical_gradient, relative_error};
use scaloforge::nn::{
    softmax_xent, ClassifierSpec, Conv1d, DctTemporal, Dense, Dropout, EarlyStopDecision, EarlyStopMode,
    EarlyStopPolicy, FrameClassifier, Layer, LeakyRelu, Mode, Module, Relu, Tensor,
};
use scaloforge::oracle::{compare_paths, dominant_filter_agreement, OracleConfig};
use scaloforge::signal_io::{
    parse_manifest, synth_signal, synth_stereo, AudioClip, ChannelMode, SynthKind, SynthSpec,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(elapsed < limit, format!("{detail}; {elapsed:.2?} (limit {limit:?})"))
}

fn single_core<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn reference_scale() -> WaveletScaleParams {
    WaveletScaleParams::new(24000.0, 0.5, 0.341, 35)
}

fn filter_counts() -> Outcome {
    let start = Instant::now();
    let params = reference_scale();
    let k = count_constant_q(&params).map_err(|e| e.to_string())?;
    let p = count_evenly_spaced(params.q);
    let j = build_wavelet_scale(&params).map_err(|e| e.to_string())?.len();
    let elapsed = start.elapsed();
    let detail = format!("K={k} P={p} J={j}");
    check((k, p, j) == (241, 49, 290), detail.clone())?;
    within(elapsed, Duration::from_millis(1), detail)
}

fn low_frequency_boundary() -> Outcome {
    let lambda_p = reference_scale().junction_frequency();
    let bank = build_wavelet_scale(&reference_scale()).map_err(|e| e.to_string())?;
    let first_cq = bank.centers[bank.evenly_spaced];
    check(
        (lambda_p - 205.28).abs() <= 0.05 && (first_cq - lambda_p).abs() < 1e-9,
        format!("lambda_P = {lambda_p:.4} Hz, first constant-Q centre {first_cq:.4} Hz"),
    )
}

fn shape_laws() -> Outcome {
    let clip = synth_stereo(&SynthSpec::new(SynthKind::WhiteNoise, 0.0, 10.0, 48_000, 11)).map_err(|e| e.to_string())?;
    let stft = StftConfig::new(0.512, 0.171, 48_000);
    let (scalogram, t_scal) = single_core(|| {
        let start = Instant::now();
        let map = extract_scalogram(&clip, ChannelMode::AveDiff, &reference_scale(), &stft);
        (map, start.elapsed())
    });
    let (fbank, t_fbank) = single_core(|| {
        let start = Instant::now();
        let map = extract_fbank(&clip, ChannelMode::LeftRight, 128, true);
        (map, start.elapsed())
    });
    let (s, f) = (
        scalogram.map_err(|e| e.to_string())?.shape(),
        fbank.map_err(|e| e.to_string())?.shape(),
    );
    let detail = format!("scalogram {s:?} in {t_scal:.2?}, fbank+deltas {f:?} in {t_fbank:.2?}");
    check(s == (58, 2, 290) && f == (500, 6, 128), detail.clone())?;
    check(t_scal < Duration::from_secs(5) && t_fbank < Duration::from_secs(5), detail)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = OracleConfig::desk();
    let bank = build_wavelet_scale(&cfg.scale).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let all: Vec<usize> = (0..bank.len()).collect();
    let chosen: Vec<usize> = all.choose_multiple(&mut rng, 10).copied().collect();
    let tones = chosen
        .par_iter()
        .map(|&k| {
            let clip = synth_signal(&SynthSpec::new(SynthKind::Tone, bank.centers[k], 2.0, cfg.rate, 0))?;
            Ok::<_, Box<dyn std::error::Error + Send + Sync>>(compare_paths(&clip, k, &cfg)?)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let worst = tones.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let any_floor = tones.iter().any(|c| c.at_floor || c.frames_compared == 0);
    let noise = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let clip = synth_signal(&SynthSpec::new(SynthKind::WhiteNoise, 0.0, 3.0, cfg.rate, seed))?;
            Ok::<_, Box<dyn std::error::Error + Send + Sync>>(dominant_filter_agreement(&clip, &cfg)?.fraction())
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let min_agree = noise.iter().copied().fold(1.0, f64::min);
    let detail = format!(
        "filters {chosen:?}: worst tone rel err {worst:.4}; min noise argmax agreement {min_agree:.3}"
    );
    check(worst <= 0.10 && !any_floor && min_agree >= 0.90, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(60), detail)
}

const H: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Worst relative error of input and parameter gradients under `<r, layer(x)>`.
fn layer_error(mut layer: Layer, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> f64 {
    let numel: usize = shape.iter().product();
    let x = Tensor::new(shape.clone(), random(rng, numel)).unwrap();
    let out = layer.forward(&x, Mode::Eval).unwrap();
    let r = random(rng, out.len());
    let loss = |l: &mut Layer, x: &Tensor| -> f64 {
        let y = l.forward(x, Mode::Eval).unwrap();
        y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    layer.zero_grad();
    layer.forward(&x, Mode::Eval).unwrap();
    let dx = layer.backward(&Tensor::new(out.shape.clone(), r.clone()).unwrap()).unwrap();
    let mut probe = layer.clone();
    let numeric_x = numerical_gradient(|v| loss(&mut probe, &Tensor::new(shape.clone(), v.to_vec()).unwrap()), &x.data, H);
    let mut worst = relative_error(&dx.data, &numeric_x);
    let analytic = layer.flat_grads();
    if !analytic.is_empty() {
        let mut probe = layer.clone();
        let numeric = numerical_gradient(
            |v| {
                probe.set_flat_params(v);
                loss(&mut probe, &x)
            },
            &layer.flat_params(),
            H,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn grl_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = rng.gen_range(0.05..1.0);
    let (channels, filters, classes, cities) = (rng.gen_range(1..3), rng.gen_range(5..8), rng.gen_range(2..5), rng.gen_range(2..4));
    let spec = ClassifierSpec {
        hidden: 5,
        seed,
        ..ClassifierSpec::new(channels, filters, classes).with_cities(cities, gamma)
    };
    let mut model = FrameClassifier::new(spec).unwrap();
    let b = 4;
    let x = Tensor::new(vec![b, channels, filters], random(&mut rng, b * channels * filters)).unwrap();
    let scene: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
    let city: Vec<usize> = (0..b).map(|_| rng.gen_range(0..cities)).collect();
    model.zero_grad();
    model.loss_and_backward(&x, &scene, Some(&city), Mode::Eval).unwrap();
    let mut trunk = Vec::new();
    model.visit_trunk_params(&mut |p| trunk.extend_from_slice(&p.grad));
    let theta = model.flat_params();
    let mut probe = model.clone();
    let numeric = numerical_gradient(
        |v| {
            probe.set_flat_params(v);
            let (s, c) = probe.forward(&x, Mode::Eval).unwrap();
            softmax_xent(&s, &scene).unwrap().loss - gamma * softmax_xent(&c.unwrap(), &city).unwrap().loss
        },
        &theta,
        H,
    );
    relative_error(&trunk, &numeric[..trunk.len()])
}

fn acgan_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let (frame_len, classes, n) = (rng.gen_range(2..6), rng.gen_range(2..5), rng.gen_range(2..7));
    let config = AcganConfig {
        z_dim: rng.gen_range(2..5),
        hidden: rng.gen_range(3..7),
        gamma_aux: rng.gen_range(0.05..1.0),
        seed,
        ..AcganConfig::default()
    };
    let mut gan = Acgan::new(config, frame_len, classes).unwrap();
    let real = Tensor::new(vec![n, frame_len], random(&mut rng, n * frame_len)).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let z = gan.generator.sample_noise(n);

    gan.discriminator_objective(&real, &labels, &z).unwrap();
    let analytic = gan.discriminator.flat_grads();
    let mut probe = gan.clone();
    let numeric = numerical_gradient(
        |v| {
            probe.discriminator.set_flat_params(v);
            probe.discriminator_objective(&real, &labels, &z).unwrap().total()
        },
        &gan.discriminator.flat_params(),
        H,
    );
    let d_err = relative_error(&analytic, &numeric);

    gan.generator_objective(&labels, &z).unwrap();
    let analytic = gan.generator.flat_grads();
    let mut probe = gan.clone();
    let numeric = numerical_gradient(
        |v| {
            probe.generator.set_flat_params(v);
            probe.generator_objective(&labels, &z).unwrap()
        },
        &gan.generator.flat_params(),
        H,
    );
    (d_err, relative_error(&analytic, &numeric))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..10u64 {
        let (n, i, o) = (rng.gen_range(1..5), rng.gen_range(1..8), rng.gen_range(1..6));
        record("dense", layer_error(Layer::Dense(Dense::new("d", i, o, &mut rng)), vec![n, i], &mut rng));
        let (n, ic, oc, k) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let w = rng.gen_range(k..k + 6);
        record("conv1d", layer_error(Layer::Conv1d(Conv1d::new("c", ic, oc, k, &mut rng)), vec![n, ic, w], &mut rng));
        let shape = vec![rng.gen_range(1..4), rng.gen_range(1..9)];
        record("relu", layer_error(Layer::Relu(Relu::default()), shape.clone(), &mut rng));
        record("leaky_relu", layer_error(Layer::LeakyRelu(LeakyRelu::new(0.2)), shape, &mut rng));

        let n = rng.gen_range(1..12);
        let x = random(&mut rng, n);
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 2.0 } else { 0.0 }).collect();
        let r = random(&mut rng, n);
        let mut d = Dropout::new(0.5, seed).unwrap();
        d.forward_with_mask(&Tensor::new(vec![1, n], x.clone()).unwrap(), mask.clone()).unwrap();
        let dx = d.backward(&Tensor::new(vec![1, n], r.clone()).unwrap()).unwrap();
        let numeric = numerical_gradient(|v| v.iter().zip(&mask).zip(&r).map(|((x, m), r)| x * m * r).sum(), &x, H);
        record("dropout", relative_error(&dx.data, &numeric));

        let (b, t, f) = (rng.gen_range(1..3), rng.gen_range(2..8), rng.gen_range(1..4));
        let mut dct = DctTemporal::new("dct", t, f, &mut rng);
        dct.weight_x.value = random(&mut rng, t * f);
        dct.weight_y.value = random(&mut rng, t * f);
        record("dct_temporal", layer_error(Layer::DctTemporal(dct), vec![b, t, f], &mut rng));

        let (n, c) = (rng.gen_range(1..6), rng.gen_range(2..7));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let logits: Vec<f64> = random(&mut rng, n * c).into_iter().map(|v| 3.0 * v).collect();
        let out = softmax_xent(&Tensor::new(vec![n, c], logits.clone()).unwrap(), &labels).unwrap();
        let numeric = numerical_gradient(
            |v| softmax_xent(&Tensor::new(vec![n, c], v.to_vec()).unwrap(), &labels).unwrap().loss,
            &logits,
            H,
        );
        record("softmax_xent", relative_error(&out.grad.data, &numeric));

        record("grl_minimax", grl_error(seed));
        let (d_err, g_err) = acgan_errors(seed);
        record("acgan_discriminator", d_err);
        record("acgan_generator", g_err);
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = format!(
        "worst rel err {max:.2e} over {} checks x 10 ({})",
        worst.len(),
        worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
    );
    check(max < GRAD_TOL, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(30), detail)
}

fn closed_form_losses() -> Outcome {
    let mut worst_ce: f64 = 0.0;
    for c in 2..=12usize {
        for n in [1usize, 3, 7] {
            let logits = Tensor::new(vec![n, c], vec![0.37; n * c]).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            let loss = softmax_xent(&logits, &labels).map_err(|e| e.to_string())?.loss;
            worst_ce = worst_ce.max((loss - (c as f64).ln()).abs());
        }
    }
    let mut worst_gan: f64 = 0.0;
    for n in [1usize, 2, 10, 64] {
        let half = vec![0.5; n];
        worst_gan = worst_gan.max((acgan_source_loss(&half, &half) / n as f64 - 2.0 * 2f64.ln()).abs());
    }
    check(
        worst_ce <= 1e-12 && worst_gan <= 1e-12,
        format!("|CE - ln C| <= {worst_ce:.1e}, |L_source/pair - 2 ln 2| <= {worst_gan:.1e}"),
    )
}

fn dct_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.gen_range(1..40);
        let b = rng.gen_range(1..4);
        let mut layer = DctTemporal::new("dct", 18, n, &mut rng);
        layer.select_filtered_input();
        let x = Tensor::new(vec![b, 18, n], (0..b * 18 * n).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let y = layer.forward(&x).map_err(|e| e.to_string())?;
        worst = worst.max(x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-6, format!("max |out - in| = {worst:.2e} over 10 random 18xN chunks"))
}

/// Frames are `[id, scene, p]`; the stub classifier puts `p` on `scene`.
struct QueueGen {
    frames: Vec<Vec<f64>>,
    next: usize,
}

impl FrameGenerator for QueueGen {
    fn generate_frames(&mut self, _scene: usize, count: usize) -> Result<Vec<Vec<f64>>, AugmentError> {
        let out = self.frames[self.next..self.next + count].to_vec();
        self.next += count;
        Ok(out)
    }
}

struct StubClassifier {
    classes: usize,
    scored: Vec<Vec<f64>>,
}

impl StubClassifier {
    fn probs(&self, frame: &[f64]) -> Vec<f64> {
        let (scene, p) = (frame[1] as usize, frame[2]);
        let rest = (1.0 - p) / (self.classes - 1) as f64;
        (0..self.classes).map(|c| if c == scene { p } else { rest }).collect()
    }
}

impl FrameScorer for StubClassifier {
    fn frame_probabilities(&mut self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AugmentError> {
        self.scored.extend(frames.iter().cloned());
        Ok(frames.iter().map(|f| self.probs(f)).collect())
    }
}

impl SegmentScorer for StubClassifier {
    fn segment_probabilities(&mut self, segments: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AugmentError> {
        Ok(segments.iter().map(|s| self.probs(&s[..3])).collect())
    }
}

struct RandomSegments {
    rng: ChaCha8Rng,
    classes: usize,
    margin: f64,
}

impl SegmentGenerator for RandomSegments {
    fn generate_segments(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>, AugmentError> {
        Ok((0..count)
            .map(|_| vec![0.0, scene as f64, probe_probability(&mut self.rng, self.classes, self.margin)])
            .collect())
    }
}

/// Mostly near the acceptance window, with exact boundary values mixed in.
fn probe_probability(rng: &mut ChaCha8Rng, classes: usize, margin: f64) -> f64 {
    let centre = 1.0 / classes as f64;
    match rng.gen_range(0..10) {
        0 => centre - margin,
        1 => centre + margin,
        2..=4 => rng.gen_range(0.0..1.0),
        _ => centre + rng.gen_range(-2.0 * margin..2.0 * margin),
    }
}

fn oracle_in_margin(p: f64, classes: usize, margin: f64) -> bool {
    let centre = 1.0 / classes as f64;
    p > centre - margin && p < centre + margin
}

fn sample_filter_soundness() -> Outcome {
    let (classes, margin) = (4usize, 0.03);
    let per_scene = 2500;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut frames = Vec::new();
    for scene in 0..classes {
        for _ in 0..per_scene {
            let id = frames.len() as f64;
            frames.push(vec![id, scene as f64, probe_probability(&mut rng, classes, margin)]);
        }
    }
    let expected: HashSet<u64> = frames
        .iter()
        .filter(|f| oracle_in_margin(f[2], classes, margin))
        .map(|f| f[0] as u64)
        .collect();
    let config = SampleFilterConfig {
        classes,
        margin,
        n_sample: per_scene,
        t_sample: 1,
    };
    let mut stub = StubClassifier { classes, scored: Vec::new() };
    let mut gens = [QueueGen { frames: frames.clone(), next: 0 }];
    let outcome = sample_filter_framewise(&mut stub, &mut gens, &config, (1, 1, 3)).map_err(|e| e.to_string())?;
    let retained: HashSet<u64> = (0..outcome.samples.len()).map(|i| outcome.samples.segment(i)[0] as u64).collect();
    let false_accepts = retained.difference(&expected).count();
    let false_rejects = expected.difference(&retained).count();
    let scenes_ok = (0..outcome.samples.len()).all(|i| outcome.samples.scene[i] == outcome.samples.segment(i)[1] as usize);
    let detail = format!(
        "{} frames scored, {} retained, {false_accepts} false accepts, {false_rejects} false rejects",
        stub.scored.len(),
        retained.len()
    );
    check(stub.scored.len() == 10_000 && false_accepts == 0 && false_rejects == 0 && scenes_ok, detail.clone())?;

    // Caps under tight quotas, frame-wise and segment-wise.
    let mut violations = Vec::new();
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let config = SampleFilterConfig {
            classes,
            margin,
            n_sample: rng.gen_range(1..12),
            t_sample: rng.gen_range(1..6),
        };
        let l = rng.gen_range(1..4);
        let k = rng.gen_range(1..4);
        let pool: Vec<Vec<f64>> = (0..20_000)
            .map(|i| vec![i as f64, 0.0, probe_probability(&mut rng, classes, margin)])
            .collect();
        let mut gens: Vec<QueueGen> = (0..k).map(|_| QueueGen { frames: pool.clone(), next: 0 }).collect();
        let mut scene_gens: Vec<SceneGen> = gens.drain(..).map(SceneGen).collect();
        let mut stub = StubClassifier { classes, scored: Vec::new() };
        let out = sample_filter_framewise(&mut stub, &mut scene_gens, &config, (l, 1, 3)).map_err(|e| e.to_string())?;
        for scene in 0..classes {
            let segs = out.samples.scene.iter().filter(|&&s| s == scene).count();
            if segs > config.n_sample || out.attempts[scene].iter().any(|&a| a > config.t_sample) {
                violations.push(format!("frame-wise trial {trial} scene {scene}"));
            }
        }
        let mut seg_gens: Vec<RandomSegments> = (0..k)
            .map(|g| RandomSegments {
                rng: ChaCha8Rng::seed_from_u64(trial * 10 + g as u64),
                classes,
                margin,
            })
            .collect();
        let out = sample_filter_segmentwise(&mut stub, &mut seg_gens, &config, (1, 1, 3)).map_err(|e| e.to_string())?;
        for scene in 0..classes {
            let segs = out.samples.scene.iter().filter(|&&s| s == scene).count();
            let wrong = (0..out.samples.len())
                .filter(|&i| out.samples.scene[i] == scene)
                .any(|i| !oracle_in_margin(out.samples.segment(i)[2], classes, margin));
            if segs > config.n_sample || wrong || out.attempts[scene].iter().any(|&a| a > config.t_sample) {
                violations.push(format!("segment-wise trial {trial} scene {scene}"));
            }
        }
    }
    check(violations.is_empty(), format!("{detail}; cap violations: {violations:?}"))
}

/// Relabels queued frames with the requested scene.
struct SceneGen(QueueGen);

impl FrameGenerator for SceneGen {
    fn generate_frames(&mut self, scene: usize, count: usize) -> Result<Vec<Vec<f64>>, AugmentError> {
        let mut frames = self.0.generate_frames(scene, count)?;
        frames.iter_mut().for_each(|f| f[1] = scene as f64);
        Ok(frames)
    }
}

fn scheme_end_to_end() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=5u64 {
        let result = single_core(|| -> Result<_, AugmentError> {
            let (train, test) = cluster_benchmark(2000, 500, seed);
            let spec = ClassifierSpec {
                hidden: 32,
                ..ClassifierSpec::new(1, train.filters, 4)
            };
            let config = SchemeConfig::new(spec, SplitKind::City, seed);
            let mut baseline = train_baseline(&train, &config)?;
            let report = run_scheme(&train, &config)?;
            let mut final_clf = report.classifier.clone();
            Ok((
                report,
                segment_accuracy(&mut baseline, &test)?,
                segment_accuracy(&mut final_clf, &test)?,
                config.max_iterations,
            ))
        });
        let (report, base, fin, max_iter) = result.map_err(|e| e.to_string())?;
        let records = &report.state.records;
        let accepts_sound = records
            .iter()
            .filter(|r| r.verdict == Verdict::Accept)
            .all(|r| matches!((r.acc_a, r.acc_b), (Some(a), Some(b)) if b > a));
        let chain_ok = records.len() <= max_iter && accepts_sound && fin >= base - 0.01;
        ok &= chain_ok;
        lines.push(format!(
            "seed {seed}: {} iterations, {} accepted, baseline {:.1}%, final {:.1}%",
            records.len(),
            report.accepted_iterations(),
            100.0 * base,
            100.0 * fin
        ));
    }
    let detail = lines.join("; ");
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(600), detail)
}

fn early_stop_policies() -> Outcome {
    let simulate = |mode| {
        let mut policy = EarlyStopPolicy::new(mode);
        let mut first_halving = None;
        for epoch in 1..=100usize {
            match policy.update(1.0) {
                EarlyStopDecision::HalveLr if first_halving.is_none() => first_halving = Some(epoch),
                EarlyStopDecision::Stop => return (first_halving, Some(epoch)),
                _ => {}
            }
        }
        (first_halving, None)
    };
    let slow = simulate(EarlyStopMode::Slow);
    let fast = simulate(EarlyStopMode::Fast);
    check(
        slow == (Some(6), Some(16)) && fast == (Some(4), Some(7)),
        format!("slow halves/stops at {slow:?}, fast at {fast:?}"),
    )
}

fn determinism() -> Outcome {
    let run = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config_path = common::write_corpus(dir.path(), &[1, 2, 3]);
        let config = ExperimentConfig::load(&config_path).map_err(|e| e.to_string())?;
        let args = CommandArgs {
            config: config_path,
            ..CommandArgs::default()
        };
        cmd_extract(&config, &args).map_err(|e| e.to_string())?;
        cmd_train(&config, &args).map_err(|e| e.to_string())?;
        let mut files = common::files(&dir.path().join("features"));
        files.extend(
            common::files(&dir.path().join("out"))
                .into_iter()
                .map(|(name, bytes)| (format!("out/{name}"), bytes)),
        );
        Ok(files)
    };
    let (a, b) = (run()?, run()?);
    let features = a.iter().filter(|(n, _)| n.ends_with(".sclf")).count();
    let checkpoints = a.iter().filter(|(n, _)| n.ends_with(".scck")).count();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        a.len() == b.len() && differing.is_empty() && features == 36 && checkpoints == 3,
        format!("{features} feature files and {checkpoints} checkpoints; differing: {differing:?}"),
    )
}

fn fusion_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ids: Vec<String> = (0..200).map(|i| format!("s{i}")).collect();
    let log_probs: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
            scaloforge::nn::log_softmax(&logits)
        })
        .collect();
    let system = ScoreTable { ids, log_probs };
    let single = system.predictions();
    let fused = fuse_average_voting(&[system.clone(), system.clone(), system], None).map_err(|e| e.to_string())?;
    let identical = fused == single;

    let manifest = parse_manifest(
        "id\tsource\tscene_label\tcity_label\tsplit\n\
         a1\tsynth:tone:100:1:8000:1\tA\tx\ttest\n\
         a2\tsynth:tone:100:1:8000:2\tA\tx\ttest\n\
         a3\tsynth:tone:100:1:8000:3\tA\tx\ttest\n\
         b1\tsynth:tone:200:1:8000:4\tB\tx\ttest\n",
    )
    .map_err(|e| e.to_string())?;
    let preds: Vec<(String, usize)> = ["a1", "a2", "a3", "b1"].iter().map(|id| (id.to_string(), 0)).collect();
    let report = evaluate(&preds, &manifest).map_err(|e| e.to_string())?;
    check(
        identical && (report.overall - 0.75).abs() < 1e-12 && (report.class_mean - 0.5).abs() < 1e-12,
        format!(
            "3 identical systems reproduce the single system: {identical}; imbalanced toy overall {} vs class mean {}",
            report.overall, report.class_mean
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("filter-count exactness", filter_counts),
        ("low-frequency boundary", low_frequency_boundary),
        ("shape laws", shape_laws),
        ("oracle equivalence", oracle_equivalence),
        ("gradient correctness", gradient_correctness),
        ("closed-form losses", closed_form_losses),
        ("DCT module identity", dct_identity),
        ("sample-filter soundness", sample_filter_soundness),
        ("scheme end-to-end", scheme_end_to_end),
        ("early-stop policies", early_stop_policies),
        ("determinism", determinism),
        ("fusion sanity", fusion_sanity),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if let Some(sel) = &filter {
            if !name.contains(sel.as_str()) && sel != &n.to_string() {
                continue;
            }
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

#[allow(dead_code)]
fn _clip_type_check(_: &AudioClip) {}
