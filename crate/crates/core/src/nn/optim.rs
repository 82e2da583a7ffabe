use serde::{Deserialize, Serialize};

use super::{Module, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a module's parameters in visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        let mut bad = None;
        let mut count = 0;
        module.visit_params(&mut |p| {
            count += 1;
            if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(p.name.clone());
            }
        });
        if let Some(param) = bad {
            return Err(NnError::Divergence { param });
        }
        if self.m.len() != count {
            self.m.clear();
            self.v.clear();
            module.visit_params(&mut |p| {
                self.m.push(vec![0.0; p.value.len()]);
                self.v.push(vec![0.0; p.value.len()]);
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit_params(&mut |p| {
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            idx += 1;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopMode {
    Slow,
    Fast,
}

impl EarlyStopMode {
    /// `(halve_after, stop_after)` in epochs.
    pub fn patience(self) -> (usize, usize) {
        match self {
            Self::Slow => (5, 15),
            Self::Fast => (3, 6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStopDecision {
    Continue,
    HalveLr,
    Stop,
}

/// Validation-loss driven learning-rate halving and termination.
///
/// The halving counter restarts after each halving, so a plateau halves the
/// rate every `halve_after` epochs until `stop_after` epochs have passed
/// without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopPolicy {
    pub mode: EarlyStopMode,
    pub halve_after: usize,
    pub stop_after: usize,
    pub best_loss: Option<f64>,
    pub epochs_since_best: usize,
    since_halving: usize,
}

impl EarlyStopPolicy {
    pub fn new(mode: EarlyStopMode) -> Self {
        let (halve_after, stop_after) = mode.patience();
        Self {
            mode,
            halve_after,
            stop_after,
            best_loss: None,
            epochs_since_best: 0,
            since_halving: 0,
        }
    }

    /// Returns true when `loss` improved on the best so far.
    pub fn improved(&self, loss: f64) -> bool {
        self.best_loss.map_or(true, |b| loss < b)
    }

    pub fn update(&mut self, loss: f64) -> EarlyStopDecision {
        if self.improved(loss) {
            self.best_loss = Some(loss);
            self.epochs_since_best = 0;
            self.since_halving = 0;
            return EarlyStopDecision::Continue;
        }
        self.epochs_since_best += 1;
        self.since_halving += 1;
        if self.epochs_since_best >= self.stop_after {
            EarlyStopDecision::Stop
        } else if self.since_halving >= self.halve_after {
            self.since_halving = 0;
            EarlyStopDecision::HalveLr
        } else {
            EarlyStopDecision::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct Bowl {
        p: Param,
    }

    impl Module for Bowl {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.p);
        }
    }

    impl Bowl {
        // loss = (x - 3)^2 + 2 (y + 1)^2
        fn loss_and_grad(&mut self) -> f64 {
            let (x, y) = (self.p.value[0], self.p.value[1]);
            self.p.grad = vec![2.0 * (x - 3.0), 4.0 * (y + 1.0)];
            (x - 3.0).powi(2) + 2.0 * (y + 1.0).powi(2)
        }
    }

    fn bowl() -> Bowl {
        Bowl {
            p: Param::new("bowl", vec![2], vec![2.0, 0.0]),
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut b = bowl();
        let before = b.flat_params();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut b).unwrap();
        }
        for (a, c) in before.iter().zip(b.flat_params()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut b = bowl();
        let mut adam = Adam::new(AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..2000 {
            b.p.grad = vec![0.37, -5.0];
            let before = b.p.value[0];
            adam.step(&mut b).unwrap();
            last = before - b.p.value[0];
        }
        assert!((last - 1e-3).abs() < 1e-9, "step {last}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut b = bowl();
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5000 {
            b.loss_and_grad();
            adam.step(&mut b).unwrap();
        }
        assert!(b.loss_and_grad() < 1e-6);
    }

    #[test]
    fn nan_gradient_names_param() {
        let mut b = bowl();
        b.p.grad = vec![f64::NAN, 0.0];
        let before = b.flat_params();
        let err = Adam::new(AdamConfig::default()).step(&mut b).unwrap_err();
        assert!(matches!(err, NnError::Divergence { ref param } if param == "bowl"));
        assert_eq!(before, b.flat_params());
    }

    fn first(policy: &mut EarlyStopPolicy, d: EarlyStopDecision, losses: impl Iterator<Item = f64>) -> Option<usize> {
        losses
            .enumerate()
            .find(|(_, l)| policy.update(*l) == d)
            .map(|(i, _)| i + 1)
    }

    #[test]
    fn slow_policy_plateau() {
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Slow);
        assert_eq!(first(&mut p, EarlyStopDecision::HalveLr, std::iter::repeat(1.0)), Some(6));
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Slow);
        assert_eq!(first(&mut p, EarlyStopDecision::Stop, std::iter::repeat(1.0)), Some(16));
    }

    #[test]
    fn fast_policy_plateau() {
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Fast);
        assert_eq!(first(&mut p, EarlyStopDecision::HalveLr, std::iter::repeat(1.0)), Some(4));
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Fast);
        assert_eq!(first(&mut p, EarlyStopDecision::Stop, std::iter::repeat(1.0)), Some(7));
    }

    #[test]
    fn decreasing_losses_never_halve() {
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Slow);
        for e in 0..20 {
            assert_eq!(p.update(10.0 - e as f64 * 0.1), EarlyStopDecision::Continue);
        }
    }

    #[test]
    fn improvement_resets_counters() {
        let mut p = EarlyStopPolicy::new(EarlyStopMode::Fast);
        for l in [1.0, 1.0, 1.0] {
            p.update(l);
        }
        p.update(0.5);
        assert_eq!(p.epochs_since_best, 0);
        assert_eq!(first(&mut p, EarlyStopDecision::HalveLr, std::iter::repeat(0.5)), Some(3));
    }
}
