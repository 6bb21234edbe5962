//! Learning-rate decay driven by a one-sided test on the loss trend.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::fit::adam::OptState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayConfig {
    pub window: usize,
    pub factor: f64,
    pub floor: f64,
    /// One-sided confidence for "the loss is still decreasing".
    pub confidence: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            window: 100,
            factor: 0.5,
            floor: 1e-4,
            confidence: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayOutcome {
    /// Not enough history yet, or the loss is still significantly decreasing.
    Keep,
    Decayed,
    /// The test fired with the learning rate already at the floor.
    Converged,
}

/// OLS slope of `ys` against `0..n` and its t statistic. The statistic is
/// `±∞` for an exact line with nonzero slope and 0 for a constant sequence.
pub fn slope_t_statistic(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = y - y_mean - slope * (i as f64 - x_mean);
            r * r
        })
        .sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let t = if se > 0.0 {
        slope / se
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    (slope, t)
}

/// True unless the slope of `ys` is negative at the given confidence.
pub fn plateau_detected(ys: &[f64], confidence: f64) -> bool {
    if ys.len() < 3 {
        return false;
    }
    let (_, t) = slope_t_statistic(ys);
    let dist = StudentsT::new(0.0, 1.0, (ys.len() - 2) as f64).expect("positive dof");
    let critical = dist.inverse_cdf(1.0 - confidence);
    !(t < critical)
}

/// Appends nothing; inspects the last `window` losses in `state.history`
/// and halves the learning rate when they show no significant decrease.
/// The history is cleared after every decay.
pub fn lr_decay_check(state: &mut OptState, cfg: &DecayConfig) -> DecayOutcome {
    let w = cfg.window.max(3);
    if state.history.len() > w {
        let excess = state.history.len() - w;
        state.history.drain(..excess);
    }
    if state.history.len() < w || !plateau_detected(&state.history, cfg.confidence) {
        return DecayOutcome::Keep;
    }
    state.history.clear();
    if state.lr <= cfg.floor {
        return DecayOutcome::Converged;
    }
    state.lr = (state.lr * cfg.factor).max(cfg.floor);
    DecayOutcome::Decayed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::adam::AdamConfig;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn state_with(history: Vec<f64>) -> OptState {
        let mut s = OptState::new(1, AdamConfig::default());
        s.history = history;
        s
    }

    #[test]
    fn decreasing_sequence_keeps_rate() {
        let mut s = state_with((0..100).map(|i| 10.0 - 0.01 * i as f64).collect());
        assert_eq!(lr_decay_check(&mut s, &DecayConfig::default()), DecayOutcome::Keep);
        assert_eq!(s.lr, 0.02);
    }

    #[test]
    fn constant_sequence_decays() {
        let mut s = state_with(vec![1.0; 100]);
        assert_eq!(lr_decay_check(&mut s, &DecayConfig::default()), DecayOutcome::Decayed);
        assert_eq!(s.lr, 0.01);
        assert!(s.history.is_empty());
    }

    #[test]
    fn floor_signals_convergence() {
        let cfg = DecayConfig::default();
        let mut s = state_with(vec![1.0; 100]);
        s.lr = 1.5e-4;
        assert_eq!(lr_decay_check(&mut s, &cfg), DecayOutcome::Decayed);
        assert_eq!(s.lr, 1e-4);
        s.history = vec![1.0; 100];
        assert_eq!(lr_decay_check(&mut s, &cfg), DecayOutcome::Converged);
    }

    #[test]
    fn short_history_waits() {
        let mut s = state_with(vec![1.0; 99]);
        assert_eq!(lr_decay_check(&mut s, &DecayConfig::default()), DecayOutcome::Keep);
    }

    #[test]
    fn white_noise_triggers_with_nominal_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let trials = 4000;
        let mut fired = 0;
        for _ in 0..trials {
            let ys: Vec<f64> = (0..100)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    5.0 + z * 0.3
                })
                .collect::<Vec<f64>>();
            if plateau_detected(&ys, 0.95) {
                fired += 1;
            }
        }
        let p = fired as f64 / trials as f64;
        // nominal rate is 0.95; allow three binomial standard errors
        let se = (0.95 * 0.05 / trials as f64).sqrt();
        assert!(p >= 0.95 - 3.0 * se, "{p}");
    }
}
