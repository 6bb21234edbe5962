//! Bias-corrected Adam with per-parameter step counters.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state. Step counters are kept per parameter so that moments of
/// newly created components can restart from zero.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub config: AdamConfig,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
    /// Number of `adam_step` calls.
    pub step: u64,
    /// Recent losses, oldest first.
    pub history: Vec<f64>,
}

impl OptState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            lr: config.lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: vec![0; n],
            step: 0,
            history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Rebuilds moment buffers after a change of parameter layout. `origin[k]`
    /// names the old parameter block whose moments block `k` inherits, or
    /// `None` for a fresh block. Blocks have `block` entries each.
    pub fn remap(&mut self, origin: &[Option<usize>], block: usize) {
        let mut m = vec![0.0; origin.len() * block];
        let mut v = vec![0.0; origin.len() * block];
        let mut steps = vec![0; origin.len() * block];
        for (k, o) in origin.iter().enumerate() {
            if let Some(o) = *o {
                let (src, dst) = (o * block..(o + 1) * block, k * block..(k + 1) * block);
                m[dst.clone()].copy_from_slice(&self.m[src.clone()]);
                v[dst.clone()].copy_from_slice(&self.v[src.clone()]);
                steps[dst].copy_from_slice(&self.steps[src]);
            }
        }
        self.m = m;
        self.v = v;
        self.steps = steps;
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut OptState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::Dimension(format!(
            "optimizer holds {} parameters, got {} values and {} gradients",
            state.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    let lr = state.lr;
    let mut next = params.to_vec();
    for i in 0..params.len() {
        let g = grads[i];
        state.steps[i] += 1;
        let k = state.steps[i] as i32;
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / (1.0 - beta1.powi(k));
        let v_hat = state.v[i] / (1.0 - beta2.powi(k));
        next[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        if !next[i].is_finite() {
            return Err(Error::NonFinite(format!("updated parameter {i}")));
        }
    }
    params.copy_from_slice(&next);
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = OptState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = OptState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..200 {
            let before = p[0];
            adam_step(&mut s, &mut p, &[3.7]).unwrap();
            last = before - p[0];
        }
        assert!((last - 0.02).abs() < 1e-6, "{last}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = OptState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -0.5, 0.25];
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut s, &mut p, &g).unwrap();
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
    }

    #[test]
    fn non_finite_gradient_fails() {
        let mut s = OptState::new(1, AdamConfig::default());
        assert!(adam_step(&mut s, &mut [0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn remap_resets_new_blocks() {
        let mut s = OptState::new(4, AdamConfig::default());
        let mut p = vec![0.0; 4];
        adam_step(&mut s, &mut p, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        s.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(s.steps, vec![1, 1, 0, 0, 1, 1]);
        assert!((s.m[0] - 0.3).abs() < 1e-15 && s.m[2] == 0.0 && (s.m[4] - 0.1).abs() < 1e-15);
    }
}
