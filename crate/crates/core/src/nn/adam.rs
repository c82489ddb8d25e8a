use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimiser state for a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self { config, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Rejects non-finite gradients before touching
    /// any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            bail!(
                Structural,
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            );
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            bail!(Numeric, "gradient {i} is {} at optimizer step {}", grads[i], self.t + 1);
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - math::powf(beta1, self.t as f64);
        let c2 = 1.0 - math::powf(beta2, self.t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (math::sqrt(vh) + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut a = Adam::new(AdamConfig::default(), 3);
        let mut p = [1.0, -2.0, 3.0];
        a.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_lr() {
        let mut a = Adam::new(AdamConfig::default(), 1);
        let mut p = [0.0];
        a.step(&mut p, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn minimises_quadratic_bowl() {
        let mut a = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, 2);
        let mut p = [3.0, -2.0];
        for _ in 0..5000 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            a.step(&mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut a = Adam::new(AdamConfig::default(), 2);
        let mut p = [1.0, 1.0];
        let err = a.step(&mut p, &[0.0, f64::INFINITY]).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric(_)));
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(a.steps(), 0);
    }
}
