use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, params: AdamParams) -> Self {
        Adam { params, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// Apply one update in place. Nothing is modified if any gradient entry
    /// is non-finite.
    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) -> Result<()> {
        if weights.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} weights and {} gradients",
                self.m.len(),
                weights.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "entry {i} is {} at step {}",
                grad[i],
                self.step + 1
            )));
        }
        let AdamParams { lr, beta1, beta2, epsilon } = self.params;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..weights.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            weights[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut adam = Adam::new(4, AdamParams::default());
        let mut w = vec![0.0; 4];
        adam.step(&mut w, &[1e6, -3.0, 0.02, -1e-3]).unwrap();
        for (wi, s) in w.iter().zip([-1.0, 1.0, -1.0, 1.0]) {
            assert!((wi - s * 1e-3).abs() < 1e-6, "{wi}");
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_weights_and_decays_moments() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut w = vec![1.0, 2.0];
        adam.step(&mut w, &[0.5, -0.5]).unwrap();
        let (m, v, before) = (adam.m.clone(), adam.v.clone(), w.clone());
        adam.m.iter_mut().for_each(|x| *x = 0.0);
        adam.v.iter_mut().for_each(|x| *x = 0.0);
        adam.step(&mut w, &[0.0, 0.0]).unwrap();
        assert_eq!(w, before);
        adam.m = m.clone();
        adam.v = v.clone();
        adam.step(&mut w, &[0.0, 0.0]).unwrap();
        for i in 0..2 {
            assert!((adam.m[i] - 0.9 * m[i]).abs() < 1e-15);
            assert!((adam.v[i] - 0.999 * v[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut adam = Adam::new(2, AdamParams::default());
        let mut w = vec![1.0, 2.0];
        assert!(matches!(adam.step(&mut w, &[f64::NAN, 0.0]), Err(Error::NonFiniteGradient(_))));
        assert_eq!(w, vec![1.0, 2.0]);
        assert_eq!(adam.step, 0);
        assert!(adam.step(&mut w, &[0.0]).is_err());
    }
}
