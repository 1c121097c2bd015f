//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    /// Zeroed moments shaped like `shapes` (one length per parameter tensor).
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(dim_mismatch("Adam parameter count", self.m.len(), (params.len(), grads.len())));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(dim_mismatch("Adam tensor", self.m[k].len(), (p.len(), g.len())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                if lr != 0.0 {
                    p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    if !p[i].is_finite() {
                        return Err(Error::Numeric(format!("Adam step {} produced a non-finite parameter", self.step)));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut [&mut p], &[vec![0.3, -4.0, 1e-2]]).unwrap();
        for (a, b) in p.iter().zip([1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3]) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = vec![1.0, 2.0];
        s.step(&mut [&mut p], &[vec![1.0, 1.0]]).unwrap();
        let before = p.clone();
        let m_before = s.m[0].clone();
        let mut s2 = s.clone();
        s2.m[0] = vec![0.0; 2];
        s2.v[0] = vec![0.0; 2];
        s2.step(&mut [&mut p], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, before);
        s.step(&mut [&mut vec![0.0; 2]], &[vec![0.0, 0.0]]).unwrap();
        assert!(s.m[0].iter().zip(&m_before).all(|(a, b)| a.abs() < b.abs()));
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        assert!(s.step(&mut [&mut vec![0.0; 3]], &[vec![0.0; 3]]).is_err());
    }
}
