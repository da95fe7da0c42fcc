//! Adam with bias correction.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter group {group} at index {index}")]
    NonFinite { group: usize, index: usize },
    #[error("parameter group {group} has {params} values but {grads} gradients")]
    Shape {
        group: usize,
        params: usize,
        grads: usize,
    },
}

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
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every group. Gradients are checked before anything
    /// changes, so a rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), OptimError> {
        if params.len() != grads.len() {
            return Err(OptimError::Shape {
                group: params.len().min(grads.len()),
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (group, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.m.get(group).is_some_and(|m| m.len() != p.len()) {
                return Err(OptimError::Shape {
                    group,
                    params: p.len(),
                    grads: g.len(),
                });
            }
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(OptimError::NonFinite { group, index });
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(OptimError::Shape {
                group: self.m.len(),
                params: self.m.len(),
                grads: grads.len(),
            });
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (group, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[group], &mut self.v[group]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.5];
        adam.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn step_never_exceeds_learning_rate_for_constant_gradient() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg);
        let mut p = vec![0.0];
        for _ in 0..500 {
            let before = p[0];
            adam.step(&mut [&mut p], &[&[0.37]]).unwrap();
            let delta = (p[0] - before).abs();
            assert!(delta <= cfg.lr * (1.0 + 1e-12), "{delta}");
            assert!(p[0] < before);
        }
        // Bias correction makes a constant gradient step by almost exactly lr.
        let before = p[0];
        adam.step(&mut [&mut p], &[&[0.37]]).unwrap();
        assert!(((before - p[0]) - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn matches_hand_stepped_quadratic() {
        // Minimize x², gradient 2x, from x = 1 with lr 0.1.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg);
        let mut x = vec![1.0];
        let mut trajectory = Vec::new();
        for _ in 0..3 {
            let g = 2.0 * x[0];
            adam.step(&mut [&mut x], &[&[g]]).unwrap();
            trajectory.push(x[0]);
        }

        let (b1, b2, eps, lr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v, mut r) = (0.0f64, 0.0f64, 1.0f64);
        let mut expect = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * r;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            r -= lr * mh / (vh.sqrt() + eps);
            expect.push(r);
        }
        for (a, b) in trajectory.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // First step of Adam moves by lr regardless of gradient scale.
        assert!((expect[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut [&mut p], &[&[0.5, f64::NAN]]).unwrap_err();
        assert!(matches!(err, OptimError::NonFinite { group: 0, index: 1 }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        assert!(adam.step(&mut [&mut p], &[&[0.5]]).is_err());
        adam.step(&mut [&mut p], &[&[0.5, 0.5]]).unwrap();
        let mut q = vec![1.0];
        assert!(adam.step(&mut [&mut q], &[&[0.5]]).is_err());
    }
}
