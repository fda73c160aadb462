/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates over the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; params],
            second: vec![0.0; params],
            step: 0,
        }
    }

    /// One bias-corrected update of `params` against `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.first[k] = beta1 * self.first[k] + (1.0 - beta1) * g;
            self.second[k] = beta2 * self.second[k] + (1.0 - beta2) * g * g;
            let m = self.first[k] / c1;
            let v = self.second[k] / c2;
            params[k] -= lr * m / (v.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memoryless_adam_follows_gradient_sign() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e6,
        };
        let mut st = AdamState::new(4, cfg);
        let mut p = vec![0.0; 4];
        let g = [3.0, -0.5, 1e-3, -20.0];
        st.update(&mut p, &g);
        for k in 0..4 {
            assert!(p[k] != 0.0 && p[k].signum() == -g[k].signum());
            // Large eps leaves a step proportional to the gradient.
            assert!((p[k] / g[k] + 0.1 / (g[k].abs() + 1e6)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        st.update(&mut p, &[0.25, -4.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut st = AdamState::new(
            2,
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        );
        let mut p = vec![0.3, -0.7];
        for _ in 0..5 {
            st.update(&mut p, &[1.0, 2.0]);
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }
}
