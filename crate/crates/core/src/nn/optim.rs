use serde::{Deserialize, Serialize};

use super::layers::Param;

/// Optimizer hyperparameters. Weight decay is added to the gradient (L2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        #[serde(default)]
        weight_decay: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        weight_decay: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            weight_decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn sgd(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd {
            lr,
            weight_decay,
            momentum,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }
}

/// Optimizer state for a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update; `params` must be passed in the same order every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            if matches!(self.cfg, OptimizerConfig::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed");
        self.step += 1;
        match self.cfg {
            OptimizerConfig::Adam {
                lr,
                weight_decay,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                let step_size = (lr / bc1) as f32;
                let (b1, b2, wd) = (beta1 as f32, beta2 as f32, weight_decay as f32);
                let bc2_sqrt = bc2.sqrt() as f32;
                for (k, p) in params.iter_mut().enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + wd * p.value[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        p.value[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps as f32);
                    }
                }
            }
            OptimizerConfig::Sgd {
                lr,
                weight_decay,
                momentum,
            } => {
                let (lr, wd, mu) = (lr as f32, weight_decay as f32, momentum as f32);
                for (k, p) in params.iter_mut().enumerate() {
                    let buf = &mut self.first[k];
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + wd * p.value[i];
                        buf[i] = if self.step == 1 { g } else { mu * buf[i] + g };
                        p.value[i] -= lr * buf[i];
                    }
                }
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(params: &[&mut Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// resulting norm.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm {
        let scale = (max_norm / (norm + 1e-12)) as f32;
        for p in params.iter_mut() {
            for g in p.grad.iter_mut() {
                *g *= scale;
            }
        }
        grad_norm(params)
    } else {
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(vec![1.0, -2.0]);
        p.grad = vec![0.5, -3.0];
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1, 0.0));
        opt.step(&mut [&mut p]);
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_momentum_matches_hand_recursion() {
        let mut p = Param::new(vec![0.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0, 0.9));
        p.grad = vec![1.0];
        opt.step(&mut [&mut p]);
        opt.step(&mut [&mut p]);
        // buf: 1, 1.9  → value: −0.1, −0.29
        assert!((p.value[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut a = Param::new(vec![0.0; 2]);
        let mut b = Param::new(vec![0.0; 1]);
        a.grad = vec![3.0, 0.0];
        b.grad = vec![4.0];
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((n - 1.0).abs() < 1e-6);
        assert!((a.grad[0] - 0.6).abs() < 1e-6 && (b.grad[0] - 0.8).abs() < 1e-6);
        a.grad = vec![0.1, 0.0];
        b.grad = vec![0.0];
        assert!((clip_grad_norm(&mut [&mut a, &mut b], 1.0) - 0.1).abs() < 1e-7);
    }

    #[test]
    fn optimizer_config_toml_round_trip() {
        let cfg: OptimizerConfig = toml::from_str("kind = \"sgd\"\nlr = 0.01\nmomentum = 0.9").unwrap();
        assert_eq!(cfg, OptimizerConfig::sgd(0.01, 0.0, 0.9));
        assert!(toml::from_str::<OptimizerConfig>("kind = \"adam\"\nlr = 1.0\nbogus = 1").is_err());
    }
}
