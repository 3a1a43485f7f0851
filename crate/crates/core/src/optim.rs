//! First-order optimizers over flattened parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative per-epoch learning-rate decay; `None` keeps it constant.
    #[serde(default)]
    pub decay: Option<f64>,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: None,
        }
    }
}

impl AdamSettings {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamSettings {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(d) = self.decay {
            if !(d > 0.0 && d <= 1.0) {
                problems.push(format!("decay must lie in (0, 1], got {d}"));
            }
        }
        problems
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub settings: AdamSettings,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(settings: AdamSettings, num_params: usize) -> Result<Self> {
        let problems = settings.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(AdamState {
            settings,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        self.step_with_rate(params, grad, self.settings.learning_rate)
    }

    /// One update using an explicit learning rate (for decay schedules).
    pub fn step_with_rate(&mut self, params: &mut [f64], grad: &[f64], learning_rate: f64) -> Result<()> {
        check_lengths(self.first_moment.len(), params.len(), grad.len())?;
        self.step += 1;
        let AdamSettings {
            beta1, beta2, epsilon, ..
        } = self.settings;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v ← μv + g; p ← p − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumState {
    pub fn new(learning_rate: f64, momentum: f64, num_params: usize) -> Self {
        MomentumState {
            learning_rate,
            momentum,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_lengths(self.velocity.len(), params.len(), grad.len())?;
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        Ok(())
    }
}

/// Optimizer selection for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam(AdamSettings),
    Momentum { learning_rate: f64, momentum: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam(AdamSettings::default())
    }
}

impl OptimizerConfig {
    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerConfig::Adam(s) => s.learning_rate,
            OptimizerConfig::Momentum { learning_rate, .. } => *learning_rate,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            OptimizerConfig::Adam(s) => s.validate(),
            OptimizerConfig::Momentum {
                learning_rate,
                momentum,
            } => {
                let mut p = Vec::new();
                if !(*learning_rate > 0.0) {
                    p.push(format!("learning rate must be positive, got {learning_rate}"));
                }
                if !(0.0..1.0).contains(momentum) {
                    p.push(format!("momentum must lie in [0, 1), got {momentum}"));
                }
                p
            }
        }
    }

    pub fn build(&self, num_params: usize) -> Result<Optimizer> {
        Ok(match *self {
            OptimizerConfig::Adam(s) => Optimizer::Adam(AdamState::new(s, num_params)?),
            OptimizerConfig::Momentum {
                learning_rate,
                momentum,
            } => Optimizer::Momentum(MomentumState::new(learning_rate, momentum, num_params)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Momentum(MomentumState),
}

impl Optimizer {
    /// Applies one update; `epoch` drives the optional Adam decay schedule.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], epoch: usize) -> Result<()> {
        match self {
            Optimizer::Adam(a) => {
                let lr = match a.settings.decay {
                    Some(d) => a.settings.learning_rate * d.powi(epoch as i32),
                    None => a.settings.learning_rate,
                };
                a.step_with_rate(params, grad, lr)
            }
            Optimizer::Momentum(m) => m.step(params, grad),
        }
    }
}

fn check_lengths(state: usize, params: usize, grad: usize) -> Result<()> {
    if params != state {
        return Err(Error::LengthMismatch {
            expected: state,
            got: params,
        });
    }
    if grad != state {
        return Err(Error::LengthMismatch {
            expected: state,
            got: grad,
        });
    }
    Ok(())
}
