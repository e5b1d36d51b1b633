use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm above which gradients are rescaled.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.alpha > 0.0) || !(self.epsilon > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("alpha, epsilon and clip_norm must be positive"));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::invalid("beta1 and beta2 must lie in (0, 1)"));
        }
        Ok(())
    }
}

pub fn global_norm(params: &[&mut Param]) -> f64 {
    params.iter().map(|p| p.grad.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = global_norm(params);
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64 },
    /// A gradient was NaN or infinite; parameters were left untouched.
    Rejected,
}

/// Adam with bias-corrected moments and global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: OptimizerConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    rejected: usize,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
            rejected: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Clips, then applies one update from the gradients held in `params`.
    /// The parameter list must be presented in the same order every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<StepOutcome> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::shape("parameter set changed between Adam steps"));
        }
        if params.iter().any(|p| !p.grad.all_finite()) {
            self.rejected += 1;
            return Ok(StepOutcome::Rejected);
        }

        let grad_norm = clip_global_norm(params, self.cfg.clip_norm);
        self.t += 1;
        let OptimizerConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(StepOutcome::Applied { grad_norm })
    }
}
