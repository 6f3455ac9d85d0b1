use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr0: 1e-4,
            weight_decay: 1e-4,
            betas: [0.9, 0.999],
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!(
                "betas {:?} not in [0, 1)",
                self.betas
            )));
        }
        if !(self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config(
                "weight_decay must be >= 0 and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub lr_floor: f64,
    /// Filled in from the training set size when zero.
    pub steps_per_epoch: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            warmup_epochs: 2,
            total_epochs: 50,
            lr_floor: 1e-6,
            steps_per_epoch: 0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, opt: &OptimizerConfig) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below total_epochs {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor < opt.lr0) {
            return Err(Error::Config(format!(
                "lr_floor {} must be in [0, lr0)",
                self.lr_floor
            )));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }
}

/// Learning rate after `step` completed updates; update `k` (1-based) uses
/// `lr_at(k)`.
///
/// Linear from 0 to `lr0` over the warmup steps, then cosine from `lr0`
/// down to `lr_floor` at `total_steps`; constant at the floor beyond.
pub fn lr_at(step: usize, schedule: &ScheduleConfig, opt: &OptimizerConfig) -> f64 {
    let warm = schedule.warmup_steps();
    let total = schedule.total_steps();
    if step < warm {
        return opt.lr0 * step as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1) as f64;
    let progress = ((step - warm) as f64 / span).min(1.0);
    schedule.lr_floor
        + 0.5 * (opt.lr0 - schedule.lr_floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
///
/// Returns the applied factor in `(0, 1]`.
pub fn clip_gradients(grads: &mut [Tensor], names: &[String], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            return Err(Error::Training(format!("non-finite gradient for `{name}`")));
        }
        sq += g.norm_sq();
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for g in grads {
        g.scale_in_place(factor);
    }
    Ok(factor)
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            t: 0,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let [b1, b2] = cfg.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::InvalidInput(format!(
                "shape mismatch at parameter {i}"
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gr;
            *vi = b2 * *vi + (1.0 - b2) * gr * gr;
            *w -= lr * cfg.weight_decay * *w;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
