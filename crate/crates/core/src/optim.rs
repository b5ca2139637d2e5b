//! SGD with momentum, Adam, and the two learning-rate schedules.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

fn check_lengths(p: usize, g: usize) -> Result<()> {
    if p != g {
        return Err(Error::Shape(format!("{p} parameters but {g} gradients")));
    }
    Ok(())
}

fn check_finite<S: Scalar>(g: &[S]) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("gradient"))
    }
}

/// One momentum SGD update: `v <- mu*v + g + wd*p`, `p <- p - lr*v`.
pub fn sgd_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    velocity: &mut [S],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_lengths(params.len(), grads.len())?;
    check_lengths(params.len(), velocity.len())?;
    check_finite(grads)?;
    let (lr, mu, wd) = (S::of(lr), S::of(momentum), S::of(weight_decay));
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One bias-corrected Adam update at 1-based step `t`, with weight decay
/// added to the gradient as an L2 term.
pub fn adam_step<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    check_lengths(params.len(), grads.len())?;
    check_lengths(params.len(), m.len())?;
    check_lengths(params.len(), v.len())?;
    check_finite(grads)?;
    if t == 0 {
        return Err(Error::InvalidArgument(
            "adam step counter starts at 1".into(),
        ));
    }
    let b1 = S::of(hp.beta1);
    let b2 = S::of(hp.beta2);
    let wd = S::of(hp.weight_decay);
    let c1 = S::of(1.0 - hp.beta1.powi(t.min(i32::MAX as u64) as i32));
    let c2 = S::of(1.0 - hp.beta2.powi(t.min(i32::MAX as u64) as i32));
    let (lr, eps) = (S::of(lr), S::of(hp.eps));
    for (((p, &g), mi), vi) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        let g = g + wd * *p;
        *mi = b1 * *mi + (S::one() - b1) * g;
        *vi = b2 * *vi + (S::one() - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p -= lr * mhat / (Float::sqrt(vhat) + eps);
    }
    Ok(())
}

/// Applies the gradients stored on a [`ParamStore`].
pub trait Optimizer<S: Scalar> {
    /// Updates every parameter that has a gradient. On a non-finite gradient
    /// nothing is modified.
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()>;
}

fn all_grads_finite<S: Scalar>(store: &ParamStore<S>) -> Result<()> {
    for (_, t) in store.iter() {
        if let Some(g) = t.grad() {
            check_finite(g)?;
        }
    }
    Ok(())
}

fn ensure_state<S: Scalar>(state: &mut Vec<Vec<S>>, store: &ParamStore<S>) {
    if state.len() != store.len() {
        *state = store
            .iter()
            .map(|(_, t)| vec![S::zero(); t.len()])
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<S: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<S>] {
        &self.velocity
    }
}

impl<S: Scalar> Optimizer<S> for Sgd<S> {
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        all_grads_finite(store)?;
        ensure_state(&mut self.velocity, store);
        for (t, v) in store.iter_mut().zip(self.velocity.iter_mut()) {
            let (p, g) = t.split_mut();
            if let Some(g) = g {
                sgd_step(p, g, v, lr, self.momentum, self.weight_decay)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S: Scalar> {
    pub hp: AdamParams,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(hp: AdamParams) -> Self {
        Self {
            hp,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl<S: Scalar> Optimizer<S> for Adam<S> {
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        all_grads_finite(store)?;
        ensure_state(&mut self.m, store);
        ensure_state(&mut self.v, store);
        self.t += 1;
        for ((t, m), v) in store
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (p, g) = t.split_mut();
            if let Some(g) = g {
                adam_step(p, g, m, v, self.t, lr, &self.hp)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    OneCycle,
    WarmupLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub kind: ScheduleKind,
    pub max_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_div")]
    pub div_factor: f64,
    #[serde(default = "default_final_div")]
    pub final_div_factor: f64,
}

fn default_warmup() -> f64 {
    0.3
}

fn default_div() -> f64 {
    25.0
}

fn default_final_div() -> f64 {
    1e4
}

impl ScheduleConfig {
    pub fn one_cycle(total_steps: usize, max_lr: f64) -> Self {
        Self {
            total_steps,
            kind: ScheduleKind::OneCycle,
            max_lr,
            warmup_fraction: default_warmup(),
            div_factor: default_div(),
            final_div_factor: default_final_div(),
        }
    }

    pub fn warmup_linear(total_steps: usize, max_lr: f64) -> Self {
        Self {
            kind: ScheduleKind::WarmupLinear,
            ..Self::one_cycle(total_steps, max_lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidArgument(
                "total_steps must be at least 1".into(),
            ));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max_lr {} must be positive",
                self.max_lr
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "warmup_fraction {} not in (0,1)",
                self.warmup_fraction
            )));
        }
        if !(self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return Err(Error::InvalidArgument(
                "division factors must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step at which the schedule peaks.
    pub fn peak_step(&self) -> usize {
        Float::round(self.warmup_fraction * self.total_steps as f64) as usize
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        match self.kind {
            ScheduleKind::OneCycle => one_cycle_lr(step, self),
            ScheduleKind::WarmupLinear => warmup_linear_lr(step, self),
        }
    }
}

fn check_step(step: usize, cfg: &ScheduleConfig) -> Result<()> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    Ok(())
}

/// Cosine warmup from `max_lr / div_factor` to `max_lr`, then cosine
/// annealing to `max_lr / final_div_factor` at `total_steps`.
pub fn one_cycle_lr(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    check_step(step, cfg)?;
    let peak = cfg.peak_step();
    let eta = cfg.max_lr;
    if step == peak {
        return Ok(eta);
    }
    let pi = core::f64::consts::PI;
    if step < peak {
        let start = eta / cfg.div_factor;
        let frac = step as f64 / peak as f64;
        Ok(start + (eta - start) * (1.0 - Float::cos(pi * frac)) / 2.0)
    } else {
        let end = eta / cfg.final_div_factor;
        let frac = (step - peak) as f64 / (cfg.total_steps - peak) as f64;
        Ok(end + (eta - end) * (1.0 + Float::cos(pi * frac)) / 2.0)
    }
}

/// Linear ramp from 0 to `max_lr` over the warmup, then linear decay to 0.
pub fn warmup_linear_lr(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    check_step(step, cfg)?;
    let peak = cfg.peak_step();
    let eta = cfg.max_lr;
    if step == peak {
        return Ok(eta);
    }
    if step < peak {
        Ok(eta * (step as f64 / peak as f64))
    } else {
        Ok(eta * ((cfg.total_steps - step) as f64 / (cfg.total_steps - peak) as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sgd_examples() {
        let mut p = [1.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[2.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);

        let mut p = [0.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9, 0.0).unwrap();
        assert_eq!(p[0], -1.0);
        sgd_step(&mut p, &[1.0], &mut v, 1.0, 0.9, 0.0).unwrap();
        assert!((p[0] + 2.9).abs() < 1e-15);

        let mut p = [3.0f64];
        sgd_step(&mut p, &[5.0], &mut [0.0], 0.0, 0.9, 0.1).unwrap();
        assert_eq!(p[0], 3.0);
    }

    #[test]
    fn adam_first_step_is_lr() {
        for g in [1e-3, 1.0, 250.0] {
            let mut p = [0.0f64];
            let (mut m, mut v) = ([0.0], [0.0]);
            let hp = AdamParams {
                weight_decay: 0.0,
                ..Default::default()
            };
            adam_step(&mut p, &[g], &mut m, &mut v, 1, 1e-3, &hp).unwrap();
            assert!((p[0] + 1e-3).abs() < 1e-8, "{g}: {}", p[0]);
        }
    }

    #[test]
    fn rejected_step_leaves_state() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0]));
        let b = store.add("b", Tensor::vector(vec![3.0]));
        store.get_mut(a).accumulate_grad(&[1.0, 1.0]).unwrap();
        let mut opt = Adam::new(AdamParams::default());
        opt.step(&mut store, 0.1).unwrap();
        let before: Vec<f64> = store.iter().flat_map(|(_, t)| t.to_vec()).collect();
        let state = opt.clone();
        store.get_mut(b).accumulate_grad(&[f64::NAN]).unwrap();
        assert!(matches!(
            opt.step(&mut store, 0.1),
            Err(Error::NonFinite(_))
        ));
        let after: Vec<f64> = store.iter().flat_map(|(_, t)| t.to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(opt, state);
    }

    #[test]
    fn schedule_examples() {
        let oc = ScheduleConfig::one_cycle(1000, 0.01);
        assert_eq!(one_cycle_lr(300, &oc).unwrap(), 0.01);
        assert_eq!(one_cycle_lr(0, &oc).unwrap(), 0.01 / 25.0);
        assert_eq!(one_cycle_lr(1000, &oc).unwrap(), 1e-6);
        assert!(one_cycle_lr(1001, &oc).is_err());

        let wl = ScheduleConfig::warmup_linear(1000, 1e-4);
        assert_eq!(warmup_linear_lr(150, &wl).unwrap(), 5e-5);
        assert_eq!(warmup_linear_lr(300, &wl).unwrap(), 1e-4);
        assert_eq!(warmup_linear_lr(650, &wl).unwrap(), 5e-5);
        assert_eq!(warmup_linear_lr(1000, &wl).unwrap(), 0.0);
    }
}
