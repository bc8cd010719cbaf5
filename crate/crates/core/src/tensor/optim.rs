//! Plain SGD with a cosine-decayed learning rate and an optional
//! constant-rate warm-up window.

use super::Tensor;
use crate::error::{DptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decay {
    Cosine,
    Constant,
}

/// Learning-rate schedule state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Rate used by the most recent step.
    pub learning_rate: f64,
    pub step_index: usize,
    pub total_steps: usize,
    pub base_lr: f64,
    /// Steps `0..warmup_steps` use `warmup_lr` instead of the decayed rate.
    pub warmup_steps: usize,
    pub warmup_lr: f64,
    pub decay: Decay,
}

impl OptimizerState {
    pub fn cosine(base_lr: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(DptError::Parameter("total_steps must be positive".into()));
        }
        if !(base_lr > 0.0) {
            return Err(DptError::Parameter(format!("base_lr must be positive, got {base_lr}")));
        }
        Ok(Self {
            learning_rate: base_lr,
            step_index: 0,
            total_steps,
            base_lr,
            warmup_steps: 0,
            warmup_lr: base_lr,
            decay: Decay::Cosine,
        })
    }

    pub fn constant(lr: f64, total_steps: usize) -> Result<Self> {
        let mut s = Self::cosine(lr, total_steps)?;
        s.decay = Decay::Constant;
        Ok(s)
    }

    pub fn with_warmup(mut self, steps: usize, lr: f64) -> Result<Self> {
        if steps > self.total_steps {
            return Err(DptError::Parameter(format!(
                "warm-up of {steps} steps exceeds schedule of {}",
                self.total_steps
            )));
        }
        self.warmup_steps = steps;
        self.warmup_lr = lr;
        Ok(self)
    }

    pub fn in_warmup(&self) -> bool {
        self.step_index < self.warmup_steps
    }
}

/// Rate for the state's current step.
///
/// Inside the warm-up window the constant warm-up rate is returned. After it,
/// the cosine restarts from `base_lr` at the first post-warm-up step and
/// reaches zero at `total_steps`.
pub fn cosine_lr(state: &OptimizerState) -> f64 {
    if state.in_warmup() {
        return state.warmup_lr;
    }
    match state.decay {
        Decay::Constant => state.base_lr,
        Decay::Cosine => {
            let span = state.total_steps.saturating_sub(state.warmup_steps).max(1) as f64;
            let progress = ((state.step_index - state.warmup_steps) as f64 / span).min(1.0);
            state.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// `param ← param − lr·grad` for every learnable tensor, then zero the grads.
///
/// Tensors that do not require gradients are skipped untouched. Fails before
/// touching anything if a learnable tensor has no gradient or the schedule is
/// exhausted.
pub fn sgd_step(params: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if state.step_index >= state.total_steps {
        return Err(DptError::Optimizer(format!(
            "schedule exhausted after {} steps",
            state.total_steps
        )));
    }
    let learnable: Vec<&Tensor> = params.iter().filter(|p| p.requires_grad()).collect();
    let mut grads = Vec::with_capacity(learnable.len());
    for (i, p) in learnable.iter().enumerate() {
        match p.grad() {
            Some(g) => grads.push(g),
            None => {
                return Err(DptError::Optimizer(format!(
                    "parameter {i} (shape {:?}) has no gradient",
                    p.shape()
                )))
            }
        }
    }
    let lr = cosine_lr(state);
    let step = lr as f32;
    for (p, g) in learnable.iter().zip(&grads) {
        p.update_data(|d| d.iter_mut().zip(g).for_each(|(w, gv)| *w -= step * gv));
        p.zero_grad();
    }
    state.learning_rate = lr;
    state.step_index += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn single_step_example() {
        let p = Tensor::parameter(vec![1.0], &[1]).unwrap();
        backward(&p.sum()).unwrap();
        let mut s = OptimizerState::cosine(0.1, 10).unwrap();
        sgd_step(&[p.clone()], &mut s).unwrap();
        assert!((p.item() - 0.9).abs() < 1e-7);
        assert_eq!(p.grad().unwrap(), vec![0.0]);
        assert_eq!(s.step_index, 1);
    }

    #[test]
    fn zero_grad_leaves_param() {
        let p = Tensor::parameter(vec![2.5, -1.0], &[2]).unwrap();
        backward(&p.scale(0.0).sum()).unwrap();
        let mut s = OptimizerState::cosine(0.1, 10).unwrap();
        sgd_step(&[p.clone()], &mut s).unwrap();
        assert_eq!(p.to_vec(), vec![2.5, -1.0]);
    }

    #[test]
    fn quadratic_two_steps() {
        // f = x²/2, grad = x, x ← x(1 − lr) twice from 1 with lr 0.5.
        let x = Tensor::parameter(vec![1.0], &[1]).unwrap();
        let mut s = OptimizerState::constant(0.5, 2).unwrap();
        for _ in 0..2 {
            backward(&x.mul(&x).unwrap().scale(0.5)).unwrap();
            sgd_step(&[x.clone()], &mut s).unwrap();
        }
        assert_eq!(x.item(), 0.25);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = Tensor::parameter(vec![1.0], &[1]).unwrap();
        let mut s = OptimizerState::cosine(0.1, 10).unwrap();
        assert!(matches!(sgd_step(&[p], &mut s), Err(DptError::Optimizer(_))));
        assert_eq!(s.step_index, 0);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let frozen = Tensor::new(vec![3.0], &[1]).unwrap();
        let p = Tensor::parameter(vec![1.0], &[1]).unwrap();
        backward(&p.mul(&frozen).unwrap()).unwrap();
        let mut s = OptimizerState::cosine(0.1, 10).unwrap();
        sgd_step(&[frozen.clone(), p.clone()], &mut s).unwrap();
        assert_eq!(frozen.item(), 3.0);
        assert!((p.item() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn schedule_endpoints() {
        let mut s = OptimizerState::cosine(0.002, 100).unwrap().with_warmup(10, 1e-5).unwrap();
        assert_eq!(cosine_lr(&s), 1e-5);
        s.step_index = 9;
        assert_eq!(cosine_lr(&s), 1e-5);
        s.step_index = 10;
        assert!((cosine_lr(&s) - 0.002).abs() < 1e-12);
        s.step_index = 100;
        assert!(cosine_lr(&s).abs() < 1e-12);
        let mut plain = OptimizerState::cosine(0.5, 8).unwrap();
        assert_eq!(cosine_lr(&plain), 0.5);
        plain.step_index = 4;
        assert!((cosine_lr(&plain) - 0.25).abs() < 1e-12);
    }
}
