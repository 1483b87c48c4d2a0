//! Adam with optional global-norm gradient clipping.
//!
//! Parameters live inside model structs; training code collects them in a
//! fixed order (`Vec<&mut Tensor>`) and keeps a [`GradBuffer`] plus [`Adam`]
//! state aligned to that order.

use crate::error::{GnfError, Result};
use crate::tensor::Tensor;

/// Accumulates gradients for an ordered parameter list across one or many
/// backward sweeps before an optimizer step.
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        GradBuffer {
            grads: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn accumulate(&mut self, i: usize, g: &Tensor) -> Result<()> {
        if self.grads[i].shape() != g.shape() {
            return Err(GnfError::Shape(format!(
                "gradient {}x{} for parameter {}x{}",
                g.shape().0,
                g.shape().1,
                self.grads[i].shape().0,
                self.grads[i].shape().1
            )));
        }
        self.grads[i].add_assign(g);
        Ok(())
    }

    /// Divide every gradient by `n` (e.g. to average over a batch).
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self
            .grads
            .iter()
            .flat_map(|g| g.data())
            .map(|&v| v * v)
            .sum();
        sq.sqrt()
    }

    /// Scale all gradients so the global norm is at most `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LrSchedule {
    Constant(f64),
    /// lr = base * rate^(step / every), stepped discretely.
    ExpDecay { base: f64, rate: f64, every: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::ExpDecay { base, rate, every } => {
                base * rate.powi((step / every) as i32)
            }
        }
    }
}

pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &[&Tensor]) -> Self {
        Adam {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &GradBuffer, lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(GnfError::Shape(format!(
                "optimizer holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
