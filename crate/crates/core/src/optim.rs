//! First-order optimizers over a parameter set, plus global-norm gradient
//! clipping. Updates are elementwise and deterministic; a zero learning rate
//! leaves every parameter bit-identical, which training tests rely on.

use crate::error::{Error, Result};
use crate::tape::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(text: &str) -> Result<OptimizerKind> {
        match text {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First-moment accumulators, one per parameter, allocated on first step.
    m: Vec<Tensor>,
    /// Second-moment accumulators.
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Optimizer> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Optimizer> {
        Optimizer::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Optimizer> {
        Optimizer::new(OptimizerKind::Adam, lr)
    }

    /// Apply one update from the gradients currently stored on `params`.
    /// Gradients themselves are left untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g = p.grad.data().to_vec();
                    for (w, g) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
                    self.v = self.m.clone();
                } else if self.m.len() != params.len() {
                    return Err(Error::Config(format!(
                        "optimizer state tracks {} parameters, got {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for (i, p) in params.iter_mut().enumerate() {
                    let g = p.grad.data().to_vec();
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for ((w, &g), (m, v)) in
                        p.value.data_mut().iter_mut().zip(&g).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm. A non-positive `max_norm` disables clipping.
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params.iter() {
        for &g in p.grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.scale_in_place(scale);
        }
    }
    norm
}
