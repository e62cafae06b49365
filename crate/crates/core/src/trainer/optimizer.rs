//! Plain SGD and decoupled-weight-decay Adam.

use crate::error::{Error, Result};
use crate::model::Params;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adamw" => Ok(Self::AdamW),
            _ => Err(Error::Config(format!(
                "unknown optimizer {s:?} (sgd, adamw)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::AdamW => "adamw",
        })
    }
}

/// Optimizer hyperparameters plus the moment buffers it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// First and second moments (empty for SGD).
    pub m: Option<Params>,
    pub v: Option<Params>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, like: &Params) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::AdamW => (Some(like.zeros_like()), Some(like.zeros_like())),
        };
        Self {
            kind,
            lr,
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    /// One update step. A non-finite gradient leaves every buffer untouched.
    pub fn apply(&mut self, params: &mut Params, grad: &Params) -> Result<()> {
        if !params.shapes_match(grad) {
            return Err(Error::Dimension(
                "gradient shapes do not match parameters".into(),
            ));
        }
        if let Some(k) = grad.0.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(k));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.0.iter_mut().zip(&grad.0) {
                    for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
                        *wi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::AdamW => {
                let (m, v) = (
                    self.m.as_mut().expect("adam moments"),
                    self.v.as_mut().expect("adam moments"),
                );
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for k in 0..params.0.len() {
                    let w = params.0[k].data_mut();
                    let g = grad.0[k].data();
                    let mk = m.0[k].data_mut();
                    let vk = v.0[k].data_mut();
                    for i in 0..w.len() {
                        mk[i] = ADAM_BETA1 * mk[i] + (1.0 - ADAM_BETA1) * g[i];
                        vk[i] = ADAM_BETA2 * vk[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mh = mk[i] / bc1;
                        let vh = vk[i] / bc2;
                        w[i] -= self.lr * (mh / (vh.sqrt() + ADAM_EPS) + self.weight_decay * w[i]);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Tensor;

    fn p(v: &[f64]) -> Params {
        Params(vec![Tensor::from_vec(v.to_vec())])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::AdamW] {
            let mut w = p(&[0.5, -1.0]);
            let mut opt = Optimizer::new(kind, 0.1, 0.0, &w);
            opt.apply(&mut w, &p(&[0.0, 0.0])).unwrap();
            assert_eq!(w, p(&[0.5, -1.0]));
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut w = p(&[1.0, 2.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 3e-3, 0.0, &w);
        opt.apply(&mut w, &p(&[10.0, -4.0])).unwrap();
        assert_eq!(w, p(&[1.0 - 3e-3 * 10.0, 2.0 + 3e-3 * 4.0]));
    }

    #[test]
    fn adam_constant_gradient_steps_by_lr() {
        let mut w = p(&[0.0, 0.0]);
        let lr = 1e-3;
        let mut opt = Optimizer::new(OptimizerKind::AdamW, lr, 0.0, &w);
        let g = p(&[0.3, -7.0]);
        let mut prev = w.clone();
        for _ in 0..500 {
            opt.apply(&mut w, &g).unwrap();
            let d0 = w.0[0].data()[0] - prev.0[0].data()[0];
            let d1 = w.0[0].data()[1] - prev.0[0].data()[1];
            // Bias-corrected moments of a constant gradient give m̂/√v̂ = sign(g).
            assert!((d0 + lr).abs() < 1e-9 && (d1 - lr).abs() < 1e-9);
            prev = w.clone();
        }
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut w = p(&[2.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.1, 0.01, &w);
        opt.apply(&mut w, &p(&[0.0])).unwrap();
        assert!((w.0[0].data()[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut w = p(&[1.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.1, 0.0, &w);
        let err = opt.apply(&mut w, &p(&[f64::NAN])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(0)));
        assert_eq!(w, p(&[1.0]));
        assert_eq!(opt.step, 0);
    }
}
