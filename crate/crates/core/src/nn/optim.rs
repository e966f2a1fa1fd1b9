use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Optimizer hyperparameters plus its running state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    /// `lr = 0` is accepted: it freezes the parameters while still drawing
    /// masks, which is useful as a control run.
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and >= 0")));
        }
        if lr == 0.0 {
            log::warn!("learning rate is 0: parameters will not move");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Config(format!(
                    "invalid Adam hyperparameters beta1={beta1} beta2={beta2} eps={eps}"
                )));
            }
        }
        let moments = match kind {
            OptimizerKind::Gd => 0,
            OptimizerKind::Adam { .. } => num_params,
        };
        Ok(Self {
            kind,
            lr,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            steps: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::dim("gradient", params.len(), grad.len()));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Gd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::dim(
                        "Adam moments",
                        self.first_moment.len(),
                        params.len(),
                    ));
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_step() {
        let mut o = OptimizerState::new(OptimizerKind::Gd, 0.5, 2).unwrap();
        let mut p = vec![1.0, -1.0];
        o.apply(&mut p, &[2.0, 4.0]).unwrap();
        assert_eq!(p, vec![0.0, -3.0]);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut o = OptimizerState::new(OptimizerKind::adam(), 0.1, 2).unwrap();
        let mut p = vec![0.0, 0.0];
        o.apply(&mut p, &[3.0, -0.02]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn rejects_negative_lr() {
        assert!(OptimizerState::new(OptimizerKind::Gd, -1.0, 1).is_err());
        assert!(OptimizerState::new(OptimizerKind::Gd, f64::NAN, 1).is_err());
    }
}
