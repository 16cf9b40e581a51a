//! Parameter update rules.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{Error, Result};

/// Which update rule a training run uses. Plain SGD is the default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `w <- w - lr * g`
    #[default]
    Sgd,
    /// Bias-corrected first/second moment scaling of the step.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    /// Adam with the usual moment decay rates.
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Adam { beta1, beta2, epsilon } = *self {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "adam needs betas in [0, 1) and a positive epsilon, got {beta1}, {beta2}, {epsilon}"
                )));
            }
        }
        Ok(())
    }
}

/// Update rule plus whatever running state it keeps between steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            lr,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        let OptimizerKind::Adam { beta1, beta2, epsilon } = self.kind else {
            net.apply_sgd(grads, self.lr);
            return;
        };
        let g = grads.flat();
        if self.first.len() != g.len() {
            self.first = vec![0.0; g.len()];
            self.second = vec![0.0; g.len()];
        }
        self.steps = self.steps.saturating_add(1);
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        let params = net.params_mut().into_iter().flat_map(|p| p.iter_mut());
        for (((w, &g), m), v) in params.zip(&g).zip(&mut self.first).zip(&mut self.second) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
    }
}
