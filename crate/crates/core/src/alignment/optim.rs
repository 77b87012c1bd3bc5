//! Adam and plain SGD over the tape's parameter ids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::AlignmentModel;
use super::AlignError;
use crate::numcore::{GradTape, Matrix, ParamId};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    moments: BTreeMap<ParamId, (Matrix, Matrix)>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update for every gradient on `grads`, then clamps tau.
    pub fn apply(
        &mut self,
        model: &mut AlignmentModel,
        grads: &GradTape,
        learning_rate: f64,
    ) -> Result<(), AlignError> {
        self.step += 1;
        let t = self.step as i32;
        for (id, g) in grads.iter() {
            let param = model
                .param_mut(id)
                .ok_or_else(|| AlignError::InvalidConfig(format!("gradient for unknown parameter {id:?}")))?;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &gv) in param.data_mut().iter_mut().zip(g.data()) {
                        *p -= learning_rate * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self.moments.entry(id).or_insert_with(|| {
                        (Matrix::zeros(g.rows(), g.cols()), Matrix::zeros(g.rows(), g.cols()))
                    });
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    let it = param
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                        .zip(g.data());
                    for (((p, m), v), &gv) in it {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gv;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gv * gv;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        model.clamp_tau();
        Ok(())
    }
}
