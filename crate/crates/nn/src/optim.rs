use crate::error::{NnError, NnResult};
use crate::network::NetworkParams;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent, with optional heavy-ball momentum.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 7e-4,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: 0.5,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            max_grad_norm: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> NnResult<()> {
        let bad = |field: &str, reason: &str| {
            Err(NnError::Config {
                field: format!("optimizer.{field}"),
                reason: reason.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm", "must be >= 0");
        }
        Ok(())
    }
}

/// Moment estimates carried between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub step: u64,
    first: Option<NetworkParams<S>>,
    second: Option<NetworkParams<S>>,
}

impl<S: Scalar> Default for OptimizerState<S> {
    fn default() -> Self {
        Self {
            step: 0,
            first: None,
            second: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied to the gradient (1 when not clipped).
    pub clip_scale: f64,
}

/// Global-norm clipping followed by one first-order step.
pub fn apply_update<S: Scalar>(params: &mut NetworkParams<S>, grads: &NetworkParams<S>, state: &mut OptimizerState<S>, cfg: &OptimizerConfig) -> NnResult<UpdateStats> {
    {
        let (p, g) = (params.tensors(), grads.tensors());
        if p.len() != g.len() || p.iter().zip(&g).any(|(a, b)| a.shape() != b.shape()) {
            return Err(NnError::Shape("gradient tensors do not match the parameters".into()));
        }
    }
    let sq = grads.sq_norm();
    if !sq.is_finite() {
        return Err(NnError::NonFinite { layer: "gradients".into() });
    }
    let grad_norm = sq.sqrt();
    let clip_scale = if cfg.max_grad_norm > 0.0 && grad_norm > cfg.max_grad_norm {
        cfg.max_grad_norm / grad_norm
    } else {
        1.0
    };
    let scale = S::from_f64_lossy(clip_scale);
    let lr = S::from_f64_lossy(cfg.learning_rate);
    state.step += 1;
    match cfg.kind {
        OptimizerKind::Sgd if cfg.momentum == 0.0 => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * scale * gv;
                }
            }
        }
        OptimizerKind::Sgd => {
            let mu = S::from_f64_lossy(cfg.momentum);
            let vel = state.first.get_or_insert_with(|| grads.zeros_like());
            for ((p, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(vel.tensors_mut()) {
                for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vv = mu * *vv + scale * gv;
                    *pv -= lr * *vv;
                }
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2) = (S::from_f64_lossy(cfg.beta1), S::from_f64_lossy(cfg.beta2));
            let c1 = S::from_f64_lossy(1.0 - cfg.beta1.powi(state.step.min(i32::MAX as u64) as i32));
            let c2 = S::from_f64_lossy(1.0 - cfg.beta2.powi(state.step.min(i32::MAX as u64) as i32));
            let eps = S::from_f64_lossy(cfg.epsilon);
            let m = state.first.get_or_insert_with(|| grads.zeros_like());
            let v = state.second.get_or_insert_with(|| grads.zeros_like());
            for (((p, g), mt), vt) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut()) {
                for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(mt.data_mut()).zip(vt.data_mut()) {
                    let g = scale * gv;
                    *mv = b1 * *mv + (S::one() - b1) * g;
                    *vv = b2 * *vv + (S::one() - b2) * g * g;
                    *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(UpdateStats { grad_norm, clip_scale })
}
