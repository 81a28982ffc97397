use super::{NnError, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    RmsProp { decay: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::RmsProp { decay: 0.9, epsilon: 1e-8 }
    }
}

/// Learning rate plus per-parameter running mean-square accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub kind: OptimizerKind,
    pub accumulators: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self, NnError> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(NnError::InvalidConfig(format!("learning rate must be > 0, got {learning_rate}")));
        }
        if let OptimizerKind::RmsProp { decay, epsilon } = kind {
            if !(decay > 0.0 && decay < 1.0) || !(epsilon > 0.0) {
                return Err(NnError::InvalidConfig(format!("rmsprop needs decay in (0,1), epsilon > 0; got {decay}, {epsilon}")));
            }
        }
        Ok(OptimizerState { learning_rate, kind, accumulators: Vec::new() })
    }

    pub fn rmsprop(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self, NnError> {
        Self::new(OptimizerKind::RmsProp { decay, epsilon }, learning_rate)
    }

    /// One update with this state's rule.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NnError> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.learning_rate),
            OptimizerKind::RmsProp { .. } => rmsprop_step(params, grads, self),
        }
    }
}

fn check_grads(params: &[&mut Tensor], grads: &[&Tensor]) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::shape("optimizer parameter list", params.len(), grads.len()));
    }
    for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(NnError::ShapeMismatch {
                op: "optimizer",
                expected: format!("{:?}", p.shape()),
                got: format!("{:?}", g.shape()),
            });
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { tensor: idx, element: pos, value: g.data()[pos] });
        }
    }
    Ok(())
}

/// `w <- w - lr * g`, elementwise.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<(), NnError> {
    if !(lr > 0.0) {
        return Err(NnError::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
    }
    check_grads(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, gw) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * gw;
        }
    }
    Ok(())
}

/// `s <- rho s + (1 - rho) g^2`, `w <- w - lr g / sqrt(s + eps)`.
pub fn rmsprop_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut OptimizerState) -> Result<(), NnError> {
    let OptimizerKind::RmsProp { decay, epsilon } = state.kind else {
        return Err(NnError::InvalidConfig("rmsprop_step called with a non-RMSProp state".into()));
    };
    check_grads(params, grads)?;
    if state.accumulators.is_empty() {
        state.accumulators = params.iter().map(|p| vec![0.0; p.len()]).collect();
    }
    if state.accumulators.len() != params.len() {
        return Err(NnError::shape("rmsprop accumulators", state.accumulators.len(), params.len()));
    }
    let lr = state.learning_rate;
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(state.accumulators.iter_mut()) {
        for ((w, gw), s) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
            *s = decay * *s + (1.0 - decay) * gw * gw;
            *w -= lr * gw / (*s + epsilon).sqrt();
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}
