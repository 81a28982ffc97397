use super::TrainError;
use crate::lie_se3::{Pose, Twist};
use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// How each error vector is reduced to a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// `||e||_2`; subgradient 0 at `e = 0`.
    #[default]
    Euclidean,
    /// `||e||_2^2`, smooth everywhere.
    Squared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight on the rotational term.
    pub alpha: f64,
    /// Weight on the translational term.
    pub beta: f64,
    pub norm: LossNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 10.0, beta: 1.0, norm: LossNorm::Euclidean }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.alpha) || !ok(self.beta) || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "loss weights must be finite, >= 0 and not both 0 (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Value and gradient of `weight * norm(e)` for an error vector `e`.
    fn term<const N: usize>(&self, weight: f64, e: &[f64; N]) -> (f64, [f64; N]) {
        let sq: f64 = e.iter().map(|x| x * x).sum();
        match self.norm {
            LossNorm::Squared => (weight * sq, e.map(|x| 2.0 * weight * x)),
            LossNorm::Euclidean => {
                let n = sq.sqrt();
                if n == 0.0 {
                    (0.0, [0.0; N])
                } else {
                    (weight * n, e.map(|x| weight * x / n))
                }
            }
        }
    }
}

/// Frame-to-frame loss, summed over steps: `alpha |w - w*| + beta |v - v*|`.
/// Returns the loss and its gradient with respect to each predicted twist,
/// ordered `(omega, v)`.
pub fn twist_loss(pred: &[Twist], target: &[Twist], w: &LossWeights) -> Result<(f64, Vec<Vector6<f64>>), TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    let mut total = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let eo = p.omega - t.omega;
            let ev = p.v - t.v;
            let (lo, go) = w.term(w.alpha, &[eo.x, eo.y, eo.z]);
            let (lv, gv) = w.term(w.beta, &[ev.x, ev.y, ev.z]);
            total += lo + lv;
            Vector6::new(go[0], go[1], go[2], gv[0], gv[1], gv[2])
        })
        .collect();
    Ok((total, grads))
}

/// Gradient of [`pose_loss`] for one pose, in quaternion `(w, x, y, z)` and
/// translation coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseGrad {
    pub q: [f64; 4],
    pub t: Vector3<f64>,
}

/// Full-pose loss, summed over steps: `alpha |q - q*| + beta |t - t*|` on
/// hemisphere-canonical quaternions.
pub fn pose_loss(pred: &[Pose], target: &[Pose], w: &LossWeights) -> Result<(f64, Vec<PoseGrad>), TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch { pred: pred.len(), target: target.len() });
    }
    let mut total = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let (qp, qt) = (p.quat().to_array(), t.quat().to_array());
            let eq = [qp[0] - qt[0], qp[1] - qt[1], qp[2] - qt[2], qp[3] - qt[3]];
            let et = p.translation() - t.translation();
            let (lq, gq) = w.term(w.alpha, &eq);
            let (lt, gt) = w.term(w.beta, &[et.x, et.y, et.z]);
            total += lq + lt;
            PoseGrad { q: gq, t: Vector3::from(gt) }
        })
        .collect();
    Ok((total, grads))
}
