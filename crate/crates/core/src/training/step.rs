use super::losses::{pose_loss, twist_loss, LossWeights};
use super::TrainError;
use crate::lie_se3::{tangent_gradient, Pose, Twist};
use crate::model::{CarriedState, Vinet, VinetParams};
use crate::nn::{clip_global_norm, NnError, OptimizerKind, OptimizerState, Tensor};
use crate::simulator::SyncedSequence;
use nalgebra::Vector6;
use std::ops::Range;

/// Consecutive non-overlapping windows of `t` steps over `n` steps, in
/// temporal order; the last one may be shorter. Each window starts from the
/// state the previous one ended in.
pub fn sliding_window_schedule(n: usize, t: usize) -> Vec<Range<usize>> {
    assert!(t >= 1, "window length must be >= 1");
    (0..n).step_by(t).map(|s| s..(s + t).min(n)).collect()
}

/// Which loss gradients a window should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WantedGrads {
    pub pose: bool,
    pub twist: bool,
}

#[derive(Clone, Debug)]
pub struct WindowGrads {
    /// Gradient of the full-pose loss, if requested.
    pub pose: Option<VinetParams>,
    /// Gradient of the frame-to-frame loss, if requested.
    pub twist: Option<VinetParams>,
    pub pose_loss: f64,
    pub twist_loss: f64,
    /// State to carry into the next window.
    pub end: CarriedState,
}

/// Truncated BPTT over one window: forward through `steps`, then backward
/// from the last step to the first, summing parameter gradients over time.
/// The carried-in state is a constant. Full-pose targets are the ground-truth
/// poses relative to the sequence start.
pub fn bptt_window(
    model: &Vinet,
    seq: &SyncedSequence,
    steps: Range<usize>,
    carried: &CarriedState,
    weights: &LossWeights,
    wanted: WantedGrads,
) -> Result<WindowGrads, TrainError> {
    let tape = model.forward_window(seq, steps.clone(), carried)?;
    let outputs = tape.outputs();
    let pred_xi: Vec<Twist> = outputs.iter().map(|o| o.xi).collect();
    let pred_pose: Vec<Pose> = outputs.iter().map(|o| o.pose).collect();
    let target_xi = steps.clone().map(|k| seq.target_twist(k)).collect::<Result<Vec<_>, _>>()?;
    let target_pose = &seq.gt_poses[steps.start + 1..steps.end + 1];

    let (tl, g_xi) = twist_loss(&pred_xi, &target_xi, weights)?;
    let (pl, g_pose) = pose_loss(&pred_pose, target_pose, weights)?;
    let zeros = vec![Vector6::zeros(); outputs.len()];

    let pose = wanted.pose.then(|| {
        let g: Vec<Vector6<f64>> = g_pose.iter().zip(&pred_pose).map(|(g, p)| tangent_gradient(p, &g.q, &g.t)).collect();
        model.backward_window(&tape, &zeros, &g)
    });
    let twist = wanted.twist.then(|| model.backward_window(&tape, &g_xi, &zeros));
    Ok(WindowGrads { pose, twist, pose_loss: pl, twist_loss: tl, end: tape.end })
}

/// Learning rates of the two loss tapes for one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRates {
    /// Rate for the full-pose loss (applied to every weight).
    pub pose: f64,
    /// Rate for the frame-to-frame loss (applied below the layer boundary).
    pub twist: f64,
}

/// Applies the two updates of the joint scheme in order, both from gradients
/// taken at the same (pre-update) parameters: first the full-pose gradient to
/// every parameter, then the frame-to-frame gradient to parameters whose
/// layer index is below `boundary`. Each gradient set is clipped to
/// `clip_norm` after masking. A zero rate skips its update entirely.
/// Returns the pre-clipping norms.
#[allow(clippy::too_many_arguments)]
pub fn joint_update(
    params: &mut [&mut Tensor],
    layers: &[usize],
    pose_grads: &mut [Tensor],
    twist_grads: &mut [Tensor],
    rates: JointRates,
    boundary: usize,
    clip_norm: f64,
    opt_pose: &mut OptimizerState,
    opt_twist: &mut OptimizerState,
) -> Result<(f64, f64), NnError> {
    let mut norms = (0.0, 0.0);
    if rates.pose > 0.0 {
        norms.0 = clip_global_norm(&mut pose_grads.iter_mut().collect::<Vec<_>>(), clip_norm);
        opt_pose.learning_rate = rates.pose;
        opt_pose.step(params, &pose_grads.iter().collect::<Vec<_>>())?;
    }
    if rates.twist > 0.0 {
        for (g, &layer) in twist_grads.iter_mut().zip(layers) {
            if layer >= boundary {
                g.fill(0.0);
            }
        }
        norms.1 = clip_global_norm(&mut twist_grads.iter_mut().collect::<Vec<_>>(), clip_norm);
        opt_twist.learning_rate = rates.twist;
        opt_twist.step(params, &twist_grads.iter().collect::<Vec<_>>())?;
    }
    Ok(norms)
}

/// Optimizer state for the two loss tapes.
#[derive(Clone, Debug, PartialEq)]
pub struct JointOptimizer {
    pub pose: OptimizerState,
    pub twist: OptimizerState,
}

impl JointOptimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self, NnError> {
        // The rate is overwritten before every update.
        Ok(JointOptimizer { pose: OptimizerState::new(kind, 1.0)?, twist: OptimizerState::new(kind, 1.0)? })
    }

    /// [`joint_update`] on a whole network. Missing gradient sets are only
    /// allowed when their rate is zero.
    pub fn step(
        &mut self,
        model: &mut Vinet,
        pose: Option<VinetParams>,
        twist: Option<VinetParams>,
        rates: JointRates,
        boundary: usize,
        clip_norm: f64,
    ) -> Result<(f64, f64), NnError> {
        let to_vec = |g: Option<VinetParams>, rate: f64, which: &str| -> Result<Vec<Tensor>, NnError> {
            match g {
                Some(g) => Ok(g.tensors().into_iter().map(|p| p.tensor.clone()).collect()),
                None if rate == 0.0 => Ok(Vec::new()),
                None => Err(NnError::InvalidConfig(format!("{which} rate is {rate} but no gradient was computed"))),
            }
        };
        let mut pose_grads = to_vec(pose, rates.pose, "full-pose")?;
        let mut twist_grads = to_vec(twist, rates.twist, "frame-to-frame")?;
        let mut refs = model.params.tensors_mut();
        let layers: Vec<usize> = refs.iter().map(|p| p.layer).collect();
        let mut params: Vec<&mut Tensor> = refs.iter_mut().map(|p| &mut *p.tensor).collect();
        joint_update(
            &mut params,
            &layers,
            &mut pose_grads,
            &mut twist_grads,
            rates,
            boundary,
            clip_norm,
            &mut self.pose,
            &mut self.twist,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulator::{generate_trajectory, CameraSpec, TrajectorySpec};

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(sliding_window_schedule(25, 10), vec![0..10, 10..20, 20..25]);
        assert_eq!(sliding_window_schedule(10, 10), vec![0..10]);
        assert_eq!(sliding_window_schedule(4, 10), vec![0..4]);
        assert!(sliding_window_schedule(0, 10).is_empty());
    }

    /// Two scalar weights, `a` below the boundary and `b` above it, plain SGD.
    #[test]
    fn two_parameter_step_by_hand() {
        let (mut a, mut b) = (scalar(1.0), scalar(2.0));
        let mut pose = vec![scalar(0.5), scalar(-1.0)];
        let mut twist = vec![scalar(2.0), scalar(3.0)];
        let mut o1 = OptimizerState::new(OptimizerKind::Sgd, 1.0).unwrap();
        let mut o2 = o1.clone();
        let rates = JointRates { pose: 0.1, twist: 0.01 };
        joint_update(&mut [&mut a, &mut b], &[0, 1], &mut pose, &mut twist, rates, 1, 100.0, &mut o1, &mut o2).unwrap();
        // a: 1 - 0.1 * 0.5 - 0.01 * 2 = 0.93; b: 2 + 0.1 * 1 = 2.1 (above the boundary).
        assert!((a.data()[0] - 0.93).abs() < 1e-15);
        assert!((b.data()[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn clipping_applies_per_tape() {
        let (mut a, mut b) = (scalar(0.0), scalar(0.0));
        let mut pose = vec![scalar(3.0), scalar(4.0)];
        let mut twist = vec![scalar(0.0), scalar(0.0)];
        let mut o1 = OptimizerState::new(OptimizerKind::Sgd, 1.0).unwrap();
        let mut o2 = o1.clone();
        let rates = JointRates { pose: 1.0, twist: 0.0 };
        let norms =
            joint_update(&mut [&mut a, &mut b], &[0, 0], &mut pose, &mut twist, rates, 1, 1.0, &mut o1, &mut o2).unwrap();
        assert_eq!(norms.0, 5.0);
        assert!((a.data()[0] + 0.6).abs() < 1e-15 && (b.data()[0] + 0.8).abs() < 1e-15);
    }

    fn toy() -> (Vinet, SyncedSequence) {
        let spec = TrajectorySpec {
            duration: 0.5,
            camera: CameraSpec { width: 8, height: 8, focal: 4.0, ..CameraSpec::default() },
            landmark_count: 80,
            seed: 5,
            ..TrajectorySpec::default()
        };
        (Vinet::new(ModelConfig::tiny(), 5).unwrap(), generate_trajectory(&spec).unwrap())
    }

    #[test]
    fn zero_rates_degenerate_to_single_loss_training() {
        let (model, seq) = toy();
        let both = WantedGrads { pose: true, twist: true };
        let g = bptt_window(&model, &seq, 0..3, &model.initial_state(), &LossWeights::default(), both).unwrap();
        let boundary = model.params.layer_count();

        let mut only_pose = model.clone();
        let mut opt = JointOptimizer::new(OptimizerKind::Sgd).unwrap();
        let rates = JointRates { pose: 0.01, twist: 0.0 };
        opt.step(&mut only_pose, g.pose.clone(), g.twist.clone(), rates, boundary, 1e9).unwrap();
        let mut reference = model.clone();
        let mut step = g.pose.clone().unwrap();
        step.scale(-0.01);
        reference.params.add_assign(&step);
        assert_eq!(only_pose.params, reference.params);

        let mut only_twist = model.clone();
        let mut opt = JointOptimizer::new(OptimizerKind::Sgd).unwrap();
        let rates = JointRates { pose: 0.0, twist: 0.01 };
        let head_layer = boundary - 1;
        opt.step(&mut only_twist, None, g.twist.clone(), rates, head_layer, 1e9).unwrap();
        for (before, after) in model.params.tensors().iter().zip(only_twist.params.tensors()) {
            if before.layer >= head_layer {
                assert_eq!(before.tensor, after.tensor, "{} moved above the boundary", before.name);
            }
        }
        assert_ne!(only_twist.params.conv[0], model.params.conv[0]);
    }

    #[test]
    fn single_step_window_and_linearity() {
        let (model, seq) = toy();
        let w = LossWeights { norm: crate::training::LossNorm::Squared, ..LossWeights::default() };
        let both = WantedGrads { pose: true, twist: true };
        let g = bptt_window(&model, &seq, 0..1, &model.initial_state(), &w, both).unwrap();
        let tape = model.forward_window(&seq, 0..1, &model.initial_state()).unwrap();
        let (_, gx) = twist_loss(&[tape.outputs()[0].xi], &[seq.target_twist(0).unwrap()], &w).unwrap();
        let direct = model.backward_window(&tape, &gx, &[Vector6::zeros()]);
        assert_eq!(g.twist.unwrap(), direct);

        // The squared translational term is quadratic: doubling the error
        // vector doubles the gradient it feeds into the head bias.
        let tape = model.forward_window(&seq, 0..2, &model.initial_state()).unwrap();
        let pred: Vec<Twist> = tape.outputs().iter().map(|o| o.xi).collect();
        let shift = |s: f64| -> Vec<Twist> {
            pred.iter().map(|p| Twist::new(p.omega, p.v - nalgebra::Vector3::new(0.3, -0.1, 0.2) * s).unwrap()).collect()
        };
        let head_bias = |targets: &[Twist]| {
            let (_, g) = twist_loss(&pred, targets, &w).unwrap();
            let grads = model.backward_window(&tape, &g, &[Vector6::zeros(); 2]);
            grads.head.b.data().to_vec()
        };
        let (g1, g2) = (head_bias(&shift(1.0)), head_bias(&shift(2.0)));
        for i in 3..6 {
            assert!((g2[i] - 2.0 * g1[i]).abs() < 1e-12 * (1.0 + g1[i].abs()));
        }
    }

    #[test]
    fn window_carry_matches_unbroken_forward() {
        let (model, seq) = toy();
        let both = WantedGrads { pose: false, twist: false };
        let w = LossWeights::default();
        let mut state = model.initial_state();
        for r in sliding_window_schedule(seq.step_count(), 2) {
            state = bptt_window(&model, &seq, r, &state, &w, both).unwrap().end;
        }
        let whole = model.sequence_forward(&seq, &model.initial_state()).unwrap();
        assert_eq!(state, whole.end);
    }
}
