use super::config::{ModelConfig, IMU_INPUT, INPUT_MAPS, POSE_FEEDBACK};
use super::params::VinetParams;
use super::{FramePair, ImuSample, ModelError, StepOutput};
use crate::lie_se3::{compose, compose_backward, exp_se3, exp_se3_backward, LieError, Pose, Twist};
use crate::nn::{concat, concat_backward, ConvCache, LstmCache, LstmState, Tensor};
use crate::simulator::SyncedSequence;
use nalgebra::{Vector3, Vector6};
use std::ops::Range;

/// Per-axis bound on the predicted rotation so that `|omega| < pi` always.
pub const OMEGA_AXIS_BOUND: f64 = (std::f64::consts::PI - 1e-6) / 1.732_050_807_568_877_2;

/// Twist head nonlinearity: `omega = B tanh(a[0..3])`, `v = a[3..6]`.
pub fn head_twist(pre: &[f64; 6]) -> Result<Twist, LieError> {
    let omega = Vector3::new(pre[0].tanh(), pre[1].tanh(), pre[2].tanh()) * OMEGA_AXIS_BOUND;
    Twist::new(omega, Vector3::new(pre[3], pre[4], pre[5]))
}

pub fn head_twist_backward(pre: &[f64; 6], grad_xi: &Vector6<f64>) -> [f64; 6] {
    let mut g = [0.0; 6];
    for i in 0..3 {
        let t = pre[i].tanh();
        g[i] = grad_xi[i] * OMEGA_AXIS_BOUND * (1.0 - t * t);
        g[3 + i] = grad_xi[3 + i];
    }
    g
}

/// Recurrent state handed from one window (or chunk) to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct CarriedState {
    pub imu: LstmState,
    pub core: Vec<LstmState>,
    pub pose: Pose,
}

/// Everything one step's backward pass needs.
#[derive(Clone, Debug)]
pub struct StepTape {
    pub conv: Vec<ConvCache>,
    pub imu: Vec<LstmCache>,
    pub core: Vec<LstmCache>,
    pub head_input: Vec<f64>,
    pub head_pre: [f64; 6],
    pub prev_pose: Pose,
    pub step_pose: Pose,
    pub output: StepOutput,
}

#[derive(Clone, Debug)]
pub struct WindowTape {
    pub steps: Vec<StepTape>,
    pub end: CarriedState,
}

impl WindowTape {
    pub fn outputs(&self) -> Vec<StepOutput> {
        self.steps.iter().map(|s| s.output).collect()
    }

    /// IMU-LSTM steps executed for each camera frame.
    pub fn imu_steps(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.imu.len()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub outputs: Vec<StepOutput>,
    pub end: CarriedState,
    pub imu_steps_per_frame: Vec<usize>,
}

impl SequenceOutput {
    pub fn poses(&self) -> Vec<Pose> {
        self.outputs.iter().map(|o| o.pose).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vinet {
    pub config: ModelConfig,
    pub params: VinetParams,
}

impl Vinet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = VinetParams::init(&config, seed)?;
        Ok(Vinet { config, params })
    }

    /// Checks every tensor shape against `config`.
    pub fn from_params(config: ModelConfig, params: VinetParams) -> Result<Self, ModelError> {
        let reference = VinetParams::zeros(&config)?;
        let want = reference.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(ModelError::InvalidConfig(format!("expected {} tensors, got {}", want.len(), got.len())));
        }
        for (w, g) in want.iter().zip(&got) {
            if w.name != g.name || w.tensor.shape() != g.tensor.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {} has shape {:?}, config requires {} {:?}",
                    g.name,
                    g.tensor.shape(),
                    w.name,
                    w.tensor.shape()
                )));
            }
        }
        Ok(Vinet { config, params })
    }

    pub fn initial_state(&self) -> CarriedState {
        CarriedState {
            imu: LstmState::zeros(self.config.imu_hidden),
            core: vec![LstmState::zeros(self.config.core_hidden); self.config.core_layers],
            pose: Pose::identity(),
        }
    }

    pub fn visual_forward(&self, pair: &FramePair<'_>) -> Result<(Vec<f64>, Vec<ConvCache>), ModelError> {
        let (w, h) = (self.config.image_width, self.config.image_height);
        for img in [pair.prev, pair.curr] {
            if img.width != w || img.height != h || img.data.len() != w * h {
                return Err(ModelError::ExtentMismatch { want_w: w, want_h: h, got_w: img.width, got_h: img.height });
            }
        }
        let mut stacked = Vec::with_capacity(INPUT_MAPS * w * h);
        stacked.extend_from_slice(&pair.prev.data);
        stacked.extend_from_slice(&pair.curr.data);
        let mut x = Tensor::from_vec(&[INPUT_MAPS, h, w], stacked)?;
        let mut caches = Vec::with_capacity(self.params.conv.len());
        for layer in &self.params.conv {
            let (y, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x.flatten().into_vec(), caches))
    }

    fn visual_backward(&self, caches: &[ConvCache], grad: &[f64], grads: &mut VinetParams) {
        let last = caches.last().expect("at least one conv layer");
        let mut g = Tensor::from_vec(last.pre_activation.shape(), grad.to_vec()).expect("visual gradient shape");
        for (i, (layer, cache)) in self.params.conv.iter().zip(caches).enumerate().rev() {
            g = layer.backward(cache, &g, &mut grads.conv[i], i > 0);
        }
    }

    fn imu_input(&self, s: &ImuSample) -> [f64; IMU_INPUT] {
        let (ka, kw) = (1.0 / self.config.accel_scale, 1.0 / self.config.gyro_scale);
        [s.a.x * ka, s.a.y * ka, s.a.z * ka, s.w.x * kw, s.w.y * kw, s.w.z * kw]
    }

    /// Runs one IMU-LSTM step per sample; the feature is the final hidden
    /// state (the carried one when the window is empty).
    pub fn imu_window_forward(
        &self,
        samples: &[ImuSample],
        state: &LstmState,
    ) -> Result<(Vec<f64>, LstmState, Vec<LstmCache>), ModelError> {
        if let Some(i) = samples.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(ModelError::NonMonotonicImu { index: i + 1 });
        }
        let mut s = state.clone();
        let mut caches = Vec::with_capacity(samples.len());
        for sample in samples {
            let (next, cache) = self.params.imu_lstm.forward(&self.imu_input(sample), &s)?;
            caches.push(cache);
            s = next;
        }
        Ok((s.h.clone(), s, caches))
    }

    fn pose_feedback(&self, pose: &Pose) -> [f64; POSE_FEEDBACK] {
        let v = pose.to_vec7();
        let k = self.config.pose_feedback_scale;
        [v[0], v[1], v[2], v[3], v[4] * k, v[5] * k, v[6] * k]
    }

    /// Core LSTM, twist head and SE(3) accumulation for one frame.
    pub fn core_step(
        &self,
        visual: &[f64],
        imu_feature: &[f64],
        prev_pose: &Pose,
        states: &[LstmState],
    ) -> Result<(StepOutput, Vec<LstmState>, CoreTape), ModelError> {
        self.core_step_fed(visual, imu_feature, prev_pose, prev_pose, states)
    }

    fn core_step_fed(
        &self,
        visual: &[f64],
        imu_feature: &[f64],
        prev_pose: &Pose,
        fed_pose: &Pose,
        states: &[LstmState],
    ) -> Result<(StepOutput, Vec<LstmState>, CoreTape), ModelError> {
        if states.len() != self.params.core_lstm.len() {
            return Err(ModelError::Alignment(format!(
                "{} core states for {} layers",
                states.len(),
                self.params.core_lstm.len()
            )));
        }
        // The fed-back pose is a constant input: no gradient flows through it.
        let feedback = self.pose_feedback(fed_pose);
        let mut x = concat(&[visual, imu_feature, &feedback]);
        let mut next_states = Vec::with_capacity(states.len());
        let mut lstm = Vec::with_capacity(states.len());
        for (layer, state) in self.params.core_lstm.iter().zip(states) {
            let (s, cache) = layer.forward(&x, state)?;
            x = s.h.clone();
            next_states.push(s);
            lstm.push(cache);
        }
        let pre = self.params.head.forward(&x)?;
        let head_pre = [pre[0], pre[1], pre[2], pre[3], pre[4], pre[5]];
        let xi = head_twist(&head_pre)?;
        let step_pose = exp_se3(&xi);
        let pose = compose(prev_pose, &step_pose);
        let tape = CoreTape { lstm, head_input: x, head_pre, step_pose };
        Ok((StepOutput { xi, pose }, next_states, tape))
    }

    /// Forward over `steps` of `seq`, starting from `carried`, keeping every
    /// activation needed by [`Vinet::backward_window`].
    pub fn forward_window(
        &self,
        seq: &SyncedSequence,
        steps: Range<usize>,
        carried: &CarriedState,
    ) -> Result<WindowTape, ModelError> {
        self.forward_window_impl(seq, steps, carried, None)
    }

    /// Like [`Vinet::forward_window`], but the core LSTM is fed `feedback[i]`
    /// at step `i` of the window instead of the running pose. Holding these
    /// fixed gives the function whose gradient [`Vinet::backward_window`]
    /// computes, which is what finite-difference checks need.
    pub fn forward_window_with_feedback(
        &self,
        seq: &SyncedSequence,
        steps: Range<usize>,
        carried: &CarriedState,
        feedback: &[Pose],
    ) -> Result<WindowTape, ModelError> {
        if feedback.len() != steps.len() {
            return Err(ModelError::Alignment(format!(
                "{} feedback poses for a {}-step window",
                feedback.len(),
                steps.len()
            )));
        }
        self.forward_window_impl(seq, steps, carried, Some(feedback))
    }

    fn forward_window_impl(
        &self,
        seq: &SyncedSequence,
        steps: Range<usize>,
        carried: &CarriedState,
        feedback: Option<&[Pose]>,
    ) -> Result<WindowTape, ModelError> {
        if steps.end > seq.step_count() {
            return Err(ModelError::Alignment(format!(
                "window {steps:?} exceeds the {} steps of the sequence",
                seq.step_count()
            )));
        }
        let max_window = self.config.imu_rate_ratio + 1;
        let mut imu_state = carried.imu.clone();
        let mut core_states = carried.core.clone();
        let mut pose = carried.pose;
        let mut tapes = Vec::with_capacity(steps.len());
        let first = steps.start;
        for k in steps {
            let samples = seq.imu_window(k);
            if samples.len() > max_window {
                return Err(ModelError::Alignment(format!(
                    "step {k} has {} IMU samples, more than the configured ratio {} allows",
                    samples.len(),
                    self.config.imu_rate_ratio
                )));
            }
            let (visual, conv) = self.visual_forward(&seq.frame_pair(k))?;
            let (imu_feature, next_imu, imu) = self.imu_window_forward(samples, &imu_state)?;
            let fed = feedback.map_or(pose, |f| f[k - first]);
            let (output, next_core, core) = self.core_step_fed(&visual, &imu_feature, &pose, &fed, &core_states)?;
            tapes.push(StepTape {
                conv,
                imu,
                core: core.lstm,
                head_input: core.head_input,
                head_pre: core.head_pre,
                prev_pose: pose,
                step_pose: core.step_pose,
                output,
            });
            imu_state = next_imu;
            core_states = next_core;
            pose = output.pose;
        }
        Ok(WindowTape { steps: tapes, end: CarriedState { imu: imu_state, core: core_states, pose } })
    }

    /// Inference over the whole sequence.
    pub fn sequence_forward(&self, seq: &SyncedSequence, carried: &CarriedState) -> Result<SequenceOutput, ModelError> {
        if let Some(i) = seq.imu.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(ModelError::NonMonotonicImu { index: i + 1 });
        }
        if seq.gt_poses.len() != seq.frames.len() {
            return Err(ModelError::Alignment(format!(
                "{} ground-truth poses for {} frames",
                seq.gt_poses.len(),
                seq.frames.len()
            )));
        }
        const CHUNK: usize = 32;
        let n = seq.step_count();
        let mut state = carried.clone();
        let mut outputs = Vec::with_capacity(n);
        let mut imu_steps = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let tape = self.forward_window(seq, start..end, &state)?;
            outputs.extend(tape.outputs());
            imu_steps.extend(tape.imu_steps());
            state = tape.end;
            start = end;
        }
        Ok(SequenceOutput { outputs, end: state, imu_steps_per_frame: imu_steps })
    }

    /// BPTT through a window. `grad_twists[k]` is `dL/dxi_k`; `grad_poses[k]`
    /// is `dL/dpose_k` in the pose's right tangent. The carried-in state and
    /// the fed-back poses are treated as constants.
    pub fn backward_window(
        &self,
        tape: &WindowTape,
        grad_twists: &[Vector6<f64>],
        grad_poses: &[Vector6<f64>],
    ) -> VinetParams {
        let n = tape.steps.len();
        assert_eq!(grad_twists.len(), n, "one twist gradient per step");
        assert_eq!(grad_poses.len(), n, "one pose gradient per step");
        let mut grads = self.params.zeros_like();
        let layers = self.params.core_lstm.len();
        let hc = self.config.core_hidden;
        let mut dh_core = vec![vec![0.0; hc]; layers];
        let mut dc_core = vec![vec![0.0; hc]; layers];
        let hi = self.config.imu_hidden;
        let mut dh_imu = vec![0.0; hi];
        let mut dc_imu = vec![0.0; hi];
        let mut g_pose_later = Vector6::zeros();
        let feature_sizes = [self.config.visual_feature_size(), hi, POSE_FEEDBACK];

        for k in (0..n).rev() {
            let step = &tape.steps[k];
            // SE(3) accumulation: pose_k = pose_{k-1} * exp(xi_k).
            let g_pose = grad_poses[k] + g_pose_later;
            let (g_prev, g_step) = compose_backward(&step.prev_pose, &step.step_pose, &g_pose);
            g_pose_later = g_prev;
            let g_xi = exp_se3_backward(&step.output.xi, &g_step) + grad_twists[k];

            let g_pre = head_twist_backward(&step.head_pre, &g_xi);
            let mut dh_in = self.params.head.backward(&step.head_input, &g_pre, &mut grads.head);

            for l in (0..layers).rev() {
                let dh: Vec<f64> = dh_in.iter().zip(&dh_core[l]).map(|(a, b)| a + b).collect();
                let g = self.params.core_lstm[l].backward(&step.core[l], &dh, &dc_core[l], &mut grads.core_lstm[l]);
                dh_core[l] = g.h_prev;
                dc_core[l] = g.c_prev;
                dh_in = g.x;
            }
            let parts = concat_backward(&dh_in, &feature_sizes).expect("core input layout");

            for (d, g) in dh_imu.iter_mut().zip(&parts[1]) {
                *d += g;
            }
            for cache in step.imu.iter().rev() {
                let g = self.params.imu_lstm.backward(cache, &dh_imu, &dc_imu, &mut grads.imu_lstm);
                dh_imu = g.h_prev;
                dc_imu = g.c_prev;
            }

            self.visual_backward(&step.conv, &parts[0], &mut grads);
        }
        grads
    }
}

/// Core-step activations (returned by [`Vinet::core_step`]).
#[derive(Clone, Debug)]
pub struct CoreTape {
    pub lstm: Vec<LstmCache>,
    pub head_input: Vec<f64>,
    pub head_pre: [f64; 6],
    pub step_pose: Pose,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_se3::tangent_gradient;
    use crate::model::Image;
    use crate::simulator::{generate_trajectory, shift_imu_clock, CameraSpec, TrajectorySpec};

    fn toy_sequence(frames: usize, seed: u64) -> SyncedSequence {
        let spec = TrajectorySpec {
            duration: frames as f64 / 10.0,
            camera: CameraSpec { width: 8, height: 8, focal: 4.0, ..CameraSpec::default() },
            landmark_count: 80,
            seed,
            ..TrajectorySpec::default()
        };
        generate_trajectory(&spec).unwrap()
    }

    fn net(seed: u64) -> Vinet {
        Vinet::new(ModelConfig::tiny(), seed).unwrap()
    }

    #[test]
    fn visual_forward_shape_and_determinism() {
        let seq = toy_sequence(3, 1);
        let n = net(1);
        let (a, _) = n.visual_forward(&seq.frame_pair(0)).unwrap();
        let (b, _) = n.visual_forward(&seq.frame_pair(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), n.config.visual_feature_size());
        let small = Image::zeros(4, 8);
        let bad = FramePair { prev: &small, curr: &small, t: 0.0 };
        assert!(matches!(n.visual_forward(&bad), Err(ModelError::ExtentMismatch { .. })));
    }

    #[test]
    fn empty_imu_window_passes_state_through() {
        let n = net(2);
        let state = LstmState { h: vec![0.1, -0.2, 0.3, 0.4], c: vec![1.0, 2.0, -1.0, 0.5] };
        let (feature, next, caches) = n.imu_window_forward(&[], &state).unwrap();
        assert_eq!(feature, state.h);
        assert_eq!(next, state);
        assert!(caches.is_empty());
    }

    #[test]
    fn imu_window_is_unrolled_lstm() {
        let seq = toy_sequence(3, 3);
        let n = net(3);
        let samples = seq.imu_window(1);
        assert_eq!(samples.len(), 10);
        let (feature, state, _) = n.imu_window_forward(samples, &LstmState::zeros(4)).unwrap();
        let mut s = LstmState::zeros(4);
        for x in samples {
            let input = [x.a.x / 9.81, x.a.y / 9.81, x.a.z / 9.81, x.w.x, x.w.y, x.w.z];
            s = n.params.imu_lstm.forward(&input, &s).unwrap().0;
        }
        assert_eq!(state, s);
        assert_eq!(feature, s.h);

        let zero = Vinet { params: n.params.zeros_like(), ..n.clone() };
        let same: Vec<_> = (0..10).map(|i| ImuSample { t: i as f64, ..samples[0] }).collect();
        assert!(zero.imu_window_forward(&same, &LstmState::zeros(4)).unwrap().0.iter().all(|&h| h == 0.0));

        let mut backwards = samples.to_vec();
        backwards.swap(2, 3);
        assert!(matches!(n.imu_window_forward(&backwards, &s), Err(ModelError::NonMonotonicImu { index: 3 })));
    }

    #[test]
    fn zero_params_advance_by_a_constant() {
        let seq = toy_sequence(5, 4);
        let mut n = net(4);
        n.params = n.params.zeros_like();
        let out = n.sequence_forward(&seq, &n.initial_state()).unwrap();
        assert!(out.outputs.iter().all(|o| o.pose == Pose::identity() && o.xi == Twist::zero()));

        n.params.head.b = Tensor::from_vec(&[6], vec![0.1, -0.2, 0.05, 0.3, 0.0, -0.1]).unwrap();
        let out = n.sequence_forward(&seq, &n.initial_state()).unwrap();
        let step = exp_se3(&out.outputs[0].xi);
        let mut expected = Pose::identity();
        for o in &out.outputs {
            assert_eq!(o.xi, out.outputs[0].xi);
            expected = compose(&expected, &step);
            assert_eq!(o.pose, expected);
        }
    }

    #[test]
    fn single_step_is_core_step() {
        let seq = toy_sequence(2, 5);
        let n = net(5);
        let out = n.sequence_forward(&seq, &n.initial_state()).unwrap();
        assert_eq!(out.outputs.len(), 1);
        let init = n.initial_state();
        let (visual, _) = n.visual_forward(&seq.frame_pair(0)).unwrap();
        let (imu, _, _) = n.imu_window_forward(seq.imu_window(0), &init.imu).unwrap();
        let (step, _, _) = n.core_step(&visual, &imu, &Pose::identity(), &init.core).unwrap();
        assert_eq!(out.outputs[0], step);
    }

    #[test]
    fn pose_chain_and_multirate() {
        let seq = toy_sequence(12, 6);
        let n = net(6);
        let out = n.sequence_forward(&seq, &n.initial_state()).unwrap();
        let mut prev = Pose::identity();
        for o in &out.outputs {
            assert_eq!(o.pose, compose(&prev, &exp_se3(&o.xi)));
            assert!(o.xi.omega.norm() < std::f64::consts::PI);
            prev = o.pose;
        }
        assert_eq!(out.imu_steps_per_frame, vec![10; 11]);
    }

    #[test]
    fn split_run_equals_unbroken_run() {
        let seq = toy_sequence(9, 7);
        let n = net(7);
        let whole = n.forward_window(&seq, 0..8, &n.initial_state()).unwrap();
        let first = n.forward_window(&seq, 0..3, &n.initial_state()).unwrap();
        let second = n.forward_window(&seq, 3..8, &first.end).unwrap();
        let mut joined = first.outputs();
        joined.extend(second.outputs());
        assert_eq!(joined, whole.outputs());
        assert_eq!(second.end, whole.end);
        let chunked = n.sequence_forward(&seq, &n.initial_state()).unwrap();
        assert_eq!(chunked.outputs, whole.outputs());
    }

    #[test]
    fn unsynchronized_imu_still_runs() {
        let seq = toy_sequence(6, 8);
        let gone = shift_imu_clock(&seq, 100.0);
        let n = net(8);
        let out = n.sequence_forward(&gone, &n.initial_state()).unwrap();
        assert_eq!(out.imu_steps_per_frame, vec![0; 5]);
        assert!(out.outputs.iter().all(|o| o.pose.is_finite()));
    }

    #[test]
    fn too_many_samples_per_frame_is_an_alignment_error() {
        let seq = toy_sequence(3, 9);
        let config = ModelConfig { imu_rate_ratio: 5, ..ModelConfig::tiny() };
        let n = Vinet::new(config, 9).unwrap();
        assert!(matches!(n.sequence_forward(&seq, &n.initial_state()), Err(ModelError::Alignment(_))));
    }

    /// Linear functional of the twists and pose components; its gradient is
    /// known in closed form at the outputs.
    fn probe(outputs: &[StepOutput]) -> f64 {
        outputs
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let kf = k as f64 + 1.0;
                let v = o.xi.to_vector();
                let q = o.pose.quat().to_array();
                let t = o.pose.translation();
                (0..6).map(|i| v[i] * (0.3 * kf - 0.1 * i as f64)).sum::<f64>()
                    + (0..4).map(|i| q[i] * (0.2 + 0.1 * i as f64) * kf).sum::<f64>()
                    + t.x * 0.7 - t.y * 0.4 * kf + t.z * 0.9
            })
            .sum()
    }

    #[test]
    fn window_backward_matches_finite_differences() {
        let seq = toy_sequence(3, 10);
        let mut n = net(10);
        let tape = n.forward_window(&seq, 0..2, &n.initial_state()).unwrap();
        let mut g_xi = Vec::new();
        let mut g_pose = Vec::new();
        for (k, o) in tape.outputs().iter().enumerate() {
            let kf = k as f64 + 1.0;
            g_xi.push(Vector6::from_fn(|i, _| 0.3 * kf - 0.1 * i as f64));
            let gq = [0.2 * kf, 0.3 * kf, 0.4 * kf, 0.5 * kf];
            g_pose.push(tangent_gradient(&o.pose, &gq, &Vector3::new(0.7, -0.4 * kf, 0.9)));
        }
        let grads = n.backward_window(&tape, &g_xi, &g_pose);
        let analytic: Vec<(String, Vec<f64>)> =
            grads.tensors().iter().map(|p| (p.name.clone(), p.tensor.data().to_vec())).collect();
        let h = 1e-6;
        let fed: Vec<Pose> = tape.steps.iter().map(|s| s.prev_pose).collect();
        let eval = |n: &Vinet| {
            probe(&n.forward_window_with_feedback(&seq, 0..2, &n.initial_state(), &fed).unwrap().outputs())
        };
        for (ti, (name, grad)) in analytic.iter().enumerate() {
            let len = grad.len();
            let (mut num, mut ana) = (Vec::new(), Vec::new());
            for e in (0..len).step_by((len / 3).max(1)) {
                let orig = n.params.tensors()[ti].tensor.data()[e];
                n.params.tensors_mut()[ti].tensor.data_mut()[e] = orig + h;
                let up = eval(&n);
                n.params.tensors_mut()[ti].tensor.data_mut()[e] = orig - h;
                let down = eval(&n);
                n.params.tensors_mut()[ti].tensor.data_mut()[e] = orig;
                num.push((up - down) / (2.0 * h));
                ana.push(grad[e]);
            }
            let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = num.iter().chain(&ana).map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
            assert!(diff / scale < 1e-5, "{name}: analytic {ana:?} numeric {num:?}");
        }
    }
}
