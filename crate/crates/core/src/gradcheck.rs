//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check draws random small inputs, evaluates a random linear probe of
//! the layer output, and compares the analytic gradient with
//! `(f(x + h) - f(x - h)) / 2h`. The error reported for a check is the worst
//! `|analytic - numeric| / max(|analytic|, |numeric|)` (vector 2-norms) over
//! its random cases.

use crate::lie_se3::{compose, compose_backward, exp_se3, exp_se3_backward, tangent_gradient, Pose, Twist};
use crate::model::{head_twist, head_twist_backward, ModelConfig, ModelError, Vinet};
use crate::nn::{concat, concat_backward, Activation, Conv2d, Dense, LstmParams, LstmState, Tensor};
use crate::simulator::{generate_trajectory, CameraSpec, TrajectorySpec};
use crate::training::{pose_loss, LossWeights};
use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
/// Random cases per layer check.
pub const CASES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub rel_error: f64,
    pub tolerance: f64,
    /// Scalar derivatives compared.
    pub compared: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `loss` with respect to every scalar exposed by
/// `slots`, in slot order.
fn numeric_gradient<C: Clone>(case: &C, slots: fn(&mut C) -> Vec<&mut [f64]>, loss: impl Fn(&C) -> f64) -> Vec<f64> {
    let mut probe = case.clone();
    let sizes: Vec<usize> = slots(&mut probe).iter().map(|s| s.len()).collect();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (si, &n) in sizes.iter().enumerate() {
        for e in 0..n {
            let orig = slots(&mut probe)[si][e];
            slots(&mut probe)[si][e] = orig + FD_STEP;
            let up = loss(&probe);
            slots(&mut probe)[si][e] = orig - FD_STEP;
            let down = loss(&probe);
            slots(&mut probe)[si][e] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn randomize(t: &mut Tensor, rng: &mut ChaCha8Rng, scale: f64) {
    for v in t.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst-case tracker for one named check.
struct Worst {
    name: &'static str,
    tolerance: f64,
    err: f64,
    compared: usize,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Worst { name, tolerance, err: 0.0, compared: 0 }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        debug_assert_eq!(analytic.len(), numeric.len());
        self.err = self.err.max(rel_error(analytic, numeric));
        self.compared += analytic.len();
    }

    fn finish(self) -> GradCheck {
        GradCheck { name: self.name, rel_error: self.err, tolerance: self.tolerance, compared: self.compared }
    }
}

#[derive(Clone)]
struct LstmCase {
    p: LstmParams,
    x: Vec<f64>,
    prev: LstmState,
    gh: Vec<f64>,
    gc: Vec<f64>,
}

fn lstm_slots(c: &mut LstmCase) -> Vec<&mut [f64]> {
    let mut s: Vec<&mut [f64]> = c.p.tensors_mut().into_iter().map(|(_, t)| t.data_mut()).collect();
    s.push(&mut c.x);
    s.push(&mut c.prev.h);
    s.push(&mut c.prev.c);
    s
}

fn lstm_loss(c: &LstmCase) -> f64 {
    let (s, _) = c.p.forward(&c.x, &c.prev).expect("lstm shapes");
    dot(&s.h, &c.gh) + dot(&s.c, &c.gc)
}

/// LSTM cell, all weights, biases and inputs; peepholes also reported alone.
pub fn check_lstm(rng: &mut ChaCha8Rng) -> [GradCheck; 2] {
    let mut all = Worst::new("lstm_cell", LAYER_TOLERANCE);
    let mut peep = Worst::new("lstm_peepholes", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let (input, hidden) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let mut p = LstmParams::zeros(input, hidden);
        for (_, t) in p.tensors_mut() {
            randomize(t, rng, 0.8);
        }
        let prev = LstmState { h: uniform(rng, hidden, 1.0), c: uniform(rng, hidden, 2.0) };
        let case =
            LstmCase { p, x: uniform(rng, input, 1.5), prev, gh: uniform(rng, hidden, 1.0), gc: uniform(rng, hidden, 1.0) };
        let (_, cache) = case.p.forward(&case.x, &case.prev).expect("lstm shapes");
        let mut grads = LstmParams::zeros(input, hidden);
        let g = case.p.backward(&cache, &case.gh, &case.gc, &mut grads);
        let mut analytic: Vec<f64> = Vec::new();
        let mut peep_idx = Vec::new();
        for (name, t) in grads.tensors() {
            if name.starts_with("w_c") {
                peep_idx.extend(analytic.len()..analytic.len() + t.len());
            }
            analytic.extend_from_slice(t.data());
        }
        analytic.extend(g.x.iter().chain(&g.h_prev).chain(&g.c_prev));
        let numeric = numeric_gradient(&case, lstm_slots, lstm_loss);
        all.add(&analytic, &numeric);
        let pick = |v: &[f64]| peep_idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        peep.add(&pick(&analytic), &pick(&numeric));
    }
    [all.finish(), peep.finish()]
}

#[derive(Clone)]
struct ConvCase {
    layer: Conv2d,
    input: Tensor,
    g: Vec<f64>,
}

fn conv_slots(c: &mut ConvCase) -> Vec<&mut [f64]> {
    vec![c.layer.kernels.data_mut(), c.layer.bias.data_mut(), c.input.data_mut()]
}

fn conv_loss(c: &ConvCase) -> f64 {
    dot(c.layer.forward(&c.input).expect("conv shapes").0.data(), &c.g)
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("conv2d", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (kh, kw, stride) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..3));
        let (h, wd) = (kh + rng.gen_range(0..5), kw + rng.gen_range(0..5));
        let mut layer = Conv2d::zeros(cin, cout, kh, kw, stride, Activation::LeakyRelu(0.1));
        randomize(&mut layer.kernels, rng, 1.0);
        randomize(&mut layer.bias, rng, 0.5);
        let mut input = Tensor::zeros(&[cin, h, wd]);
        randomize(&mut input, rng, 1.0);
        let (out, cache) = layer.forward(&input).expect("conv shapes");
        let g = uniform(rng, out.len(), 1.0);
        let mut grads = layer.clone();
        grads.kernels.fill(0.0);
        grads.bias.fill(0.0);
        let g_out = Tensor::from_vec(out.shape(), g.clone()).expect("same shape");
        let g_in = layer.backward(&cache, &g_out, &mut grads, true);
        let analytic: Vec<f64> =
            grads.kernels.data().iter().chain(grads.bias.data()).chain(g_in.data()).copied().collect();
        let case = ConvCase { layer, input, g };
        w.add(&analytic, &numeric_gradient(&case, conv_slots, conv_loss));
    }
    w.finish()
}

#[derive(Clone)]
struct DenseCase {
    layer: Dense,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn dense_slots(c: &mut DenseCase) -> Vec<&mut [f64]> {
    vec![c.layer.w.data_mut(), c.layer.b.data_mut(), &mut c.x]
}

fn dense_loss(c: &DenseCase) -> f64 {
    dot(&c.layer.forward(&c.x).expect("dense shapes"), &c.g)
}

fn random_dense(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Dense {
    let mut layer = Dense::zeros(input, output);
    randomize(&mut layer.w, rng, 1.0);
    randomize(&mut layer.b, rng, 0.5);
    layer
}

pub fn check_dense(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("dense", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let (input, output) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let case = DenseCase { layer: random_dense(rng, input, output), x: uniform(rng, input, 1.0), g: uniform(rng, output, 1.0) };
        let mut grads = Dense::zeros(input, output);
        let gx = case.layer.backward(&case.x, &case.g, &mut grads);
        let analytic: Vec<f64> = grads.w.data().iter().chain(grads.b.data()).chain(&gx).copied().collect();
        w.add(&analytic, &numeric_gradient(&case, dense_slots, dense_loss));
    }
    w.finish()
}

#[derive(Clone)]
struct ConcatCase {
    parts: Vec<Vec<f64>>,
    g: Vec<f64>,
}

fn concat_slots(c: &mut ConcatCase) -> Vec<&mut [f64]> {
    c.parts.iter_mut().map(|p| p.as_mut_slice()).collect()
}

fn concat_loss(c: &ConcatCase) -> f64 {
    let parts: Vec<&[f64]> = c.parts.iter().map(|p| p.as_slice()).collect();
    dot(&concat(&parts), &c.g)
}

pub fn check_concat(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("concat", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let sizes: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..5)).collect();
        let parts: Vec<Vec<f64>> = sizes.iter().map(|&n| uniform(rng, n, 1.0)).collect();
        let case = ConcatCase { g: uniform(rng, sizes.iter().sum(), 1.0), parts };
        let analytic: Vec<f64> = concat_backward(&case.g, &sizes).expect("sizes match").concat();
        w.add(&analytic, &numeric_gradient(&case, concat_slots, concat_loss));
    }
    w.finish()
}

#[derive(Clone)]
struct HeadCase {
    layer: Dense,
    x: Vec<f64>,
    g: Vector6<f64>,
}

fn head_slots(c: &mut HeadCase) -> Vec<&mut [f64]> {
    vec![c.layer.w.data_mut(), c.layer.b.data_mut(), &mut c.x]
}

fn head_pre(c: &HeadCase) -> [f64; 6] {
    let a = c.layer.forward(&c.x).expect("head shapes");
    [a[0], a[1], a[2], a[3], a[4], a[5]]
}

fn head_loss(c: &HeadCase) -> f64 {
    head_twist(&head_pre(c)).expect("bounded head").to_vector().dot(&c.g)
}

/// Dense layer followed by the bounded twist nonlinearity.
pub fn check_twist_head(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("se3_head", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let input = rng.gen_range(1..7);
        let case = HeadCase {
            layer: random_dense(rng, input, 6),
            x: uniform(rng, input, 1.0),
            g: Vector6::from_iterator(uniform(rng, 6, 1.0)),
        };
        let g_pre = head_twist_backward(&head_pre(&case), &case.g);
        let mut grads = Dense::zeros(input, 6);
        let gx = case.layer.backward(&case.x, &g_pre, &mut grads);
        let analytic: Vec<f64> = grads.w.data().iter().chain(grads.b.data()).chain(&gx).copied().collect();
        w.add(&analytic, &numeric_gradient(&case, head_slots, head_loss));
    }
    w.finish()
}

/// Linear probe of the stored pose representation.
#[derive(Clone, Copy)]
struct PoseProbe {
    q: [f64; 4],
    t: Vector3<f64>,
}

impl PoseProbe {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        PoseProbe { q: [0; 4].map(|_| rng.gen_range(-1.0..1.0)), t: Vector3::from_iterator(uniform(rng, 3, 1.0)) }
    }

    fn eval(&self, p: &Pose) -> f64 {
        dot(&p.quat().to_array(), &self.q) + p.translation().dot(&self.t)
    }

    fn tangent(&self, p: &Pose) -> Vector6<f64> {
        tangent_gradient(p, &self.q, &self.t)
    }
}

fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
    let axis = loop {
        let a = Vector3::from_iterator(uniform(rng, 3, 1.0));
        if a.norm() > 1e-3 {
            break a.normalize();
        }
    };
    Twist::new(axis * rng.gen_range(0.0..max_angle), Vector3::from_iterator(uniform(rng, 3, 3.0))).expect("inside branch")
}

#[derive(Clone)]
struct ExpCase {
    xi: [f64; 6],
    probe: PoseProbe,
}

fn exp_slots(c: &mut ExpCase) -> Vec<&mut [f64]> {
    vec![&mut c.xi]
}

fn exp_loss(c: &ExpCase) -> f64 {
    c.probe.eval(&exp_se3(&Twist::from_vector(&Vector6::from(c.xi)).expect("inside branch")))
}

/// exp_se3 over |omega| in [0, 3], with a third of the cases on the
/// small-angle branch.
pub fn check_exp_se3(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("exp_se3", LAYER_TOLERANCE);
    for i in 0..CASES {
        let max_angle = if i % 3 == 0 { 1e-6 } else { 3.0 };
        let xi = random_twist(rng, max_angle);
        let case = ExpCase { xi: xi.to_vector().into(), probe: PoseProbe::random(rng) };
        let analytic = exp_se3_backward(&xi, &case.probe.tangent(&exp_se3(&xi)));
        w.add(analytic.as_slice(), &numeric_gradient(&case, exp_slots, exp_loss));
    }
    w.finish()
}

#[derive(Clone)]
struct ComposeCase {
    a: Pose,
    b: Pose,
    /// Right perturbations of `a` and `b`.
    da: [f64; 6],
    db: [f64; 6],
    probe: PoseProbe,
}

fn compose_slots(c: &mut ComposeCase) -> Vec<&mut [f64]> {
    vec![&mut c.da, &mut c.db]
}

fn compose_loss(c: &ComposeCase) -> f64 {
    let bump = |p: &Pose, d: &[f64; 6]| compose(p, &exp_se3(&Twist::from_vector(&Vector6::from(*d)).expect("small")));
    c.probe.eval(&compose(&bump(&c.a, &c.da), &bump(&c.b, &c.db)))
}

pub fn check_compose(rng: &mut ChaCha8Rng) -> GradCheck {
    let mut w = Worst::new("compose", LAYER_TOLERANCE);
    for _ in 0..CASES {
        let a = exp_se3(&random_twist(rng, 3.0));
        let b = exp_se3(&random_twist(rng, 3.0));
        let case = ComposeCase { a, b, da: [0.0; 6], db: [0.0; 6], probe: PoseProbe::random(rng) };
        let (ga, gb) = compose_backward(&a, &b, &case.probe.tangent(&compose(&a, &b)));
        let analytic: Vec<f64> = ga.iter().chain(gb.iter()).copied().collect();
        w.add(&analytic, &numeric_gradient(&case, compose_slots, compose_loss));
    }
    w.finish()
}

/// Full-pose loss at the last step of a 3-frame sequence against every
/// model parameter (a few elements per tensor), through conv, concat, both
/// LSTMs, the head, exp and compose. Fed-back poses are held at their
/// forward values, matching the detached feedback of the model.
pub fn check_end_to_end(seed: u64) -> Result<GradCheck, ModelError> {
    let spec = TrajectorySpec {
        duration: 0.3,
        camera: CameraSpec { width: 8, height: 8, focal: 4.0, ..CameraSpec::default() },
        landmark_count: 80,
        seed,
        ..TrajectorySpec::default()
    };
    let seq = generate_trajectory(&spec).map_err(|e| ModelError::Alignment(e.to_string()))?;
    let mut model = Vinet::new(ModelConfig::tiny(), seed)?;
    let steps = 0..seq.step_count();
    let n = steps.len();
    let weights = LossWeights::default();
    let target = [seq.gt_poses[n]];

    let tape = model.forward_window(&seq, steps.clone(), &model.initial_state())?;
    let last = tape.steps[n - 1].output.pose;
    let (_, g) = pose_loss(&[last], &target, &weights).expect("one pose");
    let mut g_pose = vec![Vector6::zeros(); n];
    g_pose[n - 1] = tangent_gradient(&last, &g[0].q, &g[0].t);
    let grads = model.backward_window(&tape, &vec![Vector6::zeros(); n], &g_pose);
    let fed: Vec<Pose> = tape.steps.iter().map(|s| s.prev_pose).collect();

    let loss = |m: &Vinet| -> f64 {
        let t = m.forward_window_with_feedback(&seq, steps.clone(), &m.initial_state(), &fed).expect("same shapes");
        pose_loss(&[t.steps[n - 1].output.pose], &target, &weights).expect("one pose").0
    };
    let mut w = Worst::new("end_to_end", END_TO_END_TOLERANCE);
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|p| p.tensor.data().to_vec()).collect();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for (ti, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        for e in (0..len).step_by((len / 4).max(1)) {
            let orig = model.params.tensors()[ti].tensor.data()[e];
            model.params.tensors_mut()[ti].tensor.data_mut()[e] = orig + FD_STEP;
            let up = loss(&model);
            model.params.tensors_mut()[ti].tensor.data_mut()[e] = orig - FD_STEP;
            let down = loss(&model);
            model.params.tensors_mut()[ti].tensor.data_mut()[e] = orig;
            all_n.push((up - down) / (2.0 * FD_STEP));
            all_a.push(grad[e]);
        }
    }
    w.add(&all_a, &all_n);
    Ok(w.finish())
}

/// Every check, in a fixed order.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(check_lstm(&mut rng));
    out.push(check_conv(&mut rng));
    out.push(check_dense(&mut rng));
    out.push(check_concat(&mut rng));
    out.push(check_twist_head(&mut rng));
    out.push(check_exp_se3(&mut rng));
    out.push(check_compose(&mut rng));
    out.push(check_end_to_end(seed)?);
    Ok(out)
}
