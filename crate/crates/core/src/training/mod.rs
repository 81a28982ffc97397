//! Truncated BPTT over sliding windows, the frame-to-frame and full-pose
//! losses, and the joint two-loss update with its learning-rate schedule.

mod losses;
mod step;

pub use losses::{pose_loss, twist_loss, LossNorm, LossWeights, PoseGrad};
pub use step::{
    bptt_window, joint_update, sliding_window_schedule, JointOptimizer, JointRates, WantedGrads, WindowGrads,
};

use crate::lie_se3::{LieError, Pose};
use crate::model::{ModelError, Vinet, VinetParams};
use crate::nn::{NnError, OptimizerKind};
use crate::simulator::SyncedSequence;
use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("prediction has {pred} steps but the target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training sequences")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Box<TrainOutcome> },
}

/// Which losses drive the updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    /// Frame-to-frame loss only.
    #[serde(rename = "se3-only")]
    FrameToFrame,
    /// Full-pose loss only.
    #[serde(rename = "SE3-only")]
    FullPose,
    #[serde(rename = "joint")]
    Joint,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::FrameToFrame, TrainMode::Joint, TrainMode::FullPose];

    pub fn tag(&self) -> &'static str {
        match self {
            TrainMode::FrameToFrame => "se3-only",
            TrainMode::FullPose => "SE3-only",
            TrainMode::Joint => "joint",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioMilestone {
    /// Fraction of the run (epochs done / total) at which `ratio` takes over.
    pub from_fraction: f64,
    /// Frame-to-frame rate over full-pose rate.
    pub ratio: f64,
}

/// Piecewise-constant schedule of the rate ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSchedule {
    pub milestones: Vec<RatioMilestone>,
}

impl Default for RatioSchedule {
    fn default() -> Self {
        let m = |from_fraction, ratio| RatioMilestone { from_fraction, ratio };
        RatioSchedule { milestones: vec![m(0.0, 100.0), m(0.6, 10.0), m(0.8, 0.1)] }
    }
}

impl RatioSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(format!("ratio schedule: {m}")));
        match self.milestones.first() {
            None => return bad("needs at least one milestone"),
            Some(m) if m.from_fraction != 0.0 => return bad("first milestone must start at fraction 0"),
            _ => {}
        }
        if self.milestones.iter().any(|m| !(m.ratio > 0.0 && m.ratio.is_finite())) {
            return bad("ratios must be finite and > 0");
        }
        if self.milestones.windows(2).any(|w| !(w[1].from_fraction > w[0].from_fraction) || w[1].ratio > w[0].ratio) {
            return bad("fractions must increase and ratios must not increase");
        }
        Ok(())
    }

    /// Ratio in force during epoch `epoch` (0-based) of `epochs`.
    pub fn ratio_at(&self, epoch: usize, epochs: usize) -> f64 {
        let progress = epoch as f64 / epochs.max(1) as f64;
        self.milestones.iter().take_while(|m| m.from_fraction <= progress).last().map_or(1.0, |m| m.ratio)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Steps per BPTT window.
    pub window: usize,
    /// Sequences trained side by side, each with its own carried state.
    pub batch: usize,
    pub epochs: usize,
    /// Total rate, split between the two losses by the schedule ratio.
    pub learning_rate: f64,
    /// Multiplies the rate after every epoch.
    pub lr_decay: f64,
    pub schedule: RatioSchedule,
    pub mode: TrainMode,
    /// Frame-to-frame updates touch only parameters with a layer index below
    /// this; `None` means every layer.
    pub se3_layer_boundary: Option<usize>,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub weights: LossWeights,
    /// Shuffle the order of training sequences every epoch.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 10,
            batch: 4,
            epochs: 50,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            schedule: RatioSchedule::default(),
            mode: TrainMode::Joint,
            se3_layer_boundary: None,
            optimizer: OptimizerKind::default(),
            clip_norm: 5.0,
            weights: LossWeights::default(),
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.window < 2 {
            return bad(format!("window must be >= 2, got {}", self.window));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and > 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        self.weights.validate()?;
        self.schedule.validate()?;
        JointOptimizer::new(self.optimizer)?;
        Ok(())
    }

    /// Rates for the two losses during epoch `epoch` (0-based).
    pub fn rates(&self, epoch: usize) -> JointRates {
        let lr = self.learning_rate * self.lr_decay.powi(epoch as i32);
        match self.mode {
            TrainMode::FrameToFrame => JointRates { pose: 0.0, twist: lr },
            TrainMode::FullPose => JointRates { pose: lr, twist: 0.0 },
            TrainMode::Joint => {
                let r = self.schedule.ratio_at(epoch, self.epochs);
                JointRates { pose: lr / (1.0 + r), twist: lr * r / (1.0 + r) }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurvePoint {
    pub epoch: usize,
    pub mode: TrainMode,
    /// Mean per-step full-pose loss over the training sequences.
    pub train_loss: f64,
    /// Same on the validation sequences (the training value when there are none).
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Vinet,
    pub optimizer: JointOptimizer,
    /// Epoch 0 is the untrained model.
    pub curve: Vec<TrainingCurvePoint>,
}

/// Mean per-step full-pose loss of full-sequence inference.
pub fn evaluate_loss(model: &Vinet, seqs: &[SyncedSequence], weights: &LossWeights) -> Result<f64, TrainError> {
    let (mut total, mut steps) = (0.0, 0usize);
    for seq in seqs {
        let out = model.sequence_forward(seq, &model.initial_state())?;
        let poses: Vec<Pose> = out.poses();
        total += pose_loss(&poses, &seq.gt_poses[1..], weights)?.0;
        steps += poses.len();
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

pub fn train(model: Vinet, train: &[SyncedSequence], val: &[SyncedSequence], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, train, val, cfg, |_| {})
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each curve point
/// (including epoch 0). Deterministic in `cfg.seed`. On divergence the error
/// carries the model as it was after the last good epoch.
pub fn train_with(
    model: Vinet,
    train: &[SyncedSequence],
    val: &[SyncedSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainOutcome),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let boundary = cfg.se3_layer_boundary.unwrap_or_else(|| model.params.layer_count());
    let wanted = WantedGrads {
        pose: cfg.mode != TrainMode::FrameToFrame,
        twist: cfg.mode != TrainMode::FullPose,
    };
    let measure = |m: &Vinet, epoch: usize| -> Result<TrainingCurvePoint, TrainError> {
        let train_loss = evaluate_loss(m, train, &cfg.weights)?;
        let val_loss = if val.is_empty() { train_loss } else { evaluate_loss(m, val, &cfg.weights)? };
        Ok(TrainingCurvePoint { epoch, mode: cfg.mode, train_loss, val_loss })
    };

    let first = measure(&model, 0)?;
    let initial = first.train_loss;
    info!("{} epoch 0: train {:.6} val {:.6}", cfg.mode, first.train_loss, first.val_loss);
    let mut good = TrainOutcome { model, optimizer: JointOptimizer::new(cfg.optimizer)?, curve: vec![first] };
    on_epoch(&good);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let rates = cfg.rates(epoch - 1);
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut model = good.model.clone();
        let mut optimizer = good.optimizer.clone();
        let diverged = |reason: String, good: TrainOutcome| TrainError::Diverged { epoch, reason, last_good: Box::new(good) };
        let result = run_epoch(&mut model, &mut optimizer, train, &order, cfg, rates, boundary, wanted);
        match result {
            Ok(()) => {}
            Err(TrainError::Nn(e @ NnError::NonFiniteGradient { .. })) => return Err(diverged(e.to_string(), good)),
            Err(TrainError::Model(ModelError::Lie(e @ LieError::NonFinite(_)))) => {
                return Err(diverged(e.to_string(), good))
            }
            Err(e) => return Err(e),
        }
        let point = match measure(&model, epoch) {
            Ok(p) => p,
            Err(TrainError::Model(ModelError::Lie(e @ LieError::NonFinite(_)))) => {
                return Err(diverged(e.to_string(), good))
            }
            Err(e) => return Err(e),
        };
        if !point.train_loss.is_finite() || (initial > 0.0 && point.train_loss > 1e6 * initial) {
            warn!("{} epoch {epoch}: loss {} diverged", cfg.mode, point.train_loss);
            return Err(diverged(format!("training loss {} (initial {initial})", point.train_loss), good));
        }
        info!("{} epoch {epoch}: train {:.6} val {:.6}", cfg.mode, point.train_loss, point.val_loss);
        good.model = model;
        good.optimizer = optimizer;
        good.curve.push(point);
        on_epoch(&good);
    }
    Ok(good)
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut Vinet,
    optimizer: &mut JointOptimizer,
    train: &[SyncedSequence],
    order: &[usize],
    cfg: &TrainConfig,
    rates: JointRates,
    boundary: usize,
    wanted: WantedGrads,
) -> Result<(), TrainError> {
    for group in order.chunks(cfg.batch) {
        let seqs: Vec<&SyncedSequence> = group.iter().map(|&i| &train[i]).collect();
        let schedules: Vec<_> = seqs.iter().map(|s| sliding_window_schedule(s.step_count(), cfg.window)).collect();
        let mut states: Vec<_> = seqs.iter().map(|_| model.initial_state()).collect();
        let windows = schedules.iter().map(Vec::len).max().unwrap_or(0);
        for j in 0..windows {
            let mut pose_sum: Option<VinetParams> = None;
            let mut twist_sum: Option<VinetParams> = None;
            let mut count = 0usize;
            let (mut pl, mut tl) = (0.0, 0.0);
            for (b, seq) in seqs.iter().enumerate() {
                let Some(range) = schedules[b].get(j) else { continue };
                let g = bptt_window(model, seq, range.clone(), &states[b], &cfg.weights, wanted)?;
                accumulate(&mut pose_sum, g.pose);
                accumulate(&mut twist_sum, g.twist);
                pl += g.pose_loss;
                tl += g.twist_loss;
                states[b] = g.end;
                count += 1;
            }
            let inv = 1.0 / count as f64;
            for g in [&mut pose_sum, &mut twist_sum].into_iter().flatten() {
                g.scale(inv);
            }
            let norms = optimizer.step(model, pose_sum, twist_sum, rates, boundary, cfg.clip_norm)?;
            debug!("window {j}: pose loss {pl:.5} twist loss {tl:.5} grad norms {:.3e} {:.3e}", norms.0, norms.1);
        }
    }
    Ok(())
}

fn accumulate(sum: &mut Option<VinetParams>, g: Option<VinetParams>) {
    match (sum.as_mut(), g) {
        (Some(s), Some(g)) => s.add_assign(&g),
        (None, Some(g)) => *sum = Some(g),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulator::{generate_trajectory, CameraSpec, TrajectorySpec};

    fn toy_seqs(n: usize, duration: f64) -> Vec<SyncedSequence> {
        (0..n)
            .map(|i| {
                let spec = TrajectorySpec {
                    duration,
                    camera: CameraSpec { width: 8, height: 8, focal: 4.0, ..CameraSpec::default() },
                    landmark_count: 80,
                    seed: 40 + i as u64,
                    ..TrajectorySpec::default()
                };
                generate_trajectory(&spec).unwrap()
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, window: 4, batch: 2, learning_rate: 3e-3, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_ratio_is_piecewise_and_non_increasing() {
        let s = RatioSchedule::default();
        let ratios: Vec<f64> = (0..10).map(|e| s.ratio_at(e, 10)).collect();
        assert_eq!(ratios, vec![100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 10.0, 10.0, 0.1, 0.1]);
        let c = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let realized: Vec<f64> = (0..10).map(|e| c.rates(e)).map(|r| r.twist / r.pose).collect();
        assert!(realized.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let bad = RatioSchedule { milestones: vec![RatioMilestone { from_fraction: 0.0, ratio: 1.0 }, RatioMilestone { from_fraction: 0.5, ratio: 2.0 }] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_rates() {
        let mut c = TrainConfig::default();
        c.mode = TrainMode::FullPose;
        assert_eq!(c.rates(0), JointRates { pose: 1e-3, twist: 0.0 });
        c.mode = TrainMode::FrameToFrame;
        assert_eq!(c.rates(0), JointRates { pose: 0.0, twist: 1e-3 });
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { window: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        let w = LossWeights { alpha: 0.0, beta: 0.0, ..LossWeights::default() };
        assert!(TrainConfig { weights: w, ..TrainConfig::default() }.validate().is_err());
        let text = toml::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), TrainConfig::default());
        assert!(toml::from_str::<TrainConfig>("windw = 3").is_err());
    }

    #[test]
    fn zero_epochs_leave_the_model_alone() {
        let seqs = toy_seqs(1, 0.6);
        let model = Vinet::new(ModelConfig::tiny(), 1).unwrap();
        let out = train(model.clone(), &seqs, &[], &cfg(0)).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve[0].train_loss, out.curve[0].val_loss);
    }

    #[test]
    fn deterministic_and_decreasing() {
        let seqs = toy_seqs(3, 0.9);
        let model = Vinet::new(ModelConfig::tiny(), 2).unwrap();
        let c = TrainConfig { mode: TrainMode::FullPose, ..cfg(6) };
        let a = train(model.clone(), &seqs[..2], &seqs[2..], &c).unwrap();
        let b = train(model, &seqs[..2], &seqs[2..], &c).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve.len(), 7);
        assert!(a.curve.last().unwrap().train_loss < a.curve[0].train_loss);
    }

    #[test]
    fn divergence_returns_last_good_model() {
        let seqs = toy_seqs(1, 0.6);
        let model = Vinet::new(ModelConfig::tiny(), 3).unwrap();
        let c = TrainConfig { optimizer: OptimizerKind::Sgd, learning_rate: 1e12, clip_norm: 1e300, ..cfg(3) };
        match train(model.clone(), &seqs, &[], &c) {
            Err(TrainError::Diverged { last_good, .. }) => {
                assert!(last_good.model.params.all_finite());
                assert!(last_good.curve.iter().all(|p| p.train_loss.is_finite()));
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.curve)),
        }
    }
}
