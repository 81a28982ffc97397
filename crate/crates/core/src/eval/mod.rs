//! Trajectory error metrics and the experiment drivers built on them.

use crate::lie_se3::{compose, inverse, Pose};
use crate::model::{ModelConfig, Vinet};
use crate::simulator::{perturb_extrinsics, CalibPerturbation, SimError, SyncedSequence};
use crate::training::{train, TrainConfig, TrainError, TrainMode, TrainingCurvePoint};
use log::warn;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectories differ in length ({pred} predicted, {gt} ground truth)")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least 2 poses, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the predicted trajectory is registered to ground truth before ATE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteAlignment {
    /// Map the first predicted pose onto the first ground-truth pose.
    #[default]
    FirstPose,
    None,
}

fn check_lengths(pred: &[Pose], gt: &[Pose]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooShort(pred.len()));
    }
    Ok(())
}

/// Absolute trajectory error: RMS translational residual, meters.
pub fn ate(pred: &[Pose], gt: &[Pose], alignment: AteAlignment) -> Result<f64, EvalError> {
    check_lengths(pred, gt)?;
    let sum: f64 = match alignment {
        // gt0 * pred0^-1 * pred_k - gt_k = R_gt0 (t of pred0^-1 pred_k - t of gt0^-1 gt_k), and R_gt0 keeps the norm.
        AteAlignment::FirstPose => {
            let (pi, gi) = (inverse(&pred[0]), inverse(&gt[0]));
            pred.iter()
                .zip(gt)
                .map(|(p, g)| (compose(&pi, p).translation() - compose(&gi, g).translation()).norm_squared())
                .sum()
        }
        AteAlignment::None => pred.iter().zip(gt).map(|(p, g)| (p.translation() - g.translation()).norm_squared()).sum(),
    };
    Ok((sum / pred.len() as f64).sqrt())
}

/// Mean relative-pose error over every sub-trajectory of one path length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub length: f64,
    /// Translational error, percent of distance travelled.
    pub translation_pct: f64,
    /// Rotational error, degrees per meter travelled.
    pub rotation_deg_per_m: f64,
    /// Number of start frames averaged.
    pub samples: usize,
}

pub const DESK_SEGMENT_LENGTHS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];
pub const KITTI_SEGMENT_LENGTHS: [f64; 5] = [100.0, 200.0, 300.0, 400.0, 500.0];

/// Cumulative ground-truth path length at each pose.
pub fn path_distances(gt: &[Pose]) -> Vec<f64> {
    let mut d = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    for (i, p) in gt.iter().enumerate() {
        if i > 0 {
            acc += (p.translation() - gt[i - 1].translation()).norm();
        }
        d.push(acc);
    }
    d
}

/// Segment errors in the odometry-benchmark style. For every start frame and
/// length `L`, the end frame is the first whose ground-truth path distance
/// from the start exceeds `L`; the relative-pose error over that span is
/// divided by the distance actually travelled. Lengths longer than the whole
/// path are skipped with a warning.
pub fn kitti_segment_errors(pred: &[Pose], gt: &[Pose], lengths: &[f64]) -> Result<Vec<SegmentError>, EvalError> {
    check_lengths(pred, gt)?;
    let dist = path_distances(gt);
    let mut out = Vec::new();
    for &len in lengths {
        let (mut t_sum, mut r_sum, mut n) = (0.0, 0.0, 0usize);
        for i in 0..gt.len() {
            let Some(j) = (i + 1..gt.len()).find(|&j| dist[j] - dist[i] > len) else { break };
            let span = dist[j] - dist[i];
            let rel_pred = compose(&inverse(&pred[i]), &pred[j]);
            let rel_gt = compose(&inverse(&gt[i]), &gt[j]);
            // |R_pred^T (t_gt - t_pred)| without the rotation, so equal inputs give exactly 0.
            let t_err = (rel_gt.translation() - rel_pred.translation()).norm();
            let r_err = rel_pred.quat().conj().mul(&rel_gt.quat()).angle();
            t_sum += 100.0 * t_err / span;
            r_sum += r_err.to_degrees() / span;
            n += 1;
        }
        if n == 0 {
            warn!("segment length {len} m exceeds the {:.2} m ground-truth path; skipped", dist.last().unwrap_or(&0.0));
            continue;
        }
        out.push(SegmentError {
            length: len,
            translation_pct: t_sum / n as f64,
            rotation_deg_per_m: r_sum / n as f64,
            samples: n,
        });
    }
    Ok(out)
}

/// Predicted trajectory of `model` on `seq`, including the identity start
/// pose so that it lines up with `seq.gt_poses`.
pub fn predict_trajectory(model: &Vinet, seq: &SyncedSequence) -> Result<Vec<Pose>, crate::model::ModelError> {
    let out = model.sequence_forward(seq, &model.initial_state())?;
    let mut poses = Vec::with_capacity(out.outputs.len() + 1);
    poses.push(Pose::identity());
    poses.extend(out.poses());
    Ok(poses)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ate: f64,
    pub path_length: f64,
    pub segments: Vec<SegmentError>,
}

pub fn evaluate(model: &Vinet, seq: &SyncedSequence, lengths: &[f64]) -> Result<EvalReport, EvalError> {
    let pred = predict_trajectory(model, seq).map_err(|e| EvalError::Train(e.into()))?;
    Ok(EvalReport {
        ate: ate(&pred, &seq.gt_poses, AteAlignment::FirstPose)?,
        path_length: seq.path_length(),
        segments: kitti_segment_errors(&pred, &seq.gt_poses, lengths)?,
    })
}

/// Long-format metrics: `metric,length_m,value`. Whole-trajectory metrics
/// leave `length_m` empty.
pub fn write_eval_csv<W: Write>(mut w: W, report: &EvalReport) -> io::Result<()> {
    writeln!(w, "metric,length_m,value")?;
    writeln!(w, "ate_m,,{}", report.ate)?;
    writeln!(w, "path_length_m,,{}", report.path_length)?;
    for s in &report.segments {
        writeln!(w, "translation_pct,{},{}", s.length, s.translation_pct)?;
        writeln!(w, "rotation_deg_per_m,{},{}", s.length, s.rotation_deg_per_m)?;
        writeln!(w, "segment_samples,{},{}", s.length, s.samples)?;
    }
    Ok(())
}

/// One row of the calibration-robustness table; `None` marks a failed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub miscalibration_deg: f64,
    pub ate: Vec<Option<f64>>,
}

/// For each magnitude, perturbs the extrinsics of `base` once and evaluates
/// every variant on the result. Failing or non-finite runs become `None`.
pub fn robustness_sweep(
    variants: &[&Vinet],
    base: &SyncedSequence,
    magnitudes_deg: &[f64],
    kappa: f64,
    seed: u64,
) -> Result<Vec<RobustnessRow>, EvalError> {
    magnitudes_deg
        .iter()
        .map(|&m| {
            let seq = perturb_extrinsics(base, &CalibPerturbation::new(m, kappa, seed))?;
            let ate = variants
                .iter()
                .map(|model| {
                    let pred = predict_trajectory(model, &seq).ok()?;
                    ate(&pred, &seq.gt_poses, AteAlignment::FirstPose).ok().filter(|a| a.is_finite())
                })
                .collect();
            Ok(RobustnessRow { miscalibration_deg: m, ate })
        })
        .collect()
}

pub fn write_robustness_csv<W: Write>(mut w: W, names: &[String], rows: &[RobustnessRow]) -> io::Result<()> {
    writeln!(w, "miscalibration_deg,{}", names.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.ate.iter().map(|a| a.map_or_else(|| "FAILS".to_string(), |v| v.to_string())).collect();
        writeln!(w, "{},{}", row.miscalibration_deg, cells.join(","))?;
    }
    Ok(())
}

/// Three training runs from the same initialization, differing only in
/// which losses drive the updates. Curves are concatenated in the order
/// frame-to-frame, joint, full-pose.
pub fn mode_comparison(
    train_seqs: &[SyncedSequence],
    val_seqs: &[SyncedSequence],
    model_config: &ModelConfig,
    init_seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<TrainingCurvePoint>, EvalError> {
    let model = Vinet::new(model_config.clone(), init_seed).map_err(TrainError::from)?;
    let mut curves = Vec::new();
    for mode in TrainMode::ALL {
        let run = TrainConfig { mode, ..cfg.clone() };
        curves.extend(train(model.clone(), train_seqs, val_seqs, &run)?.curve);
    }
    Ok(curves)
}

pub fn write_curve_csv<W: Write>(mut w: W, curve: &[TrainingCurvePoint]) -> io::Result<()> {
    writeln!(w, "epoch,mode,train_loss,val_loss")?;
    for p in curve {
        writeln!(w, "{},{},{},{}", p.epoch, p.mode, p.train_loss, p.val_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_se3::{exp_se3, Twist};
    use nalgebra::Vector3;

    fn straight(n: usize, step: f64) -> Vec<Pose> {
        (0..n).map(|k| Pose::from_translation(Vector3::new(step * k as f64, 0.0, 0.0)).unwrap()).collect()
    }

    #[test]
    fn ate_examples() {
        let gt = straight(10, 0.5);
        assert_eq!(ate(&gt, &gt, AteAlignment::FirstPose).unwrap(), 0.0);
        let shifted: Vec<Pose> =
            gt.iter().map(|p| Pose::from_translation(p.translation() + Vector3::x()).unwrap()).collect();
        assert_eq!(ate(&shifted, &gt, AteAlignment::None).unwrap(), 1.0);
        assert_eq!(ate(&shifted, &gt, AteAlignment::FirstPose).unwrap(), 0.0);
        assert!(matches!(ate(&gt[..3], &gt, AteAlignment::None), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(ate(&gt[..1], &gt[..1], AteAlignment::None), Err(EvalError::TooShort(1))));
    }

    #[test]
    fn segments_zero_and_left_invariant() {
        let xi = Twist::new(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.5, 0.0, 0.0)).unwrap();
        let mut gt = vec![Pose::identity()];
        for _ in 0..60 {
            gt.push(compose(gt.last().unwrap(), &exp_se3(&xi)));
        }
        let g = exp_se3(&Twist::new(Vector3::new(0.3, -0.2, 0.5), Vector3::new(4.0, 1.0, -2.0)).unwrap());
        let moved: Vec<Pose> = gt.iter().map(|p| compose(&g, p)).collect();
        for s in kitti_segment_errors(&moved, &gt, &DESK_SEGMENT_LENGTHS).unwrap() {
            assert!(s.translation_pct < 1e-12 && s.rotation_deg_per_m < 1e-6, "{s:?}");
        }
        for s in kitti_segment_errors(&gt, &gt, &DESK_SEGMENT_LENGTHS).unwrap() {
            assert_eq!((s.translation_pct, s.rotation_deg_per_m), (0.0, 0.0));
        }
    }

    #[test]
    fn one_percent_scale_gives_one_percent() {
        let gt = straight(80, 0.37);
        let pred = straight(80, 0.37 * 1.01);
        let errs = kitti_segment_errors(&pred, &gt, &DESK_SEGMENT_LENGTHS).unwrap();
        assert_eq!(errs.len(), 5);
        for s in errs {
            assert!((s.translation_pct - 1.0).abs() < 1e-9, "{s:?}");
            assert_eq!(s.rotation_deg_per_m, 0.0);
        }
    }

    #[test]
    fn long_segments_are_skipped() {
        let gt = straight(10, 1.0);
        let errs = kitti_segment_errors(&gt, &gt, &[5.0, 100.0]).unwrap();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].samples, 4);
    }

    #[test]
    fn csv_shapes() {
        let rows = vec![
            RobustnessRow { miscalibration_deg: 0.0, ate: vec![Some(0.5), None] },
            RobustnessRow { miscalibration_deg: 5.0, ate: vec![Some(0.75), Some(1.0)] },
        ];
        let mut buf = Vec::new();
        write_robustness_csv(&mut buf, &["no-aug".into(), "aug".into()], &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "miscalibration_deg,no-aug,aug\n0,0.5,FAILS\n5,0.75,1\n");
    }
}
