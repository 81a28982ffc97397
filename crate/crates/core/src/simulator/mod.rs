//! Synthetic trajectories, IMU and landmark-splat images, plus the
//! calibration and clock perturbations used by the robustness experiments.

mod render;
mod sequence;
mod spline;
mod trajectory;
mod vmf;

pub use render::render_frame;
pub use sequence::{CameraSpec, Frame, Scene, SyncedSequence};
pub use spline::CubicSpline;
pub use trajectory::{
    default_extrinsics, generate_trajectory, ControlPose, Kinematics, MotionSpec, SplineTrajectory, TrajectorySpec,
};
pub use vmf::sample_vmf;

use crate::lie_se3::{exp_so3, log_so3, LieError, RotationMatrix};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("degenerate spline: {0}")]
    DegenerateSpline(String),
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("a dataset needs at least 3 sequences, got {0}")]
    TooFewSequences(usize),
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Extrinsic miscalibration: a rotation of fixed angle about a vMF axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibPerturbation {
    pub magnitude_deg: f64,
    pub kappa: f64,
    pub seed: u64,
    /// vMF mean direction; `None` uses the rotation axis of the current
    /// extrinsics (or z when they are the identity).
    #[serde(default)]
    pub mean_axis: Option<[f64; 3]>,
}

impl CalibPerturbation {
    pub fn new(magnitude_deg: f64, kappa: f64, seed: u64) -> Self {
        CalibPerturbation { magnitude_deg, kappa, seed, mean_axis: None }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.magnitude_deg >= 0.0 && self.magnitude_deg < 180.0) {
            return Err(SimError::InvalidPerturbation(format!(
                "magnitude_deg must be in [0, 180), got {}",
                self.magnitude_deg
            )));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(SimError::InvalidPerturbation(format!("kappa must be finite and > 0, got {}", self.kappa)));
        }
        if let Some(a) = self.mean_axis {
            let v = Vector3::from(a);
            if !(v.norm() > 0.0 && v.iter().all(|x| x.is_finite())) {
                return Err(SimError::InvalidPerturbation("mean_axis must be finite and nonzero".into()));
            }
        }
        Ok(())
    }
}

/// Re-renders every frame from the ground truth under the current extrinsics.
pub fn rerender(seq: &mut SyncedSequence) {
    for (k, (frame, pose)) in seq.frames.iter_mut().zip(&seq.gt_poses).enumerate() {
        frame.image = render_frame(&seq.scene, &seq.extrinsics, pose, k);
    }
}

/// `R_SC <- dR R_SC` with `dR` of angle `magnitude_deg` about a vMF-sampled
/// axis; images are re-rendered, IMU and ground truth are untouched.
pub fn perturb_extrinsics(seq: &SyncedSequence, p: &CalibPerturbation) -> Result<SyncedSequence, SimError> {
    p.validate()?;
    if p.magnitude_deg == 0.0 {
        return Ok(seq.clone());
    }
    let mu = match p.mean_axis {
        Some(a) => Vector3::from(a).normalize(),
        None => {
            let w = log_so3(&seq.extrinsics)?;
            if w.norm() > 0.0 {
                w.normalize()
            } else {
                Vector3::z()
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let axis = sample_vmf(&mu, p.kappa, &mut rng);
    let delta = exp_so3(&(axis * p.magnitude_deg.to_radians()))?;
    let mut out = seq.clone();
    out.extrinsics = delta.mul(&seq.extrinsics);
    rerender(&mut out);
    Ok(out)
}

/// Shifts every IMU timestamp by `offset` seconds. Shifted times that land on
/// the IMU sample grid are snapped to it so that window membership stays
/// exact. Offsets beyond the sequence duration are clamped just past it,
/// which leaves every window empty.
pub fn shift_imu_clock(seq: &SyncedSequence, offset: f64) -> SyncedSequence {
    let limit = seq.duration() + 2.0 / seq.camera_rate;
    let offset = if offset.is_nan() { 0.0 } else { offset.clamp(-limit, limit) };
    let mut out = seq.clone();
    if offset == 0.0 {
        return out;
    }
    for s in &mut out.imu {
        let t = s.t + offset;
        let ticks = t * seq.imu_rate;
        s.t = if (ticks - ticks.round()).abs() < 1e-6 { ticks.round() / seq.imu_rate } else { t };
    }
    out.time_offset += offset;
    out
}

/// Perturbed copies made of every training sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPlan {
    /// One copy per entry; 0 gives an unperturbed copy.
    pub magnitudes_deg: Vec<f64>,
    pub kappa: f64,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn none() -> Self {
        AugmentationPlan::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SyncedSequence>,
    pub val: Vec<SyncedSequence>,
    pub test: Vec<SyncedSequence>,
}

/// Generates one sequence per spec. The last goes to test, the one before it
/// to validation, the rest to training; only training sequences are
/// augmented.
pub fn make_dataset(specs: &[TrajectorySpec], plan: &AugmentationPlan) -> Result<Dataset, SimError> {
    if specs.len() < 3 {
        return Err(SimError::TooFewSequences(specs.len()));
    }
    let mut seqs = specs.iter().map(generate_trajectory).collect::<Result<Vec<_>, _>>()?;
    let test = vec![seqs.pop().expect("len >= 3")];
    let val = vec![seqs.pop().expect("len >= 2")];
    let train = if plan.magnitudes_deg.is_empty() {
        seqs
    } else {
        let mut out = Vec::with_capacity(seqs.len() * plan.magnitudes_deg.len());
        for (i, seq) in seqs.iter().enumerate() {
            for (j, &m) in plan.magnitudes_deg.iter().enumerate() {
                let seed = plan.seed.wrapping_add((i * plan.magnitudes_deg.len() + j) as u64);
                out.push(perturb_extrinsics(seq, &CalibPerturbation::new(m, plan.kappa, seed))?);
            }
        }
        out
    };
    Ok(Dataset { train, val, test })
}

/// Geodesic angle between two extrinsics, degrees.
pub fn extrinsics_angle_deg(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    a.angle_to(b).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie_se3::{Pose, Quat};
    use nalgebra::Matrix3;

    fn small_spec(seed: u64) -> TrajectorySpec {
        TrajectorySpec {
            duration: 3.0,
            camera: CameraSpec { width: 16, height: 16, focal: 8.0, ..CameraSpec::default() },
            landmark_count: 60,
            seed,
            ..TrajectorySpec::default()
        }
    }

    fn noiseless(seed: u64) -> TrajectorySpec {
        TrajectorySpec { gyro_noise: 0.0, accel_noise: 0.0, pixel_noise: 0.0, ..small_spec(seed) }
    }

    fn constant_controls(duration: f64, f: impl Fn(f64) -> ControlPose) -> MotionSpec {
        MotionSpec::Explicit { controls: (0..4).map(|i| f(duration * i as f64 / 3.0)).collect() }
    }

    #[test]
    fn counts_and_alignment() {
        let spec = TrajectorySpec { duration: 20.0, ..small_spec(1) };
        let seq = generate_trajectory(&spec).unwrap();
        assert_eq!(seq.frames.len(), 200);
        assert_eq!(seq.imu.len(), 2000);
        assert_eq!(seq.gt_poses[0], Pose::identity());
        for k in 0..seq.step_count() {
            assert_eq!(seq.imu_window(k).len(), 10, "step {k}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(generate_trajectory(&small_spec(4)).unwrap(), generate_trajectory(&small_spec(4)).unwrap());
        assert_ne!(generate_trajectory(&small_spec(4)).unwrap(), generate_trajectory(&small_spec(5)).unwrap());
    }

    #[test]
    fn stationary_statics() {
        let spec = TrajectorySpec {
            motion: constant_controls(3.0, |t| ControlPose { t, position: [0.0; 3], ypr: [0.0; 3] }),
            ..noiseless(2)
        };
        let seq = generate_trajectory(&spec).unwrap();
        for s in &seq.imu {
            assert_eq!(s.w, Vector3::zeros());
            assert_eq!(s.a, Vector3::new(0.0, 0.0, 9.81));
        }
        assert!(seq.frames.windows(2).all(|f| f[0].image == f[1].image));
        assert!(seq.gt_poses.iter().all(|p| *p == Pose::identity()));
    }

    #[test]
    fn constant_velocity_line() {
        let spec = TrajectorySpec {
            motion: constant_controls(3.0, |t| ControlPose { t, position: [0.5 * t, 0.2 * t, 0.0], ypr: [0.3, 0.0, 0.0] }),
            ..noiseless(2)
        };
        let seq = generate_trajectory(&spec).unwrap();
        for s in &seq.imu {
            assert!(s.w.norm() < 1e-12);
            assert!((s.a - Vector3::new(0.0, 0.0, 9.81)).norm() < 1e-12);
        }
    }

    fn wavy_controls() -> Vec<ControlPose> {
        (0..6)
            .map(|i| {
                let t = 0.6 * i as f64;
                let s = (i as f64 * 1.3).sin();
                ControlPose { t, position: [0.8 * s, 0.5 * t, 0.1 * s], ypr: [0.4 * t, 0.1 * s, -0.08 * s] }
            })
            .collect()
    }

    /// Central differences of the spline positions and rotations reproduce
    /// the generated gyro and accelerometer readings.
    #[test]
    fn imu_matches_numeric_differentiation() {
        let controls = wavy_controls();
        let spec = TrajectorySpec { motion: MotionSpec::Explicit { controls: controls.clone() }, ..noiseless(7) };
        let seq = generate_trajectory(&spec).unwrap();
        let traj = SplineTrajectory::new(&controls).unwrap();
        let g = Vector3::from(spec.gravity);
        let h = 1e-4;
        for s in seq.imu.iter().skip(3).step_by(17) {
            let (a, b, c) = (traj.at(s.t - h), traj.at(s.t), traj.at(s.t + h));
            let acc = (c.position - 2.0 * b.position + a.position) / (h * h);
            let expect_a = b.rotation.transpose() * (acc - g);
            assert!((expect_a - s.a).norm() < 1e-5, "accel at t={}", s.t);
            let d = (b.rotation.transpose() * (c.rotation - a.rotation)) / (2.0 * h);
            let expect_w = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]) / 2.0;
            assert!((expect_w - s.w).norm() < 1e-6, "gyro at t={}", s.t);
        }
    }

    /// Integrating the noiseless IMU from the ground-truth initial state
    /// stays close to the ground truth over a short sequence.
    #[test]
    fn imu_integration_tracks_ground_truth() {
        let controls = wavy_controls();
        let spec = TrajectorySpec {
            motion: MotionSpec::Explicit { controls: controls.clone() },
            imu_rate: 1000.0,
            ..noiseless(7)
        };
        let seq = generate_trajectory(&spec).unwrap();
        let traj = SplineTrajectory::new(&controls).unwrap();
        let start = traj.at(0.0);
        let dt = 1.0 / spec.imu_rate;
        let mut r = Matrix3::identity();
        let mut p = Vector3::zeros();
        let mut v = start.rotation.transpose() * {
            let (a, b) = (traj.at(0.0), traj.at(1e-6));
            (b.position - a.position) / 1e-6
        };
        let mut max_err: f64 = 0.0;
        let per_frame = (spec.imu_rate / spec.camera_rate) as usize;
        for (i, s) in seq.imu.iter().enumerate() {
            if i % per_frame == 0 {
                let k = i / per_frame;
                max_err = max_err.max((p - seq.gt_poses[k].translation()).norm());
            }
            let acc = r * s.a + seq.gravity;
            p += v * dt + 0.5 * acc * dt * dt;
            v += acc * dt;
            r *= exp_so3(&(s.w * dt)).unwrap().matrix();
        }
        assert!(max_err < 0.02, "drift {max_err}");
    }

    #[test]
    fn degenerate_controls_rejected() {
        let spec = TrajectorySpec {
            motion: MotionSpec::Explicit {
                controls: vec![
                    ControlPose { t: 0.0, position: [0.0; 3], ypr: [0.0; 3] },
                    ControlPose { t: 0.0, position: [0.0; 3], ypr: [0.0; 3] },
                ],
            },
            ..small_spec(0)
        };
        assert!(matches!(generate_trajectory(&spec), Err(SimError::DegenerateSpline(_))));
        let spec = TrajectorySpec {
            motion: MotionSpec::Random { control_spacing: 0.0, extent: 1.0, max_yaw_step: 0.1, max_tilt: 0.1 },
            ..small_spec(0)
        };
        assert!(matches!(generate_trajectory(&spec), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn perturbation_zero_is_identity_and_angle_is_exact() {
        let seq = generate_trajectory(&small_spec(3)).unwrap();
        assert_eq!(perturb_extrinsics(&seq, &CalibPerturbation::new(0.0, 10.0, 1)).unwrap(), seq);
        for seed in 0..20 {
            let out = perturb_extrinsics(&seq, &CalibPerturbation::new(10.0, 5.0, seed)).unwrap();
            assert!((extrinsics_angle_deg(&out.extrinsics, &seq.extrinsics) - 10.0).abs() < 1e-9);
            assert_eq!(out.imu, seq.imu);
            assert_eq!(out.gt_poses, seq.gt_poses);
        }
        let out = perturb_extrinsics(&seq, &CalibPerturbation::new(10.0, 5.0, 0)).unwrap();
        assert_ne!(out.frames, seq.frames);
    }

    #[test]
    fn clock_shift() {
        let seq = generate_trajectory(&small_spec(3)).unwrap();
        assert_eq!(shift_imu_clock(&seq, 0.0), seq);
        let shifted = shift_imu_clock(&seq, 1.0 / seq.camera_rate);
        for k in 1..seq.step_count() {
            let prev: Vec<_> = seq.imu_window(k - 1).iter().map(|s| (s.a, s.w)).collect();
            let now: Vec<_> = shifted.imu_window(k).iter().map(|s| (s.a, s.w)).collect();
            assert_eq!(now, prev, "step {k}");
        }
        for offset in [seq.duration() + 1.0, -seq.duration() - 1.0, f64::INFINITY] {
            let gone = shift_imu_clock(&seq, offset);
            assert!((0..gone.step_count()).all(|k| gone.imu_window(k).is_empty()));
            assert!(gone.imu.iter().all(|s| s.t.is_finite()));
        }
    }

    #[test]
    fn dataset_split_and_augmentation() {
        let specs: Vec<_> = (0..4).map(small_spec).collect();
        assert!(matches!(make_dataset(&specs[..2], &AugmentationPlan::none()), Err(SimError::TooFewSequences(2))));
        let plain = make_dataset(&specs, &AugmentationPlan::none()).unwrap();
        assert_eq!((plain.train.len(), plain.val.len(), plain.test.len()), (2, 1, 1));
        let plan = AugmentationPlan { magnitudes_deg: vec![0.0, 5.0, 10.0], kappa: 5.0, seed: 9 };
        let aug = make_dataset(&specs, &plan).unwrap();
        assert_eq!(aug.train.len(), 6);
        assert_eq!(aug.val, plain.val);
        assert_eq!(aug.test, plain.test);
        for (i, copy) in aug.train.iter().enumerate() {
            let orig = &plain.train[i / 3];
            assert_eq!(copy.gt_poses, orig.gt_poses);
            assert_eq!(copy.imu, orig.imu);
            let angle = extrinsics_angle_deg(&copy.extrinsics, &orig.extrinsics);
            assert!((angle - plan.magnitudes_deg[i % 3]).abs() < 1e-9);
        }
    }

    #[test]
    fn default_extrinsics_look_forward() {
        let r = default_extrinsics();
        assert_eq!(r.matrix() * Vector3::x(), Vector3::z());
        let q: Quat = r.to_quat();
        assert!((q.norm() - 1.0).abs() < 1e-15);
        assert_eq!(*RotationMatrix::identity().matrix(), Matrix3::identity());
    }
}
