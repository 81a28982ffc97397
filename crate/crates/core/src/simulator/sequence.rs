use crate::lie_se3::{inverse, log_se3, LieError, Pose, RotationMatrix, Twist};
use crate::model::{FramePair, Image, ImuSample};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Pinhole camera and splat renderer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Gaussian splat standard deviation in pixels.
    pub splat_sigma: f64,
    /// Landmarks closer than this (m) are not drawn.
    pub near: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec { width: 64, height: 64, focal: 32.0, splat_sigma: 0.8, near: 0.2 }
    }
}

/// What is needed to re-render a sequence's images.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Landmark positions in the start body frame.
    pub landmarks: Vec<Vector3<f64>>,
    pub camera: CameraSpec,
    pub pixel_noise: f64,
    pub render_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub image: Image,
}

/// Time-indexed camera frames and IMU samples with ground truth.
///
/// Step `k` spans frames `k -> k + 1`; its IMU window is every sample with
/// timestamp in `(t_k, t_{k+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncedSequence {
    pub camera_rate: f64,
    pub imu_rate: f64,
    pub frames: Vec<Frame>,
    pub imu: Vec<ImuSample>,
    /// World-from-body pose per frame, relative to the first frame.
    pub gt_poses: Vec<Pose>,
    /// Camera-from-IMU rotation: `x_C = R_SC x_S`.
    pub extrinsics: RotationMatrix,
    /// Accumulated shift applied to the IMU clock, seconds.
    pub time_offset: f64,
    /// Gravity expressed in the start body frame, m/s^2.
    pub gravity: Vector3<f64>,
    pub scene: Scene,
}

impl SyncedSequence {
    pub fn step_count(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn imu_window(&self, step: usize) -> &[ImuSample] {
        let (t0, t1) = (self.frames[step].t, self.frames[step + 1].t);
        let lo = self.imu.partition_point(|s| s.t <= t0);
        let hi = self.imu.partition_point(|s| s.t <= t1);
        &self.imu[lo..hi.max(lo)]
    }

    pub fn frame_pair(&self, step: usize) -> FramePair<'_> {
        FramePair {
            prev: &self.frames[step].image,
            curr: &self.frames[step + 1].image,
            t: self.frames[step + 1].t,
        }
    }

    /// Ground-truth frame-to-frame motion of `step` in the body frame.
    pub fn target_twist(&self, step: usize) -> Result<Twist, LieError> {
        let rel = inverse(&self.gt_poses[step]).compose(&self.gt_poses[step + 1]);
        log_se3(&rel)
    }

    pub fn target_twists(&self) -> Result<Vec<Twist>, LieError> {
        (0..self.step_count()).map(|k| self.target_twist(k)).collect()
    }

    /// Sum of ground-truth translation increments, meters.
    pub fn path_length(&self) -> f64 {
        self.gt_poses.windows(2).map(|w| (w[1].translation() - w[0].translation()).norm()).sum()
    }
}
