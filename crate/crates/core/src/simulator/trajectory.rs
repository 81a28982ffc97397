use super::render::render_frame;
use super::spline::CubicSpline;
use super::{CameraSpec, Frame, Scene, SimError, SyncedSequence};
use crate::lie_se3::{Pose, RotationMatrix};
use crate::model::ImuSample;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A control pose: position (m) and yaw/pitch/roll (rad, `R = Rz Ry Rx`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPose {
    pub t: f64,
    pub position: [f64; 3],
    pub ypr: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    /// Random controls every `control_spacing` seconds, covering the whole
    /// duration; the first sits at the origin, level.
    Random {
        control_spacing: f64,
        /// Half-width of the horizontal box the controls are drawn from, m.
        extent: f64,
        /// Largest yaw change between consecutive controls, rad.
        max_yaw_step: f64,
        /// Bound on pitch and roll, rad.
        max_tilt: f64,
    },
    Explicit {
        controls: Vec<ControlPose>,
    },
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec::Random { control_spacing: 2.5, extent: 3.0, max_yaw_step: 1.0, max_tilt: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub camera_rate: f64,
    pub imu_rate: f64,
    pub motion: MotionSpec,
    pub landmark_count: usize,
    /// Gyroscope white-noise density, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Accelerometer white-noise density, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    pub pixel_noise: f64,
    pub gravity: [f64; 3],
    pub camera: CameraSpec,
    /// Camera-from-IMU rotation, row major. Defaults to a forward-looking
    /// camera (body x maps to the optical axis).
    pub extrinsics: Option<[[f64; 3]; 3]>,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            duration: 20.0,
            camera_rate: 10.0,
            imu_rate: 100.0,
            motion: MotionSpec::default(),
            landmark_count: 200,
            gyro_noise: 0.005,
            accel_noise: 0.02,
            pixel_noise: 0.01,
            gravity: [0.0, 0.0, -9.81],
            camera: CameraSpec::default(),
            extrinsics: None,
            seed: 0,
        }
    }
}

pub fn default_extrinsics() -> RotationMatrix {
    RotationMatrix::new(Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)).expect("proper rotation")
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        for (name, v) in [("duration", self.duration), ("camera_rate", self.camera_rate), ("imu_rate", self.imu_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0"));
            }
        }
        let ratio = self.imu_rate / self.camera_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad(format!("imu_rate must be an integer multiple of camera_rate (ratio {ratio})"));
        }
        if self.frame_count() < 2 {
            return bad("duration must cover at least two camera frames".into());
        }
        for (name, v) in [("gyro_noise", self.gyro_noise), ("accel_noise", self.accel_noise), ("pixel_noise", self.pixel_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !(c.focal > 0.0) || !(c.splat_sigma > 0.0) || !(c.near > 0.0) {
            return bad("camera extents, focal, splat_sigma and near must be positive".into());
        }
        if let MotionSpec::Random { control_spacing, extent, .. } = &self.motion {
            if !(*control_spacing > 0.0 && control_spacing.is_finite()) {
                return bad("control_spacing must be finite and > 0".into());
            }
            if !(*extent >= 0.0) {
                return bad("motion extent must be >= 0".into());
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite".into());
        }
        self.extrinsics_matrix().map(|_| ())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.camera_rate).round() as usize
    }

    pub fn imu_count(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn extrinsics_matrix(&self) -> Result<RotationMatrix, SimError> {
        match self.extrinsics {
            None => Ok(default_extrinsics()),
            Some(rows) => {
                let m = Matrix3::from_fn(|r, c| rows[r][c]);
                RotationMatrix::new(m).map_err(|e| SimError::InvalidSpec(format!("extrinsics: {e}")))
            }
        }
    }
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// World-frame kinematics at one instant.
#[derive(Clone, Copy, Debug)]
pub struct Kinematics {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Angular velocity in the body frame.
    pub body_rate: Vector3<f64>,
}

/// C² trajectory: natural cubic splines on position and on yaw/pitch/roll.
#[derive(Clone, Debug)]
pub struct SplineTrajectory {
    position: [CubicSpline; 3],
    ypr: [CubicSpline; 3],
}

impl SplineTrajectory {
    pub fn new(controls: &[ControlPose]) -> Result<Self, SimError> {
        let knots: Vec<f64> = controls.iter().map(|c| c.t).collect();
        let axis = |f: &dyn Fn(&ControlPose) -> f64| -> Result<CubicSpline, SimError> {
            let vals: Vec<f64> = controls.iter().map(f).collect();
            CubicSpline::new(&knots, &vals)
        };
        Ok(SplineTrajectory {
            position: [axis(&|c| c.position[0])?, axis(&|c| c.position[1])?, axis(&|c| c.position[2])?],
            ypr: [axis(&|c| c.ypr[0])?, axis(&|c| c.ypr[1])?, axis(&|c| c.ypr[2])?],
        })
    }

    pub fn at(&self, t: f64) -> Kinematics {
        let p = self.position.each_ref().map(|s| s.eval(t));
        let [(yaw, dyaw, _), (pitch, dpitch, _), (roll, droll, _)] = self.ypr.each_ref().map(|s| s.eval(t));
        let (rzm, rym, rxm) = (rz(yaw), ry(pitch), rx(roll));
        // R^T dR/dt for R = Rz Ry Rx, expressed as a body-frame vector.
        let body_rate = rxm.transpose() * rym.transpose() * Vector3::z() * dyaw
            + rxm.transpose() * Vector3::y() * dpitch
            + Vector3::x() * droll;
        Kinematics {
            rotation: rzm * rym * rxm,
            position: Vector3::new(p[0].0, p[1].0, p[2].0),
            acceleration: Vector3::new(p[0].2, p[1].2, p[2].2),
            body_rate,
        }
    }
}

fn random_controls(spec: &TrajectorySpec, rng: &mut ChaCha8Rng) -> Vec<ControlPose> {
    let MotionSpec::Random { control_spacing, extent, max_yaw_step, max_tilt } = spec.motion else {
        unreachable!("explicit controls are not sampled")
    };
    let count = (spec.duration / control_spacing).floor() as usize + 2;
    let mut yaw = 0.0;
    (0..count)
        .map(|i| {
            let t = control_spacing * i as f64;
            if i == 0 {
                return ControlPose { t, position: [0.0; 3], ypr: [0.0; 3] };
            }
            yaw += rng.gen_range(-1.0..=1.0) * max_yaw_step;
            let position = [
                rng.gen_range(-1.0..=1.0) * extent,
                rng.gen_range(-1.0..=1.0) * extent,
                rng.gen_range(-1.0..=1.0) * extent * 0.1,
            ];
            let ypr = [yaw, rng.gen_range(-1.0..=1.0) * max_tilt, rng.gen_range(-1.0..=1.0) * max_tilt];
            ControlPose { t, position, ypr }
        })
        .collect()
}

/// Landmarks on the walls, floor and ceiling of a room enclosing the
/// trajectory's horizontal box, in world coordinates.
fn room_landmarks(count: usize, half_width: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let (floor, ceiling) = (-1.5, 2.0);
    let wall_area = 4.0 * 2.0 * half_width * (ceiling - floor);
    let flat_area = 2.0 * (2.0 * half_width).powi(2);
    let p_wall = wall_area / (wall_area + flat_area);
    (0..count)
        .map(|_| {
            let a = rng.gen_range(-half_width..=half_width);
            if rng.gen::<f64>() < p_wall {
                let z = rng.gen_range(floor..=ceiling);
                match rng.gen_range(0..4) {
                    0 => Vector3::new(half_width, a, z),
                    1 => Vector3::new(-half_width, a, z),
                    2 => Vector3::new(a, half_width, z),
                    _ => Vector3::new(a, -half_width, z),
                }
            } else {
                let b = rng.gen_range(-half_width..=half_width);
                let z = if rng.gen::<bool>() { floor } else { ceiling };
                Vector3::new(a, b, z)
            }
        })
        .collect()
}

/// Builds a synchronized sequence: ground truth from the spline, IMU from its
/// analytic derivatives, images from the landmark renderer. Everything is
/// expressed relative to the first frame's body pose.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<SyncedSequence, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let controls = match &spec.motion {
        MotionSpec::Random { .. } => random_controls(spec, &mut rng),
        MotionSpec::Explicit { controls } => controls.clone(),
    };
    let traj = SplineTrajectory::new(&controls)?;
    let extent = controls
        .iter()
        .flat_map(|c| [c.position[0].abs(), c.position[1].abs()])
        .fold(0.0, f64::max);
    let landmarks_world = room_landmarks(spec.landmark_count, extent + 2.5, &mut rng);

    let start = traj.at(0.0);
    let r0t = start.rotation.transpose();
    let to_start = |p: &Vector3<f64>| r0t * (p - start.position);
    let g_world = Vector3::from(spec.gravity);

    let mut gt_poses = Vec::with_capacity(spec.frame_count());
    for k in 0..spec.frame_count() {
        let t = k as f64 / spec.camera_rate;
        let kin = traj.at(t);
        let r = RotationMatrix::new(r0t * kin.rotation)?;
        gt_poses.push(Pose::from_rotation(&r, to_start(&kin.position))?);
    }
    gt_poses[0] = Pose::identity();

    let gyro = Normal::new(0.0, spec.gyro_noise * spec.imu_rate.sqrt()).expect("gyro sigma");
    let accel = Normal::new(0.0, spec.accel_noise * spec.imu_rate.sqrt()).expect("accel sigma");
    let mut noise3 = |d: &Normal<f64>| Vector3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
    let imu = (0..spec.imu_count())
        .map(|i| {
            let t = i as f64 / spec.imu_rate;
            let kin = traj.at(t);
            let a = kin.rotation.transpose() * (kin.acceleration - g_world);
            ImuSample { a: a + noise3(&accel), w: kin.body_rate + noise3(&gyro), t }
        })
        .collect();

    let scene = Scene {
        landmarks: landmarks_world.iter().map(to_start).collect(),
        camera: spec.camera.clone(),
        pixel_noise: spec.pixel_noise,
        render_seed: spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    };
    let extrinsics = spec.extrinsics_matrix()?;
    let frames = gt_poses
        .iter()
        .enumerate()
        .map(|(k, pose)| Frame { t: k as f64 / spec.camera_rate, image: render_frame(&scene, &extrinsics, pose, k) })
        .collect();
    Ok(SyncedSequence {
        camera_rate: spec.camera_rate,
        imu_rate: spec.imu_rate,
        frames,
        imu,
        gt_poses,
        extrinsics,
        time_offset: 0.0,
        gravity: r0t * g_world,
        scene,
    })
}
