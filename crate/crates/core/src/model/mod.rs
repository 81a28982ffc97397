//! The VINet graph: CNN over stacked frame pairs, an IMU LSTM running at IMU
//! rate, a core LSTM at camera rate fed with the previous accumulated pose,
//! a twist head, and parameter-free SE(3) accumulation.

mod config;
mod graph;
mod params;

pub use config::{ModelConfig, IMU_INPUT, INPUT_MAPS, POSE_FEEDBACK};
pub use graph::{head_twist, head_twist_backward, CarriedState, CoreTape, SequenceOutput, StepTape, Vinet, WindowTape, OMEGA_AXIS_BOUND};
pub use params::{ParamMut, ParamRef, VinetParams};

use crate::lie_se3::{LieError, Pose, Twist};
use crate::nn::NnError;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("image extents {got_w}x{got_h} do not match the configured {want_w}x{want_h}")]
    ExtentMismatch { want_w: usize, want_h: usize, got_w: usize, got_h: usize },
    #[error("IMU timestamps not strictly increasing at sample {index}")]
    NonMonotonicImu { index: usize },
    #[error("sequence alignment: {0}")]
    Alignment(String),
}

/// One IMU reading: specific force (m/s^2), angular rate (rad/s), time (s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub a: Vector3<f64>,
    pub w: Vector3<f64>,
    pub t: f64,
}

/// Single-channel image with pixel values in `[-0.5, 0.5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height] }
    }
}

/// Two consecutive frames; `t` is the timestamp of the current one.
#[derive(Clone, Copy, Debug)]
pub struct FramePair<'a> {
    pub prev: &'a Image,
    pub curr: &'a Image,
    pub t: f64,
}

/// Per-frame network output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    /// Predicted frame-to-frame motion.
    pub xi: Twist,
    /// Accumulated pose relative to the sequence start.
    pub pose: Pose,
}
