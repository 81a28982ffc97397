use super::ModelError;
use serde::{Deserialize, Serialize};

/// Network sizes and input scalings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    /// Output maps of each conv layer; the input has two maps (previous and
    /// current grayscale frame).
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub leaky_slope: f64,
    pub imu_hidden: usize,
    pub core_hidden: usize,
    pub core_layers: usize,
    /// Expected IMU samples per camera frame.
    pub imu_rate_ratio: usize,
    /// Divides accelerometer readings before they enter the IMU LSTM.
    pub accel_scale: f64,
    /// Divides gyroscope readings before they enter the IMU LSTM.
    pub gyro_scale: f64,
    /// Multiplies the fed-back translation before it enters the core LSTM.
    pub pose_feedback_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_width: 64,
            image_height: 64,
            conv_channels: vec![8, 16, 32, 64],
            conv_kernels: vec![3, 3, 3, 3],
            conv_strides: vec![2, 2, 2, 2],
            leaky_slope: 0.1,
            imu_hidden: 32,
            core_hidden: 128,
            core_layers: 2,
            imu_rate_ratio: 10,
            accel_scale: 9.81,
            gyro_scale: 1.0,
            pose_feedback_scale: 0.1,
        }
    }
}

/// Channels of the stacked `(prev, curr)` grayscale input.
pub const INPUT_MAPS: usize = 2;
/// IMU sample width: accelerometer then gyroscope.
pub const IMU_INPUT: usize = 6;
/// Fed-back pose: quaternion then translation.
pub const POSE_FEEDBACK: usize = 7;

impl ModelConfig {
    /// A very small network used by tests and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            image_width: 8,
            image_height: 8,
            conv_channels: vec![2, 3],
            conv_kernels: vec![3, 2],
            conv_strides: vec![2, 1],
            imu_hidden: 4,
            core_hidden: 5,
            core_layers: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        let n = self.conv_channels.len();
        if n == 0 || self.conv_kernels.len() != n || self.conv_strides.len() != n {
            return bad(format!(
                "conv_channels/conv_kernels/conv_strides must be nonempty and equal length ({}, {}, {})",
                n,
                self.conv_kernels.len(),
                self.conv_strides.len()
            ));
        }
        let sizes = [
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("imu_hidden", self.imu_hidden),
            ("core_hidden", self.core_hidden),
            ("core_layers", self.core_layers),
            ("imu_rate_ratio", self.imu_rate_ratio),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.conv_channels.iter().chain(&self.conv_kernels).chain(&self.conv_strides).any(|&v| v == 0) {
            return bad("conv channels, kernels and strides must be >= 1".into());
        }
        for (name, v) in [
            ("accel_scale", self.accel_scale),
            ("gyro_scale", self.gyro_scale),
            ("pose_feedback_scale", self.pose_feedback_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0"));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must be in [0, 1)".into());
        }
        self.conv_output_extents().map(|_| ())
    }

    /// `(maps, height, width)` after every conv layer.
    pub fn conv_output_extents(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let (mut h, mut w) = (self.image_height, self.image_width);
        let mut out = Vec::new();
        for i in 0..self.conv_channels.len() {
            let (k, s) = (self.conv_kernels[i], self.conv_strides[i]);
            if h < k || w < k {
                return Err(ModelError::InvalidConfig(format!(
                    "conv layer {i}: {h}x{w} input is smaller than its {k}x{k} kernel"
                )));
            }
            h = (h - k) / s + 1;
            w = (w - k) / s + 1;
            out.push((self.conv_channels[i], h, w));
        }
        Ok(out)
    }

    pub fn visual_feature_size(&self) -> usize {
        self.conv_output_extents()
            .ok()
            .and_then(|e| e.last().map(|&(m, h, w)| m * h * w))
            .unwrap_or(0)
    }

    pub fn core_input_size(&self) -> usize {
        self.visual_feature_size() + self.imu_hidden + POSE_FEEDBACK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_size() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.conv_output_extents().unwrap(), vec![(8, 31, 31), (16, 15, 15), (32, 7, 7), (64, 3, 3)]);
        assert_eq!(c.visual_feature_size(), 576);
        assert_eq!(c.core_input_size(), 576 + 32 + 7);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = ModelConfig::default();
        c.conv_kernels.pop();
        assert!(c.validate().is_err());
        let c = ModelConfig { image_width: 4, ..ModelConfig::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { core_layers: 0, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = ModelConfig::tiny();
        let text = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<ModelConfig>("core_hiden = 3").is_err());
    }
}
