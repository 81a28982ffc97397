use super::config::{ModelConfig, IMU_INPUT, INPUT_MAPS};
use super::ModelError;
use crate::nn::{init, Activation, Conv2d, Dense, LstmParams, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every trainable tensor of the network. The same type doubles as the
/// gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct VinetParams {
    pub conv: Vec<Conv2d>,
    pub imu_lstm: LstmParams,
    pub core_lstm: Vec<LstmParams>,
    /// Core LSTM output to the 6-D twist pre-activation.
    pub head: Dense,
}

/// A named parameter tensor with its layer index (input side = 0).
pub struct ParamRef<'a> {
    pub name: String,
    pub layer: usize,
    pub tensor: &'a Tensor,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub layer: usize,
    pub tensor: &'a mut Tensor,
}

impl VinetParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let act = Activation::LeakyRelu(config.leaky_slope);
        let mut in_maps = INPUT_MAPS;
        let conv = (0..config.conv_channels.len())
            .map(|i| {
                let k = config.conv_kernels[i];
                let layer = Conv2d::zeros(in_maps, config.conv_channels[i], k, k, config.conv_strides[i], act);
                in_maps = config.conv_channels[i];
                layer
            })
            .collect();
        let imu_lstm = LstmParams::zeros(IMU_INPUT, config.imu_hidden);
        let core_lstm = (0..config.core_layers)
            .map(|l| {
                let input = if l == 0 { config.core_input_size() } else { config.core_hidden };
                LstmParams::zeros(input, config.core_hidden)
            })
            .collect();
        let head = Dense::zeros(config.core_hidden, 6);
        Ok(VinetParams { conv, imu_lstm, core_lstm, head })
    }

    /// Fan-in scaled uniform initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.conv {
            init::init_conv(layer, &mut rng);
        }
        init::init_lstm(&mut p.imu_lstm, &mut rng);
        for layer in &mut p.core_lstm {
            init::init_lstm(layer, &mut rng);
        }
        init::init_dense(&mut p.head, &mut rng);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.tensors_mut() {
            p.tensor.fill(0.0);
        }
        z
    }

    /// Number of layers in the ordering used by [`ParamRef::layer`].
    pub fn layer_count(&self) -> usize {
        self.conv.len() + 1 + self.core_lstm.len() + 1
    }

    pub fn tensors(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        let mut layer = 0;
        for (i, c) in self.conv.iter().enumerate() {
            out.push(ParamRef { name: format!("conv{i}.kernels"), layer, tensor: &c.kernels });
            out.push(ParamRef { name: format!("conv{i}.bias"), layer, tensor: &c.bias });
            layer += 1;
        }
        for (n, t) in self.imu_lstm.tensors() {
            out.push(ParamRef { name: format!("imu_lstm.{n}"), layer, tensor: t });
        }
        layer += 1;
        for (l, p) in self.core_lstm.iter().enumerate() {
            for (n, t) in p.tensors() {
                out.push(ParamRef { name: format!("core_lstm{l}.{n}"), layer, tensor: t });
            }
            layer += 1;
        }
        out.push(ParamRef { name: "head.w".into(), layer, tensor: &self.head.w });
        out.push(ParamRef { name: "head.b".into(), layer, tensor: &self.head.b });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        let mut layer = 0;
        for (i, c) in self.conv.iter_mut().enumerate() {
            out.push(ParamMut { name: format!("conv{i}.kernels"), layer, tensor: &mut c.kernels });
            out.push(ParamMut { name: format!("conv{i}.bias"), layer, tensor: &mut c.bias });
            layer += 1;
        }
        for (n, t) in self.imu_lstm.tensors_mut() {
            out.push(ParamMut { name: format!("imu_lstm.{n}"), layer, tensor: t });
        }
        layer += 1;
        for (l, p) in self.core_lstm.iter_mut().enumerate() {
            for (n, t) in p.tensors_mut() {
                out.push(ParamMut { name: format!("core_lstm{l}.{n}"), layer, tensor: t });
            }
            layer += 1;
        }
        out.push(ParamMut { name: "head.w".into(), layer, tensor: &mut self.head.w });
        out.push(ParamMut { name: "head.b".into(), layer, tensor: &mut self.head.b });
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn add_assign(&mut self, other: &VinetParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.tensor.add_assign(b.tensor);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.tensors_mut() {
            p.tensor.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|p| p.tensor.sum_squares()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|p| p.tensor.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_layers_ordered() {
        let p = VinetParams::zeros(&ModelConfig::tiny()).unwrap();
        let refs = p.tensors();
        let mut names: Vec<_> = refs.iter().map(|r| r.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), refs.len());
        assert!(refs.windows(2).all(|w| w[0].layer <= w[1].layer));
        assert_eq!(refs.last().unwrap().layer + 1, p.layer_count());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let c = ModelConfig::tiny();
        assert_eq!(VinetParams::init(&c, 7).unwrap(), VinetParams::init(&c, 7).unwrap());
        assert_ne!(VinetParams::init(&c, 7).unwrap(), VinetParams::init(&c, 8).unwrap());
    }
}
