use super::tensor::debug_check_finite;
use super::{NnError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    /// `max(x, slope * x)`.
    LeakyRelu(f64),
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
        }
    }
}

/// Valid (unpadded) strided 2-D cross-correlation followed by an activation.
///
/// Kernels have shape `[out_maps, in_maps, kh, kw]`, the bias `[out_maps]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub activation: Activation,
}

/// Values saved by [`Conv2d::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub input: Tensor,
    pub pre_activation: Tensor,
}

impl Conv2d {
    pub fn zeros(in_maps: usize, out_maps: usize, kh: usize, kw: usize, stride: usize, activation: Activation) -> Self {
        Conv2d {
            kernels: Tensor::zeros(&[out_maps, in_maps, kh, kw]),
            bias: Tensor::zeros(&[out_maps]),
            stride,
            activation,
        }
    }

    pub fn out_maps(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_maps(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_extent(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    /// Output `(height, width)` for an input of the given extents.
    pub fn output_extent(&self, height: usize, width: usize) -> Result<(usize, usize), NnError> {
        let (kh, kw) = self.kernel_extent();
        if kh == 0 || kw == 0 || self.stride == 0 {
            return Err(NnError::InvalidConfig("kernel extents and stride must be >= 1".into()));
        }
        if height < kh || width < kw {
            return Err(NnError::ShapeMismatch {
                op: "conv2d_forward",
                expected: format!("input extents >= {kh}x{kw}"),
                got: format!("{height}x{width}"),
            });
        }
        Ok(((height - kh) / self.stride + 1, (width - kw) / self.stride + 1))
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache), NnError> {
        let shape = input.shape();
        if shape.len() != 3 || shape[0] != self.in_maps() {
            return Err(NnError::ShapeMismatch {
                op: "conv2d_forward",
                expected: format!("[{}, H, W]", self.in_maps()),
                got: format!("{shape:?}"),
            });
        }
        let (h, w) = (shape[1], shape[2]);
        let (oh, ow) = self.output_extent(h, w)?;
        let (kh, kw) = self.kernel_extent();
        let (nf, nm, s) = (self.out_maps(), self.in_maps(), self.stride);
        let k = self.kernels.data();
        let x = input.data();
        let mut pre = vec![0.0; nf * oh * ow];
        for f in 0..nf {
            let out = &mut pre[f * oh * ow..(f + 1) * oh * ow];
            out.iter_mut().for_each(|v| *v = self.bias.data()[f]);
            for m in 0..nm {
                let plane = &x[m * h * w..(m + 1) * h * w];
                for p in 0..kh {
                    for q in 0..kw {
                        let wv = k[((f * nm + m) * kh + p) * kw + q];
                        for oy in 0..oh {
                            let row = &plane[(oy * s + p) * w + q..];
                            let orow = &mut out[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += wv * row[ox * s];
                            }
                        }
                    }
                }
            }
        }
        let act = self.activation;
        let output: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
        debug_check_finite("conv2d_forward", &output);
        let pre_activation = Tensor::from_vec(&[nf, oh, ow], pre)?;
        let output = Tensor::from_vec(&[nf, oh, ow], output)?;
        Ok((output, ConvCache { input: input.clone(), pre_activation }))
    }

    /// Accumulates kernel/bias gradients into `grads`; returns `dL/dinput`
    /// unless `need_input_grad` is false (first layer), in which case an
    /// empty tensor is returned.
    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor, grads: &mut Conv2d, need_input_grad: bool) -> Tensor {
        let ishape = cache.input.shape();
        let (h, w) = (ishape[1], ishape[2]);
        let pshape = cache.pre_activation.shape();
        let (nf, oh, ow) = (pshape[0], pshape[1], pshape[2]);
        let (kh, kw) = self.kernel_extent();
        let (nm, s) = (self.in_maps(), self.stride);
        let act = self.activation;
        let g: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(cache.pre_activation.data())
            .map(|(&go, &p)| go * act.derivative(p))
            .collect();
        let x = cache.input.data();
        let k = self.kernels.data();
        let mut gin = if need_input_grad { vec![0.0; nm * h * w] } else { Vec::new() };
        let gk = grads.kernels.data_mut();
        for f in 0..nf {
            let gf = &g[f * oh * ow..(f + 1) * oh * ow];
            grads.bias.data_mut()[f] += gf.iter().sum::<f64>();
            for m in 0..nm {
                let plane = &x[m * h * w..(m + 1) * h * w];
                for p in 0..kh {
                    for q in 0..kw {
                        let idx = ((f * nm + m) * kh + p) * kw + q;
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let row = &plane[(oy * s + p) * w + q..];
                            let grow = &gf[oy * ow..(oy + 1) * ow];
                            for (ox, gv) in grow.iter().enumerate() {
                                acc += gv * row[ox * s];
                            }
                        }
                        gk[idx] += acc;
                        if need_input_grad {
                            let wv = k[idx];
                            let gplane = &mut gin[m * h * w..(m + 1) * h * w];
                            for oy in 0..oh {
                                let base = (oy * s + p) * w + q;
                                let grow = &gf[oy * ow..(oy + 1) * ow];
                                for (ox, gv) in grow.iter().enumerate() {
                                    gplane[base + ox * s] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_input_grad {
            Tensor::from_vec(&[nm, h, w], gin).expect("input gradient shape")
        } else {
            Tensor::zeros(&[0])
        }
    }
}
