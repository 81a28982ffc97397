use super::tensor::{debug_check_finite, matvec, matvec_t_acc, outer_acc};
use super::{NnError, Tensor};

/// Affine layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense { w: Tensor::zeros(&[output, input]), b: Tensor::zeros(&[output]) }
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let (rows, cols) = (self.output_size(), self.input_size());
        if x.len() != cols {
            return Err(NnError::shape("dense_forward", cols, x.len()));
        }
        let mut y = vec![0.0; rows];
        matvec(self.w.data(), rows, cols, x, &mut y);
        for (yi, bi) in y.iter_mut().zip(self.b.data()) {
            *yi += bi;
        }
        debug_check_finite("dense_forward", &y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_y: &[f64], grads: &mut Dense) -> Vec<f64> {
        let (rows, cols) = (self.output_size(), self.input_size());
        let mut gx = vec![0.0; cols];
        matvec_t_acc(self.w.data(), rows, cols, grad_y, &mut gx);
        outer_acc(grad_y, x, grads.w.data_mut());
        for (gb, gy) in grads.b.data_mut().iter_mut().zip(grad_y) {
            *gb += gy;
        }
        gx
    }
}

/// Concatenates feature vectors end to end.
pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Backward of [`concat`]: splits the gradient at the original boundaries.
pub fn concat_backward(grad: &[f64], sizes: &[usize]) -> Result<Vec<Vec<f64>>, NnError> {
    let total: usize = sizes.iter().sum();
    if total != grad.len() {
        return Err(NnError::shape("concat_backward", total, grad.len()));
    }
    let mut offset = 0;
    Ok(sizes
        .iter()
        .map(|&n| {
            let part = grad[offset..offset + n].to_vec();
            offset += n;
            part
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut d = Dense::zeros(3, 3);
        for i in 0..3 {
            d.w.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(d.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let d = Dense::zeros(3, 2);
        assert!(matches!(d.forward(&[1.0]), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = [1.0, 2.0];
        let b = [3.0];
        let c = [4.0, 5.0, 6.0];
        let joined = concat(&[&a, &b, &c]);
        let parts = concat_backward(&joined, &[2, 1, 3]).unwrap();
        assert_eq!(parts, vec![a.to_vec(), b.to_vec(), c.to_vec()]);
        assert!(concat_backward(&joined, &[2, 2]).is_err());
    }
}
