//! Peephole LSTM cell.
//!
//! ```text
//! i = sigmoid(W_xi x + W_hi h' + w_ci * c' + b_i)
//! f = sigmoid(W_xf x + W_hf h' + w_cf * c' + b_f)
//! z = tanh(W_xc x + W_hc h' + b_c)
//! c = f * c' + i * z
//! o = sigmoid(W_xo x + W_ho h' + w_co * c + b_o)
//! h = o * tanh(c)
//! ```
//!
//! `h'`, `c'` are the previous state. Peephole weights `w_c*` are diagonal and
//! stored as vectors; the output gate peeks at the *current* cell.

use super::tensor::{debug_check_finite, matvec, matvec_t_acc, outer_acc};
use super::{NnError, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub w_ci: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub w_cf: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub w_co: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// Gradients flowing out of one backward step.
#[derive(Clone, Debug)]
pub struct LstmStepGrad {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let wx = || Tensor::zeros(&[hidden, input]);
        let wh = || Tensor::zeros(&[hidden, hidden]);
        let v = || Tensor::zeros(&[hidden]);
        LstmParams {
            w_xi: wx(),
            w_hi: wh(),
            w_ci: v(),
            w_xf: wx(),
            w_hf: wh(),
            w_cf: v(),
            w_xc: wx(),
            w_hc: wh(),
            w_xo: wx(),
            w_ho: wh(),
            w_co: v(),
            b_i: v(),
            b_f: v(),
            b_c: v(),
            b_o: v(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_xi.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xi.shape()[0]
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &Tensor); 15] {
        [
            ("w_xi", &self.w_xi),
            ("w_hi", &self.w_hi),
            ("w_ci", &self.w_ci),
            ("w_xf", &self.w_xf),
            ("w_hf", &self.w_hf),
            ("w_cf", &self.w_cf),
            ("w_xc", &self.w_xc),
            ("w_hc", &self.w_hc),
            ("w_xo", &self.w_xo),
            ("w_ho", &self.w_ho),
            ("w_co", &self.w_co),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 15] {
        [
            ("w_xi", &mut self.w_xi),
            ("w_hi", &mut self.w_hi),
            ("w_ci", &mut self.w_ci),
            ("w_xf", &mut self.w_xf),
            ("w_hf", &mut self.w_hf),
            ("w_cf", &mut self.w_cf),
            ("w_xc", &mut self.w_xc),
            ("w_hc", &mut self.w_hc),
            ("w_xo", &mut self.w_xo),
            ("w_ho", &mut self.w_ho),
            ("w_co", &mut self.w_co),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_c", &mut self.b_c),
            ("b_o", &mut self.b_o),
        ]
    }

    fn gate(&self, wx: &Tensor, wh: &Tensor, b: &Tensor, x: &[f64], h: &[f64]) -> Vec<f64> {
        let (n, m) = (self.hidden_size(), self.input_size());
        let mut a = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        matvec(wx.data(), n, m, x, &mut a);
        matvec(wh.data(), n, n, h, &mut tmp);
        for ((ai, ti), bi) in a.iter_mut().zip(&tmp).zip(b.data()) {
            *ai += ti + bi;
        }
        a
    }

    pub fn forward(&self, x: &[f64], prev: &LstmState) -> Result<(LstmState, LstmCache), NnError> {
        let n = self.hidden_size();
        if x.len() != self.input_size() {
            return Err(NnError::shape("lstm_cell_forward input", self.input_size(), x.len()));
        }
        if prev.h.len() != n || prev.c.len() != n {
            return Err(NnError::shape("lstm_cell_forward state", n, prev.h.len().min(prev.c.len())));
        }
        let mut i = self.gate(&self.w_xi, &self.w_hi, &self.b_i, x, &prev.h);
        let mut f = self.gate(&self.w_xf, &self.w_hf, &self.b_f, x, &prev.h);
        let mut z = self.gate(&self.w_xc, &self.w_hc, &self.b_c, x, &prev.h);
        let mut o = self.gate(&self.w_xo, &self.w_ho, &self.b_o, x, &prev.h);
        let mut c = vec![0.0; n];
        let mut tanh_c = vec![0.0; n];
        let mut h = vec![0.0; n];
        let (wci, wcf, wco) = (self.w_ci.data(), self.w_cf.data(), self.w_co.data());
        for k in 0..n {
            i[k] = sigmoid(i[k] + wci[k] * prev.c[k]);
            f[k] = sigmoid(f[k] + wcf[k] * prev.c[k]);
            z[k] = z[k].tanh();
            c[k] = f[k] * prev.c[k] + i[k] * z[k];
            o[k] = sigmoid(o[k] + wco[k] * c[k]);
            tanh_c[k] = c[k].tanh();
            h[k] = o[k] * tanh_c[k];
        }
        debug_check_finite("lstm_cell_forward", &c);
        let state = LstmState { h: h.clone(), c: c.clone() };
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            i,
            f,
            z,
            o,
            c,
            tanh_c,
        };
        Ok((state, cache))
    }

    /// Backward through one step given `dL/dh` and `dL/dc` of its output
    /// state. Parameter gradients accumulate into `grads`.
    pub fn backward(&self, cache: &LstmCache, grad_h: &[f64], grad_c: &[f64], grads: &mut LstmParams) -> LstmStepGrad {
        let (n, m) = (self.hidden_size(), self.input_size());
        let mut da_i = vec![0.0; n];
        let mut da_f = vec![0.0; n];
        let mut da_z = vec![0.0; n];
        let mut da_o = vec![0.0; n];
        let mut dc_prev = vec![0.0; n];
        let (wci, wcf, wco) = (self.w_ci.data(), self.w_cf.data(), self.w_co.data());
        for k in 0..n {
            let (i, f, z, o, tc) = (cache.i[k], cache.f[k], cache.z[k], cache.o[k], cache.tanh_c[k]);
            da_o[k] = grad_h[k] * tc * o * (1.0 - o);
            let dc = grad_c[k] + grad_h[k] * o * (1.0 - tc * tc) + da_o[k] * wco[k];
            da_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
            da_i[k] = dc * z * i * (1.0 - i);
            da_z[k] = dc * i * (1.0 - z * z);
            dc_prev[k] = dc * f + da_i[k] * wci[k] + da_f[k] * wcf[k];
        }
        let mut dx = vec![0.0; m];
        let mut dh = vec![0.0; n];
        let blocks: [(&[f64], &Tensor, &Tensor); 4] = [
            (&da_i, &self.w_xi, &self.w_hi),
            (&da_f, &self.w_xf, &self.w_hf),
            (&da_z, &self.w_xc, &self.w_hc),
            (&da_o, &self.w_xo, &self.w_ho),
        ];
        for (da, wx, wh) in blocks {
            matvec_t_acc(wx.data(), n, m, da, &mut dx);
            matvec_t_acc(wh.data(), n, n, da, &mut dh);
        }
        outer_acc(&da_i, &cache.x, grads.w_xi.data_mut());
        outer_acc(&da_f, &cache.x, grads.w_xf.data_mut());
        outer_acc(&da_z, &cache.x, grads.w_xc.data_mut());
        outer_acc(&da_o, &cache.x, grads.w_xo.data_mut());
        outer_acc(&da_i, &cache.h_prev, grads.w_hi.data_mut());
        outer_acc(&da_f, &cache.h_prev, grads.w_hf.data_mut());
        outer_acc(&da_z, &cache.h_prev, grads.w_hc.data_mut());
        outer_acc(&da_o, &cache.h_prev, grads.w_ho.data_mut());
        for k in 0..n {
            grads.w_ci.data_mut()[k] += da_i[k] * cache.c_prev[k];
            grads.w_cf.data_mut()[k] += da_f[k] * cache.c_prev[k];
            grads.w_co.data_mut()[k] += da_o[k] * cache.c[k];
            grads.b_i.data_mut()[k] += da_i[k];
            grads.b_f.data_mut()[k] += da_f[k];
            grads.b_c.data_mut()[k] += da_z[k];
            grads.b_o.data_mut()[k] += da_o[k];
        }
        LstmStepGrad { x: dx, h_prev: dh, c_prev: dc_prev }
    }
}
