use super::{Conv2d, Dense, LstmParams, Tensor};
use rand::Rng;

/// Uniform on `[-a, a]` with `a = sqrt(3 / fan_in)`, i.e. variance `1 / fan_in`.
pub fn fill_fan_in_uniform<R: Rng>(t: &mut Tensor, fan_in: usize, rng: &mut R) {
    let a = (3.0 / fan_in.max(1) as f64).sqrt();
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-a..=a));
}

pub fn init_dense<R: Rng>(layer: &mut Dense, rng: &mut R) {
    let fan_in = layer.input_size();
    fill_fan_in_uniform(&mut layer.w, fan_in, rng);
    layer.b.fill(0.0);
}

pub fn init_conv<R: Rng>(layer: &mut Conv2d, rng: &mut R) {
    let (kh, kw) = layer.kernel_extent();
    let fan_in = layer.in_maps() * kh * kw;
    fill_fan_in_uniform(&mut layer.kernels, fan_in, rng);
    layer.bias.fill(0.0);
}

/// Gate weights scaled by the concatenated input fan-in; forget bias +1.
pub fn init_lstm<R: Rng>(p: &mut LstmParams, rng: &mut R) {
    let (m, n) = (p.input_size(), p.hidden_size());
    for (name, t) in p.tensors_mut() {
        match name {
            "b_f" => t.fill(1.0),
            "b_i" | "b_c" | "b_o" => t.fill(0.0),
            "w_ci" | "w_cf" | "w_co" => fill_fan_in_uniform(t, n, rng),
            _ => fill_fan_in_uniform(t, m + n, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_given_seed() {
        let mut a = LstmParams::zeros(5, 7);
        let mut b = LstmParams::zeros(5, 7);
        init_lstm(&mut a, &mut ChaCha8Rng::seed_from_u64(3));
        init_lstm(&mut b, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let mut c = LstmParams::zeros(5, 7);
        init_lstm(&mut c, &mut ChaCha8Rng::seed_from_u64(4));
        assert_ne!(a, c);
        assert!(a.b_f.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn empirical_variance_is_inverse_fan_in() {
        let mut d = Dense::zeros(1000, 1000);
        init_dense(&mut d, &mut ChaCha8Rng::seed_from_u64(5));
        let n = d.w.len() as f64;
        let mean = d.w.data().iter().sum::<f64>() / n;
        let var = d.w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1e-3).abs() < 1e-4, "variance {var}");
    }
}
