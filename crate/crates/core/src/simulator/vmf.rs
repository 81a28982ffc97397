use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Samples a unit vector from the von Mises-Fisher distribution on the
/// 2-sphere with mean `mu` and concentration `kappa > 0` (Wood, 1994).
pub fn sample_vmf<R: Rng + ?Sized>(mu: &Vector3<f64>, kappa: f64, rng: &mut R) -> Vector3<f64> {
    assert!(kappa > 0.0 && kappa.is_finite(), "vMF concentration must be positive");
    let mu = mu.normalize();
    const DIM_M1: f64 = 2.0;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + DIM_M1 * DIM_M1).sqrt()) / DIM_M1;
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + DIM_M1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(DIM_M1 / 2.0, DIM_M1 / 2.0).expect("beta parameters");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.gen();
        if kappa * w + DIM_M1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let (e1, e2) = orthonormal_complement(&mu);
    let s = (1.0 - w * w).max(0.0).sqrt();
    (mu * w + (e1 * phi.cos() + e2 * phi.sin()) * s).normalize()
}

fn orthonormal_complement(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    (e1, n.cross(&e1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_unit_and_concentrate() {
        let mu = Vector3::new(1.0, 2.0, -0.5).normalize();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mut sum = Vector3::zeros();
        for _ in 0..n {
            let x = sample_vmf(&mu, 50.0, &mut rng);
            assert!((x.norm() - 1.0).abs() < 1e-12);
            sum += x;
        }
        let mean_axis = sum.normalize();
        assert!(mean_axis.dot(&mu).acos().to_degrees() < 5.0);
    }

    /// E[mu.x] = coth(kappa) - 1/kappa on the 2-sphere.
    #[test]
    fn resultant_length_matches_kappa() {
        let mu = Vector3::z();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kappa in [0.5, 5.0, 50.0] {
            let n = 10_000;
            let ws: Vec<f64> = (0..n).map(|_| sample_vmf(&mu, kappa, &mut rng).z).collect();
            let mean = ws.iter().sum::<f64>() / n as f64;
            let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = 1.0 / kappa.tanh() - 1.0 / kappa;
            assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt() + 1e-12, "kappa {kappa}: {mean} vs {expected}");
        }
    }
}
