use super::{CameraSpec, Scene};
use crate::lie_se3::{Pose, RotationMatrix};
use crate::model::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Renders the landmarks seen from body pose `pose` (start frame) through the
/// camera rotated by `extrinsics` (`x_C = R_SC x_S`). Pixel noise is drawn
/// from a stream keyed by `(scene.render_seed, frame)`, so re-rendering the
/// same frame under different extrinsics reuses the same noise.
pub fn render_frame(scene: &Scene, extrinsics: &RotationMatrix, pose: &Pose, frame: usize) -> Image {
    let cam: &CameraSpec = &scene.camera;
    let (w, h) = (cam.width, cam.height);
    let mut acc = vec![0.0; w * h];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let r_cb = extrinsics.matrix() * pose.rotation().matrix().transpose();
    let reach = 3.0 * cam.splat_sigma;
    let inv_two_var = 1.0 / (2.0 * cam.splat_sigma * cam.splat_sigma);
    for lm in &scene.landmarks {
        let p = r_cb * (lm - pose.translation());
        if p.z <= cam.near {
            continue;
        }
        let u = cam.focal * p.x / p.z + cx;
        let v = cam.focal * p.y / p.z + cy;
        if u < -reach || v < -reach || u > w as f64 - 1.0 + reach || v > h as f64 - 1.0 + reach {
            continue;
        }
        let (x0, x1) = ((u - reach).ceil().max(0.0) as usize, (u + reach).floor().min(w as f64 - 1.0));
        let (y0, y1) = ((v - reach).ceil().max(0.0) as usize, (v + reach).floor().min(h as f64 - 1.0));
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                acc[y * w + x] += (-d2 * inv_two_var).exp();
            }
        }
    }
    let noise = (scene.pixel_noise > 0.0).then(|| Normal::new(0.0, scene.pixel_noise).expect("pixel noise sigma"));
    let mut rng = ChaCha8Rng::seed_from_u64(scene.render_seed);
    rng.set_stream(frame as u64);
    let data = acc
        .into_iter()
        .map(|a| {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            (a.min(1.0) + n).clamp(0.0, 1.0) - 0.5
        })
        .collect();
    Image { width: w, height: h, data }
}
