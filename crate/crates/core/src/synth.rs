//! Seeded synthetic images and samples for fixtures and self-checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use statrs::function::gamma::ln_gamma;

use crate::colorspace::{GrayImage, RgbImage};
use crate::error::Result;
use crate::iqa::{filter_same, gaussian_kernel};

pub type ChaRng = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Occluding-disk ("dead leaves") scene with power-law radii, per-disk
/// shading, a light blur and faint sensor noise. Its statistics are close
/// to those of natural photographs: scale invariance, sharp edges and
/// heavy-tailed MSCN coefficients.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> Result<RgbImage> {
    let mut rng = rng(seed);
    let (r_min, r_max) = (2.0f64, width.max(height) as f64 / 3.0);
    let n = width * height;
    let mut planes = [vec![0.5; n], vec![0.5; n], vec![0.5; n]];
    let disks = 4 * n / 100;
    for _ in 0..disks {
        // Radius density ∝ r^-3 on [r_min, r_max] by inversion.
        let u: f64 = rng.random();
        let inv = r_min.powi(-2) - u * (r_min.powi(-2) - r_max.powi(-2));
        let radius = inv.powf(-0.5);
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let base: f64 = rng.random_range(0.1..0.9);
        let tint = [
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
        ];
        let (gx, gy): (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(width - 1);
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let shade = base + (gx * dx + gy * dy) / radius * 0.5 * base;
                for (p, t) in planes.iter_mut().zip(tint) {
                    p[y * width + x] = shade + t;
                }
            }
        }
    }
    let noise = Normal::new(0.0, 0.004).expect("valid sigma");
    let blur = gaussian_kernel(5, 0.8);
    let mut out = Vec::with_capacity(3);
    for p in planes {
        let g = GrayImage::new(width, height, p)?;
        let b = filter_same(&g, &blur);
        out.push(
            b.data()
                .iter()
                .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect::<Vec<_>>(),
        );
    }
    let [r, g, b]: [Vec<f64>; 3] = out.try_into().expect("three planes");
    RgbImage::new(width, height, r, g, b)
}

/// I.i.d. uniform gray noise in `[0, 1]`.
pub fn white_noise(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    let mut rng = rng(seed);
    GrayImage::from_fn(width, height, |_, _| rng.random())
}

/// Horizontal gray ramp from 0 to 1.
pub fn gray_ramp(width: usize, height: usize) -> Result<RgbImage> {
    let denom = (width.max(2) - 1) as f64;
    RgbImage::from_fn(width, height, |x, _| {
        let v = x as f64 / denom;
        [v, v, v]
    })
}

/// Uniform random RGB pixels laid out as a `width x height` image.
pub fn random_rgb(width: usize, height: usize, seed: u64) -> Result<RgbImage> {
    let mut rng = rng(seed);
    RgbImage::from_fn(width, height, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Draws from an asymmetric generalised Gaussian with shape `shape` and
/// left/right standard deviations `sigma_l`, `sigma_r`.
pub fn aggd_samples(rng: &mut impl Rng, shape: f64, sigma_l: f64, sigma_r: f64, n: usize) -> Vec<f64> {
    // |X| = β G^(1/γ) with G ~ Gamma(1/γ, 1) has E[X²] = σ² when
    // β = σ sqrt(Γ(1/γ)/Γ(3/γ)).
    let scale = (0.5 * (ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape))).exp();
    let (beta_l, beta_r) = (sigma_l * scale, sigma_r * scale);
    let gamma = Gamma::new(1.0 / shape, 1.0).expect("positive shape");
    let p_left = beta_l / (beta_l + beta_r);
    (0..n)
        .map(|_| {
            let mag = gamma.sample(rng).powf(1.0 / shape);
            if rng.random::<f64>() < p_left {
                -beta_l * mag
            } else {
                beta_r * mag
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(dead_leaves(32, 24, 1).unwrap(), dead_leaves(32, 24, 1).unwrap());
        assert_ne!(dead_leaves(32, 24, 1).unwrap(), dead_leaves(32, 24, 2).unwrap());
        assert_eq!(white_noise(8, 8, 3).unwrap(), white_noise(8, 8, 3).unwrap());
    }

    #[test]
    fn aggd_sampler_moments() {
        let mut r = rng(5);
        let s = aggd_samples(&mut r, 2.0, 1.0, 2.0, 200_000);
        let left: Vec<f64> = s.iter().copied().filter(|v| *v < 0.0).collect();
        let right: Vec<f64> = s.iter().copied().filter(|v| *v > 0.0).collect();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms(&left) - 1.0).abs() < 0.02);
        assert!((rms(&right) - 2.0).abs() < 0.04);
    }
}
