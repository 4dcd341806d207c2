//! Natural-scene statistics: MSCN coefficients, asymmetric generalised
//! Gaussian fitting and the BRISQUE feature vector.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use super::filter::{downsample_half, filter_same, gaussian_kernel};
use crate::colorspace::GrayImage;
use crate::error::{Error, Result};

/// Local-moment window for MSCN.
pub const MSCN_WINDOW: usize = 7;
pub const MSCN_SIGMA: f64 = 7.0 / 6.0;
/// Divisive stabiliser, applied on the 0-255 intensity scale.
pub const MSCN_C: f64 = 1.0;
const INTENSITY_SCALE: f64 = 255.0;

pub const BRISQUE_LEN: usize = 36;
pub const FEATURES_PER_SCALE: usize = 18;

/// MSCN map and the local standard deviation it was normalised by.
#[derive(Debug, Clone)]
pub struct MscnMap {
    pub coeffs: GrayImage,
    pub sigma: GrayImage,
}

/// `(I − μ) / (σ + 1)` with 7x7 Gaussian local moments. The input is
/// expected in `[0, 1]` and is rescaled to `[0, 255]` first so the unit
/// stabiliser has its usual meaning.
pub fn mscn_map(img: &GrayImage) -> Result<MscnMap> {
    if img.width() < MSCN_WINDOW || img.height() < MSCN_WINDOW {
        return Err(Error::Validation(format!(
            "MSCN needs at least {MSCN_WINDOW}x{MSCN_WINDOW} pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let k = gaussian_kernel(MSCN_WINDOW, MSCN_SIGMA);
    let scaled = img.map(|v| v * INTENSITY_SCALE);
    let mu = filter_same(&scaled, &k);
    let sq = filter_same(&scaled.map(|v| v * v), &k);
    let sigma: Vec<f64> = mu
        .data()
        .iter()
        .zip(sq.data())
        .map(|(m, s)| (s - m * m).abs().sqrt())
        .collect();
    let coeffs = scaled
        .data()
        .iter()
        .zip(mu.data())
        .zip(&sigma)
        .map(|((v, m), s)| (v - m) / (s + MSCN_C))
        .collect();
    let (w, h) = (img.width(), img.height());
    Ok(MscnMap {
        coeffs: GrayImage::new(w, h, coeffs)?,
        sigma: GrayImage::new(w, h, sigma)?,
    })
}

pub fn mscn(img: &GrayImage) -> Result<GrayImage> {
    Ok(mscn_map(img)?.coeffs)
}

/// Fitted asymmetric generalised Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggdFit {
    pub shape: f64,
    pub sigma_l: f64,
    pub sigma_r: f64,
    pub eta: f64,
}

pub const AGGD_SHAPE_MIN: f64 = 0.2;
pub const AGGD_SHAPE_MAX: f64 = 10.0;
const AGGD_SHAPE_STEP: f64 = 1e-3;
pub const AGGD_MIN_SAMPLES: usize = 32;

/// `Γ(2/γ)² / (Γ(1/γ) Γ(3/γ))`, increasing in `γ`.
pub fn gg_ratio(shape: f64) -> f64 {
    (2.0 * ln_gamma(2.0 / shape) - ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape)).exp()
}

fn ratio_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let steps = ((AGGD_SHAPE_MAX - AGGD_SHAPE_MIN) / AGGD_SHAPE_STEP).round() as usize;
        (0..=steps)
            .map(|i| {
                let g = AGGD_SHAPE_MIN + i as f64 * AGGD_SHAPE_STEP;
                (g, gg_ratio(g))
            })
            .collect()
    })
}

/// Moment-matching AGGD estimate.
pub fn aggd_fit(samples: &[f64]) -> Result<AggdFit> {
    if samples.len() < AGGD_MIN_SAMPLES {
        return Err(Error::Numeric(format!(
            "AGGD fit needs at least {AGGD_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let (mut l_sq, mut l_n, mut r_sq, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in samples {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite AGGD sample".into()));
        }
        if v < 0.0 {
            l_sq += v * v;
            l_n += 1;
        } else if v > 0.0 {
            r_sq += v * v;
            r_n += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    if l_n == 0 || r_n == 0 {
        return Err(Error::Numeric(
            "degenerate AGGD sample set: needs values on both sides of zero".into(),
        ));
    }
    let n = samples.len() as f64;
    let sigma_l = (l_sq / l_n as f64).sqrt();
    let sigma_r = (r_sq / r_n as f64).sqrt();
    let gamma_hat = sigma_l / sigma_r;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let big_r = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0) / (gamma_hat * gamma_hat + 1.0).powi(2);

    let shape = ratio_table()
        .iter()
        .min_by(|a, b| (a.1 - big_r).abs().total_cmp(&(b.1 - big_r).abs()))
        .map(|&(g, _)| g)
        .expect("non-empty table");
    let eta = (sigma_r - sigma_l)
        * (ln_gamma(2.0 / shape) - 0.5 * (ln_gamma(1.0 / shape) + ln_gamma(3.0 / shape))).exp();
    Ok(AggdFit {
        shape,
        sigma_l,
        sigma_r,
        eta,
    })
}

/// Neighbour offsets `(dx, dy)` for the paired products: horizontal,
/// vertical, main diagonal, anti-diagonal.
pub const PAIR_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Products of each coefficient with its neighbour at `(dx, dy)`, over all
/// positions where the neighbour exists.
pub fn paired_products(m: &GrayImage, (dx, dy): (isize, isize)) -> Vec<f64> {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        let ny = y + dy;
        if ny < 0 || ny >= h {
            continue;
        }
        for x in 0..w {
            let nx = x + dx;
            if nx < 0 || nx >= w {
                continue;
            }
            out.push(m.get(x as usize, y as usize) * m.get(nx as usize, ny as usize));
        }
    }
    out
}

/// The 18 statistics of one MSCN plane, in order:
/// `[shape, variance]` of the coefficients, then for each of the
/// horizontal, vertical, diagonal and anti-diagonal products
/// `[shape, eta, left variance, right variance]`.
pub fn nss_features(coeffs: &GrayImage) -> Result<[f64; FEATURES_PER_SCALE]> {
    let mut f = [0.0; FEATURES_PER_SCALE];
    let base = aggd_fit(coeffs.data())?;
    f[0] = base.shape;
    f[1] = 0.5 * (base.sigma_l.powi(2) + base.sigma_r.powi(2));
    for (o, &offset) in PAIR_OFFSETS.iter().enumerate() {
        let fit = aggd_fit(&paired_products(coeffs, offset))?;
        let at = 2 + 4 * o;
        f[at] = fit.shape;
        f[at + 1] = fit.eta;
        f[at + 2] = fit.sigma_l.powi(2);
        f[at + 3] = fit.sigma_r.powi(2);
    }
    Ok(f)
}

pub const BRISQUE_MIN_SIZE: usize = 64;

/// 36 BRISQUE features: [`nss_features`] of the image followed by those of
/// its 2x2 box-downsampled copy.
pub fn brisque_features(img: &GrayImage) -> Result<[f64; BRISQUE_LEN]> {
    if img.width() < BRISQUE_MIN_SIZE || img.height() < BRISQUE_MIN_SIZE {
        return Err(Error::Validation(format!(
            "BRISQUE needs at least {BRISQUE_MIN_SIZE}x{BRISQUE_MIN_SIZE} pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut out = [0.0; BRISQUE_LEN];
    out[..FEATURES_PER_SCALE].copy_from_slice(&nss_features(&mscn(img)?)?);
    out[FEATURES_PER_SCALE..].copy_from_slice(&nss_features(&mscn(&downsample_half(img))?)?);
    Ok(out)
}

/// Linear quality regressor over BRISQUE features, `bias + w · f`, loaded
/// from a `key = value` file with keys `bias` and `w1` .. `w36`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrisqueRegressor {
    pub bias: f64,
    pub weights: [f64; BRISQUE_LEN],
}

impl BrisqueRegressor {
    pub fn score(&self, features: &[f64; BRISQUE_LEN]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = crate::io::read_key_values(path)?;
        let mut weights = [0.0; BRISQUE_LEN];
        for (i, w) in weights.iter_mut().enumerate() {
            *w = crate::io::parse_f64(&map, &format!("w{}", i + 1), path)?;
        }
        Ok(BrisqueRegressor {
            bias: crate::io::parse_f64(&map, "bias", path)?,
            weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_at_known_shapes() {
        // Gaussian: Γ(1)² / (Γ(1/2) Γ(3/2)) = 2/π.
        assert!((gg_ratio(2.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        // Laplacian: Γ(2)² / (Γ(1) Γ(3)) = 1/2.
        assert!((gg_ratio(1.0) - 0.5).abs() < 1e-12);
        let t = ratio_table();
        assert_eq!(t.len(), 9801);
        assert!(t.windows(2).all(|w| w[0].1 < w[1].1));
    }

    #[test]
    fn constant_image_has_zero_mscn() {
        let img = GrayImage::new(10, 10, vec![0.4; 100]).unwrap();
        assert!(mscn(&img).unwrap().data().iter().all(|v| v.abs() < 1e-9));
        assert!(mscn(&GrayImage::new(6, 10, vec![0.4; 60]).unwrap()).is_err());
    }

    #[test]
    fn mirrored_samples_are_symmetric() {
        let half: Vec<f64> = (1..=200).map(|i| ((i as f64) * 0.37).sin().abs() + 0.01).collect();
        let mut all = half.clone();
        all.extend(half.iter().map(|v| -v));
        let fit = aggd_fit(&all).unwrap();
        assert!((fit.sigma_l - fit.sigma_r).abs() < 1e-6);
        assert!(fit.eta.abs() < 1e-6);
    }

    #[test]
    fn degenerate_samples_rejected() {
        assert!(aggd_fit(&[1.0; 10]).is_err());
        assert!(aggd_fit(&[0.0; 64]).is_err());
        assert!(aggd_fit(&[1.0; 64]).is_err());
    }

    #[test]
    fn paired_product_counts() {
        let m = GrayImage::from_fn(5, 4, |x, y| (x + y) as f64).unwrap();
        assert_eq!(paired_products(&m, (1, 0)).len(), 4 * 4);
        assert_eq!(paired_products(&m, (0, 1)).len(), 5 * 3);
        assert_eq!(paired_products(&m, (1, 1)).len(), 4 * 3);
        assert_eq!(paired_products(&m, (1, -1)).len(), 4 * 3);
        assert_eq!(paired_products(&m, (1, 0))[0], 0.0 * 1.0);
    }

    #[test]
    fn brisque_rejects_small_images() {
        let img = GrayImage::new(63, 80, vec![0.5; 63 * 80]).unwrap();
        assert!(matches!(brisque_features(&img), Err(Error::Validation(_))));
    }
}
