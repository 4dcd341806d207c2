//! Full-reference metrics: PSNR and Gaussian-windowed SSIM.

use super::filter::{filter_valid, gaussian_kernel};
use crate::colorspace::{GrayImage, RgbImage};
use crate::error::{Error, Result};

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn db(dynamic_range: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (dynamic_range * dynamic_range / mse).log10()
    }
}

fn check_range(l: f64) -> Result<()> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Config(format!("dynamic range must be positive, got {l}")));
    }
    Ok(())
}

/// PSNR in dB over a gray plane. Identical inputs give `f64::INFINITY`.
pub fn psnr(out: &GrayImage, gt: &GrayImage, dynamic_range: f64) -> Result<f64> {
    check_range(dynamic_range)?;
    same_size(out.width(), out.height(), gt.width(), gt.height())?;
    Ok(db(dynamic_range, mse(out.data(), gt.data())))
}

/// PSNR over all three channels (MSE averaged over every sample).
/// Stored values in `[0, 1]` are first mapped to `[0, sample_max]`, the
/// native range of the source file; `dynamic_range` is the peak `L`.
pub fn psnr_rgb(out: &RgbImage, gt: &RgbImage, sample_max: f64, dynamic_range: f64) -> Result<f64> {
    check_range(dynamic_range)?;
    check_range(sample_max)?;
    same_size(out.width(), out.height(), gt.width(), gt.height())?;
    let sq = [(out.r(), gt.r()), (out.g(), gt.g()), (out.b(), gt.b())]
        .iter()
        .map(|(a, b)| mse(a, b))
        .sum::<f64>()
        / 3.0;
    Ok(db(dynamic_range, sq * sample_max * sample_max))
}

fn same_size(w1: usize, h1: usize, w2: usize, h2: usize) -> Result<()> {
    if (w1, h1) != (w2, h2) {
        return Err(Error::Shape(format!(
            "image sizes differ: {w1}x{h1} vs {w2}x{h2}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
}

impl SsimParams {
    /// `C1 = (0.01 L)²`, `C2 = (0.03 L)²`, `C3 = C2 / 2`, 11x11 window, σ = 1.5.
    pub fn for_range(dynamic_range: f64) -> Self {
        let c1 = (0.01 * dynamic_range).powi(2);
        let c2 = (0.03 * dynamic_range).powi(2);
        SsimParams {
            c1,
            c2,
            c3: c2 / 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: 11,
            sigma: 1.5,
            dynamic_range,
        }
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

fn pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.powf(e)
    }
}

/// Mean SSIM over all window positions fully inside the image.
pub fn ssim(x: &GrayImage, y: &GrayImage, p: &SsimParams) -> Result<f64> {
    same_size(x.width(), x.height(), y.width(), y.height())?;
    let (w, h) = (x.width(), x.height());
    if p.window.is_multiple_of(2) || p.window == 0 {
        return Err(Error::Config(format!("SSIM window must be odd, got {}", p.window)));
    }
    if w < p.window || h < p.window {
        return Err(Error::Validation(format!(
            "image {w}x{h} smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let k = gaussian_kernel(p.window, p.sigma);
    let (xs, ys) = (x.data(), y.data());
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    let (mu_x, ow, oh) = filter_valid(xs, w, h, &k);
    let (mu_y, ..) = filter_valid(ys, w, h, &k);
    let (e_xx, ..) = filter_valid(&xx, w, h, &k);
    let (e_yy, ..) = filter_valid(&yy, w, h, &k);
    let (e_xy, ..) = filter_valid(&xy, w, h, &k);

    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = (e_xx[i] - mx * mx).max(0.0);
        let vy = (e_yy[i] - my * my).max(0.0);
        let cxy = e_xy[i] - mx * my;
        let (sx, sy) = (vx.sqrt(), vy.sqrt());
        let l = (2.0 * mx * my + p.c1) / (mx * mx + my * my + p.c1);
        let c = (2.0 * sx * sy + p.c2) / (vx + vy + p.c2);
        let s = (cxy + p.c3) / (sx * sy + p.c3);
        total += pow(l, p.alpha) * pow(c, p.beta) * pow(s, p.gamma);
    }
    Ok(total / (ow * oh) as f64)
}
