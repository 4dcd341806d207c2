//! Fixed feature lift from HVI planes to the intensity and chroma streams
//! consumed by channel adjustment, for running the pipeline without a
//! trained encoder.
//!
//! Each plane contributes itself and its two central-difference
//! derivatives (replicated borders):
//!
//! * intensity: `I_max`, `∂x I_max`, `∂y I_max`, `J`, `∂x J`, `∂y J`
//!   where `J = sqrt(sin(π·I_max/2) + eps)` is the collapsed intensity;
//! * chroma: `Ĥ`, `∂x Ĥ`, `∂y Ĥ`, `V̂`, `∂x V̂`, `∂y V̂`.
//!
//! The chroma stream is therefore split into an `Ĥ` half and a `V̂` half.

use crate::colorspace::{collapse, HviImage};
use crate::error::Result;
use crate::tensor::Tensor;

pub const STREAM_CHANNELS: usize = 6;

fn jet(plane: &[f64], w: usize, h: usize) -> [Vec<f64>; 3] {
    let at = |x: usize, y: usize| plane[y * w + x];
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            dx.push(0.5 * (at(xr, y) - at(xl, y)));
            dy.push(0.5 * (at(x, yd) - at(x, yu)));
        }
    }
    [plane.to_vec(), dx, dy]
}

fn stack_hwc(planes: &[Vec<f64>], w: usize, h: usize) -> Result<Tensor> {
    let c = planes.len();
    let mut data = Vec::with_capacity(w * h * c);
    for i in 0..w * h {
        data.extend(planes.iter().map(|p| p[i]));
    }
    Tensor::new(vec![h, w, c], data)
}

/// `(H, W, 6)` intensity and chroma streams for an HVI image.
pub fn lift_streams(hvi: &HviImage) -> Result<(Tensor, Tensor)> {
    let (w, h) = (hvi.width, hvi.height);
    let collapsed: Vec<f64> = hvi.imax.iter().map(|&i| collapse(i, 1.0, hvi.eps)).collect();
    let mut intensity = Vec::with_capacity(STREAM_CHANNELS);
    intensity.extend(jet(&hvi.imax, w, h));
    intensity.extend(jet(&collapsed, w, h));
    let mut chroma = Vec::with_capacity(STREAM_CHANNELS);
    chroma.extend(jet(&hvi.hhat, w, h));
    chroma.extend(jet(&hvi.vhat, w, h));
    Ok((stack_hwc(&intensity, w, h)?, stack_hwc(&chroma, w, h)?))
}

/// `(H, W, C)` to channel-first `(C, H, W)`.
pub fn to_channels_first(f: &Tensor) -> Result<Tensor> {
    f.permute(&[2, 0, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::{rgb_to_hvi, HviParams, RgbImage};

    #[test]
    fn lift_layout() {
        let img = RgbImage::from_fn(4, 3, |x, y| [x as f64 / 3.0, y as f64 / 2.0, 0.2]).unwrap();
        let hvi = rgb_to_hvi(&img, &HviParams::default()).unwrap();
        let (fi, fhv) = lift_streams(&hvi).unwrap();
        assert_eq!(fi.shape(), &[3, 4, STREAM_CHANNELS]);
        assert_eq!(fhv.shape(), &[3, 4, STREAM_CHANNELS]);
        // Pixel (x=2, y=1): channel 0 is I_max, channel 3 of chroma is V̂.
        assert_eq!(fi.at(&[1, 2, 0]), hvi.imax[4 + 2]);
        assert_eq!(fhv.at(&[1, 2, 3]), hvi.vhat[4 + 2]);
        let dx = 0.5 * (hvi.imax[4 + 3] - hvi.imax[4 + 1]);
        assert!((fi.at(&[1, 2, 1]) - dx).abs() < 1e-15);
    }
}
