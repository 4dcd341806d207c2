//! Separable Gaussian filtering on gray planes.

use crate::colorspace::GrayImage;

/// Normalised 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Same-size filtering with replicated borders.
pub fn filter_same(img: &GrayImage, kernel: &[f64]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let half = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let src = img.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - half, h) * w + x])
                .sum();
        }
    }
    GrayImage::new(w, h, out).expect("dimensions preserved")
}

/// Filtering restricted to windows fully inside the image; the output is
/// `(w - k + 1) x (h - k + 1)` as a flat row-major vector.
pub fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| kernel[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// 2x2 box average; odd trailing rows and columns are dropped.
pub fn downsample_half(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    GrayImage::from_fn(w.max(1), h.max(1), |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        if sx + 1 >= img.width() || sy + 1 >= img.height() {
            return img.get(sx.min(img.width() - 1), sy.min(img.height() - 1));
        }
        0.25 * (img.get(sx, sy) + img.get(sx + 1, sy) + img.get(sx, sy + 1) + img.get(sx + 1, sy + 1))
    })
    .expect("finite input")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one_and_is_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert!((k[i] - k[10 - i]).abs() < 1e-18);
        }
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = GrayImage::new(9, 8, vec![0.3; 72]).unwrap();
        let f = filter_same(&img, &gaussian_kernel(7, 7.0 / 6.0));
        assert!(f.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        let (v, w, h) = filter_valid(img.data(), 9, 8, &gaussian_kernel(3, 1.0));
        assert_eq!((w, h), (7, 6));
        assert!(v.iter().all(|x| (x - 0.3).abs() < 1e-15));
    }

    #[test]
    fn downsample_box() {
        let img = GrayImage::from_fn(4, 2, |x, _| x as f64).unwrap();
        let d = downsample_half(&img);
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.data(), &[0.5, 2.5]);
    }
}
