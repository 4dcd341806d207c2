//! sRGB, HSV and HVI image representations and the transforms between them.
//!
//! Hue is stored normalised to `[0, 1)` and enters the polar chroma map as
//! the angle `2π·H`, so the forward and inverse HVI maps are exact inverses
//! of each other. sRGB values are taken as-is in `[0, 1]`; no gamma
//! linearisation is applied.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

fn check_dims(width: usize, height: usize, planes: &[&[f64]]) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("empty image {width}x{height}")));
    }
    for p in planes {
        if p.len() != width * height {
            return Err(Error::Shape(format!(
                "plane of {} values for a {width}x{height} image",
                p.len()
            )));
        }
    }
    Ok(())
}

fn check_unit(name: &str, plane: &[f64]) -> Result<()> {
    if let Some((i, v)) = plane
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Validation(format!(
            "{name} value {v} at pixel {i} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    r: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, r: Vec<f64>, g: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_dims(width, height, &[&r, &g, &b])?;
        check_unit("R", &r)?;
        check_unit("G", &g)?;
        check_unit("B", &b)?;
        Ok(RgbImage {
            width,
            height,
            r,
            g,
            b,
        })
    }

    /// Builds an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let n = width * height;
        let (mut r, mut g, mut b) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for y in 0..height {
            for x in 0..width {
                let [pr, pg, pb] = f(x, y);
                r.push(pr);
                g.push(pg);
                b.push(pb);
            }
        }
        Self::new(width, height, r, g, b)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.r[i], self.g[i], self.b[i]]
    }

    /// `(3, H, W)` tensor in R, G, B order.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.len());
        data.extend_from_slice(&self.r);
        data.extend_from_slice(&self.g);
        data.extend_from_slice(&self.b);
        Tensor::new(vec![3, self.height, self.width], data).expect("consistent planes")
    }

    pub fn max_abs_diff(&self, other: &RgbImage) -> f64 {
        if (self.width, self.height) != (other.width, other.height) {
            return f64::INFINITY;
        }
        [(&self.r, &other.r), (&self.g, &other.g), (&self.b, &other.b)]
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn luma(&self) -> GrayImage {
        let data = (0..self.len())
            .map(|i| 0.299 * self.r[i] + 0.587 * self.g[i] + 0.114 * self.b[i])
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Single-plane image. Values are unconstrained so that metric
/// intermediates (MSCN maps, products) can share the type.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, &[&data])?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite sample in gray image".into()));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rectangular sub-image; panics if the window leaves the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }

    /// Gray image replicated into three channels; values must lie in `[0, 1]`.
    pub fn to_rgb(&self) -> Result<RgbImage> {
        RgbImage::new(
            self.width,
            self.height,
            self.data.clone(),
            self.data.clone(),
            self.data.clone(),
        )
    }
}

/// HSV planes with hue normalised to `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl HsvImage {
    pub fn new(width: usize, height: usize, h: Vec<f64>, s: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_dims(width, height, &[&h, &s, &v])?;
        if let Some(bad) = h.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::Validation(format!("hue {bad} outside [0, 1)")));
        }
        check_unit("S", &s)?;
        check_unit("V", &v)?;
        Ok(HsvImage {
            width,
            height,
            h,
            s,
            v,
        })
    }
}

/// Intensity-collapse scale `k * sqrt(sin(pi * imax / 2) + eps)`.
pub fn collapse(imax: f64, k: f64, eps: f64) -> f64 {
    k * ((FRAC_PI_2 * imax).sin() + eps).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HviParams {
    /// Density of the black plane; scales the collapse function.
    pub k: f64,
    pub eps: f64,
    pub alpha_s: f64,
    pub alpha_i: f64,
}

impl Default for HviParams {
    fn default() -> Self {
        HviParams {
            k: 1.0,
            eps: 1e-8,
            alpha_s: 1.0,
            alpha_i: 1.0,
        }
    }
}

impl HviParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("eps", self.eps),
            ("alpha_s", self.alpha_s),
            ("alpha_i", self.alpha_i),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn write_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_key_values(
            path,
            [
                ("k", format!("{:e}", self.k)),
                ("eps", format!("{:e}", self.eps)),
                ("alpha_s", format!("{:e}", self.alpha_s)),
                ("alpha_i", format!("{:e}", self.alpha_i)),
            ],
        )
    }

    pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Validation(format!(
                "missing HVI sidecar {}",
                path.display()
            )));
        }
        let map = io::read_key_values(path)?;
        let p = HviParams {
            k: io::parse_f64(&map, "k", path)?,
            eps: io::parse_f64(&map, "eps", path)?,
            alpha_s: io::parse_f64(&map, "alpha_s", path)?,
            alpha_i: io::parse_f64(&map, "alpha_i", path)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Sidecar location for an HVI tensor file: `<tensor>.params`.
pub fn sidecar_path(tensor_path: impl AsRef<Path>) -> PathBuf {
    let mut s = tensor_path.as_ref().as_os_str().to_owned();
    s.push(".params");
    PathBuf::from(s)
}

/// HVI planes plus the collapse parameters they were produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct HviImage {
    pub width: usize,
    pub height: usize,
    pub hhat: Vec<f64>,
    pub vhat: Vec<f64>,
    pub imax: Vec<f64>,
    pub k: f64,
    pub eps: f64,
}

impl HviImage {
    /// `(3, H, W)` tensor ordered `(Ĥ, V̂, I_max)`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(3 * self.imax.len());
        data.extend_from_slice(&self.hhat);
        data.extend_from_slice(&self.vhat);
        data.extend_from_slice(&self.imax);
        Tensor::new(vec![3, self.height, self.width], data).expect("consistent planes")
    }

    pub fn from_tensor(t: &Tensor, k: f64, eps: f64) -> Result<Self> {
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "HVI tensor must be (3,H,W), got {:?}",
                t.shape()
            )));
        }
        let (height, width) = (t.shape()[1], t.shape()[2]);
        let n = width * height;
        let d = t.data();
        let imax = d[2 * n..].to_vec();
        check_unit("I_max", &imax)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite HVI value".into()));
        }
        Ok(HviImage {
            width,
            height,
            hhat: d[..n].to_vec(),
            vhat: d[n..2 * n].to_vec(),
            imax,
            k,
            eps,
        })
    }
}

/// Hue, saturation and value of one RGB pixel; hue normalised to `[0, 1)`.
pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let s = if max == 0.0 { 0.0 } else { (max - min) / max };
    if s == 0.0 {
        return [0.0, 0.0, max];
    }
    let delta = max - min;
    let h6 = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    [wrap_unit(h6 / 6.0), s, max]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f64; 3]) -> [f64; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (sector as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

// Maps a value known to lie in [0, 1] (up to rounding) into [0, 1).
fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn rgb_to_hsv(img: &RgbImage) -> HsvImage {
    let n = img.len();
    let (mut h, mut s, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let [ph, ps, pv] = rgb_to_hsv_pixel(img.pixel(i));
        h.push(ph);
        s.push(ps);
        v.push(pv);
    }
    HsvImage {
        width: img.width,
        height: img.height,
        h,
        s,
        v,
    }
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> RgbImage {
    let n = hsv.h.len();
    let (mut r, mut g, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let [pr, pg, pb] = hsv_to_rgb_pixel([hsv.h[i], hsv.s[i], hsv.v[i]]);
        r.push(pr.clamp(0.0, 1.0));
        g.push(pg.clamp(0.0, 1.0));
        b.push(pb.clamp(0.0, 1.0));
    }
    RgbImage {
        width: hsv.width,
        height: hsv.height,
        r,
        g,
        b,
    }
}

/// Forward HVI transform: polarises hue/saturation into `(Ĥ, V̂)` scaled by
/// the intensity collapse, and keeps `V` as the intensity plane.
pub fn hvt(hsv: &HsvImage, p: &HviParams) -> Result<HviImage> {
    p.validate()?;
    let n = hsv.h.len();
    let (mut hhat, mut vhat) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let ck = collapse(hsv.v[i], p.k, p.eps);
        let (sin, cos) = (TAU * hsv.h[i]).sin_cos();
        hhat.push(ck * hsv.s[i] * cos);
        vhat.push(ck * hsv.s[i] * sin);
    }
    Ok(HviImage {
        width: hsv.width,
        height: hsv.height,
        hhat,
        vhat,
        imax: hsv.v.clone(),
        k: p.k,
        eps: p.eps,
    })
}

/// Perceptual inverse back to HSV. The collapse is recomputed with the `k`
/// and `eps` stored in `hvi`; only the alpha gains are taken from `p`.
pub fn phvit(hvi: &HviImage, p: &HviParams) -> Result<HsvImage> {
    p.validate()?;
    let n = hvi.imax.len();
    let (mut h, mut s, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let denom = collapse(hvi.imax[i], hvi.k, hvi.eps) + hvi.eps;
        let hn = hvi.hhat[i] / denom;
        let vn = hvi.vhat[i] / denom;
        let hue = if hn == 0.0 && vn == 0.0 {
            0.0
        } else {
            wrap_unit(vn.atan2(hn) / TAU)
        };
        let sat = (p.alpha_s * hn.hypot(vn)).clamp(0.0, 1.0);
        h.push(if sat == 0.0 { 0.0 } else { hue });
        s.push(sat);
        v.push((p.alpha_i * hvi.imax[i]).clamp(0.0, 1.0));
    }
    Ok(HsvImage {
        width: hvi.width,
        height: hvi.height,
        h,
        s,
        v,
    })
}

pub fn rgb_to_hvi(img: &RgbImage, p: &HviParams) -> Result<HviImage> {
    hvt(&rgb_to_hsv(img), p)
}

pub fn hvi_to_rgb(hvi: &HviImage, p: &HviParams) -> Result<RgbImage> {
    Ok(hsv_to_rgb(&phvit(hvi, p)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(px: [f64; 3]) -> RgbImage {
        RgbImage::new(1, 1, vec![px[0]], vec![px[1]], vec![px[2]]).unwrap()
    }

    #[test]
    fn hsv_of_primaries_and_grays() {
        assert_eq!(rgb_to_hsv_pixel([1.0, 1.0, 1.0]), [0.0, 0.0, 1.0]);
        assert_eq!(rgb_to_hsv_pixel([1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv_pixel([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let [h, s, v] = rgb_to_hsv_pixel([0.0, 1.0, 0.0]);
        assert!((h - 1.0 / 3.0).abs() < 1e-15 && s == 1.0 && v == 1.0);
    }

    #[test]
    fn rejects_out_of_range_rgb() {
        assert!(matches!(
            RgbImage::new(1, 1, vec![1.2], vec![0.0], vec![0.0]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            RgbImage::new(1, 1, vec![f64::NAN], vec![0.0], vec![0.0]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn hsv_to_rgb_cases() {
        assert_eq!(hsv_to_rgb_pixel([0.0, 0.0, 0.7]), [0.7, 0.7, 0.7]);
        assert_eq!(hsv_to_rgb_pixel([0.0, 1.0, 1.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn hvt_of_black_red_green() {
        let p = HviParams::default();
        let black = rgb_to_hvi(&one([0.0, 0.0, 0.0]), &p).unwrap();
        assert_eq!((black.hhat[0], black.vhat[0]), (0.0, 0.0));
        assert!((collapse(0.0, 1.0, 1e-8) - 1e-4).abs() < 1e-18);

        let red = rgb_to_hvi(&one([1.0, 0.0, 0.0]), &p).unwrap();
        assert!((red.hhat[0] - 1.0).abs() < 1e-8 && red.vhat[0].abs() < 1e-15);

        let green = rgb_to_hvi(&one([0.0, 1.0, 0.0]), &p).unwrap();
        assert!((green.hhat[0] + 0.5).abs() < 1e-6);
        assert!((green.vhat[0] - 0.866_025_4).abs() < 1e-6);
    }

    #[test]
    fn grayscale_has_no_chroma() {
        let img = RgbImage::from_fn(4, 3, |x, y| {
            let v = (x + 4 * y) as f64 / 11.0;
            [v, v, v]
        })
        .unwrap();
        let hvi = rgb_to_hvi(&img, &HviParams::default()).unwrap();
        assert!(hvi.hhat.iter().chain(&hvi.vhat).all(|&c| c == 0.0));
        assert_eq!(hvi.imax, img.r());
    }

    #[test]
    fn phvit_zero_chroma_and_antipodes() {
        let p = HviParams::default();
        let hvi = HviImage {
            width: 2,
            height: 1,
            hhat: vec![0.0, 0.3],
            vhat: vec![0.0, 0.2],
            imax: vec![0.5, 0.9],
            k: 1.0,
            eps: 1e-8,
        };
        let a = phvit(&hvi, &p).unwrap();
        assert_eq!((a.h[0], a.s[0]), (0.0, 0.0));

        let mut neg = hvi.clone();
        neg.hhat[1] = -0.3;
        neg.vhat[1] = -0.2;
        let b = phvit(&neg, &p).unwrap();
        let shift = (b.h[1] - a.h[1]).rem_euclid(1.0);
        assert!((shift - 0.5).abs() < 1e-12);
        assert_eq!(a.s[1], b.s[1]);
    }

    #[test]
    fn red_survives_round_trip() {
        let p = HviParams::default();
        let hvi = rgb_to_hvi(&one([1.0, 0.0, 0.0]), &p).unwrap();
        let hsv = phvit(&hvi, &p).unwrap();
        assert!(hsv.h[0] < 1e-5 || hsv.h[0] > 1.0 - 1e-5);
        assert!((hsv.s[0] - 1.0).abs() < 1e-5 && (hsv.v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_i_halves_value_and_keeps_hue() {
        let img = one([0.6, 0.3, 0.1]);
        let base = HviParams::default();
        let hvi = rgb_to_hvi(&img, &base).unwrap();
        let id = phvit(&hvi, &base).unwrap();
        let half = phvit(
            &hvi,
            &HviParams {
                alpha_i: 0.5,
                ..base
            },
        )
        .unwrap();
        assert!((half.v[0] - 0.5 * id.v[0]).abs() < 1e-15);
        assert_eq!(half.h[0], id.h[0]);
    }

    #[test]
    fn params_validation() {
        for bad in [
            HviParams { k: 0.0, ..Default::default() },
            HviParams { eps: -1.0, ..Default::default() },
            HviParams { alpha_s: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn sidecar_round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = sidecar_path(dir.path().join("x.vcrt"));
        assert!(path.to_string_lossy().ends_with("x.vcrt.params"));
        let p = HviParams {
            k: 1.3,
            eps: 1e-8,
            alpha_s: 0.9,
            alpha_i: 2.0,
        };
        p.write_sidecar(&path).unwrap();
        assert_eq!(HviParams::read_sidecar(&path).unwrap(), p);
        let err = HviParams::read_sidecar(dir.path().join("nope.params")).unwrap_err();
        assert!(err.to_string().contains("nope.params"));
    }
}
