//! NIQE: a multivariate Gaussian over patch NSS features, compared to an
//! image's own patch statistics by a Mahalanobis-type distance.
//!
//! Model file layout (little-endian): magic `VCRQ`, u32 dimension `d`,
//! `d` f64 means, then the `d x d` covariance in row-major order.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::filter::downsample_half;
use super::nss::{mscn_map, nss_features, BRISQUE_LEN, FEATURES_PER_SCALE};
use crate::colorspace::GrayImage;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"VCRQ";
pub const PATCH_SIZE: usize = 96;
pub const SHARPNESS_THRESHOLD: f64 = 0.75;
pub const MIN_PATCHES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub patch_size: usize,
    pub sharpness_threshold: f64,
}

/// Patch features of one image: the per-patch 36-vectors retained after
/// sharpness selection.
pub fn patch_features(img: &GrayImage, patch: usize, threshold: f64) -> Result<Vec<[f64; BRISQUE_LEN]>> {
    if patch < 16 || !patch.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size must be even and >= 16, got {patch}")));
    }
    let (cols, rows) = (img.width() / patch, img.height() / patch);
    if cols * rows < MIN_PATCHES {
        return Err(Error::Validation(format!(
            "NIQE needs at least {MIN_PATCHES} patches of {patch}x{patch}, image is {}x{}",
            img.width(),
            img.height()
        )));
    }
    let fine = mscn_map(img)?;
    let coarse = mscn_map(&downsample_half(img))?;
    let half = patch / 2;

    let mut sharpness = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let s = fine.sigma.crop(c * patch, r * patch, patch, patch);
            sharpness.push(s.data().iter().sum::<f64>() / s.data().len() as f64);
        }
    }
    let peak = sharpness.iter().copied().fold(0.0, f64::max);

    let mut feats = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if peak > 0.0 && sharpness[r * cols + c] < threshold * peak {
                continue;
            }
            let f1 = nss_features(&fine.coeffs.crop(c * patch, r * patch, patch, patch));
            let f2 = nss_features(&coarse.coeffs.crop(c * half, r * half, half, half));
            match (f1, f2) {
                (Ok(a), Ok(b)) => {
                    let mut v = [0.0; BRISQUE_LEN];
                    v[..FEATURES_PER_SCALE].copy_from_slice(&a);
                    v[FEATURES_PER_SCALE..].copy_from_slice(&b);
                    feats.push(v);
                }
                (Err(e), _) | (_, Err(e)) => {
                    log::debug!("skipping patch ({c}, {r}): {e}");
                }
            }
        }
    }
    if feats.is_empty() {
        return Err(Error::Numeric("no usable NIQE patches".into()));
    }
    Ok(feats)
}

fn mean_cov(rows: &[[f64; BRISQUE_LEN]]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = BRISQUE_LEN;
    let mut mu = DVector::zeros(d);
    for r in rows {
        mu += DVector::from_row_slice(r);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for r in rows {
            let c = DVector::from_row_slice(r) - &mu;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    (mu, cov)
}

/// Symmetric pseudo-inverse; singular values below `1e-10 · σ_max` are
/// treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    svd.pseudo_inverse(smax * 1e-10)
        .expect("u and v were computed")
}

/// `sqrt(dᵀ ((Σ_a + Σ_b)/2)⁺ d)` with `d = f − μ`.
pub fn mahalanobis(f: &DVector<f64>, mu: &DVector<f64>, sigma_a: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> f64 {
    let d = f - mu;
    let pooled = (sigma_a + sigma_b) * 0.5;
    let q = (d.transpose() * pseudo_inverse(&pooled) * &d)[(0, 0)];
    q.max(0.0).sqrt()
}

impl NiqeModel {
    /// Fits the pristine model from the sharp patches of every image.
    pub fn fit(images: &[GrayImage]) -> Result<Self> {
        Self::fit_with(images, PATCH_SIZE, SHARPNESS_THRESHOLD)
    }

    pub fn fit_with(images: &[GrayImage], patch: usize, threshold: f64) -> Result<Self> {
        let mut rows = Vec::new();
        for img in images {
            rows.extend(patch_features(img, patch, threshold)?);
        }
        if rows.len() < 2 {
            return Err(Error::Numeric(format!(
                "NIQE model needs at least 2 patches, got {}",
                rows.len()
            )));
        }
        let (mu, sigma) = mean_cov(&rows);
        log::info!("NIQE model fitted on {} patches", rows.len());
        Ok(NiqeModel {
            mu,
            sigma,
            patch_size: patch,
            sharpness_threshold: threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Quality score; lower is closer to the pristine statistics.
    pub fn score(&self, img: &GrayImage) -> Result<f64> {
        if self.dim() != BRISQUE_LEN {
            return Err(Error::Shape(format!(
                "model has {} features, expected {BRISQUE_LEN}",
                self.dim()
            )));
        }
        let rows = patch_features(img, self.patch_size, self.sharpness_threshold)?;
        let (f, sigma_img) = mean_cov(&rows);
        Ok(mahalanobis(&f, &self.mu, &self.sigma, &sigma_img))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut buf = Vec::with_capacity(8 + 8 * d * (d + 1));
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.mu.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for r in 0..d {
            for c in 0..d {
                buf.extend_from_slice(&self.sigma[(r, c)].to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err("bad magic, expected VCRQ".into());
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let need = 8 + 8 * (d + d * d);
        if bytes.len() != need {
            return Err(format!("expected {need} bytes for d={d}, got {}", bytes.len()));
        }
        let vals: Vec<f64> = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(NiqeModel {
            mu: DVector::from_row_slice(&vals[..d]),
            sigma: DMatrix::from_row_slice(d, d, &vals[d..]),
            patch_size: PATCH_SIZE,
            sharpness_threshold: SHARPNESS_THRESHOLD,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Validation(format!(
                "NIQE model file {} not found",
                path.display()
            )));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|r| Error::format(path, r))
    }
}
