//! Image-quality metrics. Full-reference: PSNR and SSIM. No-reference:
//! NIQE and BRISQUE features. Colour inputs are reduced to luma for
//! everything except PSNR.

mod filter;
mod fullref;
mod niqe;
mod nss;

pub use filter::{downsample_half, filter_same, filter_valid, gaussian_kernel};
pub use fullref::{psnr, psnr_rgb, ssim, SsimParams};
pub use niqe::{
    mahalanobis, patch_features, pseudo_inverse, NiqeModel, MIN_PATCHES, MODEL_MAGIC, PATCH_SIZE,
    SHARPNESS_THRESHOLD,
};
pub use nss::{
    aggd_fit, brisque_features, gg_ratio, mscn, mscn_map, nss_features, paired_products, AggdFit,
    BrisqueRegressor, MscnMap, AGGD_MIN_SAMPLES, AGGD_SHAPE_MAX, AGGD_SHAPE_MIN, BRISQUE_LEN,
    BRISQUE_MIN_SIZE, FEATURES_PER_SCALE, PAIR_OFFSETS,
};

use crate::colorspace::RgbImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub niqe: Option<f64>,
    /// `None` for images below the minimum size or where the NSS fit is
    /// undefined, e.g. flat images.
    pub brisque: Option<[f64; BRISQUE_LEN]>,
    pub brisque_score: Option<f64>,
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    /// Tab-separated `path psnr ssim niqe f1..f36`; missing values are `-`.
    pub fn row(&self, path: &str) -> String {
        let mut cols = vec![
            path.to_string(),
            format_psnr(self.psnr),
            format!("{:.9}", self.ssim),
            self.niqe.map_or("-".to_string(), |v| format!("{v:.6}")),
        ];
        match &self.brisque {
            Some(f) => cols.extend(f.iter().map(|v| format!("{v:.6}"))),
            None => cols.extend(std::iter::repeat_n("-".to_string(), BRISQUE_LEN)),
        }
        if let Some(s) = self.brisque_score {
            cols.push(format!("{s:.6}"));
        }
        cols.join("\t")
    }
}

/// All metrics for a prediction/reference pair. `sample_max` and
/// `dynamic_range` are as in [`psnr_rgb`].
pub fn evaluate_pair(
    pred: &RgbImage,
    gt: &RgbImage,
    sample_max: f64,
    dynamic_range: f64,
    niqe_model: Option<&NiqeModel>,
    regressor: Option<&BrisqueRegressor>,
) -> Result<MetricReport> {
    let psnr = psnr_rgb(pred, gt, sample_max, dynamic_range)?;
    let (gp, gg) = (pred.luma(), gt.luma());
    let ssim = ssim(&gp, &gg, &SsimParams::for_range(1.0))?;
    let too_small = gp.width() < BRISQUE_MIN_SIZE || gp.height() < BRISQUE_MIN_SIZE;
    let brisque = match brisque_features(&gp) {
        Ok(f) => Some(f),
        Err(_) if too_small => {
            log::warn!("BRISQUE features need at least {BRISQUE_MIN_SIZE}x{BRISQUE_MIN_SIZE} pixels");
            None
        }
        Err(Error::Numeric(e)) => {
            log::warn!("BRISQUE features unavailable: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let niqe = niqe_model.map(|m| m.score(&gp)).transpose()?;
    Ok(MetricReport {
        psnr,
        ssim,
        niqe,
        brisque,
        brisque_score: regressor.zip(brisque.as_ref()).map(|(r, f)| r.score(f)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_layout() {
        let r = MetricReport {
            psnr: f64::INFINITY,
            ssim: 1.0,
            niqe: None,
            brisque: Some([0.5; BRISQUE_LEN]),
            brisque_score: None,
        };
        let row = r.row("a.png");
        let cols: Vec<_> = row.split('\t').collect();
        assert_eq!(cols.len(), 4 + BRISQUE_LEN);
        assert_eq!(&cols[..4], &["a.png", "inf", "1.000000000", "-"]);
        let flat = MetricReport { brisque: None, ..r };
        assert!(flat.row("b.png").split('\t').skip(4).all(|c| c == "-"));
    }

    #[test]
    fn flat_pair_still_scores() {
        let a = RgbImage::from_fn(80, 80, |_, _| [0.2; 3]).unwrap();
        let b = RgbImage::from_fn(80, 80, |_, _| [0.7; 3]).unwrap();
        let r = evaluate_pair(&a, &b, 1.0, 1.0, None, None).unwrap();
        assert!((r.psnr - 6.0206).abs() < 1e-3);
        assert!(r.brisque.is_none());
    }
}
