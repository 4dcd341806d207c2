//! Training objectives: colour distribution alignment (temperature softmax
//! plus KL), the RGB/HVI reconstruction loss, and their weighted total.
//! Every differentiable loss returns its analytic gradient.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::colorspace::{HviImage, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::{log_softmax_temp, pairwise_sum, Tensor};

pub const DEFAULT_TAU: f64 = 1.0;

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn channel_rows(f: &Tensor) -> Result<(usize, usize)> {
    if f.rank() != 3 {
        return Err(Error::Shape(format!(
            "expected a (2C,H,W) feature map, got {:?}",
            f.shape()
        )));
    }
    Ok((f.shape()[0], f.shape()[1] * f.shape()[2]))
}

/// Per-channel softmax over spatial positions: `(2C, H, W) -> (2C, H·W)`.
pub fn channel_softmax(f: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let (c, n) = channel_rows(f)?;
    let mut data = Vec::with_capacity(c * n);
    for row in f.data().chunks(n) {
        data.extend(log_softmax_temp(row, tau)?.into_iter().map(f64::exp));
    }
    Tensor::new(vec![c, n], data)
}

#[derive(Debug, Clone)]
pub struct CdaLoss {
    pub value: f64,
    /// Gradient with respect to the predicted features, shaped like them.
    pub grad: Tensor,
}

/// Sum over channels of `KL(p_c ‖ q_c)`, `p` from the prediction and `q`
/// from the reference, both temperature softmaxes over positions.
pub fn cda_loss(f_pred: &Tensor, f_gt: &Tensor, tau: f64) -> Result<CdaLoss> {
    check_tau(tau)?;
    if f_pred.shape() != f_gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and reference {:?} differ",
            f_pred.shape(),
            f_gt.shape()
        )));
    }
    let (c, n) = channel_rows(f_pred)?;
    let mut per_channel = Vec::with_capacity(c);
    let mut grad = Vec::with_capacity(c * n);
    for (pred, gt) in f_pred.data().chunks(n).zip(f_gt.data().chunks(n)) {
        let log_p = log_softmax_temp(pred, tau)?;
        let log_q = log_softmax_temp(gt, tau)?;
        let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
        let ratio: Vec<f64> = log_p.iter().zip(&log_q).map(|(a, b)| a - b).collect();
        let terms: Vec<f64> = p.iter().zip(&ratio).map(|(pa, r)| pa * r).collect();
        let kl = pairwise_sum(&terms);
        per_channel.push(kl);
        // dKL/dz_a = p_a (r_a - KL) / tau
        grad.extend(p.iter().zip(&ratio).map(|(pa, r)| pa * (r - kl) / tau));
    }
    Ok(CdaLoss {
        value: pairwise_sum(&per_channel),
        grad: Tensor::new(f_pred.shape().to_vec(), grad)?,
    })
}

#[derive(Debug, Clone)]
pub struct RecLoss {
    pub value: f64,
    pub rgb_term: f64,
    pub hvi_term: f64,
    /// `(3, H, W)` gradient with respect to the output RGB planes.
    pub grad_rgb: Tensor,
    /// `(3, H, W)` gradient with respect to the output HVI planes.
    pub grad_hvi: Tensor,
}

fn mean_l1(out: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    let diff = out.sub(gt)?;
    let n = diff.len() as f64;
    let abs: Vec<f64> = diff.data().iter().map(|v| v.abs()).collect();
    let grad = diff.map(|d| if d == 0.0 { 0.0 } else { d.signum() / n });
    Ok((pairwise_sum(&abs) / n, grad))
}

/// Mean absolute error in RGB plus `lambda_hvi` times mean absolute error
/// over the `(Ĥ, V̂, I_max)` planes. Inputs are `(3, H, W)` tensors.
pub fn rec_loss_tensors(
    out_rgb: &Tensor,
    gt_rgb: &Tensor,
    out_hvi: &Tensor,
    gt_hvi: &Tensor,
    lambda_hvi: f64,
) -> Result<RecLoss> {
    if !(lambda_hvi >= 0.0) {
        return Err(Error::Config(format!("lambda_hvi must be non-negative, got {lambda_hvi}")));
    }
    if out_rgb.shape() != out_hvi.shape() {
        return Err(Error::Shape(format!(
            "RGB {:?} and HVI {:?} planes differ in size",
            out_rgb.shape(),
            out_hvi.shape()
        )));
    }
    let (rgb_term, grad_rgb) = mean_l1(out_rgb, gt_rgb)?;
    let (hvi_term, grad_hvi) = mean_l1(out_hvi, gt_hvi)?;
    Ok(RecLoss {
        value: rgb_term + lambda_hvi * hvi_term,
        rgb_term,
        hvi_term,
        grad_rgb,
        grad_hvi: grad_hvi.scale(lambda_hvi),
    })
}

pub fn rec_loss(
    out_rgb: &RgbImage,
    gt_rgb: &RgbImage,
    out_hvi: &HviImage,
    gt_hvi: &HviImage,
    lambda_hvi: f64,
) -> Result<RecLoss> {
    if (out_rgb.width(), out_rgb.height()) != (gt_rgb.width(), gt_rgb.height()) {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            out_rgb.width(),
            out_rgb.height(),
            gt_rgb.width(),
            gt_rgb.height()
        )));
    }
    rec_loss_tensors(
        &out_rgb.to_tensor(),
        &gt_rgb.to_tensor(),
        &out_hvi.to_tensor(),
        &gt_hvi.to_tensor(),
        lambda_hvi,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_hvi: f64,
    pub lambda_vcf: f64,
    pub lambda_cda: f64,
    /// Reconstruction-only phase: auxiliary weights are treated as zero.
    pub warmup: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_hvi: 1.0,
            lambda_vcf: 0.5,
            lambda_cda: 0.5,
            warmup: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_hvi", self.lambda_hvi),
            ("lambda_vcf", self.lambda_vcf),
            ("lambda_cda", self.lambda_cda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `(lambda_vcf, lambda_cda)` after applying the warm-up switch.
    pub fn effective(&self) -> (f64, f64) {
        if self.warmup {
            (0.0, 0.0)
        } else {
            (self.lambda_vcf, self.lambda_cda)
        }
    }
}

pub fn total_loss(rec: f64, vcf: f64, cda: f64, w: &LossWeights) -> f64 {
    if w.warmup {
        return rec;
    }
    let (lv, lc) = w.effective();
    rec + lv * vcf + lc * cda
}

#[derive(Debug, Clone, Default)]
pub struct LossBundle {
    pub l_rec: f64,
    pub l_vcf: f64,
    pub l_cda: f64,
    pub l_total: f64,
    pub grads: BTreeMap<String, Tensor>,
}

impl LossBundle {
    pub fn new(l_rec: f64, l_vcf: f64, l_cda: f64, w: &LossWeights) -> Self {
        LossBundle {
            l_rec,
            l_vcf,
            l_cda,
            l_total: total_loss(l_rec, l_vcf, l_cda, w),
            grads: BTreeMap::new(),
        }
    }

    /// Single-line `key=value` record. The auxiliary weights are printed as
    /// applied, so a warm-up record shows them as zero.
    pub fn record(&self, tau: f64, w: &LossWeights) -> String {
        let (lambda_vcf, lambda_cda) = w.effective();
        let mut s = String::new();
        let _ = write!(
            s,
            "l_rec={} l_vcf={} l_cda={} l_total={} tau={} lambda_hvi={} lambda_vcf={} lambda_cda={} warmup={}",
            self.l_rec,
            self.l_vcf,
            self.l_cda,
            self.l_total,
            tau,
            w.lambda_hvi,
            lambda_vcf,
            lambda_cda,
            w.warmup
        );
        s
    }
}

/// Stand-in for the enhancement network that sits between channel
/// adjustment and distribution alignment.
pub trait Enhancer {
    fn enhance(&self, f_i: &Tensor, f_hv: &Tensor) -> Result<(Tensor, Tensor)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEnhancer;

impl Enhancer for IdentityEnhancer {
    fn enhance(&self, f_i: &Tensor, f_hv: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((f_i.clone(), f_hv.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows() {
        let f = Tensor::new(vec![2, 1, 2], vec![0.0, 3f64.ln(), 0.4, 0.4]).unwrap();
        let p = channel_softmax(&f, 1.0).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-12 && (p.data()[1] - 0.75).abs() < 1e-12);
        assert_eq!(&p.data()[2..], &[0.5, 0.5]);
        assert!(matches!(channel_softmax(&f, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_flattens_at_high_temperature() {
        let f = Tensor::from_fn(&[1, 3, 3], |i| ((i[1] * 3 + i[2]) as f64 / 8.0) * 2.0 - 1.0).unwrap();
        let p = channel_softmax(&f, 1e4).unwrap();
        let max = p.data().iter().copied().fold(f64::MIN, f64::max);
        let min = p.data().iter().copied().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-3);
    }

    #[test]
    fn cda_bernoulli_fixture() {
        let pred = Tensor::new(vec![2, 1, 2], vec![0.0, 3f64.ln(), 0.0, 3f64.ln()]).unwrap();
        let gt = Tensor::zeros(&[2, 1, 2]).unwrap();
        let l = cda_loss(&pred, &gt, 1.0).unwrap().value;
        let want = 2.0 * (0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln());
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.261624).abs() < 1e-5);
    }

    #[test]
    fn cda_zero_cases_and_errors() {
        let f = Tensor::from_fn(&[2, 2, 3], |i| (i[0] + i[1] * 2 + i[2]) as f64 * 0.37).unwrap();
        assert!(cda_loss(&f, &f, 1.0).unwrap().value.abs() < 1e-12);
        assert!(cda_loss(&f.map(|v| v + 5.0), &f, 1.0).unwrap().value.abs() < 1e-12);
        assert!(cda_loss(&f, &Tensor::zeros(&[2, 3, 2]).unwrap(), 1.0).is_err());
        assert!(cda_loss(&f, &f, -1.0).is_err());
    }

    #[test]
    fn rec_loss_closed_forms() {
        let out = Tensor::full(&[3, 2, 2], 0.5).unwrap();
        let gt = Tensor::zeros(&[3, 2, 2]).unwrap();
        let l = rec_loss_tensors(&out, &gt, &gt, &gt, 0.0).unwrap();
        assert_eq!(l.value, 0.5);
        let same = rec_loss_tensors(&out, &out, &out, &out, 1.0).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad_rgb.data().iter().all(|&g| g == 0.0));

        let one = rec_loss_tensors(&gt, &gt, &out, &gt, 1.0).unwrap();
        let two = rec_loss_tensors(&gt, &gt, &out, &gt, 2.0).unwrap();
        assert_eq!(two.value, 2.0 * one.value);
    }

    #[test]
    fn total_loss_schedule() {
        let w = LossWeights::default();
        assert_eq!((w.lambda_hvi, w.lambda_vcf, w.lambda_cda), (1.0, 0.5, 0.5));
        assert_eq!(total_loss(1.0, 2.0, 4.0, &w), 4.0);
        let warm = LossWeights { warmup: true, ..w };
        assert_eq!(total_loss(1.25, 2.0, 4.0, &warm), 1.25);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn record_echoes_weights() {
        let w = LossWeights::default();
        let rec = LossBundle::new(0.1, 0.2, 0.3, &w).record(1.0, &w);
        assert!(rec.starts_with("l_rec=0.1 l_vcf=0.2 l_cda=0.3 l_total="));
        assert!(rec.contains("lambda_vcf=0.5") && rec.contains("lambda_cda=0.5") && rec.contains("tau=1"));
    }
}
