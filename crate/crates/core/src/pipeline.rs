//! End-to-end loss evaluation for a prediction/reference image pair.

use crate::caa::{caa_forward, vcf_loss_with_grad, CaaConfig, CaaWeights};
use crate::colorspace::{rgb_to_hvi, HviParams, RgbImage};
use crate::error::{Error, Result};
use crate::features::{lift_streams, to_channels_first};
use crate::losses::{cda_loss, rec_loss, Enhancer, LossBundle, LossWeights};

#[derive(Debug, Clone)]
pub struct LossSetup {
    pub hvi: HviParams,
    pub caa: CaaConfig,
    pub weights: LossWeights,
    pub tau: f64,
}

impl Default for LossSetup {
    fn default() -> Self {
        LossSetup {
            hvi: HviParams::default(),
            caa: CaaConfig::default(),
            weights: LossWeights::default(),
            tau: crate::losses::DEFAULT_TAU,
        }
    }
}

/// Computes every loss term for `pred` against `gt`.
///
/// Both images go to HVI and through the feature lift and channel
/// adjustment; the prediction's chroma stream then passes the enhancer.
/// The VCF term is taken from the prediction's layer reports, the CDA term
/// compares the prediction's chroma features with the reference's.
pub fn evaluate_losses(
    pred: &RgbImage,
    gt: &RgbImage,
    setup: &LossSetup,
    caa_weights: &CaaWeights,
    enhancer: &dyn Enhancer,
) -> Result<LossBundle> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    setup.weights.validate()?;
    let hvi_pred = rgb_to_hvi(pred, &setup.hvi)?;
    let hvi_gt = rgb_to_hvi(gt, &setup.hvi)?;
    let rec = rec_loss(pred, gt, &hvi_pred, &hvi_gt, setup.weights.lambda_hvi)?;

    let (pi, phv) = lift_streams(&hvi_pred)?;
    let (gi, ghv) = lift_streams(&hvi_gt)?;
    let out_pred = caa_forward(&pi, &phv, &setup.caa, caa_weights)?;
    let out_gt = caa_forward(&gi, &ghv, &setup.caa, caa_weights)?;
    let vcf = vcf_loss_with_grad(&out_pred.vcf_layers())?;

    let (_, enhanced_hv) = enhancer.enhance(&out_pred.f_i, &out_pred.f_hv)?;
    let cda = cda_loss(
        &to_channels_first(&enhanced_hv)?,
        &to_channels_first(&out_gt.f_hv)?,
        setup.tau,
    )?;

    let mut bundle = LossBundle::new(rec.value, vcf.loss, cda.value, &setup.weights);
    bundle.grads.insert("rec.rgb".into(), rec.grad_rgb);
    bundle.grads.insert("rec.hvi".into(), rec.grad_hvi);
    for (x, (gi, gh)) in vcf.grads.into_iter().enumerate() {
        bundle.grads.insert(format!("vcf.layer{}.f_i", x + 1), gi);
        bundle.grads.insert(format!("vcf.layer{}.f_hv", x + 1), gh);
    }
    bundle.grads.insert("cda.f_hv".into(), cda.grad);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::IdentityEnhancer;
    use crate::synth;

    #[test]
    fn identical_pair_has_zero_fidelity_terms() {
        let img = synth::random_rgb(8, 6, 3).unwrap();
        let setup = LossSetup::default();
        let w = CaaWeights::random(&setup.caa, 42).unwrap();
        let b = evaluate_losses(&img, &img, &setup, &w, &IdentityEnhancer).unwrap();
        assert_eq!(b.l_rec, 0.0);
        assert!(b.l_cda.abs() < 1e-12);
        assert!(b.l_vcf > 0.0);
        assert!((b.l_total - (b.l_rec + 0.5 * b.l_vcf + 0.5 * b.l_cda)).abs() < 1e-12);
    }

    #[test]
    fn warmup_keeps_reconstruction_only() {
        let a = synth::random_rgb(8, 6, 3).unwrap();
        let b = synth::random_rgb(8, 6, 4).unwrap();
        let mut setup = LossSetup::default();
        setup.weights.warmup = true;
        let w = CaaWeights::random(&setup.caa, 42).unwrap();
        let l = evaluate_losses(&a, &b, &setup, &w, &IdentityEnhancer).unwrap();
        assert!(l.l_vcf > 0.0 && l.l_cda > 0.0);
        assert_eq!(l.l_total, l.l_rec);
    }

    #[test]
    fn size_mismatch() {
        let setup = LossSetup::default();
        let w = CaaWeights::zeros(&setup.caa).unwrap();
        let a = synth::random_rgb(8, 6, 3).unwrap();
        let b = synth::random_rgb(6, 8, 3).unwrap();
        assert!(matches!(
            evaluate_losses(&a, &b, &setup, &w, &IdentityEnhancer),
            Err(Error::Shape(_))
        ));
    }
}
