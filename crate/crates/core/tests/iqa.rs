use std::path::PathBuf;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use vcr_core::colorspace::GrayImage;
use vcr_core::io::read_image;
use vcr_core::iqa::{
    aggd_fit, brisque_features, mahalanobis, mscn, psnr, ssim, NiqeModel, SsimParams,
};
use vcr_core::synth;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/natural")
}

fn fixtures() -> Vec<GrayImage> {
    let mut paths: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_image(p).unwrap().0.luma()).collect()
}

#[test]
fn niqe_prefers_natural_over_noise() {
    let imgs = fixtures();
    assert!(imgs.len() >= 5);
    let model = NiqeModel::fit(&imgs).unwrap();
    let noise = synth::white_noise(imgs[0].width(), imgs[0].height(), 11).unwrap();
    let noise_score = model.score(&noise).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        let s = model.score(img).unwrap();
        assert!(noise_score > s, "fixture {i}: {s} vs noise {noise_score}");
    }
    assert!(mahalanobis(&model.mu, &model.mu, &model.sigma, &model.sigma) < 1e-9);
}

#[test]
fn niqe_held_out_fixture() {
    let imgs = fixtures();
    let (train, test) = imgs.split_at(imgs.len() - 1);
    let model = NiqeModel::fit(train).unwrap();
    let noise = synth::white_noise(test[0].width(), test[0].height(), 12).unwrap();
    assert!(model.score(&noise).unwrap() > model.score(&test[0]).unwrap());
}

#[test]
fn niqe_small_offset_changes_little() {
    let imgs = fixtures();
    let model = NiqeModel::fit(&imgs).unwrap();
    let img = &imgs[1];
    let shifted = img.map(|v| (v + 0.02).min(1.0));
    let (a, b) = (model.score(img).unwrap(), model.score(&shifted).unwrap());
    assert!((a - b).abs() / a < 0.02, "{a} vs {b}");
}

#[test]
fn metrics_deterministic() {
    let imgs = fixtures();
    let model = NiqeModel::fit(&imgs[..3]).unwrap();
    assert_eq!(brisque_features(&imgs[0]).unwrap(), brisque_features(&imgs[0]).unwrap());
    assert_eq!(model.score(&imgs[4]).unwrap(), model.score(&imgs[4]).unwrap());
}

#[test]
fn mscn_of_natural_image_is_centred() {
    for img in fixtures() {
        let m = mscn(&img).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
    }
}

#[test]
fn brisque_separates_noise_from_natural() {
    let img = &fixtures()[0];
    let noise = synth::white_noise(img.width(), img.height(), 3).unwrap();
    let natural = brisque_features(img).unwrap();
    let noisy = brisque_features(&noise).unwrap();
    // Uniform noise has light tails (large shape); natural MSCN is peaky.
    assert!(noisy[0] - natural[0] > 0.2, "{} vs {}", noisy[0], natural[0]);
}

#[test]
fn aggd_recovers_parameters() {
    let mut rng = synth::rng(2024);
    for &shape in &[0.8, 1.0, 2.0, 3.0] {
        let s = synth::aggd_samples(&mut rng, shape, 0.7, 1.4, 100_000);
        let fit = aggd_fit(&s).unwrap();
        assert!((fit.shape - shape).abs() / shape < 0.1, "shape {} vs {shape}", fit.shape);
        assert!((fit.sigma_l - 0.7).abs() / 0.7 < 0.1);
        assert!((fit.sigma_r - 1.4).abs() / 1.4 < 0.1);
    }
}

#[test]
fn mahalanobis_zero_only_at_mean() {
    let model = NiqeModel::fit(&fixtures()).unwrap();
    let mut f = model.mu.clone();
    f[0] += 1e-3;
    assert!(mahalanobis(&f, &model.mu, &model.sigma, &model.sigma) > 0.0);
    let zero = DVector::zeros(model.dim());
    assert!(mahalanobis(&zero, &model.mu, &model.sigma, &model.sigma) > 0.0);
}

fn plane(seed: u64, w: usize, h: usize) -> GrayImage {
    let mut r = synth::rng(seed);
    GrayImage::from_fn(w, h, |_, _| r.random()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_rescaling(seed in any::<u64>()) {
        let x = plane(seed, 20, 18);
        let y = plane(seed ^ 0xabcdef, 20, 18);
        let a = ssim(&x, &y, &SsimParams::for_range(1.0)).unwrap();
        let b = ssim(&x.map(|v| 2.0 * v), &y.map(|v| 2.0 * v), &SsimParams::for_range(2.0)).unwrap();
        prop_assert!((a - b).abs() < 1e-6);
        prop_assert!((ssim(&x, &x, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_nested_perturbations(
        seed in any::<u64>(),
        steps in prop::collection::vec(0.01..0.2f64, 1..6),
    ) {
        let gt = plane(seed, 8, 8);
        let mut r = synth::rng(seed.wrapping_add(1));
        let dirs: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut scale = 0.0;
        let mut last = f64::INFINITY;
        for s in steps {
            scale += s;
            let out = GrayImage::new(8, 8, gt.data().iter().zip(&dirs).map(|(g, d)| g + scale * d).collect()).unwrap();
            let v = psnr(&out, &gt, 1.0).unwrap();
            prop_assert!(v < last);
            last = v;
        }
    }
}
