//! Invariant suite run by `vcr selfcheck`: round trips, algebraic
//! identities, gradient checks and comparisons against naive loop oracles.
//! Each check reports the measured error next to its tolerance.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::caa::{self, build_mask, mask_count, second_moment, tce, vcf_loss_with_grad, Matrix, TceWeights, VcfLayer};
use crate::colorspace::{collapse, hsv_to_rgb_pixel, hvi_to_rgb, rgb_to_hsv_pixel, rgb_to_hvi, GrayImage, HviParams, RgbImage};
use crate::error::Result;
use crate::gradcheck::{central_differences, max_relative_error};
use crate::iqa::{aggd_fit, psnr, ssim, SsimParams};
use crate::losses::{cda_loss, rec_loss_tensors, total_loss, LossWeights};
use crate::synth;
use crate::tensor::{inverse_permutation, softmax_temp, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Wall time of the check, or of the group it was computed in.
    pub elapsed: Duration,
}

impl Check {
    fn below(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Check {
            name,
            measured,
            tolerance,
            passed: measured.is_finite() && measured < tolerance,
            elapsed: Duration::ZERO,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<28} measured={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

pub type VarianceMapFn = fn(&Matrix, &Matrix) -> Result<Matrix>;

/// Implementations under test. Swapping one out lets a harness confirm the
/// suite notices a broken operator.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub variance_map: VarianceMapFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks {
            variance_map: caa::variance_map,
        }
    }
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).expect("valid shape")
}

fn random_symmetric(rng: &mut impl Rng, c: usize) -> Matrix {
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let v = rng.random_range(-2.0..2.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn hvi_round_trip(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let (mut r, mut g, mut b) = (Vec::new(), Vec::new(), Vec::new());
    while r.len() < 10_000 {
        let px: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        if px.iter().copied().fold(0.0, f64::max) > 1e-4 {
            r.push(px[0]);
            g.push(px[1]);
            b.push(px[2]);
        }
    }
    let img = RgbImage::new(100, 100, r, g, b)?;
    let p = HviParams::default();
    let back = hvi_to_rgb(&rgb_to_hvi(&img, &p)?, &p)?;
    Ok(Check::below("hvi_round_trip", back.max_abs_diff(&img), 1e-5))
}

fn hsv_round_trip(seed: u64) -> Check {
    let mut rng = synth::rng(seed);
    let err = (0..10_000)
        .map(|_| {
            let px: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let back = hsv_to_rgb_pixel(rgb_to_hsv_pixel(px));
            (0..3).map(|c| (back[c] - px[c]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Check::below("hsv_round_trip", err, 1e-9)
}

fn chroma_magnitude(seed: u64) -> Result<Check> {
    let img = synth::random_rgb(50, 40, seed)?;
    let p = HviParams { k: 1.7, ..Default::default() };
    let hvi = rgb_to_hvi(&img, &p)?;
    let mut err: f64 = 0.0;
    for i in 0..img.len() {
        let [_, s, v] = rgb_to_hsv_pixel(img.pixel(i));
        let want = collapse(v, p.k, p.eps) * s;
        err = err.max((hvi.hhat[i].hypot(hvi.vhat[i]) - want).abs());
    }
    Ok(Check::below("chroma_magnitude", err, 1e-9))
}

fn variance_identity(seed: u64, hooks: &Hooks) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..1000 {
        let c = rng.random_range(1..=8);
        let a = random_symmetric(&mut rng, c);
        let b = random_symmetric(&mut rng, c);
        let cov = (hooks.variance_map)(&a, &b)?;
        for i in 0..c {
            for j in 0..c {
                let want = 0.25 * (a[(i, j)] - b[(i, j)]).powi(2);
                err = err.max((cov[(i, j)] - want).abs());
            }
        }
    }
    Ok(Check::below("variance_map_identity", err, 1e-12))
}

fn mask_contract(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut violations = 0usize;
    for c in 2..=16usize {
        let cov = random_symmetric(&mut rng, c).map(|v| v * v);
        let m = build_mask(&cov, 1.0 / 3.0)?;
        let t = c * (c - 1) / 2;
        let pop = m.iter().filter(|&&v| v != 0.0).count();
        let lower = (0..c).flat_map(|i| (0..=i).map(move |j| (i, j))).any(|(i, j)| m[(i, j)] != 0.0);
        if pop != t.div_ceil(3) || pop != mask_count(c, 1.0 / 3.0) || lower {
            violations += 1;
        }
    }
    Ok(Check::below("mask_contract", violations as f64, 0.5))
}

fn permute_oracle(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let shape = [rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5)];
        let t = uniform_tensor(&mut rng, &shape, -1.0, 1.0);
        let mut axes = [0usize, 1, 2];
        for i in (1..3).rev() {
            axes.swap(i, rng.random_range(0..=i));
        }
        let p = t.permute(&axes)?;
        for i0 in 0..shape[0] {
            for i1 in 0..shape[1] {
                for i2 in 0..shape[2] {
                    let idx = [i0, i1, i2];
                    let out = [idx[axes[0]], idx[axes[1]], idx[axes[2]]];
                    if p.at(&out) != t.at(&idx) {
                        mismatches += 1;
                    }
                }
            }
        }
        if p.permute(&inverse_permutation(&axes))? != t {
            mismatches += 1;
        }
    }
    Ok(Check::below("permute_oracle", mismatches as f64, 0.5))
}

fn conv_oracle(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..3));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
        let x = uniform_tensor(&mut rng, &[cin, h, w], -1.0, 1.0);
        let ker = uniform_tensor(&mut rng, &[cout, cin, k, k], -1.0, 1.0);
        let got = x.conv2d(&ker)?;
        let pad = (k / 2) as isize;
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += ker.at(&[co, ci, ky, kx]) * x.at(&[ci, sy as usize, sx as usize]);
                                }
                            }
                        }
                    }
                    err = err.max((got.at(&[co, y, xx]) - acc).abs());
                }
            }
        }
    }
    Ok(Check::below("conv2d_oracle", err, 1e-12))
}

fn second_moment_oracle(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let shape = [rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..5)];
        let f = uniform_tensor(&mut rng, &shape, -1.0, 1.0);
        let d = second_moment(&f)?;
        let n = (shape[0] * shape[1]) as f64;
        for i in 0..shape[2] {
            for j in 0..shape[2] {
                let mut acc = 0.0;
                for y in 0..shape[0] {
                    for x in 0..shape[1] {
                        acc += f.at(&[y, x, i]) * f.at(&[y, x, j]);
                    }
                }
                err = err.max((d[(i, j)] - acc / n).abs());
            }
        }
    }
    Ok(Check::below("second_moment_oracle", err, 1e-12))
}

fn tce_zero_kernel(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..20 {
        let shape = [rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..9)];
        let f = uniform_tensor(&mut rng, &shape, -3.0, 3.0);
        let out = tce(&f, &TceWeights::zeros(7)?, 1e-5)?;
        err = err.max(out.max_abs_diff(&f.scale(1.5)));
    }
    Ok(Check::below("tce_zero_kernel", err, 1e-12))
}

fn vcf_gradient(seed: u64, hooks: &Hooks) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let f_i = uniform_tensor(&mut rng, &[4, 3, 3], -1.0, 1.0);
    let f_hv = uniform_tensor(&mut rng, &[4, 3, 3], -1.0, 1.0);
    let cov = (hooks.variance_map)(&second_moment(&f_i)?, &second_moment(&f_hv)?)?;
    let mask = build_mask(&cov, 1.0 / 3.0)?;
    let layer = |a: &[f64], b: &[f64]| VcfLayer {
        f_i: Tensor::new(vec![4, 3, 3], a.to_vec()).expect("shape"),
        f_hv: Tensor::new(vec![4, 3, 3], b.to_vec()).expect("shape"),
        mask: mask.clone(),
    };
    let g = vcf_loss_with_grad(&[layer(f_i.data(), f_hv.data())])?;
    let mut point = f_i.data().to_vec();
    point.extend_from_slice(f_hv.data());
    let split = f_i.len();
    let numeric = central_differences(
        |v| {
            vcf_loss_with_grad(&[layer(&v[..split], &v[split..])])
                .map(|g| g.loss)
                .unwrap_or(f64::NAN)
        },
        &point,
        GRAD_STEP,
    );
    let mut analytic = g.grads[0].0.data().to_vec();
    analytic.extend_from_slice(g.grads[0].1.data());
    Ok(Check::below("vcf_gradient", max_relative_error(&analytic, &numeric), GRAD_TOL))
}

fn cda_gradient(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let pred = uniform_tensor(&mut rng, &[4, 3, 3], -1.0, 1.0);
    let gt = uniform_tensor(&mut rng, &[4, 3, 3], -1.0, 1.0);
    let tau = 0.7;
    let g = cda_loss(&pred, &gt, tau)?;
    let numeric = central_differences(
        |v| {
            let p = Tensor::new(vec![4, 3, 3], v.to_vec()).expect("shape");
            cda_loss(&p, &gt, tau).map(|l| l.value).unwrap_or(f64::NAN)
        },
        pred.data(),
        GRAD_STEP,
    );
    Ok(Check::below("cda_gradient", max_relative_error(g.grad.data(), &numeric), GRAD_TOL))
}

fn rec_gradient(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let shape = [4, 3, 3];
    let gt_rgb = uniform_tensor(&mut rng, &shape, 0.0, 1.0);
    let gt_hvi = uniform_tensor(&mut rng, &shape, -1.0, 1.0);
    // Offsets of at least 1e-2 keep every sample away from the |·| kink.
    let away = |rng: &mut synth::ChaRng, gt: &Tensor| {
        let data = gt
            .data()
            .iter()
            .map(|&v| {
                let d: f64 = rng.random_range(0.01..0.3);
                if rng.random::<bool>() { v + d } else { v - d }
            })
            .collect();
        Tensor::new(gt.shape().to_vec(), data).expect("shape")
    };
    let out_rgb = away(&mut rng, &gt_rgb);
    let out_hvi = away(&mut rng, &gt_hvi);
    let lambda = 1.0;
    let g = rec_loss_tensors(&out_rgb, &gt_rgb, &out_hvi, &gt_hvi, lambda)?;
    let mut point = out_rgb.data().to_vec();
    point.extend_from_slice(out_hvi.data());
    let split = out_rgb.len();
    let numeric = central_differences(
        |v| {
            let a = Tensor::new(shape.to_vec(), v[..split].to_vec()).expect("shape");
            let b = Tensor::new(shape.to_vec(), v[split..].to_vec()).expect("shape");
            rec_loss_tensors(&a, &gt_rgb, &b, &gt_hvi, lambda)
                .map(|l| l.value)
                .unwrap_or(f64::NAN)
        },
        &point,
        GRAD_STEP,
    );
    let mut analytic = g.grad_rgb.data().to_vec();
    analytic.extend_from_slice(g.grad_hvi.data());
    Ok(Check::below("rec_gradient", max_relative_error(&analytic, &numeric), GRAD_TOL))
}

fn cda_properties(seed: u64) -> Result<Vec<Check>> {
    let mut rng = synth::rng(seed);
    let mut min: f64 = f64::INFINITY;
    let mut self_max: f64 = 0.0;
    let mut shift_max: f64 = 0.0;
    for _ in 0..1000 {
        let shape = [2 * rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4)];
        let a = uniform_tensor(&mut rng, &shape, -3.0, 3.0);
        let b = uniform_tensor(&mut rng, &shape, -3.0, 3.0);
        min = min.min(cda_loss(&a, &b, 1.0)?.value);
        self_max = self_max.max(cda_loss(&a, &a, 1.0)?.value.abs());
        let c: f64 = rng.random_range(-10.0..10.0);
        shift_max = shift_max.max(cda_loss(&a.map(|v| v + c), &a, 1.0)?.value.abs());
    }
    let pred = Tensor::new(vec![2, 1, 2], vec![0.0, 3f64.ln(), 0.0, 3f64.ln()])?;
    let bern = cda_loss(&pred, &Tensor::zeros(&[2, 1, 2])?, 1.0)?.value;
    Ok(vec![
        Check::below("cda_nonnegative", (-min).max(0.0), 1e-12),
        Check::below("cda_self_zero", self_max, 1e-12),
        Check::below("cda_shift_invariance", shift_max, 1e-12),
        Check::below("cda_bernoulli_fixture", (bern - 0.261624).abs(), 1e-5),
    ])
}

fn softmax_overflow(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1e6..1e6)).collect();
        let p = softmax_temp(&v, rng.random_range(0.1..10.0))?;
        err = err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(Check::below("softmax_overflow", err, 1e-9))
}

fn metric_sanity(seed: u64) -> Result<Vec<Check>> {
    let gt = GrayImage::new(16, 16, vec![0.0; 256])?;
    let out = GrayImage::new(16, 16, vec![0.5; 256])?;
    let db = psnr(&out, &gt, 1.0)?;
    let mut rng = synth::rng(seed);
    let x = GrayImage::from_fn(32, 32, |_, _| rng.random())?;
    let y = GrayImage::from_fn(32, 32, |_, _| rng.random())?;
    let p = SsimParams::default();
    Ok(vec![
        Check::below("psnr_closed_form", (db - 6.0206).abs(), 1e-3),
        Check::below("ssim_identity", (ssim(&x, &x, &p)? - 1.0).abs(), 1e-9),
        Check::below("ssim_symmetry", (ssim(&x, &y, &p)? - ssim(&y, &x, &p)?).abs(), 1e-9),
    ])
}

fn aggd_recovery(seed: u64) -> Result<Check> {
    let mut rng = synth::rng(seed);
    let mut worst: f64 = 0.0;
    for &shape in &[0.8, 1.0, 2.0, 3.0] {
        let (sl, sr) = (0.8, 1.3);
        let s = synth::aggd_samples(&mut rng, shape, sl, sr, 100_000);
        let fit = aggd_fit(&s)?;
        worst = worst
            .max((fit.shape - shape).abs() / shape)
            .max((fit.sigma_l - sl).abs() / sl)
            .max((fit.sigma_r - sr).abs() / sr);
    }
    Ok(Check::below("aggd_recovery", worst, 0.1))
}

fn loss_schedule() -> Check {
    let w = LossWeights::default();
    let warm = LossWeights { warmup: true, ..w };
    let defaults_ok = w.lambda_hvi == 1.0 && w.lambda_vcf == 0.5 && w.lambda_cda == 0.5;
    let warm_ok = total_loss(0.3, 2.0, 4.0, &warm) == 0.3;
    let sum_ok = total_loss(1.0, 2.0, 4.0, &w) == 4.0;
    Check::below("loss_schedule", if defaults_ok && warm_ok && sum_ok { 0.0 } else { 1.0 }, 0.5)
}

/// Runs every check with the production implementations.
pub fn run(seed: u64) -> Result<Vec<Check>> {
    run_with(seed, &Hooks::default())
}

fn timed(f: impl FnOnce() -> Result<Vec<Check>>) -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut checks = f()?;
    let elapsed = start.elapsed();
    for c in &mut checks {
        c.elapsed = elapsed;
    }
    Ok(checks)
}

pub fn run_with(seed: u64, hooks: &Hooks) -> Result<Vec<Check>> {
    let s = |k: u64| seed.wrapping_add(k);
    let one = |c: Check| Ok(vec![c]);
    let groups: Vec<Box<dyn Fn() -> Result<Vec<Check>>>> = vec![
        Box::new(|| one(hvi_round_trip(seed)?)),
        Box::new(|| one(hsv_round_trip(s(1)))),
        Box::new(|| one(chroma_magnitude(s(2))?)),
        Box::new(|| one(variance_identity(s(3), hooks)?)),
        Box::new(|| one(mask_contract(s(4))?)),
        Box::new(|| one(permute_oracle(s(5))?)),
        Box::new(|| one(conv_oracle(s(6))?)),
        Box::new(|| one(second_moment_oracle(s(7))?)),
        Box::new(|| one(tce_zero_kernel(s(8))?)),
        Box::new(|| one(vcf_gradient(s(9), hooks)?)),
        Box::new(|| one(cda_gradient(s(10))?)),
        Box::new(|| one(rec_gradient(s(11))?)),
        Box::new(|| one(softmax_overflow(s(12))?)),
        Box::new(|| one(aggd_recovery(s(13))?)),
        Box::new(|| one(loss_schedule())),
        Box::new(|| cda_properties(s(14))),
        Box::new(|| metric_sanity(s(15))),
    ];
    let mut checks = Vec::new();
    for g in groups {
        checks.extend(timed(g)?);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broken_variance_map(a: &Matrix, b: &Matrix) -> Result<Matrix> {
        // Drops the 1/2 in the mean.
        let mu = a + b;
        Ok(a.zip_zip_map(b, &mu, |x, y, m| 0.5 * ((x - m).powi(2) + (y - m).powi(2))))
    }

    #[test]
    fn default_seed_passes() {
        let checks = run(42).unwrap();
        assert!(checks.len() >= 12);
        for c in &checks {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn fault_injection_is_detected() {
        let checks = run_with(
            42,
            &Hooks {
                variance_map: broken_variance_map,
            },
        )
        .unwrap();
        let identity = checks.iter().find(|c| c.name == "variance_map_identity").unwrap();
        assert!(!identity.passed);
    }
}
