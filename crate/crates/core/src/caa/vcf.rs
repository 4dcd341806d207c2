//! Variance-aware channel filtering: second-moment matrices of the
//! intensity and chroma streams, their variance map, the masking rule, the
//! masked L1 penalty and the gated residual fusion.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Matrix = DMatrix<f64>;

fn hwc_dims(f: &Tensor) -> Result<(usize, usize)> {
    if f.rank() != 3 {
        return Err(Error::Shape(format!(
            "feature map must be (H,W,C), got {:?}",
            f.shape()
        )));
    }
    Ok((f.shape()[0] * f.shape()[1], f.shape()[2]))
}

/// `FᵀF / (H·W)` for a feature map `F` of shape `(H, W, C)`.
pub fn second_moment(f: &Tensor) -> Result<Matrix> {
    let (n, c) = hwc_dims(f)?;
    let flat = Matrix::from_row_slice(n, c, f.data());
    let mut d = flat.tr_mul(&flat) / n as f64;
    // Symmetrise exactly; the product is symmetric up to rounding only.
    for i in 0..c {
        for j in i + 1..c {
            let v = 0.5 * (d[(i, j)] + d[(j, i)]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Elementwise spread of the two second-moment matrices around their mean.
pub fn variance_map(d_i: &Matrix, d_hv: &Matrix) -> Result<Matrix> {
    if d_i.shape() != d_hv.shape() {
        return Err(Error::Shape(format!(
            "variance_map operands differ: {:?} vs {:?}",
            d_i.shape(),
            d_hv.shape()
        )));
    }
    let mu = (d_i + d_hv) * 0.5;
    Ok(d_i.zip_zip_map(d_hv, &mu, |a, b, m| {
        0.5 * ((a - m) * (a - m) + (b - m) * (b - m))
    }))
}

/// Number of masked entries for `c` channels at the given ratio.
pub fn mask_count(c: usize, ratio: f64) -> usize {
    let total = c * (c - 1) / 2;
    // Guard against products like (1/3)*6 landing a hair above an integer.
    ((ratio * total as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Binary mask selecting the `⌈ratio·T⌉` largest strict-upper-triangle
/// entries of `cov`, ties going to the lexicographically smaller `(i, j)`.
pub fn build_mask(cov: &Matrix, ratio: f64) -> Result<Matrix> {
    let c = cov.nrows();
    if cov.ncols() != c {
        return Err(Error::Shape(format!("mask source must be square, got {:?}", cov.shape())));
    }
    if c < 2 {
        return Err(Error::Config(format!("masking needs at least 2 channels, got {c}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let mut entries: Vec<(usize, usize)> = (0..c)
        .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
        .collect();
    // Stable sort keeps lexicographic order among equal values.
    entries.sort_by(|a, b| cov[*b].total_cmp(&cov[*a]));
    let mut mask = Matrix::zeros(c, c);
    for &(i, j) in entries.iter().take(mask_count(c, ratio)) {
        mask[(i, j)] = 1.0;
    }
    Ok(mask)
}

fn masked_l1(d: &Matrix, mask: &Matrix) -> f64 {
    d.iter().zip(mask.iter()).map(|(v, m)| m * v.abs()).sum()
}

/// Mean over layers of `‖D_I ⊙ M‖₁ + ‖D_hv ⊙ M‖₁`.
pub fn vcf_loss(reports: &[super::CovReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Validation("vcf_loss needs at least one layer report".into()));
    }
    let total: f64 = reports
        .iter()
        .map(|r| masked_l1(&r.d_i, &r.mask) + masked_l1(&r.d_hv, &r.mask))
        .sum();
    Ok(total / reports.len() as f64)
}

/// One layer's inputs to the VCF penalty: the two `(H, W, C)` feature maps
/// whose second moments are penalised, and the (constant) mask.
#[derive(Debug, Clone)]
pub struct VcfLayer {
    pub f_i: Tensor,
    pub f_hv: Tensor,
    pub mask: Matrix,
}

#[derive(Debug, Clone)]
pub struct VcfGradient {
    pub loss: f64,
    /// `(dL/df_i, dL/df_hv)` per layer, shaped like the inputs.
    pub grads: Vec<(Tensor, Tensor)>,
}

// dL/dF for L = Σ M_ij |D_ij|, D = FᵀF/N:  F · (G + Gᵀ) / N with G = M ⊙ sign(D).
fn masked_l1_grad(f: &Tensor, mask: &Matrix, scale: f64) -> Result<(f64, Tensor)> {
    let (n, c) = hwc_dims(f)?;
    if mask.shape() != (c, c) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match {c} channels",
            mask.shape()
        )));
    }
    let d = second_moment(f)?;
    let g = d.zip_map(mask, |v, m| {
        if m == 0.0 || v == 0.0 {
            0.0
        } else {
            m * v.signum()
        }
    });
    let sym = &g + g.transpose();
    let flat = Matrix::from_row_slice(n, c, f.data());
    let grad = flat * sym * (scale / n as f64);
    // nalgebra is column-major; transpose before reading out row-major data.
    let data: Vec<f64> = grad.transpose().iter().copied().collect();
    Ok((masked_l1(&d, mask), Tensor::new(f.shape().to_vec(), data)?))
}

/// VCF loss together with its analytic gradient with respect to every
/// layer's feature maps. The masks are treated as constants.
pub fn vcf_loss_with_grad(layers: &[VcfLayer]) -> Result<VcfGradient> {
    if layers.is_empty() {
        return Err(Error::Validation("vcf_loss needs at least one layer".into()));
    }
    let scale = 1.0 / layers.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    for layer in layers {
        if layer.f_i.shape() != layer.f_hv.shape() {
            return Err(Error::Shape(format!(
                "stream shapes differ: {:?} vs {:?}",
                layer.f_i.shape(),
                layer.f_hv.shape()
            )));
        }
        let (li, gi) = masked_l1_grad(&layer.f_i, &layer.mask, scale)?;
        let (lh, gh) = masked_l1_grad(&layer.f_hv, &layer.mask, scale)?;
        loss += li + lh;
        grads.push((gi, gh));
    }
    Ok(VcfGradient {
        loss: loss * scale,
        grads,
    })
}

/// Per-channel gates from mask involvement: channel `c` is suppressed in
/// proportion to how many masked entries touch row or column `c`.
pub fn channel_gates(mask: &Matrix, strength: f64) -> Vec<f64> {
    let c = mask.nrows();
    let denom = (c.max(2) - 1) as f64;
    (0..c)
        .map(|ch| {
            let involvement = (mask.row(ch).sum() + mask.column(ch).sum()) / denom;
            1.0 - strength * involvement.min(1.0)
        })
        .collect()
}

/// Gates both `(H, W, C)` streams channel-wise and averages each with its
/// ungated input.
pub fn vcf_filter_fuse(
    f_i: &Tensor,
    f_hv: &Tensor,
    mask: &Matrix,
    strength: f64,
) -> Result<(Tensor, Tensor)> {
    if f_i.shape() != f_hv.shape() {
        return Err(Error::Shape(format!(
            "stream shapes differ: {:?} vs {:?}",
            f_i.shape(),
            f_hv.shape()
        )));
    }
    let (_, c) = hwc_dims(f_i)?;
    if mask.shape() != (c, c) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match {c} channels",
            mask.shape()
        )));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!(
            "fusion strength must lie in [0, 1], got {strength}"
        )));
    }
    let gates = channel_gates(mask, strength);
    let fuse = |f: &Tensor| -> Result<Tensor> {
        let data = f
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| 0.5 * (v + gates[i % c] * v))
            .collect();
        Tensor::new(f.shape().to_vec(), data)
    };
    Ok((fuse(f_i)?, fuse(f_hv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_moment_small_cases() {
        let f = Tensor::full(&[2, 3, 1], 0.7).unwrap();
        let d = second_moment(&f).unwrap();
        assert!((d[(0, 0)] - 0.49).abs() < 1e-15);

        // Two pixels, channel 0 = [1, 0], channel 1 = [0, 1].
        let f = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d = second_moment(&f).unwrap();
        assert_eq!(d, Matrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn variance_map_examples() {
        let a = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]);
        let cov = variance_map(&a, &b).unwrap();
        assert_eq!(cov[(0, 0)], 1.0);
        assert_eq!(cov[(0, 1)], 0.0);
        assert_eq!(variance_map(&b, &a).unwrap(), cov);
        assert!(variance_map(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        assert!(variance_map(&a, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn mask_two_channels() {
        let cov = Matrix::from_row_slice(2, 2, &[5.0, 0.1, 0.1, 9.0]);
        let m = build_mask(&cov, 1.0 / 3.0).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn mask_four_channels_takes_two_largest() {
        let mut cov = Matrix::zeros(4, 4);
        let vals = [(0, 1, 0.2), (0, 2, 0.9), (0, 3, 0.1), (1, 2, 0.4), (1, 3, 0.95), (2, 3, 0.3)];
        for &(i, j, v) in &vals {
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        // Diagonal values must not compete.
        cov[(2, 2)] = 10.0;
        let m = build_mask(&cov, 1.0 / 3.0).unwrap();
        let set: Vec<_> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] == 1.0)
            .collect();
        assert_eq!(set, vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn mask_ties_go_lexicographic() {
        let cov = Matrix::from_element(5, 5, 0.3);
        let m = build_mask(&cov, 1.0 / 3.0).unwrap();
        // T = 10, ceil(10/3) = 4: (0,1), (0,2), (0,3), (0,4).
        let set: Vec<_> = (0..5)
            .flat_map(|i| (0..5).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] == 1.0)
            .collect();
        assert_eq!(set, vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
    }

    #[test]
    fn mask_rejects_bad_config() {
        assert!(matches!(build_mask(&Matrix::zeros(1, 1), 0.3), Err(Error::Config(_))));
        assert!(matches!(build_mask(&Matrix::zeros(3, 3), 0.0), Err(Error::Config(_))));
        assert!(matches!(build_mask(&Matrix::zeros(3, 3), 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn mask_count_is_exact_ceiling() {
        for c in 2..=40usize {
            let t = c * (c - 1) / 2;
            assert_eq!(mask_count(c, 1.0 / 3.0), t.div_ceil(3), "C={c}");
            assert_eq!(mask_count(c, 0.5), t.div_ceil(2), "C={c}");
            assert_eq!(mask_count(c, 0.25), t.div_ceil(4), "C={c}");
            assert_eq!(mask_count(c, 0.2), t.div_ceil(5), "C={c}");
        }
    }

    #[test]
    fn vcf_loss_masked_entries() {
        let report = super::super::CovReport {
            layer_index: 1,
            d_i: Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
            d_hv: Matrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 1.0]),
            cov: Matrix::zeros(2, 2),
            mask: Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        };
        assert!((vcf_loss(std::slice::from_ref(&report)).unwrap() - 0.5).abs() < 1e-15);
        let zero = super::super::CovReport {
            mask: Matrix::zeros(2, 2),
            ..report
        };
        assert_eq!(vcf_loss(&[zero]).unwrap(), 0.0);
        assert!(vcf_loss(&[]).is_err());
    }

    #[test]
    fn zero_mask_has_zero_gradient() {
        let f = Tensor::from_fn(&[2, 2, 3], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f64 * 0.1).unwrap();
        let g = vcf_loss_with_grad(&[VcfLayer {
            f_i: f.clone(),
            f_hv: f.scale(-0.5),
            mask: Matrix::zeros(3, 3),
        }])
        .unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grads[0].0.data().iter().chain(g.grads[0].1.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_closed_forms() {
        let f = Tensor::from_fn(&[2, 3, 2], |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64).unwrap();
        let g = f.scale(0.5);
        let (a, b) = vcf_filter_fuse(&f, &g, &Matrix::zeros(2, 2), 1.0).unwrap();
        assert_eq!((a, b), (f.clone(), g.clone()));

        let mask = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (a, _) = vcf_filter_fuse(&f, &g, &mask, 0.0).unwrap();
        assert_eq!(a, f);
        let (a, b) = vcf_filter_fuse(&f, &g, &mask, 1.0).unwrap();
        assert_eq!(a, f.scale(0.5));
        assert_eq!(b, g.scale(0.5));
        assert!(vcf_filter_fuse(&f, &g, &mask, 1.5).is_err());
        assert!(vcf_filter_fuse(&f, &g, &Matrix::zeros(3, 3), 1.0).is_err());
    }
}
