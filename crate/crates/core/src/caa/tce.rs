//! Triplet channel enhancement: three permuted views of a `(C, H, W)`
//! feature map, each gated by a pooled-convolution attention map.

use crate::error::{Error, Result};
use crate::tensor::{inverse_permutation, Tensor};

/// Axis orders for the three views: `(H, C, W)`, `(W, C, H)` and the
/// identity `(C, H, W)`. Pooling over the leading axis leaves the pairs
/// `(C, W)`, `(C, H)` and `(H, W)` to interact.
pub const BRANCH_AXES: [[usize; 3]; 3] = [[1, 0, 2], [2, 0, 1], [0, 1, 2]];

#[derive(Debug, Clone, PartialEq)]
pub struct TceBranch {
    /// `(1, 2, k, k)` convolution from the pooled pair to one map.
    pub kernel: Tensor,
    pub norm_gain: f64,
    pub norm_bias: f64,
}

impl TceBranch {
    pub fn zeros(k: usize) -> Result<Self> {
        Ok(TceBranch {
            kernel: Tensor::zeros(&[1, 2, k, k])?,
            norm_gain: 1.0,
            norm_bias: 0.0,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().last().copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let s = self.kernel.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 2 || s[2] != s[3] {
            return Err(Error::Shape(format!(
                "TCE kernel must be (1,2,k,k), got {s:?}"
            )));
        }
        if s[2].is_multiple_of(2) {
            return Err(Error::Config(format!("TCE kernel size must be odd, got {}", s[2])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TceWeights {
    pub branches: [TceBranch; 3],
}

impl TceWeights {
    pub fn zeros(k: usize) -> Result<Self> {
        Ok(TceWeights {
            branches: [TceBranch::zeros(k)?, TceBranch::zeros(k)?, TceBranch::zeros(k)?],
        })
    }
}

/// Attention map for one view: pool, convolve, normalise, squash.
/// Output shape is `(1, d1, d2)` for a `(d0, d1, d2)` view.
pub fn branch_attention(view: &Tensor, w: &TceBranch, norm_eps: f64) -> Result<Tensor> {
    w.validate()?;
    let pooled = view.gb_pool()?;
    let conv = pooled.conv2d(&w.kernel)?;
    let normed = conv.instance_norm(norm_eps)?;
    Ok(normed.map(|v| w.norm_gain * v + w.norm_bias).sigmoid())
}

/// Multiplies every leading-axis slice of `view` by the `(1, d1, d2)` map.
pub fn apply_attention(view: &Tensor, attention: &Tensor) -> Result<Tensor> {
    let plane = attention.len();
    if view.rank() != 3 || !view.len().is_multiple_of(plane) || view.shape()[1..] != attention.shape()[1..] {
        return Err(Error::Shape(format!(
            "attention {:?} does not fit view {:?}",
            attention.shape(),
            view.shape()
        )));
    }
    let a = attention.data();
    let data = view
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * a[i % plane])
        .collect();
    Tensor::new(view.shape().to_vec(), data)
}

/// `f + mean(branch_1, branch_2, branch_3)` for a `(C, H, W)` input.
pub fn tce(f: &Tensor, w: &TceWeights, norm_eps: f64) -> Result<Tensor> {
    if f.rank() != 3 {
        return Err(Error::Shape(format!("TCE expects (C,H,W), got {:?}", f.shape())));
    }
    let mut acc = vec![0.0; f.len()];
    for (axes, branch) in BRANCH_AXES.iter().zip(&w.branches) {
        let view = f.permute(axes)?;
        let att = branch_attention(&view, branch, norm_eps)?;
        let gated = apply_attention(&view, &att)?.permute(&inverse_permutation(axes))?;
        for (a, g) in acc.iter_mut().zip(gated.data()) {
            *a += g;
        }
    }
    let data = f
        .data()
        .iter()
        .zip(acc)
        .map(|(&x, s)| x + s / 3.0)
        .collect();
    Tensor::new(f.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_kernels_give_one_and_a_half() {
        let f = Tensor::from_fn(&[3, 4, 5], |i| (i[0] as f64 - 1.0) * 0.3 + i[1] as f64 * 0.1 - i[2] as f64 * 0.07).unwrap();
        let out = tce(&f, &TceWeights::zeros(7).unwrap(), 1e-5).unwrap();
        assert!(out.max_abs_diff(&f.scale(1.5)) < 1e-12);
    }

    #[test]
    fn zero_input_stays_zero() {
        let f = Tensor::zeros(&[2, 3, 3]).unwrap();
        let mut w = TceWeights::zeros(3).unwrap();
        w.branches[0].kernel = Tensor::full(&[1, 2, 3, 3], 0.4).unwrap();
        w.branches[2].norm_bias = 1.0;
        assert!(tce(&f, &w, 1e-5).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_kernels() {
        let f = Tensor::zeros(&[2, 3, 3]).unwrap();
        let mut w = TceWeights::zeros(3).unwrap();
        w.branches[1].kernel = Tensor::zeros(&[1, 3, 3, 3]).unwrap();
        assert!(matches!(tce(&f, &w, 1e-5), Err(Error::Shape(_))));
        w.branches[1].kernel = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        assert!(matches!(tce(&f, &w, 1e-5), Err(Error::Config(_))));
        assert!(tce(&Tensor::zeros(&[3, 3]).unwrap(), &TceWeights::zeros(3).unwrap(), 1e-5).is_err());
    }
}
