//! Dense row-major `f64` tensors of rank 1 to 4.
//!
//! This is the numeric carrier for every other module: feature maps,
//! convolution kernels, HVI planes and gradients all live in a [`Tensor`].
//! Values are immutable once constructed; every operation returns a new
//! tensor.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "rank must be between 1 and {MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Element at a full multi-index. Panics when the index is out of bounds.
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        let mut stride = 1;
        for ax in (0..idx.len()).rev() {
            assert!(idx[ax] < self.shape[ax], "index out of bounds");
            off += idx[ax] * stride;
            stride *= self.shape[ax];
        }
        self.data[off]
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if axes.len() != rank {
            return Err(Error::Shape(format!(
                "permutation {axes:?} does not match rank {rank}"
            )));
        }
        let mut seen = [false; MAX_RANK];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::Shape(format!("{axes:?} is not a permutation")));
            }
            seen[a] = true;
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();

        let mut data = Vec::with_capacity(self.len());
        let mut idx = [0usize; MAX_RANK];
        let mut off = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[off]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= src_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Concatenated max- and mean-pooling over the leading axis of a rank-3
    /// tensor: `(d0, d1, d2) -> (2, d1, d2)`.
    pub fn gb_pool(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!(
                "gb_pool expects rank 3, got shape {:?}",
                self.shape
            )));
        }
        let (d0, plane) = (self.shape[0], self.shape[1] * self.shape[2]);
        let mut max = self.data[..plane].to_vec();
        let mut sum = self.data[..plane].to_vec();
        for s in 1..d0 {
            let slice = &self.data[s * plane..(s + 1) * plane];
            for ((m, acc), &v) in max.iter_mut().zip(sum.iter_mut()).zip(slice) {
                *m = m.max(v);
                *acc += v;
            }
        }
        let inv = 1.0 / d0 as f64;
        max.extend(sum.into_iter().map(|v| v * inv));
        Tensor::new(vec![2, self.shape[1], self.shape[2]], max)
    }

    /// Zero-padded "same" 2-D cross-correlation.
    ///
    /// `self` is `(Cin, H, W)`, `kernel` is `(Cout, Cin, k, k)` with odd `k`;
    /// the result is `(Cout, H, W)`.
    pub fn conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || kernel.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects (Cin,H,W) and (Cout,Cin,k,k), got {:?} and {:?}",
                self.shape, kernel.shape
            )));
        }
        let (cin, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (cout, kcin, kh, kw) = (
            kernel.shape[0],
            kernel.shape[1],
            kernel.shape[2],
            kernel.shape[3],
        );
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, tensor has {cin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        let pad = (kh / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            let dst = &mut out[co * h * w..(co + 1) * h * w];
            for ci in 0..cin {
                let src = &self.data[ci * h * w..(ci + 1) * h * w];
                let kbase = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let dy = ky as isize - pad;
                    for kx in 0..kw {
                        let weight = kernel.data[kbase + ky * kw + kx];
                        if weight == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * w..(sy + 1) * w];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            for x in x0..x1 {
                                drow[x] += weight * srow[(x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cout, h, w], out)
    }

    /// Per-channel standardisation of a `(C, H, W)` tensor using population
    /// variance, `(x - mean) / sqrt(var + eps)`. Constant channels become zero.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!(
                "instance_norm expects (C,H,W), got {:?}",
                self.shape
            )));
        }
        let plane = self.shape[1] * self.shape[2];
        let mut data = Vec::with_capacity(self.len());
        for chan in self.data.chunks(plane) {
            if chan.iter().all(|&v| v == chan[0]) {
                data.extend(std::iter::repeat_n(0.0, plane));
                continue;
            }
            let mean = chan.iter().sum::<f64>() / plane as f64;
            let var = chan.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + eps).sqrt();
            data.extend(chan.iter().map(|v| (v - mean) * inv));
        }
        Tensor::new(self.shape.clone(), data)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax_temp(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let total = pairwise_sum(&exps);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Log-softmax with temperature, same stabilisation as [`softmax_temp`].
pub fn log_softmax_temp(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = v.iter().map(|&x| (x - max) / tau).collect();
    let exps: Vec<f64> = scaled.iter().map(|s| s.exp()).collect();
    let log_z = pairwise_sum(&exps).ln();
    Ok(scaled.into_iter().map(|s| s - log_z).collect())
}

/// Summation over a fixed binary tree, so the reduction order depends only
/// on the length of the input.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Inverse of an axis permutation.
pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
