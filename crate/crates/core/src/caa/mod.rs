//! Channel adaptive adjustment: per layer, instance normalisation, variance
//! aware channel filtering of the intensity/chroma pair, then triplet
//! channel enhancement of each stream.

mod tce;
mod vcf;
mod weights;

pub use tce::{apply_attention, branch_attention, tce, TceBranch, TceWeights, BRANCH_AXES};
pub use vcf::{
    build_mask, channel_gates, mask_count, second_moment, variance_map, vcf_filter_fuse,
    vcf_loss, vcf_loss_with_grad, Matrix, VcfGradient, VcfLayer,
};
pub use weights::{CaaWeights, LayerWeights, MANIFEST_FILE, CONFIG_FILE};

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

const HWC_TO_CHW: [usize; 3] = [2, 0, 1];
const CHW_TO_HWC: [usize; 3] = [1, 2, 0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaaConfig {
    /// Fraction of strict-upper-triangle covariance entries to mask.
    pub mask_ratio: f64,
    pub num_layers: usize,
    pub tce_kernel: usize,
    pub fusion_strength: f64,
    pub norm_eps: f64,
}

impl Default for CaaConfig {
    fn default() -> Self {
        CaaConfig {
            mask_ratio: 1.0 / 3.0,
            num_layers: 3,
            tce_kernel: 7,
            fusion_strength: 1.0,
            norm_eps: 1e-5,
        }
    }
}

impl CaaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!(
                "mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be positive".into()));
        }
        if self.tce_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "tce_kernel must be odd and positive, got {}",
                self.tce_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.fusion_strength) {
            return Err(Error::Config(format!(
                "fusion_strength must lie in [0, 1], got {}",
                self.fusion_strength
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_key_values(
            path,
            [
                ("mask_ratio", format!("{:e}", self.mask_ratio)),
                ("layers", self.num_layers.to_string()),
                ("tce_kernel", self.tce_kernel.to_string()),
                ("fusion_strength", format!("{:e}", self.fusion_strength)),
                ("norm_eps", format!("{:e}", self.norm_eps)),
            ],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = io::read_key_values(path)?;
        let int = |key: &str| -> Result<usize> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::format(path, format!("missing key `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::format(path, format!("`{key}` is not an integer: {raw}")))
        };
        let cfg = CaaConfig {
            mask_ratio: io::parse_f64(&map, "mask_ratio", path)?,
            num_layers: int("layers")?,
            tce_kernel: int("tce_kernel")?,
            fusion_strength: io::parse_f64(&map, "fusion_strength", path)?,
            norm_eps: match map.get("norm_eps") {
                Some(_) => io::parse_f64(&map, "norm_eps", path)?,
                None => CaaConfig::default().norm_eps,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Second-moment statistics and mask of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CovReport {
    /// 1-based layer number.
    pub layer_index: usize,
    pub d_i: Matrix,
    pub d_hv: Matrix,
    pub cov: Matrix,
    pub mask: Matrix,
}

impl CovReport {
    pub fn popcount(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct CaaOutput {
    /// Transformed intensity stream, `(H, W, C)`.
    pub f_i: Tensor,
    /// Transformed chroma stream, `(H, W, C)`.
    pub f_hv: Tensor,
    pub reports: Vec<CovReport>,
    /// Normalised per-layer inputs whose second moments the reports hold;
    /// these are the tensors the VCF penalty differentiates against.
    pub layer_inputs: Vec<(Tensor, Tensor)>,
}

impl CaaOutput {
    pub fn vcf_layers(&self) -> Vec<VcfLayer> {
        self.layer_inputs
            .iter()
            .zip(&self.reports)
            .map(|((f_i, f_hv), r)| VcfLayer {
                f_i: f_i.clone(),
                f_hv: f_hv.clone(),
                mask: r.mask.clone(),
            })
            .collect()
    }
}

/// Instance normalisation of an `(H, W, C)` map over its spatial extent.
pub fn instance_norm_hwc(f: &Tensor, eps: f64) -> Result<Tensor> {
    f.permute(&HWC_TO_CHW)?
        .instance_norm(eps)?
        .permute(&CHW_TO_HWC)
}

fn tce_hwc(f: &Tensor, w: &TceWeights, eps: f64) -> Result<Tensor> {
    tce(&f.permute(&HWC_TO_CHW)?, w, eps)?.permute(&CHW_TO_HWC)
}

/// Runs all configured layers over the `(H, W, C)` intensity and chroma
/// feature maps.
pub fn caa_forward(
    f_i: &Tensor,
    f_hv: &Tensor,
    cfg: &CaaConfig,
    weights: &CaaWeights,
) -> Result<CaaOutput> {
    cfg.validate()?;
    if f_i.shape() != f_hv.shape() || f_i.rank() != 3 {
        return Err(Error::Shape(format!(
            "streams must share an (H,W,C) shape, got {:?} and {:?}",
            f_i.shape(),
            f_hv.shape()
        )));
    }
    weights.check(cfg)?;
    let mut cur_i = f_i.clone();
    let mut cur_hv = f_hv.clone();
    let mut reports = Vec::with_capacity(cfg.num_layers);
    let mut layer_inputs = Vec::with_capacity(cfg.num_layers);
    for (x, lw) in weights.layers.iter().enumerate() {
        let n_i = instance_norm_hwc(&cur_i, cfg.norm_eps)?;
        let n_hv = instance_norm_hwc(&cur_hv, cfg.norm_eps)?;
        let d_i = second_moment(&n_i)?;
        let d_hv = second_moment(&n_hv)?;
        let cov = variance_map(&d_i, &d_hv)?;
        let mask = build_mask(&cov, cfg.mask_ratio)?;
        let (g_i, g_hv) = vcf_filter_fuse(&n_i, &n_hv, &mask, cfg.fusion_strength)?;
        cur_i = tce_hwc(&g_i, &lw.tce_i, cfg.norm_eps)?;
        cur_hv = tce_hwc(&g_hv, &lw.tce_hv, cfg.norm_eps)?;
        log::debug!(
            "caa layer {}: mask popcount {}",
            x + 1,
            mask.iter().filter(|&&m| m != 0.0).count()
        );
        reports.push(CovReport {
            layer_index: x + 1,
            d_i,
            d_hv,
            cov,
            mask,
        });
        layer_inputs.push((n_i, n_hv));
    }
    Ok(CaaOutput {
        f_i: cur_i,
        f_hv: cur_hv,
        reports,
        layer_inputs,
    })
}
