//! TCE weight bundles and their on-disk directory layout.
//!
//! A bundle directory holds `manifest.txt`, mapping keys such as
//! `layer1.tce_i.branch2.kernel` to tensor files relative to the directory,
//! and `caa.cfg` with the layer configuration.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tce::{TceBranch, TceWeights};
use super::CaaConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "caa.cfg";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub tce_i: TceWeights,
    pub tce_hv: TceWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaaWeights {
    pub layers: Vec<LayerWeights>,
}

impl CaaWeights {
    /// Zero kernels with unit gain and zero bias: every attention map is 0.5.
    pub fn zeros(cfg: &CaaConfig) -> Result<Self> {
        cfg.validate()?;
        let layer = LayerWeights {
            tce_i: TceWeights::zeros(cfg.tce_kernel)?,
            tce_hv: TceWeights::zeros(cfg.tce_kernel)?,
        };
        Ok(CaaWeights {
            layers: vec![layer; cfg.num_layers],
        })
    }

    /// Kernels drawn uniformly from `±1/sqrt(2k²)` with a seeded ChaCha8
    /// stream; unit gain, zero bias.
    pub fn random(cfg: &CaaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.tce_kernel;
        let bound = 1.0 / ((2 * k * k) as f64).sqrt();
        let branch = |rng: &mut ChaCha8Rng| -> Result<TceBranch> {
            let data = (0..2 * k * k)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Ok(TceBranch {
                kernel: Tensor::new(vec![1, 2, k, k], data)?,
                norm_gain: 1.0,
                norm_bias: 0.0,
            })
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            let tce_i = TceWeights {
                branches: [branch(&mut rng)?, branch(&mut rng)?, branch(&mut rng)?],
            };
            let tce_hv = TceWeights {
                branches: [branch(&mut rng)?, branch(&mut rng)?, branch(&mut rng)?],
            };
            layers.push(LayerWeights { tce_i, tce_hv });
        }
        Ok(CaaWeights { layers })
    }

    /// Confirms layer count and kernel sizes agree with `cfg`.
    pub fn check(&self, cfg: &CaaConfig) -> Result<()> {
        if self.layers.len() != cfg.num_layers {
            return Err(Error::Shape(format!(
                "weights hold {} layers, config asks for {}",
                self.layers.len(),
                cfg.num_layers
            )));
        }
        for (x, layer) in self.layers.iter().enumerate() {
            for (stream, w) in [("tce_i", &layer.tce_i), ("tce_hv", &layer.tce_hv)] {
                for (y, b) in w.branches.iter().enumerate() {
                    let want = [1, 2, cfg.tce_kernel, cfg.tce_kernel];
                    if b.kernel.shape() != want {
                        return Err(Error::Shape(format!(
                            "layer{}.{stream}.branch{}.kernel has shape {:?}, expected {:?}",
                            x + 1,
                            y + 1,
                            b.kernel.shape(),
                            want
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, &TceBranch)> {
        let mut out = Vec::new();
        for (x, layer) in self.layers.iter().enumerate() {
            for (stream, w) in [("tce_i", &layer.tce_i), ("tce_hv", &layer.tce_hv)] {
                for (y, b) in w.branches.iter().enumerate() {
                    out.push((format!("layer{}.{stream}.branch{}", x + 1, y + 1), b));
                }
            }
        }
        out
    }

    /// Writes the bundle and `caa.cfg` into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>, cfg: &CaaConfig) -> Result<()> {
        let dir = dir.as_ref();
        self.check(cfg)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for (prefix, b) in self.entries() {
            let tensors = [
                ("kernel", b.kernel.clone()),
                ("norm_gain", Tensor::new(vec![1], vec![b.norm_gain])?),
                ("norm_bias", Tensor::new(vec![1], vec![b.norm_bias])?),
            ];
            for (suffix, t) in tensors {
                let key = format!("{prefix}.{suffix}");
                let file = format!("{key}.vcrt");
                io::write_tensor(dir.join(&file), &t)?;
                manifest.push((key, file));
            }
        }
        io::write_key_values(
            dir.join(MANIFEST_FILE),
            manifest.iter().map(|(k, f)| (k.as_str(), f.clone())),
        )?;
        cfg.save(dir.join(CONFIG_FILE))
    }

    /// Loads `caa.cfg` and every tensor named in the manifest.
    pub fn load(dir: impl AsRef<Path>) -> Result<(CaaConfig, Self)> {
        let dir = dir.as_ref();
        let cfg = CaaConfig::load(dir.join(CONFIG_FILE))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = io::read_key_values(&manifest_path)?;
        let fetch = |key: &str| -> Result<Tensor> {
            let file = manifest
                .get(key)
                .ok_or_else(|| Error::format(&manifest_path, format!("missing key `{key}`")))?;
            io::read_tensor(dir.join(file))
        };
        let scalar = |key: &str| -> Result<f64> {
            let t = fetch(key)?;
            if t.len() != 1 {
                return Err(Error::Shape(format!("{key} must hold one value, got {:?}", t.shape())));
            }
            Ok(t.data()[0])
        };
        let branch = |prefix: String| -> Result<TceBranch> {
            Ok(TceBranch {
                kernel: fetch(&format!("{prefix}.kernel"))?,
                norm_gain: scalar(&format!("{prefix}.norm_gain"))?,
                norm_bias: scalar(&format!("{prefix}.norm_bias"))?,
            })
        };
        let stream = |x: usize, name: &str| -> Result<TceWeights> {
            Ok(TceWeights {
                branches: [
                    branch(format!("layer{x}.{name}.branch1"))?,
                    branch(format!("layer{x}.{name}.branch2"))?,
                    branch(format!("layer{x}.{name}.branch3"))?,
                ],
            })
        };
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for x in 1..=cfg.num_layers {
            layers.push(LayerWeights {
                tce_i: stream(x, "tce_i")?,
                tce_hv: stream(x, "tce_hv")?,
            });
        }
        let weights = CaaWeights { layers };
        weights.check(&cfg)?;
        Ok((cfg, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CaaConfig {
            num_layers: 2,
            tce_kernel: 3,
            ..Default::default()
        };
        let w = CaaWeights::random(&cfg, 9).unwrap();
        w.save(dir.path(), &cfg).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("layer2.tce_hv.branch3.norm_bias = layer2.tce_hv.branch3.norm_bias.vcrt"));
        let (cfg2, w2) = CaaWeights::load(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(w2, w);
    }

    #[test]
    fn random_is_seeded() {
        let cfg = CaaConfig::default();
        assert_eq!(CaaWeights::random(&cfg, 42).unwrap(), CaaWeights::random(&cfg, 42).unwrap());
        assert_ne!(CaaWeights::random(&cfg, 42).unwrap(), CaaWeights::random(&cfg, 43).unwrap());
    }

    #[test]
    fn kernel_mismatch_names_both_shapes() {
        let cfg = CaaConfig::default();
        let mut w = CaaWeights::zeros(&cfg).unwrap();
        w.layers[1].tce_hv.branches[0].kernel = Tensor::zeros(&[1, 2, 3, 3]).unwrap();
        let msg = w.check(&cfg).unwrap_err().to_string();
        assert!(msg.contains("layer2.tce_hv.branch1") && msg.contains("[1, 2, 3, 3]") && msg.contains("[1, 2, 7, 7]"));
    }
}
