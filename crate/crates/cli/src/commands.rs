use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use vcr_core::caa::{caa_forward, mask_count, vcf_loss, CaaConfig, CaaWeights, Matrix};
use vcr_core::colorspace::{hvi_to_rgb, rgb_to_hsv, rgb_to_hvi, sidecar_path, HviImage, HviParams, RgbImage};
use vcr_core::features::lift_streams;
use vcr_core::io::{self, SampleDepth};
use vcr_core::iqa::{evaluate_pair, BrisqueRegressor, NiqeModel, PATCH_SIZE, SHARPNESS_THRESHOLD};
use vcr_core::losses::{IdentityEnhancer, LossWeights, DEFAULT_TAU};
use vcr_core::pipeline::{evaluate_losses, LossSetup};
use vcr_core::{selfcheck, synth, Error};

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

type CmdResult<T = ()> = std::result::Result<T, CmdError>;

#[derive(Debug, Parser)]
#[command(name = "vcr", version, about = "HVI color space, channel adjustment, losses and image-quality metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an RGB image to an HVI tensor plus a parameter sidecar.
    HviConvert {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        hvi: HviArgs,
    },
    /// Convert an HVI tensor back to an RGB image.
    HviInvert {
        input: PathBuf,
        output: PathBuf,
        /// Saturation gain; defaults to the sidecar value.
        #[arg(long)]
        alpha_s: Option<f64>,
        /// Intensity gain; defaults to the sidecar value.
        #[arg(long)]
        alpha_i: Option<f64>,
    },
    /// Run channel adjustment on an image and dump per-layer statistics.
    CaaDemo {
        input: PathBuf,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
        /// Weight bundle directory; random weights from --seed otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, alias = "random-seed", default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        caa: CaaArgs,
        #[command(flatten)]
        hvi: HviArgs,
    },
    /// Write a weight bundle directory.
    CaaInitWeights {
        out: PathBuf,
        /// Zero kernels instead of seeded random ones.
        #[arg(long)]
        zero: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        caa: CaaArgs,
    },
    /// Evaluate the training losses for a prediction/reference pair.
    LossEval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_hvi: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda_vcf: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda_cda: f64,
        /// Reconstruction loss only.
        #[arg(long)]
        warmup: bool,
        /// Directory to write gradient tensors into.
        #[arg(long)]
        grads: Option<PathBuf>,
        #[command(flatten)]
        caa: CaaArgs,
        #[command(flatten)]
        hvi: HviArgs,
    },
    /// PSNR, SSIM, NIQE and BRISQUE features for image pairs.
    Metrics {
        /// A single `PRED GT` pair.
        #[arg(long, num_args = 2, value_names = ["PRED", "GT"], conflicts_with = "manifest")]
        pair: Option<Vec<PathBuf>>,
        /// File of `pred<TAB>gt` lines; `#` starts a comment.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// NIQE model file.
        #[arg(long)]
        model: Option<PathBuf>,
        /// BRISQUE linear regressor (`bias`, `w1`..`w36`).
        #[arg(long)]
        brisque_model: Option<PathBuf>,
        /// PSNR peak value; defaults to the full scale of the input files.
        #[arg(long)]
        dynamic_range: Option<f64>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Fit a NIQE model from a folder of pristine images.
    NiqeFit {
        images: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = PATCH_SIZE)]
        patch: usize,
        #[arg(long, default_value_t = SHARPNESS_THRESHOLD)]
        threshold: f64,
    },
    /// Generate seeded synthetic images.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 288)]
        width: usize,
        #[arg(long, default_value_t = 288)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Sample depth of the PNG output.
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u8).range(8..=16))]
        depth: u8,
    },
    /// Run the invariant suite.
    Selfcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    DeadLeaves,
    Noise,
    Ramp,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct HviArgs {
    /// Black-plane density.
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_s: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_i: f64,
}

impl HviArgs {
    fn params(&self) -> vcr_core::Result<HviParams> {
        let p = HviParams {
            k: self.k,
            eps: self.eps,
            alpha_s: self.alpha_s,
            alpha_i: self.alpha_i,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Layer settings. Unset values come from the weight bundle when one is
/// given, else from the defaults.
#[derive(Debug, Clone, Args)]
pub struct CaaArgs {
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub tce_kernel: Option<usize>,
    #[arg(long)]
    pub fusion_strength: Option<f64>,
}

impl CaaArgs {
    fn apply(&self, base: CaaConfig) -> vcr_core::Result<CaaConfig> {
        let cfg = CaaConfig {
            mask_ratio: self.mask_ratio.unwrap_or(base.mask_ratio),
            num_layers: self.layers.unwrap_or(base.num_layers),
            tce_kernel: self.tce_kernel.unwrap_or(base.tce_kernel),
            fusion_strength: self.fusion_strength.unwrap_or(base.fusion_strength),
            norm_eps: base.norm_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&self, weights: Option<&Path>, seed: u64) -> vcr_core::Result<(CaaConfig, CaaWeights)> {
        match weights {
            Some(dir) => {
                let (stored, w) = CaaWeights::load(dir)?;
                let cfg = self.apply(stored)?;
                w.check(&cfg)?;
                Ok((cfg, w))
            }
            None => {
                let cfg = self.apply(CaaConfig::default())?;
                Ok((cfg, CaaWeights::random(&cfg, seed)?))
            }
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::HviConvert { input, output, hvi } => hvi_convert(&input, &output, &hvi),
        Command::HviInvert {
            input,
            output,
            alpha_s,
            alpha_i,
        } => hvi_invert(&input, &output, alpha_s, alpha_i),
        Command::CaaDemo {
            input,
            out,
            weights,
            seed,
            caa,
            hvi,
        } => caa_demo(&input, &out, weights.as_deref(), seed, &caa, &hvi),
        Command::CaaInitWeights { out, zero, seed, caa } => {
            let cfg = caa.apply(CaaConfig::default())?;
            let w = if zero {
                CaaWeights::zeros(&cfg)?
            } else {
                CaaWeights::random(&cfg, seed)?
            };
            w.save(&out, &cfg)?;
            println!("wrote {} layer(s) to {}", cfg.num_layers, out.display());
            Ok(())
        }
        Command::LossEval {
            pred,
            gt,
            weights,
            seed,
            tau,
            lambda_hvi,
            lambda_vcf,
            lambda_cda,
            warmup,
            grads,
            caa,
            hvi,
        } => {
            let lw = LossWeights {
                lambda_hvi,
                lambda_vcf,
                lambda_cda,
                warmup,
            };
            loss_eval(&pred, &gt, weights.as_deref(), seed, tau, lw, grads.as_deref(), &caa, &hvi)
        }
        Command::Metrics {
            pair,
            manifest,
            model,
            brisque_model,
            dynamic_range,
            jobs,
        } => {
            let pairs = match (pair, manifest) {
                (Some(p), None) => vec![(p[0].clone(), p[1].clone())],
                (None, Some(m)) => read_manifest(&m)?,
                _ => {
                    return Err(Error::Validation("give either --pair or --manifest".into()).into());
                }
            };
            metrics(&pairs, model.as_deref(), brisque_model.as_deref(), dynamic_range, jobs)
        }
        Command::NiqeFit {
            images,
            out,
            patch,
            threshold,
        } => niqe_fit(&images, &out, patch, threshold),
        Command::Synth {
            kind,
            out,
            width,
            height,
            count,
            seed,
            depth,
        } => synth_images(kind, &out, width, height, count, seed, depth),
        Command::Selfcheck { seed } => {
            let checks = selfcheck::run(seed)?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {} failed", checks.len(), failed);
            if failed > 0 {
                return Err(CmdError::ChecksFailed(failed));
            }
            Ok(())
        }
    }
}

fn plane_range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn hvi_convert(input: &Path, output: &Path, args: &HviArgs) -> CmdResult {
    let p = args.params()?;
    let (img, _) = io::read_image(input)?;
    let hvi = rgb_to_hvi(&img, &p)?;
    io::write_tensor(output, &hvi.to_tensor())?;
    p.write_sidecar(sidecar_path(output))?;
    for (name, plane) in [("H", &hvi.hhat), ("V", &hvi.vhat), ("I", &hvi.imax)] {
        let (lo, hi) = plane_range(plane);
        println!("{name}\tmin={lo:.6}\tmax={hi:.6}");
    }
    Ok(())
}

fn hvi_invert(input: &Path, output: &Path, alpha_s: Option<f64>, alpha_i: Option<f64>) -> CmdResult {
    let mut p = HviParams::read_sidecar(sidecar_path(input))?;
    p.alpha_s = alpha_s.unwrap_or(p.alpha_s);
    p.alpha_i = alpha_i.unwrap_or(p.alpha_i);
    p.validate()?;
    let t = io::read_tensor(input)?;
    let hvi = HviImage::from_tensor(&t, p.k, p.eps)?;
    let rgb = hvi_to_rgb(&hvi, &p)?;
    io::write_image(output, &rgb)?;
    let hsv = rgb_to_hsv(&rgb);
    println!("mean_v={:.6}", hsv.v.iter().sum::<f64>() / hsv.v.len().max(1) as f64);
    Ok(())
}

fn matrix_grid(m: &Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

fn write_text(path: &Path, text: &str) -> vcr_core::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> vcr_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn caa_demo(input: &Path, out: &Path, weights: Option<&Path>, seed: u64, caa: &CaaArgs, hvi: &HviArgs) -> CmdResult {
    let p = hvi.params()?;
    let (cfg, w) = caa.resolve(weights, seed)?;
    let (img, _) = io::read_image(input)?;
    let (f_i, f_hv) = lift_streams(&rgb_to_hvi(&img, &p)?)?;
    let result = caa_forward(&f_i, &f_hv, &cfg, &w)?;
    create_dir(out)?;
    io::write_tensor(out.join("f_i.vcrt"), &result.f_i)?;
    io::write_tensor(out.join("f_hv.vcrt"), &result.f_hv)?;
    let c = f_i.shape()[2];
    for r in &result.reports {
        let x = r.layer_index;
        write_text(&out.join(format!("layer{x}.cov.txt")), &matrix_grid(&r.cov))?;
        write_text(&out.join(format!("layer{x}.mask.txt")), &matrix_grid(&r.mask))?;
        println!(
            "layer{x}\tpopcount={}\texpected={}",
            r.popcount(),
            mask_count(c, cfg.mask_ratio)
        );
    }
    println!("vcf_loss={}", vcf_loss(&result.reports)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn loss_eval(
    pred: &Path,
    gt: &Path,
    weights: Option<&Path>,
    seed: u64,
    tau: f64,
    lw: LossWeights,
    grads: Option<&Path>,
    caa: &CaaArgs,
    hvi: &HviArgs,
) -> CmdResult {
    let (cfg, w) = caa.resolve(weights, seed)?;
    let setup = LossSetup {
        hvi: hvi.params()?,
        caa: cfg,
        weights: lw,
        tau,
    };
    let (p, _) = io::read_image(pred)?;
    let (g, _) = io::read_image(gt)?;
    let bundle = evaluate_losses(&p, &g, &setup, &w, &IdentityEnhancer)?;
    if let Some(dir) = grads {
        create_dir(dir)?;
        for (key, t) in &bundle.grads {
            io::write_tensor(dir.join(format!("{key}.vcrt")), t)?;
        }
    }
    println!("{}", bundle.record(tau, &lw));
    Ok(())
}

/// Reads `pred<TAB>gt` lines. Relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> vcr_core::Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("line {}: expected `pred<TAB>gt`", n + 1),
            });
        }
        pairs.push((base.join(cols[0]), base.join(cols[1])));
    }
    Ok(pairs)
}

fn metric_row(
    pred: &Path,
    gt: &Path,
    model: Option<&NiqeModel>,
    regressor: Option<&BrisqueRegressor>,
    dynamic_range: Option<f64>,
) -> vcr_core::Result<String> {
    let (p, _) = io::read_image(pred)?;
    let (g, depth) = io::read_image(gt)?;
    let sample_max = depth.dynamic_range();
    let report = evaluate_pair(&p, &g, sample_max, dynamic_range.unwrap_or(sample_max), model, regressor)?;
    Ok(report.row(&pred.display().to_string()))
}

fn metrics(
    pairs: &[(PathBuf, PathBuf)],
    model: Option<&Path>,
    brisque_model: Option<&Path>,
    dynamic_range: Option<f64>,
    jobs: usize,
) -> CmdResult {
    let model = model.map(NiqeModel::load).transpose()?;
    let regressor = brisque_model.map(BrisqueRegressor::load).transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<vcr_core::Result<String>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(p, g)| metric_row(p, g, model.as_ref(), regressor.as_ref(), dynamic_range))
            .collect()
    });
    for row in rows {
        println!("{}", row?);
    }
    Ok(())
}

fn image_files(dir: &Path) -> vcr_core::Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pfm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn niqe_fit(dir: &Path, out: &Path, patch: usize, threshold: f64) -> CmdResult {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::Validation(format!("no PNG or PFM images in {}", dir.display())).into());
    }
    let images = files
        .iter()
        .map(|f| io::read_image(f).map(|(img, _)| img.luma()))
        .collect::<vcr_core::Result<Vec<_>>>()?;
    let model = NiqeModel::fit_with(&images, patch, threshold)?;
    model.save(out)?;
    println!("fitted on {} image(s), wrote {}", images.len(), out.display());
    Ok(())
}

fn synth_images(
    kind: SynthKind,
    out: &Path,
    width: usize,
    height: usize,
    count: usize,
    seed: u64,
    depth: u8,
) -> CmdResult {
    create_dir(out)?;
    let depth = match depth {
        8 => SampleDepth::Eight,
        16 => SampleDepth::Sixteen,
        d => return Err(Error::Config(format!("depth must be 8 or 16, got {d}")).into()),
    };
    for i in 0..count {
        let s = seed.wrapping_add(i as u64);
        let (name, img): (&str, RgbImage) = match kind {
            SynthKind::DeadLeaves => ("leaves", synth::dead_leaves(width, height, s)?),
            SynthKind::Noise => ("noise", synth::white_noise(width, height, s)?.to_rgb()?),
            SynthKind::Ramp => ("ramp", synth::gray_ramp(width, height)?),
            SynthKind::Random => ("random", synth::random_rgb(width, height, s)?),
        };
        let path = out.join(format!("{name}_{i:02}.png"));
        io::write_png(&path, &img, depth)?;
        println!("{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("pairs.txt");
        std::fs::write(&m, "# header\na.png\tb.png\n\n  # indented comment\nc.png\t/abs/d.png\n").unwrap();
        let pairs = read_manifest(&m).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, dir.path().join("a.png"));
        assert_eq!(pairs[1].1, PathBuf::from("/abs/d.png"));
        std::fs::write(&m, "a.png b.png\n").unwrap();
        assert!(matches!(read_manifest(&m), Err(Error::Format { .. })));
    }

    #[test]
    fn caa_overrides() {
        let args = CaaArgs {
            mask_ratio: Some(0.5),
            layers: None,
            tce_kernel: Some(3),
            fusion_strength: None,
        };
        let cfg = args.apply(CaaConfig::default()).unwrap();
        assert_eq!((cfg.mask_ratio, cfg.num_layers, cfg.tce_kernel), (0.5, 3, 3));
    }

    #[test]
    fn tensor_grid_is_square() {
        let m = Matrix::identity(3, 3);
        let g = matrix_grid(&m);
        assert_eq!(g.lines().count(), 3);
        assert!(g.lines().all(|l| l.split(' ').count() == 3));
    }
}
