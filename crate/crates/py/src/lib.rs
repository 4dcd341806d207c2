//! Python bindings. Images cross the boundary as `Tensor` objects: colour
//! images are `(3, H, W)` with values in `[0, 1]`, gray images `(H, W)`.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vcr_core::caa::{self, CaaConfig, CaaWeights, Matrix};
use vcr_core::colorspace::{self, GrayImage, HviImage, HviParams, RgbImage};
use vcr_core::iqa::{self, NiqeModel};
use vcr_core::losses::{self, IdentityEnhancer, LossWeights};
use vcr_core::pipeline::{evaluate_losses, LossSetup};
use vcr_core::{features, io, selfcheck, Error, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Shape(_) | Error::Config(_) | Error::Validation(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for vcr_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "Tensor", module = "vcr", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: Tensor,
}

impl From<Tensor> for PyTensor {
    fn from(inner: Tensor) -> Self {
        PyTensor { inner }
    }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Tensor::new(shape, data).py().map(Into::into)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Tensor::zeros(&shape).py().map(Into::into)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::read_tensor(path).py().map(Into::into)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_tensor(path, &self.inner).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn at(&self, idx: Vec<usize>) -> PyResult<f64> {
        if idx.len() != self.inner.rank() || idx.iter().zip(self.inner.shape()).any(|(i, n)| i >= n) {
            return Err(PyValueError::new_err(format!(
                "index {idx:?} out of bounds for shape {:?}",
                self.inner.shape()
            )));
        }
        Ok(self.inner.at(&idx))
    }

    fn permute(&self, axes: Vec<usize>) -> PyResult<Self> {
        self.inner.permute(&axes).py().map(Into::into)
    }

    fn gb_pool(&self) -> PyResult<Self> {
        self.inner.gb_pool().py().map(Into::into)
    }

    fn conv2d(&self, kernel: &PyTensor) -> PyResult<Self> {
        self.inner.conv2d(&kernel.inner).py().map(Into::into)
    }

    #[pyo3(signature = (eps=1e-5))]
    fn instance_norm(&self, eps: f64) -> PyResult<Self> {
        self.inner.instance_norm(eps).py().map(Into::into)
    }

    fn sigmoid(&self) -> Self {
        self.inner.sigmoid().into()
    }

    fn scale(&self, factor: f64) -> Self {
        self.inner.scale(factor).into()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyclass(name = "HviParams", module = "vcr", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyHviParams {
    #[pyo3(get, set)]
    k: f64,
    #[pyo3(get, set)]
    eps: f64,
    #[pyo3(get, set)]
    alpha_s: f64,
    #[pyo3(get, set)]
    alpha_i: f64,
}

impl PyHviParams {
    fn core(&self) -> PyResult<HviParams> {
        let p = HviParams {
            k: self.k,
            eps: self.eps,
            alpha_s: self.alpha_s,
            alpha_i: self.alpha_i,
        };
        p.validate().py()?;
        Ok(p)
    }
}

#[pymethods]
impl PyHviParams {
    #[new]
    #[pyo3(signature = (k=1.0, eps=1e-8, alpha_s=1.0, alpha_i=1.0))]
    fn new(k: f64, eps: f64, alpha_s: f64, alpha_i: f64) -> PyResult<Self> {
        let p = PyHviParams { k, eps, alpha_s, alpha_i };
        p.core()?;
        Ok(p)
    }

    fn __repr__(&self) -> String {
        format!(
            "HviParams(k={}, eps={}, alpha_s={}, alpha_i={})",
            self.k, self.eps, self.alpha_s, self.alpha_i
        )
    }
}

#[pyclass(name = "CaaConfig", module = "vcr", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyCaaConfig {
    #[pyo3(get, set)]
    mask_ratio: f64,
    #[pyo3(get, set)]
    layers: usize,
    #[pyo3(get, set)]
    tce_kernel: usize,
    #[pyo3(get, set)]
    fusion_strength: f64,
}

impl PyCaaConfig {
    fn core(&self) -> PyResult<CaaConfig> {
        let cfg = CaaConfig {
            mask_ratio: self.mask_ratio,
            num_layers: self.layers,
            tce_kernel: self.tce_kernel,
            fusion_strength: self.fusion_strength,
            ..CaaConfig::default()
        };
        cfg.validate().py()?;
        Ok(cfg)
    }
}

#[pymethods]
impl PyCaaConfig {
    #[new]
    #[pyo3(signature = (mask_ratio=1.0/3.0, layers=3, tce_kernel=7, fusion_strength=1.0))]
    fn new(mask_ratio: f64, layers: usize, tce_kernel: usize, fusion_strength: f64) -> PyResult<Self> {
        let c = PyCaaConfig {
            mask_ratio,
            layers,
            tce_kernel,
            fusion_strength,
        };
        c.core()?;
        Ok(c)
    }

    fn __repr__(&self) -> String {
        format!(
            "CaaConfig(mask_ratio={}, layers={}, tce_kernel={}, fusion_strength={})",
            self.mask_ratio, self.layers, self.tce_kernel, self.fusion_strength
        )
    }
}

fn rgb_from(t: &Tensor) -> PyResult<RgbImage> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(PyValueError::new_err(format!(
            "expected a (3, H, W) image, got {:?}",
            t.shape()
        )));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let n = h * w;
    let d = t.data();
    RgbImage::new(w, h, d[..n].to_vec(), d[n..2 * n].to_vec(), d[2 * n..].to_vec()).py()
}

fn gray_from(t: &Tensor) -> PyResult<GrayImage> {
    match t.rank() {
        2 => GrayImage::new(t.shape()[1], t.shape()[0], t.data().to_vec()).py(),
        3 => Ok(rgb_from(t)?.luma()),
        _ => Err(PyValueError::new_err(format!(
            "expected an (H, W) or (3, H, W) image, got {:?}",
            t.shape()
        ))),
    }
}

fn gray_tensor(g: &GrayImage) -> Tensor {
    Tensor::new(vec![g.height(), g.width()], g.data().to_vec()).expect("consistent gray plane")
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix_from(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a square matrix"));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Reads a PNG or PFM file as a `(3, H, W)` tensor in `[0, 1]`.
#[pyfunction]
fn read_image(path: &str) -> PyResult<PyTensor> {
    let (img, _) = io::read_image(path).py()?;
    Ok(img.to_tensor().into())
}

/// Writes a `(3, H, W)` tensor; PFM for a `.pfm` path, 16-bit PNG otherwise.
#[pyfunction]
fn write_image(path: &str, img: &PyTensor) -> PyResult<()> {
    io::write_image(path, &rgb_from(&img.inner)?).py()
}

#[pyfunction]
#[pyo3(signature = (img, params=None))]
fn rgb_to_hvi(img: &PyTensor, params: Option<PyHviParams>) -> PyResult<PyTensor> {
    let p = params.map(|p| p.core()).transpose()?.unwrap_or_default();
    Ok(colorspace::rgb_to_hvi(&rgb_from(&img.inner)?, &p).py()?.to_tensor().into())
}

#[pyfunction]
#[pyo3(signature = (hvi, params=None))]
fn hvi_to_rgb(hvi: &PyTensor, params: Option<PyHviParams>) -> PyResult<PyTensor> {
    let p = params.map(|p| p.core()).transpose()?.unwrap_or_default();
    let h = HviImage::from_tensor(&hvi.inner, p.k, p.eps).py()?;
    Ok(colorspace::hvi_to_rgb(&h, &p).py()?.to_tensor().into())
}

#[pyfunction]
fn second_moment(f: &PyTensor) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_rows(&caa::second_moment(&f.inner).py()?))
}

#[pyfunction]
fn variance_map(d_i: Vec<Vec<f64>>, d_hv: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let cov = caa::variance_map(&matrix_from(d_i)?, &matrix_from(d_hv)?).py()?;
    Ok(matrix_rows(&cov))
}

#[pyfunction]
#[pyo3(signature = (cov, ratio=1.0/3.0))]
fn build_mask(cov: Vec<Vec<f64>>, ratio: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_rows(&caa::build_mask(&matrix_from(cov)?, ratio).py()?))
}

/// Channel adjustment over `(H, W, C)` streams. Uses the bundle in
/// `weights` when given, else seeded random weights.
#[pyfunction]
#[pyo3(signature = (f_i, f_hv, config=None, seed=42, weights=None))]
fn caa_forward<'py>(
    py: Python<'py>,
    f_i: &PyTensor,
    f_hv: &PyTensor,
    config: Option<PyCaaConfig>,
    seed: u64,
    weights: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let (cfg, w) = match weights {
        Some(dir) => CaaWeights::load(dir).py()?,
        None => {
            let cfg = config.map(|c| c.core()).transpose()?.unwrap_or_default();
            (cfg, CaaWeights::random(&cfg, seed).py()?)
        }
    };
    let out = caa::caa_forward(&f_i.inner, &f_hv.inner, &cfg, &w).py()?;
    let d = PyDict::new(py);
    d.set_item("vcf_loss", caa::vcf_loss(&out.reports).py()?)?;
    d.set_item("popcounts", out.reports.iter().map(|r| r.popcount()).collect::<Vec<_>>())?;
    d.set_item("cov", out.reports.iter().map(|r| matrix_rows(&r.cov)).collect::<Vec<_>>())?;
    d.set_item("f_i", PyTensor::from(out.f_i))?;
    d.set_item("f_hv", PyTensor::from(out.f_hv))?;
    Ok(d)
}

/// `(H, W, 6)` intensity and chroma streams of an HVI tensor.
#[pyfunction]
#[pyo3(signature = (hvi, params=None))]
fn lift_streams(hvi: &PyTensor, params: Option<PyHviParams>) -> PyResult<(PyTensor, PyTensor)> {
    let p = params.map(|p| p.core()).transpose()?.unwrap_or_default();
    let h = HviImage::from_tensor(&hvi.inner, p.k, p.eps).py()?;
    let (a, b) = features::lift_streams(&h).py()?;
    Ok((a.into(), b.into()))
}

/// Returns `(value, gradient)` for `(2C, H, W)` feature maps.
#[pyfunction]
#[pyo3(signature = (pred, gt, tau=1.0))]
fn cda_loss(pred: &PyTensor, gt: &PyTensor, tau: f64) -> PyResult<(f64, PyTensor)> {
    let l = losses::cda_loss(&pred.inner, &gt.inner, tau).py()?;
    Ok((l.value, l.grad.into()))
}

/// Returns `(value, grad_rgb, grad_hvi)`.
#[pyfunction]
#[pyo3(signature = (out_rgb, gt_rgb, out_hvi, gt_hvi, lambda_hvi=1.0))]
fn rec_loss(
    out_rgb: &PyTensor,
    gt_rgb: &PyTensor,
    out_hvi: &PyTensor,
    gt_hvi: &PyTensor,
    lambda_hvi: f64,
) -> PyResult<(f64, PyTensor, PyTensor)> {
    let l = losses::rec_loss_tensors(&out_rgb.inner, &gt_rgb.inner, &out_hvi.inner, &gt_hvi.inner, lambda_hvi)
        .py()?;
    Ok((l.value, l.grad_rgb.into(), l.grad_hvi.into()))
}

/// All loss terms for a prediction/reference image pair, as a dict.
#[pyfunction]
#[pyo3(signature = (pred, gt, tau=1.0, lambda_hvi=1.0, lambda_vcf=0.5, lambda_cda=0.5, warmup=false, config=None, seed=42))]
#[allow(clippy::too_many_arguments)]
fn loss_eval<'py>(
    py: Python<'py>,
    pred: &PyTensor,
    gt: &PyTensor,
    tau: f64,
    lambda_hvi: f64,
    lambda_vcf: f64,
    lambda_cda: f64,
    warmup: bool,
    config: Option<PyCaaConfig>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let caa = config.map(|c| c.core()).transpose()?.unwrap_or_default();
    let setup = LossSetup {
        caa,
        weights: LossWeights {
            lambda_hvi,
            lambda_vcf,
            lambda_cda,
            warmup,
        },
        tau,
        ..LossSetup::default()
    };
    let w = CaaWeights::random(&caa, seed).py()?;
    let b = evaluate_losses(&rgb_from(&pred.inner)?, &rgb_from(&gt.inner)?, &setup, &w, &IdentityEnhancer).py()?;
    let d = PyDict::new(py);
    d.set_item("l_rec", b.l_rec)?;
    d.set_item("l_vcf", b.l_vcf)?;
    d.set_item("l_cda", b.l_cda)?;
    d.set_item("l_total", b.l_total)?;
    d.set_item("record", b.record(tau, &setup.weights))?;
    Ok(d)
}

/// Colour `(3, H, W)` tensors hold `[0, 1]` samples and are scored with
/// peak 1 whatever `dynamic_range` is; gray `(H, W)` planes are scored
/// as given against `dynamic_range`.
#[pyfunction]
#[pyo3(signature = (out, gt, dynamic_range=1.0))]
fn psnr(out: &PyTensor, gt: &PyTensor, dynamic_range: f64) -> PyResult<f64> {
    if out.inner.rank() == 3 {
        iqa::psnr_rgb(&rgb_from(&out.inner)?, &rgb_from(&gt.inner)?, 1.0, 1.0).py()
    } else {
        iqa::psnr(&gray_from(&out.inner)?, &gray_from(&gt.inner)?, dynamic_range).py()
    }
}

#[pyfunction]
#[pyo3(signature = (x, y, dynamic_range=1.0))]
fn ssim(x: &PyTensor, y: &PyTensor, dynamic_range: f64) -> PyResult<f64> {
    iqa::ssim(&gray_from(&x.inner)?, &gray_from(&y.inner)?, &iqa::SsimParams::for_range(dynamic_range)).py()
}

#[pyfunction]
fn mscn(img: &PyTensor) -> PyResult<PyTensor> {
    Ok(gray_tensor(&iqa::mscn(&gray_from(&img.inner)?).py()?).into())
}

#[pyfunction]
fn brisque_features(img: &PyTensor) -> PyResult<Vec<f64>> {
    Ok(iqa::brisque_features(&gray_from(&img.inner)?).py()?.to_vec())
}

/// Returns `(shape, sigma_l, sigma_r, eta)`.
#[pyfunction]
fn aggd_fit(samples: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let f = iqa::aggd_fit(&samples).py()?;
    Ok((f.shape, f.sigma_l, f.sigma_r, f.eta))
}

#[pyclass(name = "NiqeModel", module = "vcr")]
pub struct PyNiqeModel {
    inner: NiqeModel,
}

#[pymethods]
impl PyNiqeModel {
    #[staticmethod]
    fn fit(images: Vec<PyRef<'_, PyTensor>>) -> PyResult<Self> {
        let grays = images.iter().map(|t| gray_from(&t.inner)).collect::<PyResult<Vec<_>>>()?;
        Ok(PyNiqeModel {
            inner: NiqeModel::fit(&grays).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyNiqeModel {
            inner: NiqeModel::load(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn score(&self, img: &PyTensor) -> PyResult<f64> {
        self.inner.score(&gray_from(&img.inner)?).py()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

/// Runs the invariant suite; returns `(name, measured, tolerance, passed)`.
#[pyfunction]
#[pyo3(signature = (seed=42))]
fn run_selfcheck(seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    Ok(selfcheck::run(seed)
        .py()?
        .into_iter()
        .map(|c| (c.name.to_string(), c.measured, c.tolerance, c.passed))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (width, height, seed=42))]
fn dead_leaves(width: usize, height: usize, seed: u64) -> PyResult<PyTensor> {
    Ok(vcr_core::synth::dead_leaves(width, height, seed).py()?.to_tensor().into())
}

#[pyfunction]
#[pyo3(signature = (width, height, seed=42))]
fn white_noise(width: usize, height: usize, seed: u64) -> PyResult<PyTensor> {
    Ok(gray_tensor(&vcr_core::synth::white_noise(width, height, seed).py()?).into())
}

#[pymodule]
fn vcr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyHviParams>()?;
    m.add_class::<PyCaaConfig>()?;
    m.add_class::<PyNiqeModel>()?;
    m.add_function(wrap_pyfunction!(read_image, m)?)?;
    m.add_function(wrap_pyfunction!(write_image, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_to_hvi, m)?)?;
    m.add_function(wrap_pyfunction!(hvi_to_rgb, m)?)?;
    m.add_function(wrap_pyfunction!(lift_streams, m)?)?;
    m.add_function(wrap_pyfunction!(second_moment, m)?)?;
    m.add_function(wrap_pyfunction!(variance_map, m)?)?;
    m.add_function(wrap_pyfunction!(build_mask, m)?)?;
    m.add_function(wrap_pyfunction!(caa_forward, m)?)?;
    m.add_function(wrap_pyfunction!(cda_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rec_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_eval, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(mscn, m)?)?;
    m.add_function(wrap_pyfunction!(brisque_features, m)?)?;
    m.add_function(wrap_pyfunction!(aggd_fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_selfcheck, m)?)?;
    m.add_function(wrap_pyfunction!(dead_leaves, m)?)?;
    m.add_function(wrap_pyfunction!(white_noise, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes() {
        Python::initialize();
        Python::attach(|py| {
            assert!(py_err(Error::Config("x".into())).is_instance_of::<PyValueError>(py));
            assert!(py_err(Error::Numeric("x".into())).is_instance_of::<PyArithmeticError>(py));
            assert!(py_err(Error::Format {
                path: "p".into(),
                reason: "r".into()
            })
            .is_instance_of::<PyIOError>(py));
        });
    }

    #[test]
    fn rgb_tensor_round_trip() {
        let img = vcr_core::synth::random_rgb(5, 4, 1).unwrap();
        assert_eq!(rgb_from(&img.to_tensor()).unwrap(), img);
        assert!(rgb_from(&Tensor::zeros(&[2, 4, 5]).unwrap()).is_err());
    }
}
