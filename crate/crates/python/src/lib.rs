//! Python bindings: generate data, build and train models, and inspect the
//! learned stencils. Images cross the boundary as nested lists indexed
//! `[space][time][channel]`, stencils as lists of rows.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stencilseer::datagen::{self, GenConfig};
use stencilseer::experiments::{self, Perturbation};
use stencilseer::model::{self, ModelConfig, TrainConfig};
use stencilseer::verify::{self, Stencil};
use stencilseer::{Error, Family, Tensor3};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Shape(_) | Error::Config(_) | Error::Usage(_) | Error::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn family(name: &str) -> PyResult<Family> {
    name.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown family {name:?}")))
}

fn nested(t: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    (0..t.rows())
        .map(|r| {
            (0..t.cols())
                .map(|c| (0..t.channels()).map(|ch| t.get(r, c, ch)).collect())
                .collect()
        })
        .collect()
}

fn rows_of(s: &Stencil) -> Vec<Vec<f64>> {
    s.data().chunks(s.extent().1).map(<[f64]>::to_vec).collect()
}

fn stencil(rows: Vec<Vec<f64>>) -> PyResult<Stencil> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("stencil rows differ in length"));
    }
    let n = rows.len();
    Stencil::new(n, cols, rows.concat()).map_err(py_err)
}

/// A stencil as a list of rows.
type Rows = Vec<Vec<f64>>;
/// `(epoch, train_mse, val_mse, best_val_mse, regularizer)`
type EpochRow = (usize, f64, f64, f64, f64);

#[pyclass(name = "GenConfig", module = "stencilseer", from_py_object)]
#[derive(Clone)]
struct PyGenConfig {
    inner: GenConfig,
}

#[pymethods]
impl PyGenConfig {
    #[new]
    #[pyo3(signature = (family, width=50, height=50, n_samples=101, seed=0, alpha=1e-4, cfl=0.5))]
    fn new(
        family: &str,
        width: usize,
        height: usize,
        n_samples: usize,
        seed: u64,
        alpha: f64,
        cfl: f64,
    ) -> PyResult<Self> {
        let inner = GenConfig {
            width,
            height,
            n_samples,
            seed,
            alpha,
            cfl,
            ..GenConfig::new(self::family(family)?)
        };
        inner.validate().map_err(py_err)?;
        Ok(PyGenConfig { inner })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!(
            "GenConfig({}, width={}, height={}, n_samples={}, seed={}, alpha={:e}, cfl={})",
            g.family, g.width, g.height, g.n_samples, g.seed, g.alpha, g.cfl
        )
    }
}

#[pyclass(name = "Dataset", module = "stencilseer", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: datagen::Dataset,
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&datagen::Sample> {
        self.inner
            .samples
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} of {}", self.inner.len())))
    }
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn generate(cfg: &PyGenConfig) -> PyResult<Self> {
        let inner = datagen::generate_dataset(&cfg.inner).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let inner = datagen::read_dataset(path).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        datagen::write_dataset(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn train_indices(&self) -> Vec<usize> {
        self.inner.train.clone()
    }

    #[getter]
    fn val_indices(&self) -> Vec<usize> {
        self.inner.val.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn image(&self, i: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(nested(&self.sample(i)?.image))
    }

    /// Row 0 holds the source at x = 0, row 1 the source at x = L.
    fn boundary(&self, i: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(nested(&self.sample(i)?.boundary))
    }
}

#[pyclass(name = "Model", module = "stencilseer")]
struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (family, widths=None, coupling=None, decoder=false, lambda_zs=None, seed=0))]
    fn new(
        family: &str,
        widths: Option<Vec<usize>>,
        coupling: Option<bool>,
        decoder: bool,
        lambda_zs: Option<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg = ModelConfig::for_family(self::family(family)?);
        if let Some(w) = widths {
            cfg = cfg.with_widths(w);
        }
        if let Some(c) = coupling {
            cfg = cfg.with_coupling(c);
        }
        if decoder {
            cfg = cfg.with_decoder();
        }
        if let Some(l) = lambda_zs {
            cfg.lambda_zs = l;
        }
        let inner = model::build_model(&cfg, seed).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_weights_text(text: &str) -> PyResult<Self> {
        let inner = model::parse_weights(text).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    fn weights_text(&self) -> String {
        model::weights_to_text(&self.inner)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.all_params()
    }

    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.assign_params(&params).map_err(py_err)
    }

    fn init_from_stencils(&mut self, cfg: &PyGenConfig) -> PyResult<()> {
        self.inner.init_from_stencils(&cfg.inner).map_err(py_err)
    }

    fn boundary_mse(&self, data: &PyDataset, i: usize) -> PyResult<f64> {
        self.inner.boundary_mse(data.sample(i)?).map_err(py_err)
    }

    /// Trains in place and returns one [`EpochRow`] per epoch.
    #[pyo3(signature = (data, epochs=150, steps_per_epoch=2000, stop_threshold=1e-11, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        data: &PyDataset,
        epochs: usize,
        steps_per_epoch: usize,
        stop_threshold: f64,
        seed: u64,
    ) -> PyResult<Vec<EpochRow>> {
        let cfg = TrainConfig {
            epochs,
            steps_per_epoch,
            stop_threshold,
            seed,
            ..TrainConfig::default()
        };
        let inner = &mut self.inner;
        let report = py
            .detach(|| model::train(inner, &data.inner, &cfg))
            .map_err(py_err)?;
        Ok(report
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train_mse, e.val_mse, e.best_val_mse, e.regularizer))
            .collect())
    }

    /// Stencil of the whole encoder from input `in_ch` to last-layer kernel `out_k`.
    #[pyo3(signature = (in_ch=0, out_k=0))]
    fn effective_stencil(&self, in_ch: usize, out_k: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = verify::effective_stencil(&self.inner.encoder, in_ch, out_k).map_err(py_err)?;
        Ok(rows_of(&s))
    }

    /// Post-activation map of every layer for sample `i`.
    fn feature_maps(&self, data: &PyDataset, i: usize) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
        let enc = self.inner.encode(&data.sample(i)?.image).map_err(py_err)?;
        Ok(enc.maps.iter().map(nested).collect())
    }

    fn activation_error(&self, data: &PyDataset, i: usize) -> PyResult<f64> {
        let r = verify::activation_report(&self.inner, data.sample(i)?).map_err(py_err)?;
        Ok(r.activation_error())
    }

    /// Per-layer activation norm ratios between `factor·x` and `x`.
    fn probe_scaling(&self, data: &PyDataset, i: usize, factor: f64) -> PyResult<Vec<f64>> {
        let p = experiments::probe_scaling(&self.inner, data.sample(i)?, factor).map_err(py_err)?;
        Ok(p.ratios)
    }

    /// Rows flagged after perturbing spatial row W/2; `amplitude=None` zeroes it.
    #[pyo3(signature = (data, i, amplitude=None))]
    fn probe_missing(&self, data: &PyDataset, i: usize, amplitude: Option<f64>) -> PyResult<Vec<usize>> {
        let p = amplitude.map_or(Perturbation::Zeroing, Perturbation::Additive);
        let r = experiments::probe_missing(&self.inner, data.sample(i)?, p).map_err(py_err)?;
        Ok(r.flagged)
    }
}

/// Annihilating stencil of a generator scheme.
#[pyfunction]
#[pyo3(signature = (family, cfl=0.5))]
fn analytic_stencil(family: &str, cfl: f64) -> PyResult<Vec<Vec<f64>>> {
    let a = verify::analytic_stencil(self::family(family)?, cfl).map_err(py_err)?;
    Ok(rows_of(&a.stencil))
}

/// Full convolution of two stencils: applying the result equals applying
/// `first` then `second`.
#[pyfunction]
fn compose(first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows_of(&verify::compose(&stencil(first)?, &stencil(second)?)))
}

/// Cosine similarity after alignment, also trying the transpose of `learned`.
#[pyfunction]
fn similarity(learned: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    verify::similarity_up_to_transpose(&stencil(learned)?, &stencil(truth)?).map_err(py_err)
}

/// Best pair of 2×2 kernels for a target of extent at most 3×3, with the
/// Frobenius residual of their composition.
#[pyfunction]
fn best_factorization(target: Vec<Vec<f64>>) -> PyResult<(Rows, Rows, f64)> {
    let f = verify::best_factorization(&stencil(target)?).map_err(py_err)?;
    Ok((rows_of(&f.first), rows_of(&f.second), f.residual))
}

#[pymodule]
#[pyo3(name = "stencilseer")]
fn stencilseer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(analytic_stencil, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(best_factorization, m)?)?;
    Ok(())
}
