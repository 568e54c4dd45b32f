//! Python bindings for the `dnnrto` crate.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows, so the module has no numpy dependency.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dnnrto::cli::{run_in_memory, RunConfig};
use dnnrto::problems::{Example, InverseProblem, ProblemConfig};
use dnnrto::surrogate::{self, MlpArchitecture, MlpSurrogate, TrainOptions, TrainingSet};

fn err(e: dnnrto::Error) -> PyErr {
    match e {
        dnnrto::Error::InvalidInput(_) | dnnrto::Error::Dimension { .. } | dnnrto::Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Training pairs given as one sample per row.
fn training_set(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> PyResult<TrainingSet> {
    TrainingSet::new(rows_to_matrix(inputs)?.transpose(), rows_to_matrix(targets)?.transpose()).map_err(err)
}

fn to_vectors(rows: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    rows.into_iter().map(DVector::from_vec).collect()
}

/// Swish activation `z / (1 + exp(-z))`.
#[pyfunction]
fn swish(z: f64) -> f64 {
    surrogate::swish(z)
}

/// Effective sample size of one chain column.
#[pyfunction]
fn ess(column: Vec<f64>) -> PyResult<f64> {
    dnnrto::diagnostics::ess(&column).map_err(err)
}

/// Sample autocorrelations for lags `1..=max_lag`.
#[pyfunction]
fn autocorrelation(column: Vec<f64>, max_lag: usize) -> PyResult<Vec<f64>> {
    dnnrto::diagnostics::autocorrelation(&column, max_lag).map_err(err)
}

/// `(rem, rec)` of `samples` against `reference`, both lists of rows.
#[pyfunction]
fn error_metrics(samples: Vec<Vec<f64>>, reference: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let r = dnnrto::diagnostics::error_metrics(&to_vectors(samples), &to_vectors(reference)).map_err(err)?;
    Ok((r.rem, r.rec))
}

/// Max-abs gap between the two closed forms of the linearised posterior
/// covariance for the operator `a`.
#[pyfunction]
fn covariance_identity_check(a: Vec<Vec<f64>>) -> PyResult<f64> {
    dnnrto::design::covariance_identity_check(&rows_to_matrix(&a)?).map_err(err)
}

/// Feedforward Swish network.
#[pyclass(name = "Mlp", skip_from_py_object)]
#[derive(Clone)]
struct PyMlp {
    net: MlpSurrogate,
}

#[pymethods]
impl PyMlp {
    /// Randomly initialised network with `layers` hidden layers of `width`.
    #[new]
    #[pyo3(signature = (input, output, layers, width, seed = 0))]
    fn new(input: usize, output: usize, layers: usize, width: usize, seed: u64) -> PyResult<Self> {
        let arch = MlpArchitecture::new(input, output, layers, width).map_err(err)?;
        Ok(Self {
            net: MlpSurrogate::init(&arch, seed).map_err(err)?,
        })
    }

    /// Trains a fresh network on `inputs -> targets` with Adam.
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, layers, width, learning_rate = 5e-4, epochs = 20_000, seed = 0))]
    fn fit(
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        layers: usize,
        width: usize,
        learning_rate: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let data = training_set(&inputs, &targets)?;
        let arch = MlpArchitecture::new(data.input_dim(), data.output_dim(), layers, width).map_err(err)?;
        let opts = TrainOptions {
            learning_rate,
            epochs,
            seed,
            ..TrainOptions::default()
        };
        Ok(Self {
            net: surrogate::train(&arch, &data, &opts).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            net: surrogate::load_network(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        surrogate::save_network(&self.net, &path).map_err(err)
    }

    fn forward(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.net.forward(&DVector::from_vec(v)).map_err(err)?.as_slice().to_vec())
    }

    fn input_jacobian(&self, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.net.input_jacobian(&DVector::from_vec(v)).map_err(err)?))
    }

    /// Mean squared error over the rows of `inputs` and `targets`.
    fn loss(&self, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<f64> {
        let data = training_set(&inputs, &targets)?;
        surrogate::loss(&self.net, &data).map_err(err)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.net.widths()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.net.num_parameters()
    }
}

/// One of the benchmark inverse problems.
#[pyclass(name = "Problem")]
struct PyProblem {
    inner: InverseProblem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (example = "rbf9", mesh = 40, kl_modes = 120, data_seed = 2021))]
    fn new(example: &str, mesh: usize, kl_modes: usize, data_seed: u64) -> PyResult<Self> {
        let example = match example {
            "rbf9" => Example::Rbf9,
            "kl" => Example::Kl,
            "linear" => Example::Linear,
            other => return Err(PyValueError::new_err(format!("unknown example {other:?}"))),
        };
        let config = ProblemConfig {
            example,
            mesh,
            kl_modes,
            data_seed,
            ..ProblemConfig::default()
        };
        Ok(Self {
            inner: InverseProblem::build(&config).map_err(err)?,
        })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn num_obs(&self) -> usize {
        self.inner.num_obs()
    }

    #[getter]
    fn sensors(&self) -> Vec<[f64; 2]> {
        self.inner.sensors.clone()
    }

    /// True parameters used to synthesise data.
    fn truth(&self) -> Vec<f64> {
        self.inner.truth().as_slice().to_vec()
    }

    /// Noiseless observations at parameters `u`.
    fn forward(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = self.inner.forward.eval(&DVector::from_vec(u)).map_err(err)?;
        Ok(out.as_slice().to_vec())
    }

    /// Observation Jacobian at `u`, one row per sensor.
    fn jacobian(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let (_, j) = self.inner.forward.eval_with_jacobian(&DVector::from_vec(u)).map_err(err)?;
        Ok(matrix_to_rows(&j))
    }
}

/// Runs a sampler from TOML config text and returns a summary dict with
/// the whitened chain under `"samples"`. Nothing is written to disk.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_toml(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py
        .detach(|| run_in_memory(&cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("method", out.method.name())?;
    d.set_item("acceptance_probability", out.chain.acceptance_probability)?;
    d.set_item("unconverged", out.chain.unconverged)?;
    d.set_item("rank", out.subspace.rank())?;
    d.set_item("v_ref", out.v_ref.as_slice().to_vec())?;
    d.set_item("seconds_offline", out.seconds_offline)?;
    d.set_item("seconds_online", out.seconds_online)?;
    let samples: Vec<Vec<f64>> = out.chain.samples().iter().map(|s| s.as_slice().to_vec()).collect();
    d.set_item("samples", samples)?;
    Ok(d)
}

#[pymodule]
fn dnnrto_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(swish, m)?)?;
    m.add_function(wrap_pyfunction!(ess, m)?)?;
    m.add_function(wrap_pyfunction!(autocorrelation, m)?)?;
    m.add_function(wrap_pyfunction!(error_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(covariance_identity_check, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyProblem>()?;
    Ok(())
}
