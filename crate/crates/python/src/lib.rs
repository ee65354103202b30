//! Python bindings: datasets, checkpoints, training and the loss functions.

use std::path::PathBuf;

use nalgebra::Vector3;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use edgefbg::checkpoint::Checkpoint as CoreCheckpoint;
use edgefbg::config::RunConfig;
use edgefbg::dataset::Dataset as CoreDataset;
use edgefbg::hyperband::plan_brackets;
use edgefbg::loss;
use edgefbg::model::ShapeRegressor;
use edgefbg::run::{self, SplitChoice};
use edgefbg::simulator::{generate_samples, GeneratorConfig};
use edgefbg::train::predict_shape;
use edgefbg::Error;

fn py_err(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.kind());
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Training { .. } | Error::NonFiniteGradient(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Spectra and marker coordinates of a set of samples.
#[pyclass(module = "edgefbg_py")]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: CoreDataset::read(&path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(py_err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// The 375 raw intensities of sample `i` (3 spectra × 125 wavelengths).
    fn intensities(&self, i: usize) -> PyResult<Vec<f32>> {
        self.check(i)?;
        Ok(self.inner.intensities(i).to_vec())
    }

    /// Marker coordinates of sample `i` in mm, one `[x, y, z]` per marker.
    fn coords(&self, i: usize) -> PyResult<Vec<[f32; 3]>> {
        self.check(i)?;
        Ok(self.inner.coords(i).chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

impl Dataset {
    fn check(&self, i: usize) -> PyResult<()> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("sample {i} out of range")));
        }
        Ok(())
    }
}

/// A trained model with its fitted transforms.
#[pyclass(module = "edgefbg_py")]
struct Checkpoint {
    inner: CoreCheckpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint {
            inner: CoreCheckpoint::read(&path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(py_err)
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.model.output_dim()
    }

    /// The manifest as a JSON string.
    fn manifest(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.manifest()).map_err(json_err)
    }

    /// Marker positions for one sample's 375 raw intensities. Relative-coordinate
    /// models need the first marker's position as `anchor`.
    #[pyo3(signature = (intensities, anchor=None))]
    fn predict(&mut self, intensities: Vec<f32>, anchor: Option<[f64; 3]>) -> PyResult<Vec<[f64; 3]>> {
        let anchor = anchor.map(|a| Vector3::new(a[0], a[1], a[2]));
        let ck = &mut self.inner;
        let chain = predict_shape(&mut ck.model, &ck.pipeline, &intensities, anchor.as_ref()).map_err(py_err)?;
        Ok(chain.positions.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    /// Per-split shape errors as a JSON string.
    #[pyo3(signature = (dataset, split="test"))]
    fn evaluate(&mut self, dataset: &Dataset, split: &str) -> PyResult<String> {
        let which: SplitChoice = split.parse().map_err(py_err)?;
        let rep = run::evaluate(&mut self.inner, &dataset.inner, which).map_err(py_err)?;
        serde_json::to_string(&rep).map_err(json_err)
    }
}

/// Simulates `n` samples with the default generator.
#[pyfunction]
fn generate(n: usize, seed: u64) -> PyResult<Dataset> {
    let samples = generate_samples(n, seed, &GeneratorConfig::default()).map_err(py_err)?;
    Ok(Dataset {
        inner: CoreDataset::from_samples(&samples).map_err(py_err)?,
    })
}

/// Trains from a JSON run config on `dataset`; returns the checkpoint and
/// the history as CSV.
#[pyfunction]
fn train(config_json: &str, dataset: &Dataset) -> PyResult<(Checkpoint, String)> {
    let cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    let result = run::train_on(&cfg, &dataset.inner).map_err(py_err)?;
    Ok((
        Checkpoint {
            inner: result.checkpoint,
        },
        result.history.to_csv(),
    ))
}

/// Genuine/imposter thresholds and label counts as a JSON string.
#[pyfunction]
#[pyo3(signature = (dataset, budget, seed, band=edgefbg::pairs::DEFAULT_BAND))]
fn pair_report(dataset: &Dataset, budget: usize, seed: u64, band: f64) -> PyResult<String> {
    let rep = run::pairs_report(&dataset.inner, budget, seed, band).map_err(py_err)?;
    serde_json::to_string(&rep).map_err(json_err)
}

/// Successive-halving schedule for maximum epochs `r` and reduction `eta`, as JSON.
#[pyfunction]
fn hyperband_plan(r: usize, eta: usize) -> PyResult<String> {
    serde_json::to_string(&plan_brackets(r, eta).map_err(py_err)?).map_err(json_err)
}

#[pyfunction]
fn huber_mod(a: f64, delta: f64) -> PyResult<f64> {
    loss::huber_mod(a, delta).map_err(py_err)
}

#[pyfunction]
fn contrastive(y_true: f64, y_pred: f64, margin: f64) -> f64 {
    loss::contrastive(y_true, y_pred, margin)
}

#[pymodule]
fn edgefbg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(pair_report, m)?)?;
    m.add_function(wrap_pyfunction!(hyperband_plan, m)?)?;
    m.add_function(wrap_pyfunction!(huber_mod, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive, m)?)?;
    Ok(())
}
