//! Python bindings for `splitclass`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use splitclass::clustering::{self, ClusterResult};
use splitclass::controller::{self, ClusterBudget, ControllerConfig};
use splitclass::data::{self, GeneratorSpec};
use splitclass::experiment::{self, ExperimentConfig};
use splitclass::{metrics, Matrix, Rng};

fn err(e: splitclass::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(points: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(points).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

/// Result of a k-means or X-Means run.
#[pyclass(name = "Clustering", module = "splitclass_py", frozen)]
pub struct PyClustering {
    inner: ClusterResult,
}

#[pymethods]
impl PyClustering {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.centroids)
    }

    #[getter]
    fn assignment(&self) -> Vec<usize> {
        self.inner.assignment.clone()
    }

    #[getter]
    fn inertia(&self) -> f64 {
        self.inner.inertia
    }

    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn __repr__(&self) -> String {
        format!("Clustering(k={}, inertia={})", self.inner.k, self.inner.inertia)
    }
}

#[pyfunction]
fn sq_euclidean(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    splitclass::numeric::sq_euclidean(&a, &b).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=0, max_iters=100))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, max_iters: usize) -> PyResult<PyClustering> {
    let m = matrix(&points)?;
    let inner = clustering::kmeans(&m, k, &mut Rng::new(seed), max_iters).map_err(err)?;
    Ok(PyClustering { inner })
}

/// X-Means with at most `max_k` clusters.
#[pyfunction]
#[pyo3(signature = (points, max_k, seed=0))]
fn xmeans(points: Vec<Vec<f64>>, max_k: usize, seed: u64) -> PyResult<PyClustering> {
    let m = matrix(&points)?;
    let inner = clustering::xmeans_capped(&m, max_k, &mut Rng::new(seed)).map_err(err)?;
    Ok(PyClustering { inner })
}

#[pyfunction]
fn bic_score(points: Vec<Vec<f64>>, clustering: &PyClustering) -> PyResult<f64> {
    let m = matrix(&points)?;
    clustering::bic_score(&m, &clustering.inner).map_err(err)
}

/// One controller step; returns the new `(num_allowed, flags)`.
#[pyfunction]
#[pyo3(signature = (num_allowed, flags, per_class_fn, threshold=0.3, max_clusters=5))]
fn update_budgets(
    num_allowed: Vec<usize>,
    flags: Vec<bool>,
    per_class_fn: Vec<f64>,
    threshold: f64,
    max_clusters: usize,
) -> PyResult<(Vec<usize>, Vec<bool>)> {
    let budgets = ClusterBudget { num_allowed, flags };
    let cfg = ControllerConfig {
        confusion_threshold: threshold,
        max_clusters,
    };
    let next = controller::update_budgets(&budgets, &per_class_fn, &cfg).map_err(err)?;
    Ok((next.num_allowed, next.flags))
}

/// Metrics report as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    true_labels: Vec<usize>,
    pred_labels: Vec<usize>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cm = metrics::confusion(&true_labels, &pred_labels, num_classes).map_err(err)?;
    let report = metrics::report(&cm).map_err(err)?;
    let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

/// Synthetic dataset from a JSON generator spec:
/// `(features, parent_labels, mode_ids, class_names)`.
#[pyfunction]
fn generate(spec_json: &str) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>, Vec<String>)> {
    let spec: GeneratorSpec = serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let d = data::generate(&spec).map_err(err)?;
    Ok((rows(&d.features), d.parent_labels, d.mode_ids.unwrap_or_default(), d.class_names))
}

/// Runs an experiment config (JSON text) and returns the report as a dict.
/// Relative CSV paths resolve against the working directory.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    let report = py.detach(|| experiment::run_experiment(&cfg)).map_err(err)?;
    json_to_py(py, &report.to_json().map_err(err)?)
}

#[pymodule]
fn splitclass_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClustering>()?;
    m.add_function(wrap_pyfunction!(sq_euclidean, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(xmeans, m)?)?;
    m.add_function(wrap_pyfunction!(bic_score, m)?)?;
    m.add_function(wrap_pyfunction!(update_budgets, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
