//! Python bindings for the `timemm` crate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use timemm::checkpoint::Checkpoint;
use timemm::config::RunConfig;
use timemm::diagnostics::{perturb_timestamps, PerturbMode};
use timemm::error::Error;
use timemm::eval::RankingReport;
use timemm::operators::OperatorBank;
use timemm::pipeline::{self, Dataset, RunResult};
use timemm::synth::{generate, SynthConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric { .. } | Error::Oracle(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn metrics(report: &RankingReport) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (j, k) in report.ks.iter().enumerate() {
        out.insert(format!("recall@{k}"), report.recall[j]);
        out.insert(format!("ndcg@{k}"), report.ndcg[j]);
    }
    out
}

/// Run configuration; construct from `key = value` text.
#[pyclass(name = "RunConfig", module = "timemm_py")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::parse(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_file(path).map_err(py_err)?,
        })
    }

    /// Sets one key from its text form; the config is left unchanged on error.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let text = format!("{key} = {value}");
        self.inner = self.inner.clone().with_overrides([(1, text.as_str())]).map_err(py_err)?;
        Ok(())
    }

    fn echo(&self) -> String {
        self.inner.echo()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn tau(&self) -> Vec<f64> {
        self.inner.tau.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(k={}, dim={}, tau={:?})", self.inner.k, self.inner.dim, self.inner.tau)
    }
}

/// Interactions, their temporal split and item features.
#[pyclass(name = "Dataset", module = "timemm_py")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads the files named by `interactions` and `features` in the config.
    #[staticmethod]
    fn load(config: &PyRunConfig) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::load(&config.inner).map_err(py_err)?,
        })
    }

    /// Synthetic drift data with vision and text features.
    #[staticmethod]
    #[pyo3(signature = (users = 2000, items = 1000, seed = 0))]
    fn synthetic(users: usize, items: usize, seed: u64) -> PyResult<Self> {
        let data = generate(&SynthConfig {
            users,
            items,
            seed,
            ..SynthConfig::default()
        })
        .map_err(py_err)?;
        Ok(Self {
            inner: Dataset::new(data.log, data.features).map_err(py_err)?,
        })
    }

    /// Same data with perturbed train timestamps: `shuffle`, `constant` or `noise`.
    #[pyo3(signature = (mode, seed = 0, noise_scale = 0.05))]
    fn perturbed(&self, mode: &str, seed: u64, noise_scale: f64) -> PyResult<Self> {
        let mode: PerturbMode = mode.parse().map_err(py_err)?;
        let split = perturb_timestamps(&self.inner.split, mode, seed, noise_scale).map_err(py_err)?;
        Ok(Self {
            inner: Dataset {
                split,
                ..self.inner.clone()
            },
        })
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.log.num_users()
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.log.num_items()
    }

    #[getter]
    fn num_interactions(&self) -> usize {
        self.inner.log.len()
    }

    #[getter]
    fn num_train(&self) -> usize {
        self.inner.split.train().len()
    }

    #[getter]
    fn modalities(&self) -> Vec<String> {
        self.inner.features.iter().map(|f| f.name.clone()).collect()
    }

    fn evaluated_users(&self) -> Vec<usize> {
        self.inner.split.evaluated_users()
    }

    /// Train interactions of one user as `(item, time)` in time order.
    fn train_history(&self, user: usize) -> PyResult<Vec<(u32, f64)>> {
        let train = self.inner.split.train();
        if user >= train.num_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(train.user_history(user).iter().map(|t| (t.item, t.time)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, interactions={})",
            self.num_users(),
            self.num_items(),
            self.num_interactions()
        )
    }
}

/// The K normalized operators built from a dataset's train split.
#[pyclass(name = "OperatorBank", module = "timemm_py")]
struct PyOperatorBank {
    inner: OperatorBank,
}

#[pymethods]
impl PyOperatorBank {
    #[new]
    fn new(dataset: &PyDataset, config: &PyRunConfig) -> PyResult<Self> {
        Ok(Self {
            inner: OperatorBank::build(dataset.inner.split.train(), &config.inner.kernel_mode()).map_err(py_err)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    fn degrees(&self, k: usize) -> PyResult<Vec<f64>> {
        self.check(k)?;
        Ok(self.inner.degrees(k).to_vec())
    }

    /// Dense rows of operator `k`; meant for small graphs.
    fn dense(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.check(k)?;
        let n = self.inner.num_nodes();
        Ok(self.inner.operator(k).to_dense().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// Nonzero entries of operator `k` as `(row, col, value)`.
    fn triplets(&self, k: usize) -> PyResult<Vec<(usize, usize, f64)>> {
        self.check(k)?;
        let op = self.inner.operator(k);
        let p = op.pattern();
        let mut out = Vec::with_capacity(p.nnz());
        for r in 0..p.n() {
            for idx in p.row(r) {
                out.push((r, p.indices()[idx] as usize, op.values()[idx]));
            }
        }
        Ok(out)
    }
}

impl PyOperatorBank {
    fn check(&self, k: usize) -> PyResult<()> {
        if k >= self.inner.k() {
            return Err(PyValueError::new_err(format!("operator {k} out of range (k = {})", self.inner.k())));
        }
        Ok(())
    }
}

/// Result of training: best parameters, history and metrics.
#[pyclass(name = "TrainedModel", module = "timemm_py")]
struct PyTrainedModel {
    result: RunResult,
    config: RunConfig,
    split: timemm::data::TemporalSplit,
}

#[pymethods]
impl PyTrainedModel {
    #[getter]
    fn best_epoch(&self) -> usize {
        self.result.outcome.best_epoch
    }

    /// `(epoch, loss_rec, loss_div, recall20_valid)` per epoch.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.result
            .outcome
            .history
            .iter()
            .map(|r| (r.epoch, r.loss_rec, r.loss_div, r.recall20_valid))
            .collect()
    }

    #[getter]
    fn valid_metrics(&self) -> BTreeMap<String, f64> {
        metrics(&self.result.valid)
    }

    #[getter]
    fn test_metrics(&self) -> BTreeMap<String, f64> {
        metrics(&self.result.test)
    }

    fn score(&self, user: usize, item: usize) -> PyResult<f64> {
        let fwd = self.result.model.forward(&self.result.bank).map_err(py_err)?;
        if user >= fwd.num_users() || item >= fwd.num_items() {
            return Err(PyValueError::new_err("user or item out of range"));
        }
        Ok(fwd.score(user, item))
    }

    /// Per-user scale gates `g` (rows sum to 1).
    fn scale_gates(&self) -> PyResult<Vec<Vec<f64>>> {
        let fwd = self.result.model.forward(&self.result.bank).map_err(py_err)?;
        Ok((0..fwd.g_user.rows()).map(|u| fwd.g_user.row(u).to_vec()).collect())
    }

    /// Per-user modality routing weights.
    fn modality_weights(&self) -> PyResult<Vec<Vec<f64>>> {
        let fwd = self.result.model.forward(&self.result.bank).map_err(py_err)?;
        Ok((0..fwd.beta.rows()).map(|u| fwd.beta.row(u).to_vec()).collect())
    }

    /// Headline diagnostics; `write_to` also writes the CSV reports there.
    #[pyo3(signature = (write_to = None))]
    fn diagnostics(&self, write_to: Option<PathBuf>) -> PyResult<BTreeMap<String, f64>> {
        let bundle = pipeline::diagnose(&self.result.model, &self.result.bank, &self.split).map_err(py_err)?;
        if let Some(dir) = write_to {
            std::fs::create_dir_all(&dir).map_err(|e| py_err(Error::io(&dir, e)))?;
            bundle.write_all(&dir).map_err(py_err)?;
        }
        let mut out = BTreeMap::new();
        out.insert("energy_monotonic_rate".to_string(), bundle.energy.overall.monotonic_rate);
        out.insert(
            "entropy_interior_fraction".to_string(),
            bundle.mixing.entropy_interior_fraction,
        );
        out.insert("entropy_median".to_string(), bundle.mixing.entropy_summary.median);
        Ok(out)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_parameters(self.config.echo(), &self.result.model.params)
            .save(path)
            .map_err(py_err)
    }
}

/// Trains a model and evaluates the best checkpoint.
#[pyfunction]
fn train(py: Python<'_>, config: &PyRunConfig, dataset: &PyDataset) -> PyResult<PyTrainedModel> {
    let cfg = config.inner.clone();
    let data = dataset.inner.clone();
    let result = py
        .detach(|| pipeline::run(&cfg, &data.split, &data.features))
        .map_err(py_err)?;
    Ok(PyTrainedModel {
        result,
        config: cfg,
        split: data.split,
    })
}

/// Kernel weight `(1 + dt)^(-1/tau)`.
#[pyfunction]
fn kernel(dt: f64, tau: f64) -> PyResult<f64> {
    timemm::operators::kernel(dt, tau).map_err(py_err)
}

/// Runs the spectral checks; returns `(passed, table)`.
#[pyfunction]
#[pyo3(signature = (graphs = 50, seed = 0))]
fn oracle_check(graphs: usize, seed: u64) -> PyResult<(bool, String)> {
    let summary = timemm::spectral::run_oracle_suite(graphs, seed).map_err(py_err)?;
    Ok((summary.passed(), summary.table()))
}

#[pymodule]
fn timemm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyOperatorBank>()?;
    m.add_class::<PyTrainedModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(kernel, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
