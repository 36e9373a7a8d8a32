use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use provsched::harness::{cmd_eval, cmd_table5, cmd_train, cmd_worstcase, ExperimentConfig, Overrides};
use provsched::queue::{self, QueueConfig, QueueId, QueueSystem, Rational, TaskId};
use provsched::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io(_) => PyOSError::new_err(msg),
        Error::AccumulatorOverflow { .. }
        | Error::InsufficientMemory { .. }
        | Error::TraceMismatch(_)
        | Error::BoundViolation(_)
        | Error::NonConvergence(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Hands a serde value to Python as plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn fraction(py: Python<'_>, r: Rational) -> PyResult<Py<PyAny>> {
    Ok(py.import("fractions")?.getattr("Fraction")?.call1((*r.numer(), *r.denom()))?.unbind())
}

fn queue_config(waiting_times: Vec<u64>, slice: u64, t_hat_inf: u64) -> PyResult<QueueConfig> {
    QueueConfig::new(waiting_times, slice, t_hat_inf).map_err(py_err)
}

/// Waiting times for queues 2..=n from the stress-test waiting time.
#[pyfunction]
fn compute_waiting_times(t_hat_inf: u64, num_queues: usize) -> PyResult<Vec<u64>> {
    queue::compute_waiting_times(t_hat_inf, num_queues).map_err(py_err)
}

#[pyfunction]
fn starvation_bound(py: Python<'_>, waiting_times: Vec<u64>, slice: u64, queue: usize) -> PyResult<Py<PyAny>> {
    let t_hat_inf = waiting_times.last().copied().unwrap_or(1);
    let cfg = queue_config(waiting_times, slice, t_hat_inf)?;
    fraction(py, queue::starvation_bound(&cfg, QueueId(queue)).map_err(py_err)?)
}

#[pyfunction]
fn finish_time_ratio_bound(py: Python<'_>, waiting_times: Vec<u64>, slice: u64) -> PyResult<Py<PyAny>> {
    let t_hat_inf = waiting_times.last().copied().unwrap_or(1);
    let cfg = queue_config(waiting_times, slice, t_hat_inf)?;
    fraction(py, queue::finish_time_ratio_bound(&cfg).map_err(py_err)?)
}

/// The reference hungry-factor trace, as rendered rows.
#[pyfunction]
fn table5(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &cmd_table5().map_err(py_err)?)
}

/// The multi-queue backbone on its own, driven tick by tick.
#[pyclass(name = "QueueSystem")]
struct PyQueueSystem {
    inner: QueueSystem,
}

#[pymethods]
impl PyQueueSystem {
    #[new]
    #[pyo3(signature = (waiting_times, slice, t_hat_inf=None))]
    fn new(waiting_times: Vec<u64>, slice: u64, t_hat_inf: Option<u64>) -> PyResult<Self> {
        let t_hat_inf = t_hat_inf.or(waiting_times.last().copied()).unwrap_or(1);
        let inner = QueueSystem::new(queue_config(waiting_times, slice, t_hat_inf)?).map_err(py_err)?;
        Ok(PyQueueSystem { inner })
    }

    fn enqueue(&mut self, task: u32, queue: usize) -> PyResult<()> {
        self.inner.enqueue(TaskId(task), QueueId(queue)).map_err(py_err)
    }

    fn lengths(&self) -> Vec<usize> {
        self.inner.lengths()
    }

    fn hungry_factors(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        self.inner.hungry_factors().values.into_iter().map(|h| fraction(py, h)).collect()
    }

    fn select_queue(&self) -> Option<usize> {
        self.inner.select_queue().map(|q| q.0)
    }

    fn advance(&mut self, ticks: u64) {
        self.inner.advance(ticks)
    }

    /// Consume the selected queue, returning `(queue, task)`.
    fn dispatch(&mut self) -> Option<(usize, u32)> {
        self.inner.dispatch().map(|(q, t)| (q.0, t.0))
    }

    fn tick_and_dispatch(&mut self) -> Option<(usize, u32)> {
        self.inner.tick_and_dispatch().map(|(q, t)| (q.0, t.0))
    }
}

/// An experiment config with the train, eval and worstcase commands.
#[pyclass(name = "Experiment")]
struct PyExperiment {
    cfg: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyExperiment {
            cfg: ExperimentConfig::load(&path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyExperiment {
            cfg: ExperimentConfig::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.cfg.to_json().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[pyo3(signature = (out=None, weights=None, seed=None, sync=true))]
    fn train(
        &self,
        py: Python<'_>,
        out: Option<PathBuf>,
        weights: Option<PathBuf>,
        seed: Option<u64>,
        sync: bool,
    ) -> PyResult<Py<PyAny>> {
        let ov = Overrides {
            out,
            weights,
            seed,
            sync_train: sync,
            ..Default::default()
        };
        let report = py.detach(|| cmd_train(&self.cfg, &ov)).map_err(py_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (out=None, weights=None, scheduler=None, seed=None, delta_gate=true))]
    fn evaluate(
        &self,
        py: Python<'_>,
        out: Option<PathBuf>,
        weights: Option<PathBuf>,
        scheduler: Option<&str>,
        seed: Option<u64>,
        delta_gate: bool,
    ) -> PyResult<Py<PyAny>> {
        let ov = Overrides {
            scheduler: scheduler.map(str::parse).transpose().map_err(py_err)?,
            seed,
            weights,
            out,
            no_delta_gate: !delta_gate,
            sync_train: false,
        };
        let report = py.detach(|| cmd_eval(&self.cfg, &ov)).map_err(py_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (out=None))]
    fn worstcase(&self, py: Python<'_>, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
        let ov = Overrides {
            out,
            ..Default::default()
        };
        let report = py.detach(|| cmd_worstcase(&self.cfg, &ov)).map_err(py_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Experiment(seed={})", self.cfg.seed)
    }
}

#[pymodule]
fn provsched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compute_waiting_times, m)?)?;
    m.add_function(wrap_pyfunction!(starvation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(finish_time_ratio_bound, m)?)?;
    m.add_function(wrap_pyfunction!(table5, m)?)?;
    m.add_class::<PyQueueSystem>()?;
    m.add_class::<PyExperiment>()?;
    Ok(())
}
