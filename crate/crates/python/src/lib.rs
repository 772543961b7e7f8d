use hmmlyap::filtering::{backward_filter, forward_filter};
use hmmlyap::inference::{
    full_gradient, minibatch_gradient, sgd_infer, BufferChoice, EtaSchedule, ParamSelector,
    SgdConfig,
};
use hmmlyap::lyapunov::{self, GapEstimate};
use hmmlyap::model::{matrix_from_rows, stationary_distribution};
use hmmlyap::sampling::sample_sequence;
use hmmlyap::{Error, HmmModel, ObservationSequence, StateDistribution};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn observations(values: Vec<f64>) -> PyResult<ObservationSequence> {
    ObservationSequence::new(values).map_err(to_py)
}

fn distribution(p: Vec<f64>) -> PyResult<StateDistribution> {
    StateDistribution::new(p).map_err(to_py)
}

/// Gaussian-emission hidden Markov model.
#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: HmmModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (transition, means, stds, initial=None))]
    fn new(
        transition: Vec<Vec<f64>>,
        means: Vec<f64>,
        stds: Vec<f64>,
        initial: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let inner = HmmModel::from_rows(&transition, means, stds, initial).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// The three-state model used throughout the examples.
    #[staticmethod]
    fn example() -> Self {
        Self {
            inner: HmmModel::example_three_state(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = HmmModel::from_json_str(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        self.inner.to_file().transition
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.means().to_vec()
    }

    #[getter]
    fn stds(&self) -> Vec<f64> {
        self.inner.stds().to_vec()
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.initial().probs().to_vec()
    }

    fn stationary(&self) -> PyResult<Vec<f64>> {
        let pi = stationary_distribution(self.inner.transition()).map_err(to_py)?;
        Ok(pi.into_vec())
    }

    fn __repr__(&self) -> String {
        format!("Model(n_states={})", self.inner.n_states())
    }
}

/// Returns `(states, observations)`.
#[pyfunction]
#[pyo3(signature = (model, n, seed=0))]
fn sample(model: &PyModel, n: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let out = sample_sequence(&model.inner, n, seed).map_err(to_py)?;
    Ok((out.states, out.observations.into_vec()))
}

/// Returns `(filtered distributions, log-likelihood)`.
#[pyfunction]
fn filter(model: &PyModel, obs: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let run = forward_filter(&model.inner, &observations(obs)?).map_err(to_py)?;
    let rhos = run.rhos.into_iter().map(|r| r.into_vec()).collect();
    Ok((rhos, run.log_likelihood))
}

#[pyfunction]
fn backward(model: &PyModel, obs: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let run = backward_filter(&model.inner, &observations(obs)?).map_err(to_py)?;
    Ok(run.betas.into_iter().map(|b| b.into_vec()).collect())
}

fn gap_dict<'py>(py: Python<'py>, g: &GapEstimate, epsilon: f64) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("gap", g.gap)?;
    d.set_item("buffer_length", g.buffer_length(epsilon).ok())?;
    d.set_item("method", g.method.as_str())?;
    d.set_item("iterations", g.iterations)?;
    d.set_item("floor_hits", g.floor_hits)?;
    Ok(d)
}

/// Forgetting rate estimate; `method` is `jacobian`, `qr` or `trajectory`,
/// `direction` is `forward` or `backward` (Jacobian method only).
#[pyfunction]
#[pyo3(signature = (model, obs, burn_in=1000, seed=0, method="jacobian", direction="forward", epsilon=1e-15))]
fn gap<'py>(
    py: Python<'py>,
    model: &PyModel,
    obs: Vec<f64>,
    burn_in: usize,
    seed: u64,
    method: &str,
    direction: &str,
    epsilon: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let obs = observations(obs)?;
    let m = &model.inner;
    let est = match (method, direction) {
        ("jacobian", "forward") => lyapunov::estimate_gap(m, &obs, burn_in, seed),
        ("jacobian", "backward") => lyapunov::estimate_backward_gap(m, &obs, burn_in, seed),
        ("qr", "forward") => lyapunov::qr_gap(m, &obs, burn_in),
        ("trajectory", "forward") => lyapunov::trajectory_gap(m, &obs, burn_in, seed),
        _ => {
            return Err(PyValueError::new_err(format!(
                "unsupported method/direction: {method}/{direction}"
            )))
        }
    }
    .map_err(to_py)?;
    gap_dict(py, &est, epsilon)
}

#[pyfunction]
#[pyo3(signature = (gap, epsilon=1e-15))]
fn buffer_length(gap: f64, epsilon: f64) -> PyResult<usize> {
    lyapunov::buffer_length(gap, epsilon).map_err(to_py)
}

/// `‖ρ_n − ρ'_n‖₂` for filters started at `start_a` and `start_b`, computed
/// without cancellation.
#[pyfunction]
fn separation(
    model: &PyModel,
    obs: Vec<f64>,
    start_a: Vec<f64>,
    start_b: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let a = distribution(start_a)?;
    let b = distribution(start_b)?;
    lyapunov::separation_distances(&model.inner, &observations(obs)?, &a, &b).map_err(to_py)
}

#[pyfunction]
fn hilbert_metric(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    lyapunov::hilbert_metric(&x, &y).map_err(to_py)
}

#[pyfunction]
fn birkhoff_tau(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix_from_rows(&matrix).map_err(to_py)?;
    Ok(lyapunov::birkhoff_tau(&m))
}

/// Exact log-likelihood gradient in the optimizer's coordinates for the
/// parameters named in `free` (e.g. `"mu1,sigma2,row1"`).
#[pyfunction]
fn gradient(model: &PyModel, obs: Vec<f64>, free: &str) -> PyResult<Vec<f64>> {
    let sel = ParamSelector::parse(free).map_err(to_py)?;
    full_gradient(&model.inner, &observations(obs)?, &sel).map_err(to_py)
}

/// Buffered mini-batch gradient estimate; returns `(gradient, indices)`.
#[pyfunction]
#[pyo3(signature = (model, obs, free, batch, b1, b2, seed=0, non_overlapping=false))]
fn minibatch(
    model: &PyModel,
    obs: Vec<f64>,
    free: &str,
    batch: usize,
    b1: usize,
    b2: usize,
    seed: u64,
    non_overlapping: bool,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let sel = ParamSelector::parse(free).map_err(to_py)?;
    let obs = observations(obs)?;
    let rep = minibatch_gradient(&model.inner, &obs, &sel, batch, b1, b2, non_overlapping, seed)
        .map_err(to_py)?;
    Ok((rep.gradient, rep.indices))
}

/// Stochastic gradient ascent on the `free` parameters starting from
/// `start` (natural units) or the model's current values. `buffer=None`
/// picks buffer lengths from the estimated forgetting rates.
#[pyfunction]
#[pyo3(signature = (
    model, obs, free, start=None, eta0=0.05, decay=0.95, steps_per_restart=25,
    restart_threshold=0.02, batch=100, buffer=None, epsilon=1e-10, seed=0,
    global_schedule=false, max_restarts=100,
))]
fn infer<'py>(
    py: Python<'py>,
    model: &PyModel,
    obs: Vec<f64>,
    free: &str,
    start: Option<Vec<f64>>,
    eta0: f64,
    decay: f64,
    steps_per_restart: usize,
    restart_threshold: f64,
    batch: usize,
    buffer: Option<usize>,
    epsilon: f64,
    seed: u64,
    global_schedule: bool,
    max_restarts: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sel = ParamSelector::parse(free).map_err(to_py)?;
    let obs = observations(obs)?;
    let mut start_model = model.inner.clone();
    if let Some(v) = start {
        start_model = sel.set_natural(&start_model, &v).map_err(to_py)?;
    }
    let config = SgdConfig {
        eta0,
        decay,
        steps_per_restart,
        restart_threshold,
        batch_size: batch,
        buffer: buffer.map_or(BufferChoice::Auto, |b| BufferChoice::Fixed { b1: b, b2: b }),
        epsilon,
        seed,
        eta_schedule: if global_schedule {
            EtaSchedule::Global
        } else {
            EtaSchedule::PerRestart
        },
        max_restarts,
        ..SgdConfig::default()
    };
    let res = py
        .detach(|| sgd_infer(&start_model, &obs, &sel, &config))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("theta_hat", res.theta_hat)?;
    d.set_item("names", sel.names(model.inner.n_states()))?;
    d.set_item("multiplies", res.multiplies)?;
    d.set_item("buffers", res.buffers)?;
    d.set_item("restarts", res.restarts)?;
    d.set_item("converged", res.converged)?;
    d.set_item("model", PyModel { inner: res.model })?;
    Ok(d)
}

#[pymodule]
fn hmmlyap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(backward, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(buffer_length, m)?)?;
    m.add_function(wrap_pyfunction!(separation, m)?)?;
    m.add_function(wrap_pyfunction!(hilbert_metric, m)?)?;
    m.add_function(wrap_pyfunction!(birkhoff_tau, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(minibatch, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    Ok(())
}
