//! Python module `epgame_py`. Structured results come back as plain dicts and
//! lists, decoded from the same JSON the command-line tool writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use epgame::bounds::pi_upsilon as pi_upsilon_rs;
use epgame::choice::{self, ChoiceMap};
use epgame::cli::{self as cli, BoundInput, ChoiceConfig, DesignInput, LearnInput, ScenarioConfig};
use epgame::dynamics::{self, endemic_equilibrium as equilibrium_rs};
use epgame::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_config() || matches!(e, Error::Domain(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn loads<'py>(py: Python<'py>, s: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

fn dumps(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

#[pyclass(name = "EpidemicParams", module = "epgame_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEpidemic(dynamics::EpidemicParams);

#[pymethods]
impl PyEpidemic {
    #[new]
    #[pyo3(signature = (gamma, psi, theta, beta, cost))]
    fn new(gamma: f64, psi: f64, theta: f64, beta: Vec<f64>, cost: Vec<f64>) -> PyResult<Self> {
        dynamics::EpidemicParams::new(gamma, psi, theta, beta, cost).map(Self).map_err(to_py)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn aggregate(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.0.n() {
            return Err(PyValueError::new_err("x must have one entry per strategy"));
        }
        Ok(self.0.aggregate(&x))
    }

    /// `(I*, R*)` for a constant aggregate contact rate.
    fn endemic_equilibrium(&self, beta: f64) -> PyResult<(f64, f64)> {
        equilibrium_rs(beta, &self.0).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let e = &self.0;
        format!(
            "EpidemicParams(gamma={}, psi={}, theta={}, beta={:?}, cost={:?})",
            e.gamma, e.psi, e.theta, e.beta, e.cost
        )
    }
}

/// Logit choice `softmax(p / mu)`.
#[pyfunction]
fn logit_choice(p: Vec<f64>, mu: f64) -> PyResult<Vec<f64>> {
    choice::logit_choice(&p, mu).map_err(to_py)
}

/// Choice probabilities for a rule given as a dict, e.g.
/// `{"kind": "noise", "dist": "normal", "scale": 1.0}`.
#[pyfunction]
fn choose(rule: &Bound<'_, PyAny>, p: Vec<f64>) -> PyResult<Vec<f64>> {
    let cfg: ChoiceConfig = from_json(&dumps(rule)?)?;
    let r = cfg.build(p.len()).map_err(to_py)?;
    r.choose(&p, None).map_err(to_py)
}

/// Monte Carlo estimate of the choice probabilities under additive noise.
#[pyfunction]
#[pyo3(signature = (dist, scale, p, samples, seed, shape = 0.0))]
fn mc_choice(py: Python<'_>, dist: &str, scale: f64, p: Vec<f64>, samples: usize, seed: u64, shape: f64) -> PyResult<Vec<f64>> {
    let family = choice::NoiseFamily::parse(dist).map_err(to_py)?;
    let noise = choice::NoiseModel::with_shape(family, scale, shape).map_err(to_py)?;
    py.detach(|| choice::mc_choice(&noise, &p, samples, seed)).map_err(to_py)
}

/// Cheapest-contact reward design for a budget; `rule` defaults to logit with `mu = 1`.
#[pyfunction]
#[pyo3(signature = (epidemic, budget, rule = None))]
fn design<'py>(
    py: Python<'py>,
    epidemic: &PyEpidemic,
    budget: f64,
    rule: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let choice = match rule {
        Some(r) => from_json(&dumps(r)?)?,
        None => ChoiceConfig::Logit { mu: 1.0 },
    };
    let input = DesignInput { schema: None, epidemic: epidemic.0.clone(), choice, budget, tol: None };
    let out = py.detach(|| cli::run_design(&input)).map_err(to_py)?;
    loads(py, &to_json(&out)?)
}

/// `pi_upsilon(alpha)`: the anytime bound is `I_bar * pi`.
#[pyfunction]
#[pyo3(signature = (alpha, beta_bar, upsilon, epidemic, tol = 1e-8))]
fn pi_upsilon(alpha: f64, beta_bar: f64, upsilon: f64, epidemic: &PyEpidemic, tol: f64) -> PyResult<f64> {
    pi_upsilon_rs(alpha, beta_bar, upsilon, &epidemic.0, tol).map_err(to_py)
}

/// Runs the `bound` command on a dict input.
#[pyfunction]
fn bound<'py>(py: Python<'py>, input: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let input: BoundInput = from_json(&dumps(input)?)?;
    loads(py, &to_json(&cli::run_bound(&input).map_err(to_py)?)?)
}

/// Runs the `learn` command on a dict input.
#[pyfunction]
fn learn<'py>(py: Python<'py>, input: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let input: LearnInput = from_json(&dumps(input)?)?;
    let out = py.detach(|| cli::run_learn(&input)).map_err(to_py)?;
    loads(py, &to_json(&out)?)
}

#[pyclass(name = "Scenario", module = "epgame_py")]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ScenarioConfig::load(std::path::Path::new(path)).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_dict(d: &Bound<'_, PyAny>) -> PyResult<Self> {
        ScenarioConfig::from_json(&dumps(d)?).map(Self).map_err(to_py)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        loads(py, &self.0.to_json())
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn get_horizon(&self) -> f64 {
        self.0.horizon
    }

    #[setter]
    fn set_horizon(&mut self, h: f64) -> PyResult<()> {
        let mut c = self.0.clone();
        c.horizon = h;
        c.validate().map_err(to_py)?;
        self.0 = c;
        Ok(())
    }

    /// Runs the scenario. Returns `(report, columns)`: the report dict and the
    /// trajectory as a dict of equal-length lists keyed like the CSV header.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyDict>)> {
        let cfg = self.0.clone();
        let rep = py.detach(move || cli::run_scenario(&cfg)).map_err(to_py)?;
        let report = loads(py, &to_json(&rep)?)?;
        let header = rep.trajectory.csv_header();
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rep.trajectory.len()); header.len()];
        let n = rep.trajectory.n;
        for p in &rep.trajectory.points {
            let s = &p.state;
            let row = [p.t, s.i, s.r, s.susceptible()]
                .into_iter()
                .chain(s.x.iter().copied())
                .chain([s.q, p.aggregate])
                .chain(p.reward.iter().copied())
                .chain([p.cost, p.lyapunov]);
            for (c, v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        debug_assert_eq!(header.len(), 2 * n + 8);
        let out = PyDict::new(py);
        for (h, c) in header.into_iter().zip(cols) {
            out.set_item(h, c)?;
        }
        Ok((report, out))
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, horizon={})", self.0.name, self.0.horizon)
    }
}

#[pymodule]
fn epgame_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyEpidemic>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(logit_choice, m)?)?;
    m.add_function(wrap_pyfunction!(choose, m)?)?;
    m.add_function(wrap_pyfunction!(mc_choice, m)?)?;
    m.add_function(wrap_pyfunction!(design, m)?)?;
    m.add_function(wrap_pyfunction!(pi_upsilon, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    Ok(())
}
