//! Python bindings for agenda-core.

use agenda_core::ccp;
use agenda_core::engine;
use agenda_core::generators;
use agenda_core::horizons;
use agenda_core::io;
use agenda_core::lab;
use agenda_core::oracle;
use agenda_core::rational::{self, Rational};
use agenda_core::{Error, PolicyId};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for agenda_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Parses ints, floats and strings such as `"1/3"` into exact rationals.
fn to_rational(obj: &Bound<'_, PyAny>) -> PyResult<Rational> {
    rational::parse(&obj.str()?.to_cow()?).py()
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?
        .call_method1("loads", (value.to_string(),))
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// A finite collective choice problem with exact utilities.
#[pyclass(name = "Problem", module = "agenda_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: ccp::Problem,
}

impl PyProblem {
    fn id(&self, label: &str) -> PyResult<PolicyId> {
        self.inner.policy_by_label(label).py()
    }

    fn labels_of(&self, xs: &[PolicyId]) -> Vec<String> {
        xs.iter()
            .map(|&x| self.inner.label(x).to_string())
            .collect()
    }

    fn rule_or_majority(&self, rule: Option<&PyVotingRule>) -> PyResult<ccp::VotingRule> {
        match rule {
            Some(r) => Ok(r.inner.clone()),
            None => ccp::VotingRule::simple_majority(self.inner.num_voters().max(1)).py(),
        }
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    fn new(
        labels: Vec<String>,
        voters: Vec<Vec<Bound<'_, PyAny>>>,
        agenda_setter: Vec<Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let voters = voters
            .iter()
            .map(|row| row.iter().map(to_rational).collect::<PyResult<Vec<_>>>())
            .collect::<PyResult<Vec<_>>>()?;
        let setter = agenda_setter
            .iter()
            .map(to_rational)
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PyProblem {
            inner: ccp::Problem::new(labels, voters, setter).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyProblem {
            inner: io::parse_problem(text).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyProblem {
            inner: io::read_problem(std::path::Path::new(path)).py()?,
        })
    }

    /// The first worked example: policies w, x, y, z with three voters.
    #[staticmethod]
    fn ratchet() -> Self {
        PyProblem {
            inner: agenda_core::fixtures::ratchet(),
        }
    }

    fn to_json(&self) -> String {
        io::problem_to_json(&self.inner).to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn num_voters(&self) -> usize {
        self.inner.num_voters()
    }

    #[getter]
    fn num_policies(&self) -> usize {
        self.inner.num_policies()
    }

    #[getter]
    fn is_generic(&self) -> bool {
        self.inner.is_generic()
    }

    /// Setter utility of a policy as a canonical rational string.
    fn setter_utility(&self, label: &str) -> PyResult<String> {
        Ok(rational::format(self.inner.setter_utility(self.id(label)?)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(policies={:?}, voters={})",
            self.inner.labels(),
            self.inner.num_voters()
        )
    }
}

/// A monotone voting rule over a fixed electorate.
#[pyclass(name = "VotingRule", module = "agenda_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyVotingRule {
    inner: ccp::VotingRule,
}

#[pymethods]
impl PyVotingRule {
    #[staticmethod]
    fn majority(voters: usize) -> PyResult<Self> {
        Ok(PyVotingRule {
            inner: ccp::VotingRule::simple_majority(voters).py()?,
        })
    }

    #[staticmethod]
    fn quota(voters: usize, q: usize) -> PyResult<Self> {
        Ok(PyVotingRule {
            inner: ccp::VotingRule::quota(voters, q).py()?,
        })
    }

    /// Winning coalitions as lists of 0-based voter indices; supersets win too.
    #[staticmethod]
    fn coalitions(voters: usize, sets: Vec<Vec<usize>>) -> PyResult<Self> {
        Ok(PyVotingRule {
            inner: ccp::VotingRule::coalitions(voters, &sets).py()?,
        })
    }

    #[getter]
    fn num_voters(&self) -> usize {
        self.inner.num_voters()
    }

    fn is_veto_proof(&self) -> bool {
        self.inner.is_veto_proof()
    }

    fn is_winning(&self, members: Vec<usize>) -> bool {
        self.inner
            .is_winning(ccp::Coalition::from_members(&members))
    }

    fn minimal_coalitions(&self) -> Vec<Vec<usize>> {
        self.inner
            .minimal_coalitions()
            .into_iter()
            .map(|c| c.members())
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (problem, rule=None))]
fn unimprovable_set(problem: &PyProblem, rule: Option<&PyVotingRule>) -> PyResult<Vec<String>> {
    let r = problem.rule_or_majority(rule)?;
    Ok(problem.labels_of(&ccp::unimprovable_set(&problem.inner, &r).py()?))
}

#[pyfunction]
#[pyo3(signature = (problem, rule=None))]
fn is_manipulable(problem: &PyProblem, rule: Option<&PyVotingRule>) -> PyResult<bool> {
    let r = problem.rule_or_majority(rule)?;
    Ok(ccp::is_manipulable(&problem.inner, &r).py()?.manipulable)
}

#[pyfunction]
#[pyo3(signature = (problem, default, rule=None))]
fn favorite_improvement(
    problem: &PyProblem,
    default: &str,
    rule: Option<&PyVotingRule>,
) -> PyResult<String> {
    let r = problem.rule_or_majority(rule)?;
    let f = engine::favorite_improvement(&problem.inner, &r, problem.id(default)?).py()?;
    Ok(problem.inner.label(f.policy).to_string())
}

/// Defaults visited by successive favorite improvements, starting with `default`.
#[pyfunction]
#[pyo3(signature = (problem, default, rounds, rule=None))]
fn trajectory(
    problem: &PyProblem,
    default: &str,
    rounds: usize,
    rule: Option<&PyVotingRule>,
) -> PyResult<Vec<String>> {
    let r = problem.rule_or_majority(rule)?;
    let tr = engine::equilibrium_outcome(&problem.inner, &r, problem.id(default)?, rounds).py()?;
    Ok(problem.labels_of(&tr.steps))
}

#[pyfunction]
#[pyo3(signature = (problem, default, rounds, rule=None))]
fn equilibrium_outcome(
    problem: &PyProblem,
    default: &str,
    rounds: usize,
    rule: Option<&PyVotingRule>,
) -> PyResult<String> {
    Ok(trajectory(problem, default, rounds, rule)?
        .pop()
        .expect("non-empty trajectory"))
}

/// Backward induction on the full game tree; `protocol` is a preset name or a protocol file path.
#[pyfunction]
#[pyo3(signature = (problem, default, rounds, protocol="amendment", rule=None, budget=oracle::DEFAULT_ORACLE_BUDGET))]
fn solve_spe(
    problem: &PyProblem,
    default: &str,
    rounds: usize,
    protocol: &str,
    rule: Option<&PyVotingRule>,
    budget: u64,
) -> PyResult<String> {
    let r = problem.rule_or_majority(rule)?;
    let proto = io::parse_protocol(protocol, &problem.inner).py()?;
    let game = oracle::GameSpec::new(
        problem.inner.clone(),
        r,
        rounds,
        problem.id(default)?,
        proto,
    )
    .py()?;
    let rep = oracle::solve_spe(&game, budget).py()?;
    Ok(problem.inner.label(rep.outcome).to_string())
}

#[pyfunction]
fn stable_set(problem: &PyProblem) -> PyResult<Vec<String>> {
    Ok(problem.labels_of(&horizons::stable_set(&problem.inner).py()?.set))
}

#[pyfunction]
#[pyo3(signature = (problem, max_rounds=10))]
fn horizon_classify<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    max_rounds: usize,
) -> PyResult<Bound<'py, PyAny>> {
    serialize(
        py,
        &horizons::horizon_classify(&problem.inner, max_rounds).py()?,
    )
}

#[pyfunction]
#[pyo3(signature = (dim, voters, seed, lower=0, upper=1))]
fn gen_spatial<'py>(
    py: Python<'py>,
    dim: usize,
    voters: usize,
    seed: u64,
    lower: i64,
    upper: i64,
) -> PyResult<Bound<'py, PyAny>> {
    serialize(
        py,
        &generators::gen_spatial(
            dim,
            voters,
            seed,
            &rational::int(lower),
            &rational::int(upper),
        )
        .py()?,
    )
}

/// Non-coplanarity audit of a profile produced by `gen_spatial`.
#[pyfunction]
fn check_noncoplanarity<'py>(
    py: Python<'py>,
    profile: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py
        .import("json")?
        .call_method1("dumps", (profile,))?
        .extract()?;
    let prof: generators::SpatialProfile =
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    serialize(py, &generators::check_noncoplanarity(&prof).py()?)
}

/// Runs an experiment suite in memory and returns its record.
#[pyfunction]
#[pyo3(signature = (suite, seed=0, count=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    suite: &str,
    seed: u64,
    count: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let desc = lab::ExperimentDescriptor {
        suite: suite.into(),
        seed,
        count,
        budget: None,
    };
    let (out, _) = lab::run_suite(&desc).py()?;
    serialize(py, &out)
}

#[pymodule]
fn agenda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyVotingRule>()?;
    m.add_function(wrap_pyfunction!(unimprovable_set, m)?)?;
    m.add_function(wrap_pyfunction!(is_manipulable, m)?)?;
    m.add_function(wrap_pyfunction!(favorite_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_outcome, m)?)?;
    m.add_function(wrap_pyfunction!(solve_spe, m)?)?;
    m.add_function(wrap_pyfunction!(stable_set, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_classify, m)?)?;
    m.add_function(wrap_pyfunction!(gen_spatial, m)?)?;
    m.add_function(wrap_pyfunction!(check_noncoplanarity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
