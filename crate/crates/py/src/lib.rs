//! Python bindings for the quadmix core: reward kernels, policy composition,
//! gait selection, the criteria optimizer, checkpoints and the steering
//! session that backs the telemetry service.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use quadmix::bundle;
use quadmix::cmaes::{CandidateEvaluation, CmaConfig, CmaState};
use quadmix::config::RunConfig;
use quadmix::gait::GaitType;
use quadmix::geometry::{JointVector, NUM_JOINTS};
use quadmix::policy::{self, GaussianActionDistribution};
use quadmix::reward::{self, RewardWeights, SwitchCriteria};
use quadmix::rng::{RngStream, Stream};
use quadmix::telemetry::{Command, SessionPolicy, SteeringSession};

fn err(e: quadmix::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn gait_from_name(name: &str) -> PyResult<GaitType> {
    GaitType::ALL
        .into_iter()
        .find(|g| g.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown gait '{name}'")))
}

fn joint_vector(v: &[f64]) -> PyResult<JointVector> {
    v.try_into()
        .map_err(|_| PyValueError::new_err(format!("expected {NUM_JOINTS} values, got {}", v.len())))
}

fn load_config(path: Option<&str>) -> PyResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(err),
        None => Ok(RunConfig::default()),
    }
}

/// Radial basis kernel `exp(alpha * |x - x_hat|^2)`.
#[pyfunction]
fn rbf(x: Vec<f64>, x_hat: Vec<f64>, alpha: f64) -> PyResult<f64> {
    reward::rbf(&x, &x_hat, alpha).map_err(err)
}

/// Reference gait for goal distance `d` under thresholds `(x1, x2)`.
#[pyfunction]
fn select_reference_gait(d: f64, x1: f64, x2: f64) -> PyResult<&'static str> {
    let criteria = SwitchCriteria::new(x1, x2).map_err(err)?;
    reward::select_reference_gait(d, &criteria)
        .map(GaitType::name)
        .map_err(err)
}

/// Multiplicative composition of diagonal Gaussians; returns `(mean, std)`.
#[pyfunction]
fn compose(means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if means.len() != stds.len() {
        return Err(PyValueError::new_err("means and stds must have the same length"));
    }
    let dists = means
        .iter()
        .zip(&stds)
        .map(|(m, s)| GaussianActionDistribution::new(joint_vector(m)?, joint_vector(s)?).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let out = policy::compose(&dists, &weights).map_err(err)?;
    Ok((out.mean.to_vec(), out.std.to_vec()))
}

/// Reward weights preset for a gait, keyed by term name.
#[pyfunction]
fn reward_preset<'py>(py: Python<'py>, gait: &str) -> PyResult<Bound<'py, PyDict>> {
    let w = RewardWeights::preset(gait_from_name(gait)?);
    let d = PyDict::new(py);
    for (k, v) in [
        ("orientation", w.orientation),
        ("height", w.height),
        ("velocity", w.velocity),
        ("torque", w.torque),
        ("joint_velocity", w.joint_velocity),
        ("body_ground", w.body_ground),
        ("foot_ground", w.foot_ground),
        ("foot_placement", w.foot_placement),
        ("swing_stance", w.swing_stance),
        ("yaw_rate", w.yaw_rate),
        ("contact", w.contact),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Validates a steering message and returns its canonical JSON form.
#[pyfunction]
fn parse_command(text: &str) -> PyResult<String> {
    Command::parse(text).map(|c| c.to_json()).map_err(err)
}

/// Ask/tell interface to the switch-criteria CMA-ES.
#[pyclass(unsendable)]
struct CriteriaSearch {
    state: CmaState,
    rng: RngStream,
}

#[pymethods]
impl CriteriaSearch {
    #[new]
    #[pyo3(signature = (seed=0, population=50, sigma0=1.0, initial_mean=(2.0, 5.0)))]
    fn new(seed: u64, population: usize, sigma0: f64, initial_mean: (f64, f64)) -> PyResult<Self> {
        let config = CmaConfig {
            population,
            sigma0,
            initial_mean: [initial_mean.0, initial_mean.1],
        };
        Ok(CriteriaSearch {
            state: CmaState::new(&config).map_err(err)?,
            rng: RngStream::new(seed, Stream::Cma),
        })
    }

    /// Feasible candidates `(x1, x2)` for the next generation.
    fn ask(&mut self) -> Vec<(f64, f64)> {
        self.state
            .ask(&mut self.rng)
            .into_iter()
            .map(|c| (c.x1, c.x2))
            .collect()
    }

    /// Reports one cost per asked candidate, in order.
    fn tell(&mut self, costs: Vec<f64>) -> PyResult<()> {
        let evals: Vec<CandidateEvaluation> = self
            .state
            .asked()
            .iter()
            .zip(&costs)
            .map(|(c, cost)| CandidateEvaluation {
                candidate: *c,
                cost: *cost,
                steps: 0,
                valid: cost.is_finite(),
            })
            .collect();
        if evals.len() != costs.len() || evals.len() != self.state.asked().len() {
            return Err(PyValueError::new_err("one cost per asked candidate is required"));
        }
        self.state.tell(&evals).map_err(err)
    }

    #[getter]
    fn mean(&self) -> (f64, f64) {
        (self.state.mean[0], self.state.mean[1])
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.state.sigma
    }

    #[getter]
    fn generation(&self) -> usize {
        self.state.generation
    }

    #[getter]
    fn best(&self) -> Option<((f64, f64), f64)> {
        self.state.best.map(|(c, cost)| ((c.x1, c.x2), cost))
    }
}

/// Closed-loop simulation driven by steering commands, one telemetry frame per step.
#[pyclass(unsendable)]
struct Session {
    inner: SteeringSession,
}

#[pymethods]
impl Session {
    /// `mode` is `hold`, `composite` or `manual-switch`; the latter two need `bundle`.
    #[new]
    #[pyo3(signature = (mode="hold", bundle=None, seed=0, x1=2.0, x2=5.0, config=None, estimator=None, stochastic=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        bundle: Option<&str>,
        seed: u64,
        x1: f64,
        x2: f64,
        config: Option<&str>,
        estimator: Option<&str>,
        stochastic: bool,
    ) -> PyResult<Self> {
        let cfg = load_config(config)?;
        let sim = cfg.simulator();
        let composite = || -> PyResult<_> {
            let dir = bundle.ok_or_else(|| PyValueError::new_err(format!("mode '{mode}' needs a bundle directory")))?;
            bundle::load_composite(dir).map_err(err)
        };
        let policy = match mode {
            "hold" => SessionPolicy::Hold(sim.config.nominal_hold_action(&sim.gains)),
            "composite" => SessionPolicy::Composite {
                policy: composite()?,
                stochastic,
            },
            "manual-switch" => SessionPolicy::ManualSwitch(composite()?),
            other => return Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
        };
        let criteria = SwitchCriteria::new(x1, x2).map_err(err)?;
        let mut inner = SteeringSession::new(sim, cfg.engine(), policy, criteria, seed).map_err(err)?;
        if let Some(p) = estimator {
            inner = inner.with_estimator(bundle::load_estimator(p).map_err(err)?);
        }
        Ok(Session { inner })
    }

    /// Applies the JSON commands in order, advances one control step and
    /// returns the telemetry frame as JSON.
    #[pyo3(signature = (commands=Vec::new()))]
    fn step(&mut self, commands: Vec<String>) -> PyResult<String> {
        let parsed = commands
            .iter()
            .map(|c| Command::parse(c).map_err(err))
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.step(parsed).map(|f| f.to_json()).map_err(err)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time()
    }

    #[getter]
    fn goal(&self) -> (f64, f64) {
        let g = self.inner.goal();
        (g.x, g.y)
    }

    #[getter]
    fn base_position(&self) -> (f64, f64, f64) {
        let p = self.inner.state().base_position;
        (p.x, p.y, p.z)
    }
}

/// Loads a velocity estimator checkpoint and applies it to a 66-value input row.
#[pyfunction]
fn estimate_velocity(checkpoint: &str, features: Vec<f64>) -> PyResult<Vec<f64>> {
    let net = bundle::load_estimator(checkpoint).map_err(err)?;
    net.net.forward(&features).map_err(err)
}

#[pymodule]
fn quadmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WIRE_VERSION", quadmix::telemetry::WIRE_VERSION)?;
    m.add("GAITS", GaitType::ALL.map(GaitType::name).to_vec())?;
    m.add_function(wrap_pyfunction!(rbf, m)?)?;
    m.add_function(wrap_pyfunction!(select_reference_gait, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(reward_preset, m)?)?;
    m.add_function(wrap_pyfunction!(parse_command, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_velocity, m)?)?;
    m.add_class::<CriteriaSearch>()?;
    m.add_class::<Session>()?;
    Ok(())
}
