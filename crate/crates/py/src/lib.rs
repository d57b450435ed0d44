//! Python bindings. Structured values cross the boundary as JSON strings;
//! the smoke test decodes them with the standard `json` module.

use std::path::PathBuf;

use memctrl::backbone::features::{FeatureExtractor, FeatureVector};
use memctrl::eval::{self, Agent, AgentConfig, Variant};
use memctrl::gate::{GateMode, GateParams};
use memctrl::io;
use memctrl::memory::Context;
use memctrl::memworld::action::ActionSpace;
use memctrl::memworld::env::Env as CoreEnv;
use memctrl::memworld::observation::Observation;
use memctrl::memworld::task::generate_task;
use memctrl::memworld::types::{EpisodeConfig, Subset};
use memctrl::nn::rng::Rng;
use memctrl::pipeline::{self, Command, RunConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: memctrl::Error) -> PyErr {
    match e {
        memctrl::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        memctrl::Error::Numeric(_) | memctrl::Error::Generator { .. } | memctrl::Error::Planner(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_subset(s: &str) -> PyResult<Subset> {
    Subset::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown subset {s:?}")))
}

fn parse_variant(s: &str) -> PyResult<Variant> {
    Variant::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown variant {s:?}")))
}

/// Generate a solvable task and return its configuration as JSON.
#[pyfunction]
fn generate_task_json(subset: &str, seed: u64) -> PyResult<String> {
    let cfg = generate_task(parse_subset(subset)?, seed).map_err(to_py)?;
    serde_json::to_string(&cfg).map_err(json_err)
}

#[pyfunction]
fn action_names() -> Vec<String> {
    ActionSpace::standard().names().to_vec()
}

#[pyfunction]
fn weighted_efficiency(success: f64, kept: f64) -> PyResult<f64> {
    eval::weighted_efficiency(success, kept).map_err(to_py)
}

#[pyfunction]
fn sign_test(wins: usize, losses: usize) -> f64 {
    eval::sign_test(wins, losses)
}

/// The grid-world environment for one task.
#[pyclass]
struct Env {
    env: CoreEnv,
    obs: Observation,
    fx: FeatureExtractor,
}

#[pymethods]
impl Env {
    #[new]
    fn new(task_json: &str) -> PyResult<Self> {
        let cfg: EpisodeConfig = serde_json::from_str(task_json).map_err(json_err)?;
        let (env, obs) = CoreEnv::reset(&cfg);
        let fx = FeatureExtractor::new(&cfg.instruction.text);
        Ok(Env { env, obs, fx })
    }

    #[getter]
    fn instruction(&self) -> String {
        self.env.config().instruction.text.clone()
    }

    #[getter]
    fn observation(&self) -> String {
        self.obs.state_summary.clone()
    }

    #[getter]
    fn done(&self) -> bool {
        self.env.is_over()
    }

    #[getter]
    fn succeeded(&self) -> bool {
        self.env.succeeded()
    }

    fn valid_actions(&self) -> Vec<usize> {
        self.env.valid_actions()
    }

    /// Features of the current observation with an empty memory context.
    fn features(&self) -> Vec<f64> {
        self.fx.embed(&self.obs, &Context::empty()).0
    }

    /// Take an action; returns `(reward, valid, done)`.
    fn step(&mut self, action_id: usize) -> PyResult<(f64, bool, bool)> {
        let r = self.env.step(action_id).map_err(to_py)?;
        self.obs = r.observation;
        Ok((r.reward, r.action_valid, self.env.is_over()))
    }
}

/// A gate checkpoint.
#[pyclass]
struct Gate {
    params: GateParams,
}

#[pymethods]
impl Gate {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Gate {
            params: io::load_gate(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.params.kind.name()
    }

    /// Keep probability for one feature vector.
    fn p_hat(&self, features: Vec<f64>) -> PyResult<f64> {
        self.params.p_hat(&FeatureVector(features)).map_err(to_py)
    }

    /// Threshold decision, as used at evaluation.
    fn keep(&self, features: Vec<f64>) -> PyResult<bool> {
        let mut rng = Rng::new(0);
        let d = memctrl::gate::gate_forward(&self.params, &FeatureVector(features), GateMode::Threshold, &mut rng).map_err(to_py)?;
        Ok(d.b)
    }
}

/// Run one evaluation episode; returns the trace as JSON.
#[pyfunction]
#[pyo3(signature = (task_json, variant, backbone_path, gate_path=None, h=6, seed=0))]
fn run_episode(task_json: &str, variant: &str, backbone_path: PathBuf, gate_path: Option<PathBuf>, h: usize, seed: u64) -> PyResult<String> {
    let cfg: EpisodeConfig = serde_json::from_str(task_json).map_err(json_err)?;
    let backbone = io::load_backbone(&backbone_path).map_err(to_py)?;
    let gate = gate_path.map(|p| io::load_gate(&p)).transpose().map_err(to_py)?;
    let agent = Agent::new(AgentConfig::new(parse_variant(variant)?).with_h(h), backbone, gate).map_err(to_py)?;
    let trace = eval::run_episode(&agent, &cfg, 0, &mut Rng::new(seed)).map_err(to_py)?;
    serde_json::to_string(&trace).map_err(json_err)
}

/// Run a pipeline command given as JSON (e.g. `{"command": "collect"}`)
/// under a TOML configuration; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (command_json, config_toml=""))]
fn run_command(command_json: &str, config_toml: &str) -> PyResult<String> {
    let cmd: Command = serde_json::from_str(command_json).map_err(json_err)?;
    let cfg = RunConfig::from_toml_str(config_toml).map_err(to_py)?;
    let res = pipeline::run(&cmd, &cfg).map_err(to_py)?;
    serde_json::to_string(&res.manifest).map_err(json_err)
}

/// Re-run a manifest; returns True when every output is byte-identical.
#[pyfunction]
#[pyo3(signature = (manifest_path, out=None))]
fn replay(manifest_path: PathBuf, out: Option<PathBuf>) -> PyResult<bool> {
    Ok(pipeline::replay(&manifest_path, out.as_deref()).map_err(to_py)?.identical())
}

#[pymodule(name = "memctrl")]
fn memctrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_task_json, m)?)?;
    m.add_function(wrap_pyfunction!(action_names, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(sign_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_class::<Env>()?;
    m.add_class::<Gate>()?;
    Ok(())
}
