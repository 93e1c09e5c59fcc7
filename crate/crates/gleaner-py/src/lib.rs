//! Python bindings for the allocation engine and trace-replay simulator.
//!
//! Structured values cross the boundary as JSON strings, keeping the binding
//! surface small and version-stable; `json.loads` on the Python side turns
//! them into plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gleaner::metrics;
use gleaner::milp::{build_milp, solve_bb, solve_count_dp, solve_exhaustive, SolveConfig};
use gleaner::model::{ClusterState, TrainerSpec};
use gleaner::policies::{self, PolicyConfig};
use gleaner::scalability::ScalabilityCurve;
use gleaner::simulator::{run, SimulationConfig};
use gleaner::trace::{self, EventLog, SynthConfig};
use gleaner::verify::{run_verification, InstanceConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json<'a, T: serde::Deserialize<'a>>(what: &str, text: &'a str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| value_err(format!("bad {what}: {e}")))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("engine types serialize")
}

fn parse_trace(text: &str) -> PyResult<EventLog> {
    EventLog::parse(text.as_bytes()).map_err(value_err)
}

/// Piecewise-linear throughput curve over measured node counts.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Curve {
    inner: ScalabilityCurve,
}

#[pymethods]
impl Curve {
    /// Build from `[(nodes, rate), ...]` measurement pairs.
    #[new]
    fn new(points: Vec<(u32, f64)>) -> PyResult<Self> {
        Ok(Curve {
            inner: ScalabilityCurve::from_points(&points).map_err(value_err)?,
        })
    }

    /// Throughput at `n` nodes (zero at zero, interpolated between grid
    /// points).
    fn evaluate(&self, n: u32) -> PyResult<f64> {
        self.inner.evaluate(n).map_err(value_err)
    }

    /// Interpolation weights over the grid: at most two adjacent nonzero
    /// entries summing to one.
    fn sos2_weights(&self, n: u32) -> PyResult<Vec<f64>> {
        self.inner.sos2_weights(n).map_err(value_err)
    }

    fn grid(&self) -> Vec<u32> {
        self.inner.grid().to_vec()
    }

    fn rates(&self) -> Vec<f64> {
        self.inner.rates().to_vec()
    }

    /// Same grid with rates divided by the rate at the smallest size.
    fn normalize_speedup(&self) -> PyResult<Curve> {
        Ok(Curve {
            inner: self.inner.normalize_speedup().map_err(value_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Curve(grid={:?}, rates={:?})",
            self.inner.grid(),
            self.inner.rates()
        )
    }
}

/// Solve one allocation instance. `state_json` is a cluster snapshot
/// (`idle_nodes` + `jobs`); `config_json` holds solver knobs (all optional);
/// `solver` is `count-dp`, `bb`, or `exhaustive`. Returns the decision as
/// JSON.
#[pyfunction]
#[pyo3(signature = (state_json, config_json = None, solver = "count-dp"))]
fn solve_allocation(
    state_json: &str,
    config_json: Option<&str>,
    solver: &str,
) -> PyResult<String> {
    let state: ClusterState = from_json("cluster state", state_json)?;
    let cfg: SolveConfig = match config_json {
        Some(text) => from_json("solver config", text)?,
        None => SolveConfig::default(),
    };
    let decision = match solver {
        "count-dp" => solve_count_dp(&state, &cfg).map_err(value_err)?,
        "bb" => {
            let problem = build_milp(&state, &cfg).map_err(value_err)?;
            solve_bb(&problem, cfg.timeout_ms).map_err(value_err)?
        }
        "exhaustive" => solve_exhaustive(&state, &cfg).map_err(value_err)?,
        other => {
            return Err(value_err(format!(
                "unknown solver {other:?} (expected count-dp, bb, or exhaustive)"
            )))
        }
    };
    Ok(to_json(&decision))
}

/// The fixed-share baseline on the same snapshot. `policy_json` carries
/// `PolicyConfig` fields; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (state_json, policy_json = None))]
fn equal_share_allocation(state_json: &str, policy_json: Option<&str>) -> PyResult<String> {
    let state: ClusterState = from_json("cluster state", state_json)?;
    let cfg: PolicyConfig = match policy_json {
        Some(text) => from_json("policy config", text)?,
        None => PolicyConfig::default(),
    };
    let decision = policies::equal_share(&state, &cfg).map_err(value_err)?;
    Ok(to_json(&decision))
}

/// Replay a trace (JSON Lines text) over trainers (JSON array). Returns
/// `{"report": ..., "efficiency": ...}` as JSON.
#[pyfunction]
#[pyo3(signature = (trace_jsonl, trainers_json, config_json = None, window_s = metrics::DEFAULT_WINDOW_S, horizon_s = None))]
fn simulate(
    trace_jsonl: &str,
    trainers_json: &str,
    config_json: Option<&str>,
    window_s: f64,
    horizon_s: Option<f64>,
) -> PyResult<String> {
    let mut log = parse_trace(trace_jsonl)?;
    if let Some(h) = horizon_s {
        log.set_horizon(h).map_err(value_err)?;
    }
    let trainers: Vec<TrainerSpec> = from_json("trainers", trainers_json)?;
    let cfg: SimulationConfig = match config_json {
        Some(text) => from_json("simulation config", text)?,
        None => SimulationConfig::default(),
    };
    let report = run(&log, &trainers, &cfg).map_err(value_err)?;
    let eff = metrics::efficiency_report(&log, &report, &trainers, window_s).map_err(value_err)?;
    let mut doc = serde_json::Map::new();
    doc.insert("report".into(), serde_json::to_value(&report).unwrap());
    doc.insert("efficiency".into(), serde_json::to_value(&eff).unwrap());
    Ok(serde_json::Value::Object(doc).to_string())
}

/// Change rates, equivalent nodes, and the fragment-length distribution of a
/// trace, as JSON.
#[pyfunction]
#[pyo3(signature = (trace_jsonl, min_fragment_s = 0.0, horizon_s = None))]
fn trace_stats(
    trace_jsonl: &str,
    min_fragment_s: f64,
    horizon_s: Option<f64>,
) -> PyResult<String> {
    let mut log = parse_trace(trace_jsonl)?;
    if let Some(h) = horizon_s {
        log.set_horizon(h).map_err(value_err)?;
    }
    let stats = trace::stats(&log, min_fragment_s).map_err(value_err)?;
    Ok(to_json(&stats))
}

/// Generate a synthetic availability trace, returned as JSON Lines text.
#[pyfunction]
#[pyo3(signature = (n_pool, join_rate_per_h, mean_residency_s, duration_s, seed = 0))]
fn synth_trace(
    n_pool: u32,
    join_rate_per_h: f64,
    mean_residency_s: f64,
    duration_s: f64,
    seed: u64,
) -> PyResult<String> {
    let cfg = SynthConfig {
        n_pool,
        join_rate_per_h,
        mean_residency_s,
        duration_s,
    };
    let log = trace::synth(&cfg, seed).map_err(value_err)?;
    let mut out = Vec::new();
    log.write_jsonl(&mut out).map_err(value_err)?;
    String::from_utf8(out).map_err(value_err)
}

/// Cross-check the solvers on random instances; returns the outcome (with
/// JSON reproducers for any failure) as JSON.
#[pyfunction]
#[pyo3(signature = (instances = 50, seed = 7, max_jobs = 4, max_nodes = 12, max_span = None, include_bb = true))]
fn verify_solvers(
    instances: usize,
    seed: u64,
    max_jobs: u32,
    max_nodes: u32,
    max_span: Option<u32>,
    include_bb: bool,
) -> PyResult<String> {
    if max_jobs == 0 || max_nodes == 0 {
        return Err(value_err("max_jobs and max_nodes must be at least 1"));
    }
    let shape = InstanceConfig {
        max_jobs,
        max_nodes,
        max_span,
    };
    let outcome = run_verification(instances, seed, &shape, include_bb);
    Ok(to_json(&outcome))
}

#[pymodule]
fn gleaner_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Curve>()?;
    m.add_function(wrap_pyfunction!(solve_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(equal_share_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(trace_stats, m)?)?;
    m.add_function(wrap_pyfunction!(synth_trace, m)?)?;
    m.add_function(wrap_pyfunction!(verify_solvers, m)?)?;
    Ok(())
}
