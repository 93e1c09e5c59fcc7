//! Core data model: nodes, trainer specs, cluster state, node events.
//!
//! A `ClusterState` is a snapshot handed to the allocation policies: the pool
//! of idle nodes currently available and the elastic jobs with whatever nodes
//! they hold right now. States are plain data and may be transiently invalid
//! (a job can sit below its minimum size right after nodes were yanked away);
//! `validate_state` reports such conditions instead of making them
//! unrepresentable.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalability::ScalabilityCurve;

/// Opaque node identifier. Ordering is lexicographic and is relied on by the
/// deterministic node-assignment rules.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// What the allocation objective counts: raw samples/s, or speedup relative
/// to each job's smallest measured size (which favours jobs near their sweet
/// spot over jobs that merely process many samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMetric {
    #[default]
    Throughput,
    ScalingEfficiency,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("trainer {name}: {reason}")]
    BadTrainer { name: String, reason: String },
    #[error("duplicate trainer name {0}")]
    DuplicateTrainer(String),
    #[error("trainer file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trainer file: {0}")]
    Io(#[from] std::io::Error),
}

/// One elastic job: size limits, rescale pauses, workload size, measured
/// scalability, and when it enters the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrainerSpec")]
pub struct TrainerSpec {
    pub name: String,
    pub n_min: u32,
    pub n_max: u32,
    /// Seconds of lost output after growing (checkpoint, re-shard, restart).
    pub r_up_s: f64,
    /// Seconds of lost output after shrinking.
    pub r_dw_s: f64,
    /// Total samples the job must process to finish.
    pub total_samples: f64,
    pub curve: ScalabilityCurve,
    pub arrival_s: f64,
}

#[derive(Deserialize)]
struct RawTrainerSpec {
    name: String,
    n_min: u32,
    n_max: u32,
    r_up_s: f64,
    r_dw_s: f64,
    total_samples: f64,
    curve: ScalabilityCurve,
    arrival_s: f64,
}

impl TryFrom<RawTrainerSpec> for TrainerSpec {
    type Error = ModelError;

    fn try_from(raw: RawTrainerSpec) -> Result<Self, Self::Error> {
        let fail = |reason: &str| {
            Err(ModelError::BadTrainer {
                name: raw.name.clone(),
                reason: reason.to_string(),
            })
        };
        if raw.name.is_empty() {
            return Err(ModelError::BadTrainer {
                name: "<unnamed>".into(),
                reason: "empty name".into(),
            });
        }
        if raw.n_min == 0 || raw.n_min > raw.n_max {
            return fail("need 1 <= n_min <= n_max");
        }
        if raw.n_max > raw.curve.max_nodes() {
            return fail("n_max exceeds largest curve grid point");
        }
        if raw.n_min < raw.curve.min_nodes() {
            return fail("n_min below smallest curve grid point");
        }
        if !(raw.r_up_s.is_finite() && raw.r_up_s >= 0.0)
            || !(raw.r_dw_s.is_finite() && raw.r_dw_s >= 0.0)
        {
            return fail("rescale pauses must be finite and non-negative");
        }
        if !(raw.total_samples.is_finite() && raw.total_samples > 0.0) {
            return fail("total_samples must be positive");
        }
        if !(raw.arrival_s.is_finite() && raw.arrival_s >= 0.0) {
            return fail("arrival_s must be finite and non-negative");
        }
        Ok(TrainerSpec {
            name: raw.name,
            n_min: raw.n_min,
            n_max: raw.n_max,
            r_up_s: raw.r_up_s,
            r_dw_s: raw.r_dw_s,
            total_samples: raw.total_samples,
            curve: raw.curve,
            arrival_s: raw.arrival_s,
        })
    }
}

/// Parse a JSON array of trainer specs, rejecting duplicate names.
pub fn parse_trainers(reader: impl Read) -> Result<Vec<TrainerSpec>, ModelError> {
    let trainers: Vec<TrainerSpec> = serde_json::from_reader(reader)?;
    let mut seen = BTreeSet::new();
    for t in &trainers {
        if !seen.insert(t.name.clone()) {
            return Err(ModelError::DuplicateTrainer(t.name.clone()));
        }
    }
    Ok(trainers)
}

/// A job inside a cluster snapshot: its spec plus the nodes it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub spec: TrainerSpec,
    pub current_nodes: BTreeSet<NodeId>,
}

impl JobState {
    pub fn new(spec: TrainerSpec) -> Self {
        JobState {
            spec,
            current_nodes: BTreeSet::new(),
        }
    }

    /// Current size, `C_j`.
    pub fn count(&self) -> u32 {
        self.current_nodes.len() as u32
    }
}

/// Snapshot of the pool and the jobs it feeds. `idle_nodes` is the whole set
/// of nodes currently on loan to us, including ones assigned to jobs; jobs are
/// listed in arrival order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterState {
    pub idle_nodes: BTreeSet<NodeId>,
    pub jobs: Vec<JobState>,
}

impl ClusterState {
    /// Pool size, `|N|`: the node budget available to the allocator.
    pub fn budget(&self) -> u32 {
        self.idle_nodes.len() as u32
    }

    /// Current per-job sizes in job order.
    pub fn counts(&self) -> Vec<u32> {
        self.jobs.iter().map(JobState::count).collect()
    }

    /// Pool nodes not held by any job, in ascending id order.
    pub fn free_nodes(&self) -> BTreeSet<NodeId> {
        let mut free = self.idle_nodes.clone();
        for job in &self.jobs {
            for n in &job.current_nodes {
                free.remove(n);
            }
        }
        free
    }
}

/// A semantic problem in a cluster snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    /// The same node is held by two jobs.
    DuplicateAssignment {
        node: NodeId,
        first_job: String,
        second_job: String,
    },
    /// A running job sits below its minimum size (legal only transiently,
    /// right after forced preemption).
    CountBelowMinimum { job: String, count: u32, n_min: u32 },
    CountAboveMaximum { job: String, count: u32, n_max: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateAssignment {
                node,
                first_job,
                second_job,
            } => write!(f, "node {node} held by both {first_job} and {second_job}"),
            Violation::CountBelowMinimum { job, count, n_min } => {
                write!(f, "job {job} holds {count} nodes, below n_min={n_min}")
            }
            Violation::CountAboveMaximum { job, count, n_max } => {
                write!(f, "job {job} holds {count} nodes, above n_max={n_max}")
            }
        }
    }
}

/// Check a snapshot against the allocation rules: no node in two jobs, and
/// every job at zero or within `[n_min, n_max]`. An empty result means the
/// state is a valid allocation.
pub fn validate_state(state: &ClusterState) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut owner: std::collections::BTreeMap<&NodeId, &str> = std::collections::BTreeMap::new();
    for job in &state.jobs {
        for node in &job.current_nodes {
            if let Some(first) = owner.get(node) {
                violations.push(Violation::DuplicateAssignment {
                    node: node.clone(),
                    first_job: (*first).to_string(),
                    second_job: job.spec.name.clone(),
                });
            } else {
                owner.insert(node, &job.spec.name);
            }
        }
        let count = job.count();
        if count > 0 && count < job.spec.n_min {
            violations.push(Violation::CountBelowMinimum {
                job: job.spec.name.clone(),
                count,
                n_min: job.spec.n_min,
            });
        }
        if count > job.spec.n_max {
            violations.push(Violation::CountAboveMaximum {
                job: job.spec.name.clone(),
                count,
                n_max: job.spec.n_max,
            });
        }
    }
    violations
}

/// One change to the idle pool: nodes that appeared and nodes that left,
/// at the same instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_s: f64,
    pub joins: Vec<NodeId>,
    pub leaves: Vec<NodeId>,
}

/// One contiguous interval a node spent in the pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fragment {
    pub node: NodeId,
    pub start_s: f64,
    pub end_s: f64,
}

impl Fragment {
    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn two_job_state() -> ClusterState {
        let curve = linear_curve(100.0, 8);
        ClusterState {
            idle_nodes: nodes(&["n1", "n2", "n3", "n4"]),
            jobs: vec![
                JobState {
                    spec: trainer("a", 1, 8, curve.clone()),
                    current_nodes: nodes(&["n1", "n2"]),
                },
                JobState {
                    spec: trainer("b", 2, 8, curve),
                    current_nodes: nodes(&["n3"]),
                },
            ],
        }
    }

    #[test]
    fn validate_flags_duplicate_assignment() {
        let mut state = two_job_state();
        state.jobs[1].current_nodes.insert(NodeId::from("n1"));
        let violations = validate_state(&state);
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::DuplicateAssignment { node, .. } if node.as_str() == "n1"
        )));
    }

    #[test]
    fn validate_flags_size_bounds() {
        let state = two_job_state();
        // Job b holds 1 node with n_min = 2: transient, but flagged.
        let violations = validate_state(&state);
        assert_eq!(
            violations,
            vec![Violation::CountBelowMinimum {
                job: "b".into(),
                count: 1,
                n_min: 2
            }]
        );

        let mut over = two_job_state();
        over.jobs[0].spec.n_max = 1;
        assert!(validate_state(&over)
            .iter()
            .any(|v| matches!(v, Violation::CountAboveMaximum { job, .. } if job == "a")));
    }

    #[test]
    fn validate_accepts_good_state() {
        let mut state = two_job_state();
        state.jobs[1].current_nodes.insert(NodeId::from("n4"));
        assert!(validate_state(&state).is_empty());
        // A job at zero nodes is fine.
        state.jobs[1].current_nodes.clear();
        state.jobs[0].current_nodes.clear();
        assert!(validate_state(&state).is_empty());
    }

    #[test]
    fn free_nodes_excludes_held_ones() {
        let state = two_job_state();
        assert_eq!(state.free_nodes(), nodes(&["n4"]));
        assert_eq!(state.budget(), 4);
        assert_eq!(state.counts(), vec![2, 1]);
    }

    #[test]
    fn state_roundtrips_through_json() {
        let state = two_job_state();
        let json = serde_json::to_string(&state).unwrap();
        let back: ClusterState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn trainer_file_parses_with_exact_field_names() {
        let json = r#"[{
            "name": "shufflenet-00",
            "n_min": 1,
            "n_max": 4,
            "r_up_s": 30.0,
            "r_dw_s": 8.0,
            "total_samples": 5000000.0,
            "curve": [[1, 2800.0], [2, 5300.0], [4, 10000.0]],
            "arrival_s": 0.0
        }]"#;
        let trainers = parse_trainers(json.as_bytes()).unwrap();
        assert_eq!(trainers.len(), 1);
        assert_eq!(trainers[0].name, "shufflenet-00");
        assert_eq!(trainers[0].curve.evaluate(2).unwrap(), 5300.0);
    }

    #[test]
    fn trainer_validation_rejects_bad_bounds() {
        let mk = |n_min: u32, n_max: u32| {
            format!(
                r#"[{{"name":"t","n_min":{n_min},"n_max":{n_max},"r_up_s":0.0,"r_dw_s":0.0,
                 "total_samples":1.0,"curve":[[2,1.0],[4,2.0]],"arrival_s":0.0}}]"#
            )
        };
        // n_max above the largest grid point.
        assert!(parse_trainers(mk(2, 5).as_bytes()).is_err());
        // n_min below the smallest grid point: size 1 would be unevaluable.
        assert!(parse_trainers(mk(1, 4).as_bytes()).is_err());
        // n_min > n_max.
        assert!(parse_trainers(mk(4, 3).as_bytes()).is_err());
        assert!(parse_trainers(mk(2, 4).as_bytes()).is_ok());
    }

    #[test]
    fn trainer_file_rejects_duplicate_names() {
        let one = r#"{"name":"t","n_min":1,"n_max":2,"r_up_s":0.0,"r_dw_s":0.0,
                      "total_samples":1.0,"curve":[[1,1.0],[2,2.0]],"arrival_s":0.0}"#;
        let json = format!("[{one},{one}]");
        assert!(matches!(
            parse_trainers(json.as_bytes()),
            Err(ModelError::DuplicateTrainer(_))
        ));
    }
}
