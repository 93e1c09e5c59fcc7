//! The allocation decision problem and its three solvers.
//!
//! Given a cluster snapshot, choose each job's next size (and concrete nodes)
//! to maximise objective-weighted progress over the next planning interval of
//! `t_fwd_s` seconds, net of rescaling losses:
//!
//! ```text
//! maximize  Σ_j t_fwd · f_j(n_j)  −  Σ_j f_j(c_j) · pause(c_j → n_j)
//! ```
//!
//! where `f_j` is the job's scalability curve under the configured metric,
//! `c_j` its current size and `pause` the seconds of output lost when a job
//! grows (`r_up_s`) or shrinks (`r_dw_s`). Every job must end at size zero or
//! within `[n_min, n_max]`, each node feeds at most one job, and a job may
//! only gain nodes or only lose nodes in one decision, never swap.
//!
//! Three solvers answer the same question and must agree on the optimum:
//!
//! * [`solve_bb`]: the full 0/1 integer program over node identities, by LP
//!   relaxation plus branch and bound. The reference formulation.
//! * [`solve_count_dp`]: exact dynamic program over per-job node counts,
//!   exploiting that the objective only depends on how many nodes each job
//!   gets, never which ones. The fast path.
//! * [`solve_exhaustive`]: brute-force enumeration of count vectors, as the
//!   oracle for the other two.
//!
//! Node identities for count-based solutions come from [`realize_counts`],
//! which is deterministic so that equal inputs give byte-equal outputs.

mod bb;
mod dp;
mod exhaustive;
pub mod problem;
pub mod simplex;

pub use bb::solve_bb;
pub use dp::solve_count_dp;
pub use exhaustive::solve_exhaustive;
pub use problem::{build_milp, MilpProblem, VarKind};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterState, NodeId, ObjectiveMetric, TrainerSpec};
use crate::scalability::{CurveError, ScalabilityCurve};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("scaling-efficiency objective undefined: trainer {0} has zero rate at its smallest grid size")]
    ZeroBaseRate(String),
    #[error("count {count} for job {job} is not 0 or within [{n_min}, {n_max}]")]
    InadmissibleCount {
        job: String,
        count: u32,
        n_min: u32,
        n_max: u32,
    },
    #[error("count vector has {got} entries for {want} jobs")]
    CountLenMismatch { got: usize, want: usize },
    #[error("count vector needs {need} nodes, pool has {have}")]
    OverBudget { need: u32, have: u32 },
    #[error("search space of {size:.3e} count vectors exceeds the exhaustive guard of {limit:.1e}")]
    SearchSpaceExceeded { size: f64, limit: f64 },
    #[error("big_m {big_m} must exceed the pool size {pool}")]
    BadBigM { big_m: u32, pool: u32 },
    #[error("lp solver: {0}")]
    Lp(String),
    #[error("internal: {0}")]
    Internal(String),
}

/// Solver knobs shared by every policy and solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Planning interval in seconds: how long the chosen allocation is
    /// expected to run before the pool changes again.
    pub t_fwd_s: f64,
    pub metric: ObjectiveMetric,
    /// Wall-clock budget for one solve. Zero means "never replan": the
    /// current map is kept verbatim.
    pub timeout_ms: u64,
    /// Big-M constant for the integer program; defaults to pool size + 1.
    pub big_m: Option<u32>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            t_fwd_s: 60.0,
            metric: ObjectiveMetric::Throughput,
            timeout_ms: u64::MAX,
            big_m: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Proven optimal.
    Optimal,
    /// Search hit the time budget; best feasible solution found so far,
    /// already checked to beat keeping the current map.
    TimeoutFeasible,
    /// Search hit the time budget without anything better than the current
    /// map, which is kept verbatim.
    TimeoutKeptCurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Unchanged,
    Up,
    Down,
}

/// One job's slice of an allocation decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDecision {
    pub name: String,
    pub nodes: BTreeSet<NodeId>,
    pub count: u32,
    pub direction: Direction,
}

/// A complete answer from a policy: the new nodes-to-jobs map (aligned with
/// the input state's job order), its objective value, and how it was reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub jobs: Vec<JobDecision>,
    pub objective_value: f64,
    pub status: SolveStatus,
}

impl AllocationDecision {
    pub fn counts(&self) -> Vec<u32> {
        self.jobs.iter().map(|j| j.count).collect()
    }
}

/// Seconds of output a job loses when moving from `c` to `n` nodes: shrink
/// pays `r_dw_s`, grow pays `r_up_s`, staying put is free.
pub fn rescaling_cost(spec: &TrainerSpec, c: u32, n: u32) -> f64 {
    use std::cmp::Ordering::*;
    match n.cmp(&c) {
        Less => spec.r_dw_s,
        Equal => 0.0,
        Greater => spec.r_up_s,
    }
}

/// Throughput at `n` for cost and accrual purposes, total over all `n >= 0`:
/// matches `curve.evaluate` on its domain, extends linearly through the
/// origin below the smallest grid point (a transiently preempted job may sit
/// there), and clamps above the largest grid point.
pub fn total_rate(curve: &ScalabilityCurve, n: u32) -> f64 {
    if n == 0 {
        0.0
    } else if n < curve.min_nodes() {
        curve.rates()[0] * f64::from(n) / f64::from(curve.min_nodes())
    } else if n > curve.max_nodes() {
        *curve.rates().last().unwrap()
    } else {
        curve.evaluate(n).expect("n within curve domain")
    }
}

/// `f_j(n)` under the configured metric: raw samples/s, or speedup relative
/// to the smallest measured size.
pub fn objective_rate(
    spec: &TrainerSpec,
    n: u32,
    metric: ObjectiveMetric,
) -> Result<f64, SolveError> {
    let raw = total_rate(&spec.curve, n);
    match metric {
        ObjectiveMetric::Throughput => Ok(raw),
        ObjectiveMetric::ScalingEfficiency => {
            let base = spec.curve.rates()[0];
            if base == 0.0 {
                return Err(SolveError::ZeroBaseRate(spec.name.clone()));
            }
            Ok(raw / base)
        }
    }
}

fn admissible(spec: &TrainerSpec, n: u32) -> bool {
    n == 0 || (spec.n_min..=spec.n_max).contains(&n)
}

/// Net objective contribution of moving one job from `c` to `n` nodes:
/// `t_fwd · f(n) − f(c) · rescaling_cost(c, n)`. The new size must be
/// admissible; the current size may be transient.
pub fn decision_gain(
    spec: &TrainerSpec,
    c: u32,
    n: u32,
    cfg: &SolveConfig,
) -> Result<f64, SolveError> {
    if !admissible(spec, n) {
        return Err(SolveError::InadmissibleCount {
            job: spec.name.clone(),
            count: n,
            n_min: spec.n_min,
            n_max: spec.n_max,
        });
    }
    let f_n = objective_rate(spec, n, cfg.metric)?;
    let f_c = objective_rate(spec, c, cfg.metric)?;
    Ok(cfg.t_fwd_s * f_n - f_c * rescaling_cost(spec, c, n))
}

/// Objective of a full count vector, summed job-last-to-first so that the
/// count-based solvers reproduce it bit for bit.
pub fn objective_of_counts(
    state: &ClusterState,
    counts: &[u32],
    cfg: &SolveConfig,
) -> Result<f64, SolveError> {
    if counts.len() != state.jobs.len() {
        return Err(SolveError::CountLenMismatch {
            got: counts.len(),
            want: state.jobs.len(),
        });
    }
    let mut acc = 0.0;
    for (job, &n) in state.jobs.iter().zip(counts).rev() {
        acc = decision_gain(&job.spec, job.count(), n, cfg)? + acc;
    }
    Ok(acc)
}

/// Objective of leaving every job exactly as it is, defined even for
/// transient current sizes (used by the timeout fallback).
pub fn stay_objective(state: &ClusterState, cfg: &SolveConfig) -> Result<f64, SolveError> {
    let mut acc = 0.0;
    for job in state.jobs.iter().rev() {
        let f_c = objective_rate(&job.spec, job.count(), cfg.metric)?;
        acc = (cfg.t_fwd_s * f_c - f_c * 0.0) + acc;
    }
    Ok(acc)
}

/// The "never replan" answer: every job keeps its current nodes verbatim.
pub fn keep_current_decision(
    state: &ClusterState,
    cfg: &SolveConfig,
) -> Result<AllocationDecision, SolveError> {
    Ok(AllocationDecision {
        jobs: state
            .jobs
            .iter()
            .map(|job| JobDecision {
                name: job.spec.name.clone(),
                nodes: job.current_nodes.clone(),
                count: job.count(),
                direction: Direction::Unchanged,
            })
            .collect(),
        objective_value: stay_objective(state, cfg)?,
        status: SolveStatus::TimeoutKeptCurrent,
    })
}

/// Turn a per-job count vector into concrete node sets, deterministically:
/// shrinking jobs release their highest node ids first, growing jobs take
/// free nodes (pool leftovers plus just-released ones) in ascending id order,
/// jobs are processed in arrival order. Each job only gains or only loses
/// nodes, never both.
pub fn realize_counts(
    state: &ClusterState,
    counts: &[u32],
) -> Result<Vec<BTreeSet<NodeId>>, SolveError> {
    if counts.len() != state.jobs.len() {
        return Err(SolveError::CountLenMismatch {
            got: counts.len(),
            want: state.jobs.len(),
        });
    }
    for (job, &n) in state.jobs.iter().zip(counts) {
        if !admissible(&job.spec, n) {
            return Err(SolveError::InadmissibleCount {
                job: job.spec.name.clone(),
                count: n,
                n_min: job.spec.n_min,
                n_max: job.spec.n_max,
            });
        }
    }
    let need: u32 = counts.iter().sum();
    if need > state.budget() {
        return Err(SolveError::OverBudget {
            need,
            have: state.budget(),
        });
    }

    let mut free = state.free_nodes();
    let mut kept: Vec<BTreeSet<NodeId>> = Vec::with_capacity(counts.len());
    for (job, &n) in state.jobs.iter().zip(counts) {
        if n < job.count() {
            // Keep the n lowest ids, release the rest.
            let keep: BTreeSet<NodeId> =
                job.current_nodes.iter().take(n as usize).cloned().collect();
            for node in &job.current_nodes {
                if !keep.contains(node) {
                    free.insert(node.clone());
                }
            }
            kept.push(keep);
        } else {
            kept.push(job.current_nodes.clone());
        }
    }
    let mut result = Vec::with_capacity(counts.len());
    for (mut nodes, &n) in kept.into_iter().zip(counts) {
        while (nodes.len() as u32) < n {
            let next = free
                .iter()
                .next()
                .cloned()
                .ok_or_else(|| SolveError::Internal("free pool exhausted".into()))?;
            free.remove(&next);
            nodes.insert(next);
        }
        result.push(nodes);
    }
    Ok(result)
}

/// Assemble a decision from a count vector: realize node identities, derive
/// directions, attach the objective.
pub fn decision_from_counts(
    state: &ClusterState,
    counts: &[u32],
    objective_value: f64,
    status: SolveStatus,
) -> Result<AllocationDecision, SolveError> {
    let assignment = realize_counts(state, counts)?;
    let jobs = state
        .jobs
        .iter()
        .zip(assignment)
        .zip(counts)
        .map(|((job, nodes), &n)| {
            use std::cmp::Ordering::*;
            let direction = match n.cmp(&job.count()) {
                Less => Direction::Down,
                Equal => Direction::Unchanged,
                Greater => Direction::Up,
            };
            JobDecision {
                name: job.spec.name.clone(),
                nodes,
                count: n,
                direction,
            }
        })
        .collect();
    Ok(AllocationDecision {
        jobs,
        objective_value,
        status,
    })
}

/// Candidate sizes for one job under a node budget: zero, or anything in
/// `[n_min, min(n_max, budget)]`.
pub(crate) fn candidate_sizes(spec: &TrainerSpec, budget: u32) -> Vec<u32> {
    let mut sizes = vec![0];
    let hi = spec.n_max.min(budget);
    if spec.n_min <= hi {
        sizes.extend(spec.n_min..=hi);
    }
    sizes
}
