//! Allocation policies that are not the integer program: the equal-share
//! baseline and the FCFS admission gate.
//!
//! Equal-share ignores scalability curves and rescale costs when choosing
//! sizes, but its decisions are realized through the same deterministic
//! node-assignment rule as the optimizing policies and its reported objective
//! includes the rescale costs it triggers, so the two are directly
//! comparable.

use serde::{Deserialize, Serialize};

use crate::milp::{
    decision_from_counts, keep_current_decision, objective_of_counts, AllocationDecision,
    SolveConfig, SolveError, SolveStatus,
};
use crate::model::ClusterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Milp,
    EqualShare,
}

/// Policy-level knobs: which policy decides sizes, the solver configuration
/// it uses, and the cap on concurrently running jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub policy: PolicyKind,
    pub solve: SolveConfig,
    /// Maximum number of jobs running at once; the rest wait in the queue.
    pub pj_max: u32,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            policy: PolicyKind::Milp,
            solve: SolveConfig::default(),
            pj_max: u32::MAX,
        }
    }
}

/// Spread the pool evenly over the jobs, earliest arrivals first.
///
/// Target sizes start at `floor(|N| / J)` with the remainder going one each
/// to the earliest-arrived jobs, then are clamped into `{0} ∪ [n_min, n_max]`
/// (a target below the minimum drops to zero). Nodes freed by clamping are
/// re-granted in FCFS passes: a running job gains one node per pass up to its
/// maximum, an idle job is revived straight to its minimum when enough
/// surplus remains. Passes repeat until nothing changes; leftover nodes stay
/// free.
///
/// A zero `timeout_ms` means "never replan" for this policy too: the current
/// map is kept verbatim.
pub fn equal_share(
    state: &ClusterState,
    cfg: &PolicyConfig,
) -> Result<AllocationDecision, SolveError> {
    let cfg = &cfg.solve;
    if cfg.timeout_ms == 0 {
        return keep_current_decision(state, cfg);
    }
    if state.jobs.is_empty() {
        return Ok(AllocationDecision {
            jobs: vec![],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
        });
    }
    let budget = state.budget();
    let n_jobs = state.jobs.len() as u32;
    let base = budget / n_jobs;
    let remainder = budget % n_jobs;

    let mut targets: Vec<u32> = state
        .jobs
        .iter()
        .enumerate()
        .map(|(j, job)| {
            let t = base + u32::from((j as u32) < remainder);
            if t < job.spec.n_min {
                0
            } else {
                t.min(job.spec.n_max)
            }
        })
        .collect();
    let mut surplus = budget - targets.iter().sum::<u32>();

    loop {
        let mut granted = false;
        for (j, job) in state.jobs.iter().enumerate() {
            if surplus == 0 {
                break;
            }
            if targets[j] == 0 {
                if surplus >= job.spec.n_min {
                    targets[j] = job.spec.n_min;
                    surplus -= job.spec.n_min;
                    granted = true;
                }
            } else if targets[j] < job.spec.n_max {
                targets[j] += 1;
                surplus -= 1;
                granted = true;
            }
        }
        if !granted || surplus == 0 {
            break;
        }
    }

    let objective = objective_of_counts(state, &targets, cfg)?;
    decision_from_counts(state, &targets, objective, SolveStatus::Optimal)
}

/// FCFS admission: the earliest-queued jobs fill the remaining capacity.
/// Returns the prefix of `queue` to admit.
pub fn admit_fcfs<T>(queue: &[T], running: usize, pj_max: u32) -> &[T] {
    let capacity = (pj_max as usize).saturating_sub(running);
    &queue[..capacity.min(queue.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::Direction;
    use crate::model::testutil::*;
    use crate::model::{validate_state, JobState};

    fn jobs_with_bounds(bounds: &[(u32, u32)]) -> Vec<JobState> {
        bounds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                JobState::new(trainer(&format!("j{i}"), lo, hi, linear_curve(10.0, 64)))
            })
            .collect()
    }

    fn pool(n: u32) -> std::collections::BTreeSet<crate::model::NodeId> {
        (0..n)
            .map(|i| crate::model::NodeId::new(format!("n{i:02}")))
            .collect()
    }

    #[test]
    fn remainder_goes_to_earliest_jobs() {
        let state = ClusterState {
            idle_nodes: pool(4),
            jobs: jobs_with_bounds(&[(1, 8), (1, 8), (1, 8)]),
        };
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![2, 1, 1]);
    }

    #[test]
    fn identical_jobs_split_evenly() {
        let state = ClusterState {
            idle_nodes: pool(4),
            jobs: jobs_with_bounds(&[(1, 8), (1, 8)]),
        };
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![2, 2]);
    }

    #[test]
    fn sub_minimum_targets_drop_to_zero_and_surplus_moves_up() {
        // Both targets start at 2, below n_min = 3: the second job stays at
        // zero and its nodes flow to the first, capped at n_max.
        let state = ClusterState {
            idle_nodes: pool(4),
            jobs: jobs_with_bounds(&[(3, 8), (3, 8)]),
        };
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![4, 0]);
    }

    #[test]
    fn surplus_beyond_all_maxima_stays_free() {
        let state = ClusterState {
            idle_nodes: pool(4),
            jobs: jobs_with_bounds(&[(1, 1), (1, 1)]),
        };
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![1, 1]);
    }

    #[test]
    fn revival_needs_the_full_minimum() {
        // 7 nodes over three jobs: targets 3/2/2, the middle job (n_min = 5)
        // clamps to zero, and its surplus re-spreads FCFS one node per pass
        // without reviving it.
        let state = ClusterState {
            idle_nodes: pool(7),
            jobs: jobs_with_bounds(&[(1, 10), (5, 10), (1, 10)]),
        };
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![4, 0, 3]);
    }

    #[test]
    fn output_is_a_valid_one_directional_allocation() {
        let mut state = ClusterState {
            idle_nodes: pool(9),
            jobs: jobs_with_bounds(&[(2, 4), (1, 3), (3, 9)]),
        };
        // Start from an arbitrary current map.
        state.jobs[0].current_nodes = nodes(&["n04", "n05", "n06", "n07"]);
        state.jobs[1].current_nodes = nodes(&["n00"]);
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        let mut after = state.clone();
        for (job, decided) in after.jobs.iter_mut().zip(&d.jobs) {
            job.current_nodes = decided.nodes.clone();
        }
        assert!(validate_state(&after).is_empty());
        for (job, decided) in state.jobs.iter().zip(&d.jobs) {
            let sym = decided.nodes.symmetric_difference(&job.current_nodes).count();
            let diff = (decided.nodes.len() as i64 - job.current_nodes.len() as i64).unsigned_abs();
            assert_eq!(sym as u64, diff, "migration detected for {}", decided.name);
        }
    }

    #[test]
    fn reported_objective_includes_rescale_costs() {
        let mut state = ClusterState {
            idle_nodes: pool(2),
            jobs: jobs_with_bounds(&[(1, 1), (1, 8)]),
        };
        state.jobs[1].spec.r_dw_s = 5.0;
        // Job 1 currently holds both nodes and must shrink to 1.
        state.jobs[1].current_nodes = pool(2);
        let d = equal_share(&state, &PolicyConfig::default()).unwrap();
        assert_eq!(d.counts(), vec![1, 1]);
        let want = objective_of_counts(&state, &[1, 1], &SolveConfig::default()).unwrap();
        assert_eq!(d.objective_value.to_bits(), want.to_bits());
        assert_eq!(d.jobs[1].direction, Direction::Down);
    }

    #[test]
    fn timeout_zero_keeps_the_current_map() {
        let mut state = ClusterState {
            idle_nodes: pool(4),
            jobs: jobs_with_bounds(&[(1, 8)]),
        };
        state.jobs[0].current_nodes = nodes(&["n02"]);
        let cfg = PolicyConfig {
            policy: PolicyKind::EqualShare,
            solve: SolveConfig {
                timeout_ms: 0,
                ..SolveConfig::default()
            },
            pj_max: 4,
        };
        let d = equal_share(&state, &cfg).unwrap();
        assert_eq!(d.status, SolveStatus::TimeoutKeptCurrent);
        assert_eq!(d.jobs[0].nodes, nodes(&["n02"]));
    }

    #[test]
    fn admission_takes_a_queue_prefix() {
        let queue = ["a", "b", "c", "d", "e"];
        assert_eq!(admit_fcfs(&queue, 7, 10), &queue[..3]);
        assert_eq!(admit_fcfs(&queue, 10, 10), &queue[..0]);
        let empty: [&str; 0] = [];
        assert_eq!(admit_fcfs(&empty, 0, 10), &empty[..]);
        assert_eq!(admit_fcfs(&queue, 0, 2), &queue[..2]);
    }
}
