//! Exact solver over per-job node counts.
//!
//! The objective never looks at node identities, only at how many nodes each
//! job ends up with, so the integer program collapses to: pick `n_j` from
//! each job's candidate sizes with `Σ n_j ≤ |pool|`, maximising the summed
//! gains. That is a small knapsack-style dynamic program over (job, budget).
//!
//! Values are suffix sums (job j uses the best value of jobs j+1..), summed
//! in exactly the same order as the exhaustive oracle so the two agree bit
//! for bit. Ties are broken like the oracle: fewer rescaled jobs first, then
//! scale earlier-arrived jobs up first.

use crate::model::ClusterState;

use super::{
    candidate_sizes, decision_from_counts, decision_gain, keep_current_decision,
    AllocationDecision, SolveConfig, SolveError, SolveStatus,
};

/// Exact count-based solve; same optimum as `solve_bb`, far cheaper.
pub fn solve_count_dp(
    state: &ClusterState,
    cfg: &SolveConfig,
) -> Result<AllocationDecision, SolveError> {
    if cfg.timeout_ms == 0 {
        return keep_current_decision(state, cfg);
    }
    let jobs = state.jobs.len();
    let budget = state.budget() as usize;

    let sizes: Vec<Vec<u32>> = state
        .jobs
        .iter()
        .map(|j| candidate_sizes(&j.spec, budget as u32))
        .collect();
    let mut gains: Vec<Vec<f64>> = vec![vec![f64::NAN; budget + 1]; jobs];
    for ((job, ns), g) in state.jobs.iter().zip(&sizes).zip(&mut gains) {
        for &n in ns {
            g[n as usize] = decision_gain(&job.spec, job.count(), n, cfg)?;
        }
    }
    let currents: Vec<u32> = state.counts();

    // val[j][b]: best (objective, rescaled-job count) for jobs j.. given b
    // spare nodes. Row `jobs` is the empty suffix.
    let mut val = vec![vec![(0.0f64, 0u32); budget + 1]; jobs + 1];
    for j in (0..jobs).rev() {
        for b in 0..=budget {
            let mut best = (f64::NEG_INFINITY, u32::MAX);
            for &n in &sizes[j] {
                let n_us = n as usize;
                if n_us > b {
                    break;
                }
                let tail = val[j + 1][b - n_us];
                let cand = (
                    gains[j][n_us] + tail.0,
                    u32::from(n != currents[j]) + tail.1,
                );
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            val[j][b] = best;
        }
    }

    // Reconstruct front to back, preferring the largest size that still
    // achieves the optimal (objective, rescales) pair: earlier-arrived jobs
    // get scaled up first on ties.
    let mut counts = Vec::with_capacity(jobs);
    let mut b = budget;
    for j in 0..jobs {
        let target = val[j][b];
        let mut chosen = None;
        for &n in sizes[j].iter().rev() {
            let n_us = n as usize;
            if n_us > b {
                continue;
            }
            let tail = val[j + 1][b - n_us];
            let cand = (
                gains[j][n_us] + tail.0,
                u32::from(n != currents[j]) + tail.1,
            );
            if cand == target {
                chosen = Some(n);
                break;
            }
        }
        let n =
            chosen.ok_or_else(|| SolveError::Internal("dp reconstruction failed".into()))?;
        counts.push(n);
        b -= n as usize;
    }

    let objective = val[0][budget].0;
    decision_from_counts(state, &counts, objective, SolveStatus::Optimal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::solve_exhaustive;
    use crate::model::testutil::*;
    use crate::model::JobState;
    use crate::scalability::ScalabilityCurve;

    fn cfg(t_fwd: f64) -> SolveConfig {
        SolveConfig {
            t_fwd_s: t_fwd,
            ..SolveConfig::default()
        }
    }

    #[test]
    fn matches_hand_worked_concave_split() {
        let curve =
            ScalabilityCurve::new(vec![1, 2, 3, 4], vec![1.0, 1.8, 2.4, 2.8]).unwrap();
        let state = ClusterState {
            idle_nodes: nodes(&["a", "b", "c", "d"]),
            jobs: vec![
                JobState::new(trainer("j1", 1, 4, curve.clone())),
                JobState::new(trainer("j2", 1, 4, curve)),
            ],
        };
        let d = solve_count_dp(&state, &cfg(1.0)).unwrap();
        assert_eq!(d.counts(), vec![2, 2]);
        assert!((d.objective_value - 3.6).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_pays_shrink_cost_for_running_jobs() {
        // Both jobs hold nodes that vanished from the pool story: budget 0
        // forces everyone to 0, paying f(c) * r_dw each.
        let mut spec_a = trainer("a", 1, 4, linear_curve(10.0, 4));
        spec_a.r_dw_s = 3.0;
        let mut spec_b = trainer("b", 1, 4, linear_curve(20.0, 4));
        spec_b.r_dw_s = 5.0;
        let state = ClusterState {
            idle_nodes: nodes(&[]),
            jobs: vec![
                JobState {
                    spec: spec_a,
                    current_nodes: nodes(&["x1", "x2"]),
                },
                JobState {
                    spec: spec_b,
                    current_nodes: nodes(&["x3"]),
                },
            ],
        };
        let d = solve_count_dp(&state, &cfg(1.0)).unwrap();
        assert_eq!(d.counts(), vec![0, 0]);
        // -(f_a(2) * 3 + f_b(1) * 5) = -(20*3 + 20*5) = -160.
        assert!((d.objective_value - (-160.0)).abs() < 1e-12);
    }

    #[test]
    fn timeout_zero_keeps_current_map() {
        let state = ClusterState {
            idle_nodes: nodes(&["a", "b"]),
            jobs: vec![JobState {
                spec: trainer("j", 1, 4, linear_curve(10.0, 4)),
                current_nodes: nodes(&["a"]),
            }],
        };
        let cfg = SolveConfig {
            timeout_ms: 0,
            ..cfg(1.0)
        };
        let d = solve_count_dp(&state, &cfg).unwrap();
        assert_eq!(d.status, SolveStatus::TimeoutKeptCurrent);
        assert_eq!(d.counts(), vec![1]);
        assert_eq!(d.jobs[0].nodes, nodes(&["a"]));
    }

    #[test]
    fn agrees_with_exhaustive_on_small_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n_jobs = rng.gen_range(1..=3);
            let n_nodes: u32 = rng.gen_range(0..=6);
            let pool: Vec<String> = (0..n_nodes).map(|i| format!("n{i:02}")).collect();
            let mut free: Vec<&String> = pool.iter().collect();
            let jobs: Vec<JobState> = (0..n_jobs)
                .map(|i| {
                    let hi = rng.gen_range(2..=6);
                    let curve = ScalabilityCurve::new(
                        vec![1, hi],
                        vec![rng.gen_range(0.5..10.0), rng.gen_range(0.5..30.0)],
                    )
                    .unwrap();
                    let mut spec = trainer(&format!("j{i}"), 1, hi, curve);
                    spec.r_up_s = rng.gen_range(0.0..20.0);
                    spec.r_dw_s = rng.gen_range(0.0..20.0);
                    let take = rng.gen_range(0..=free.len().min(2));
                    let current = (0..take).map(|_| {
                        let k = rng.gen_range(0..free.len());
                        crate::model::NodeId::new(free.swap_remove(k).clone())
                    });
                    JobState {
                        current_nodes: current.collect(),
                        spec,
                    }
                })
                .collect();
            let state = ClusterState {
                idle_nodes: pool.iter().map(|s| crate::model::NodeId::new(s.clone())).collect(),
                jobs,
            };
            let cfg = cfg(rng.gen_range(1.0..300.0));
            let dp = solve_count_dp(&state, &cfg).unwrap();
            let ex = solve_exhaustive(&state, &cfg).unwrap();
            assert_eq!(dp.objective_value.to_bits(), ex.objective_value.to_bits());
            assert_eq!(dp.counts(), ex.counts());
        }
    }
}
