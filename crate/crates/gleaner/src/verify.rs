//! Randomized cross-checking of the three allocation solvers.
//!
//! Generates random cluster snapshots (random curves, bounds, costs, and
//! current maps, both objective metrics) and asserts that the integer-program
//! search, the count-space dynamic program, and the brute-force enumerator
//! agree on the objective, that every emitted decision is structurally valid,
//! and that optimizing solvers never do worse than keeping the current map or
//! than the equal-share baseline at zero cost.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::milp::{
    build_milp, realize_counts, solve_bb, solve_count_dp, solve_exhaustive, stay_objective,
    AllocationDecision, SolveConfig,
};
use crate::model::{validate_state, ClusterState, JobState, NodeId, ObjectiveMetric, TrainerSpec};
use crate::policies::{equal_share, PolicyConfig, PolicyKind};
use crate::scalability::ScalabilityCurve;

/// Shape of the random instances to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub max_jobs: u32,
    pub max_nodes: u32,
    /// Cap on n_max - n_min per job, to keep brute force tractable when jobs
    /// and nodes are both numerous.
    pub max_span: Option<u32>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            max_jobs: 4,
            max_nodes: 12,
            max_span: None,
        }
    }
}

/// One failing instance with everything needed to replay it.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyFailure {
    pub seed: u64,
    pub detail: String,
    pub state: ClusterState,
    pub cfg: SolveConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub instances: usize,
    pub failures: Vec<VerifyFailure>,
}

impl VerifyOutcome {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Draws a random snapshot plus solver knobs. The current map is empty 40% of
/// the time, a valid allocation 40%, and transiently undersized (as after a
/// forced preemption) 20%.
pub fn random_instance(rng: &mut impl Rng, shape: &InstanceConfig) -> (ClusterState, SolveConfig) {
    let n_nodes = rng.gen_range(1..=shape.max_nodes);
    let n_jobs = rng.gen_range(1..=shape.max_jobs);
    let idle_nodes: std::collections::BTreeSet<NodeId> =
        (0..n_nodes).map(|i| NodeId::new(format!("v{i:02}"))).collect();

    let mut jobs = Vec::new();
    for j in 0..n_jobs {
        let d = rng.gen_range(2..=5usize);
        let mut grid: Vec<u32> = Vec::new();
        let mut g = 0u32;
        for _ in 0..d {
            g += rng.gen_range(1..=6);
            grid.push(g);
        }
        let rates: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..400.0)).collect();
        let curve = ScalabilityCurve::new(grid.clone(), rates).unwrap();

        let lo = *grid.first().unwrap();
        let hi = *grid.last().unwrap();
        let n_min = rng.gen_range(lo..=hi);
        let span_hi = match shape.max_span {
            Some(cap) => hi.min(n_min + cap),
            None => hi,
        };
        let n_max = rng.gen_range(n_min..=span_hi);

        let zero_cost = rng.gen_bool(0.25);
        let round = rng.gen_bool(0.5);
        let mut cost = || {
            if zero_cost {
                0.0
            } else if round {
                rng.gen_range(0.0..30.0f64).round()
            } else {
                rng.gen_range(0.0..30.0)
            }
        };
        let spec = TrainerSpec {
            name: format!("job{j}"),
            n_min,
            n_max,
            r_up_s: cost(),
            r_dw_s: cost(),
            total_samples: 1.0e12,
            curve,
            arrival_s: 0.0,
        };
        jobs.push(JobState::new(spec));
    }

    let mut state = ClusterState { idle_nodes, jobs };

    let style = rng.gen_range(0..10);
    if style >= 4 {
        let mut free: Vec<NodeId> = state.idle_nodes.iter().cloned().collect();
        for j in 0..state.jobs.len() {
            let spec = &state.jobs[j].spec;
            let count = if style < 8 {
                // Valid: zero or inside [n_min, n_max].
                if rng.gen_bool(0.3) {
                    0
                } else {
                    rng.gen_range(spec.n_min..=spec.n_max)
                }
            } else {
                // Transient: anything the pool can hold, even below n_min.
                rng.gen_range(0..=spec.n_max)
            };
            let take = (count as usize).min(free.len());
            for _ in 0..take {
                let k = rng.gen_range(0..free.len());
                state.jobs[j].current_nodes.insert(free.swap_remove(k));
            }
        }
    }

    let cfg = SolveConfig {
        t_fwd_s: *[10.0, 60.0, 120.0, 300.0].get(rng.gen_range(0..4)).unwrap(),
        metric: if rng.gen_bool(0.5) {
            ObjectiveMetric::Throughput
        } else {
            ObjectiveMetric::ScalingEfficiency
        },
        ..SolveConfig::default()
    };
    (state, cfg)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// Structural validity of a decision against the state it was made for:
/// resulting allocation passes validation, stays within the pool, and no job
/// swaps nodes beyond its size change.
pub fn structural_check(
    state: &ClusterState,
    decision: &AllocationDecision,
    label: &str,
) -> Result<(), String> {
    let mut after = state.clone();
    for (job, decided) in after.jobs.iter_mut().zip(&decision.jobs) {
        job.current_nodes = decided.nodes.clone();
    }
    let violations = validate_state(&after);
    if !violations.is_empty() {
        return Err(format!("{label}: invalid state after decision: {violations:?}"));
    }
    let total: u32 = decision.counts().iter().sum();
    if total > state.budget() {
        return Err(format!("{label}: allocated {total} of {} nodes", state.budget()));
    }
    for (job, decided) in state.jobs.iter().zip(&decision.jobs) {
        let sym = decided
            .nodes
            .symmetric_difference(&job.current_nodes)
            .count() as i64;
        let diff = (decided.nodes.len() as i64 - job.current_nodes.len() as i64).abs();
        if sym != diff {
            return Err(format!(
                "{label}: job {} migrated nodes (symmetric difference {sym}, size change {diff})",
                decided.name
            ));
        }
    }
    Ok(())
}

/// Runs every check on one instance. `include_bb` adds the integer-program
/// search (the slowest of the three).
pub fn check_instance(
    state: &ClusterState,
    cfg: &SolveConfig,
    include_bb: bool,
) -> Result<(), String> {
    let dp = solve_count_dp(state, cfg).map_err(|e| format!("count-dp failed: {e}"))?;
    let ex = solve_exhaustive(state, cfg).map_err(|e| format!("exhaustive failed: {e}"))?;
    if relative_gap(dp.objective_value, ex.objective_value) > 1e-9 {
        return Err(format!(
            "count-dp {} vs exhaustive {} disagree",
            dp.objective_value, ex.objective_value
        ));
    }
    structural_check(state, &dp, "count-dp")?;
    structural_check(state, &ex, "exhaustive")?;

    if include_bb {
        let problem = build_milp(state, cfg).map_err(|e| format!("build failed: {e}"))?;
        let bb = solve_bb(&problem, u64::MAX).map_err(|e| format!("bb failed: {e}"))?;
        if relative_gap(bb.objective_value, ex.objective_value) > 1e-9 {
            return Err(format!(
                "bb {} vs exhaustive {} disagree",
                bb.objective_value, ex.objective_value
            ));
        }
        structural_check(state, &bb, "bb")?;
    }

    // Never worse than standing still, when standing still is admissible.
    let counts: Vec<u32> = state.jobs.iter().map(JobState::count).collect();
    if realize_counts(state, &counts).is_ok() {
        let stay = stay_objective(state, cfg).map_err(|e| format!("stay failed: {e}"))?;
        if dp.objective_value < stay - 1e-9 * (1.0 + stay.abs()) {
            return Err(format!(
                "solver {} worse than keeping the current map {stay}",
                dp.objective_value
            ));
        }
    }

    // At zero rescale cost the optimum dominates the equal-share heuristic.
    if state
        .jobs
        .iter()
        .all(|j| j.spec.r_up_s == 0.0 && j.spec.r_dw_s == 0.0)
    {
        let policy = PolicyConfig {
            policy: PolicyKind::EqualShare,
            solve: cfg.clone(),
            pj_max: u32::MAX,
        };
        let eq = equal_share(state, &policy).map_err(|e| format!("equal-share failed: {e}"))?;
        if dp.objective_value < eq.objective_value - 1e-9 * (1.0 + eq.objective_value.abs()) {
            return Err(format!(
                "solver {} worse than equal-share {}",
                dp.objective_value, eq.objective_value
            ));
        }
    }
    Ok(())
}

/// Draws `instances` seeded instances and checks each one. Failures carry a
/// JSON-serializable reproducer.
pub fn run_verification(
    instances: usize,
    base_seed: u64,
    shape: &InstanceConfig,
    include_bb: bool,
) -> VerifyOutcome {
    let mut failures = Vec::new();
    for i in 0..instances {
        let seed = base_seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (state, cfg) = random_instance(&mut rng, shape);
        if let Err(detail) = check_instance(&state, &cfg, include_bb) {
            failures.push(VerifyFailure {
                seed,
                detail,
                state,
                cfg,
            });
        }
    }
    VerifyOutcome {
        instances,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_instances_are_well_formed() {
        let shape = InstanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (state, cfg) = random_instance(&mut rng, &shape);
            assert!(!state.jobs.is_empty());
            assert!(state.budget() >= 1);
            assert!(cfg.t_fwd_s > 0.0);
            for job in &state.jobs {
                assert!(job.spec.n_min <= job.spec.n_max);
                assert!(job.count() <= state.budget());
            }
        }
    }

    #[test]
    fn spans_are_capped_when_asked() {
        let shape = InstanceConfig {
            max_jobs: 6,
            max_nodes: 20,
            max_span: Some(3),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (state, _) = random_instance(&mut rng, &shape);
            for job in &state.jobs {
                assert!(job.spec.n_max - job.spec.n_min <= 3);
            }
        }
    }

    #[test]
    fn a_small_batch_verifies_clean() {
        let outcome = run_verification(25, 99, &InstanceConfig::default(), true);
        assert!(
            outcome.ok(),
            "failures: {}",
            serde_json::to_string_pretty(&outcome.failures).unwrap()
        );
    }

    #[test]
    fn failures_serialize_with_a_reproducer() {
        let shape = InstanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (state, cfg) = random_instance(&mut rng, &shape);
        let failure = VerifyFailure {
            seed: 5,
            detail: "synthetic".into(),
            state,
            cfg,
        };
        let text = serde_json::to_string(&failure).unwrap();
        assert!(text.contains("\"seed\":5"));
        assert!(text.contains("curve"));
    }
}
