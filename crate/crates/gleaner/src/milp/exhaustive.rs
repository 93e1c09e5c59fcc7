//! Brute-force oracle: enumerate every count vector and keep the best.
//!
//! Exists to check the other solvers, not to be fast. The search space is
//! guarded at 10^7 vectors; instances beyond that are refused rather than
//! ground through.

use crate::model::ClusterState;

use super::{
    candidate_sizes, decision_from_counts, decision_gain, keep_current_decision,
    AllocationDecision, SolveConfig, SolveError, SolveStatus,
};

const GUARD: f64 = 1e7;

/// Tie-breaking comparator shared with the count DP: higher objective wins,
/// then fewer rescaled jobs, then the vector that scales earlier-arrived jobs
/// up first (lexicographically larger counts).
fn better(obj: f64, resc: u32, counts: &[u32], best: &(f64, u32, Vec<u32>)) -> bool {
    if obj != best.0 {
        return obj > best.0;
    }
    if resc != best.1 {
        return resc < best.1;
    }
    counts > best.2.as_slice()
}

/// Exhaustive reference solver. Errors if `Π_j |{0} ∪ [n_min, n_max]|`
/// exceeds the 10^7 guard.
pub fn solve_exhaustive(
    state: &ClusterState,
    cfg: &SolveConfig,
) -> Result<AllocationDecision, SolveError> {
    if cfg.timeout_ms == 0 {
        return keep_current_decision(state, cfg);
    }
    let mut size = 1.0f64;
    for job in &state.jobs {
        size *= f64::from(job.spec.n_max - job.spec.n_min + 2);
    }
    if size > GUARD {
        return Err(SolveError::SearchSpaceExceeded { size, limit: GUARD });
    }

    let budget = state.budget();
    let sizes: Vec<Vec<u32>> = state
        .jobs
        .iter()
        .map(|j| candidate_sizes(&j.spec, budget))
        .collect();
    // Gains indexed directly by count for O(1) lookup in the hot loop.
    let mut gains: Vec<Vec<f64>> = vec![vec![f64::NAN; budget as usize + 1]; sizes.len()];
    for ((job, ns), g) in state.jobs.iter().zip(&sizes).zip(&mut gains) {
        for &n in ns {
            g[n as usize] = decision_gain(&job.spec, job.count(), n, cfg)?;
        }
    }
    let currents: Vec<u32> = state.counts();

    let mut best: Option<(f64, u32, Vec<u32>)> = None;
    let mut counts = vec![0u32; state.jobs.len()];
    enumerate(
        0,
        budget,
        &sizes,
        &gains,
        &currents,
        &mut counts,
        &mut best,
    );
    let (objective, _, counts) =
        best.ok_or_else(|| SolveError::Internal("no candidate enumerated".into()))?;
    decision_from_counts(state, &counts, objective, SolveStatus::Optimal)
}

fn enumerate(
    j: usize,
    budget_left: u32,
    sizes: &[Vec<u32>],
    gains: &[Vec<f64>],
    currents: &[u32],
    counts: &mut Vec<u32>,
    best: &mut Option<(f64, u32, Vec<u32>)>,
) {
    if j == sizes.len() {
        // Sum gains from the last job to the first so the total is bit-equal
        // to the DP's suffix sums.
        let mut obj = 0.0;
        let mut resc = 0u32;
        for (idx, &n) in counts.iter().enumerate().rev() {
            obj = gains[idx][n as usize] + obj;
            resc += u32::from(n != currents[idx]);
        }
        match best {
            Some(b) if !better(obj, resc, counts, b) => {}
            _ => *best = Some((obj, resc, counts.clone())),
        }
        return;
    }
    for &n in &sizes[j] {
        if n > budget_left {
            continue;
        }
        counts[j] = n;
        enumerate(j + 1, budget_left - n, sizes, gains, currents, counts, best);
    }
    counts[j] = 0;
}
