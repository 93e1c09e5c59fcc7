//! Branch and bound over the LP relaxation of the integer program.
//!
//! Search layout: best-bound node selection from a max-heap, children bounded
//! by a dense simplex solve. Branching prefers valid disjunctions over
//! aggregates, which sidesteps the node-identity symmetry of the raw 0/1
//! formulation (any two nodes are interchangeable, so branching on single
//! `x_jn` variables would enumerate equivalent assignments forever):
//!
//! 1. a job whose relaxed size `Σ_n x_jn` is fractional: split at the floor;
//! 2. a job whose relaxed size is integral but inside the forbidden band
//!    `(0, n_min)`: branch its active/idle selector;
//! 3. a job whose interpolation weights have non-adjacent support: split the
//!    grid window (standard SOS2 branching);
//! 4. otherwise the most fractional of the size/direction binaries.
//!
//! When none applies, the node's relaxation is exactly the value of its count
//! vector and the node is a leaf. Incumbents are always re-evaluated with
//! exact arithmetic from their count vector, never trusted from LP output.
//!
//! On proven completion the returned solution is canonicalized through the
//! same deterministic count-space tie-break the other solvers use, so
//! equal-objective optima do not depend on search order (or on the configured
//! big-M); the search's own optimum is cross-checked against it and any
//! disagreement surfaces as an internal error rather than a silent pick.

use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::problem::MilpProblem;
use super::simplex::{solve_lp, Cmp, LpOutcome, LpProblem, LpRow};
use super::{
    admissible, decision_from_counts, keep_current_decision, objective_of_counts,
    solve_count_dp, stay_objective, AllocationDecision, SolveConfig, SolveError, SolveStatus,
};

const INT_TOL: f64 = 1e-6;
const SUPPORT_TOL: f64 = 1e-7;

struct SearchNode {
    bound: f64,
    seq: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    extra_rows: Vec<LpRow>,
    values: Vec<f64>,
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for SearchNode {}
impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SearchNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Solve the integer program. `timeout_ms` zero means "never replan": the
/// current map is returned verbatim. On timeout with work done, the better of
/// the best solution found and the keep-current map is returned.
pub fn solve_bb(problem: &MilpProblem, timeout_ms: u64) -> Result<AllocationDecision, SolveError> {
    let state = &problem.state;
    let cfg = SolveConfig {
        timeout_ms,
        ..problem.cfg.clone()
    };
    if timeout_ms == 0 {
        return keep_current_decision(state, &cfg);
    }
    if state.jobs.is_empty() {
        return Ok(AllocationDecision {
            jobs: vec![],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
        });
    }
    let start = Instant::now();
    let deadline = Duration::from_millis(timeout_ms);

    // Seed the incumbent with solutions that always exist: everything idle,
    // and (when admissible) everything unchanged.
    let zero_counts = vec![0u32; state.jobs.len()];
    let mut inc_counts = zero_counts.clone();
    let mut inc_obj = objective_of_counts(state, &zero_counts, &cfg)?;
    if let Ok(obj) = objective_of_counts(state, &state.counts(), &cfg) {
        if obj > inc_obj {
            inc_obj = obj;
            inc_counts = state.counts();
        }
    }

    let ncols = problem.num_vars();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let root = SearchNode {
        bound: f64::INFINITY,
        seq,
        lower: vec![0.0; ncols],
        upper: vec![1.0; ncols],
        extra_rows: Vec::new(),
        values: Vec::new(),
    };
    let root = match evaluate(problem, root)? {
        Some(node) => node,
        None => {
            return Err(SolveError::Internal(
                "root relaxation infeasible; all-idle should be a feasible point".into(),
            ))
        }
    };
    try_candidate(problem, &root.values, &cfg, &mut inc_obj, &mut inc_counts)?;
    heap.push(root);

    let mut timed_out = false;
    while let Some(node) = heap.pop() {
        if start.elapsed() >= deadline {
            timed_out = true;
            break;
        }
        // Best-bound order: once the top of the heap cannot beat the
        // incumbent, nothing below it can either.
        if node.bound <= inc_obj + 1e-9 * (1.0 + inc_obj.abs()) {
            break;
        }
        let Some(branch) = pick_branch(problem, &node) else {
            continue; // leaf: relaxation value is attained by its counts
        };
        for child in apply_branch(problem, &node, branch, &mut seq) {
            if let Some(child) = evaluate(problem, child)? {
                try_candidate(problem, &child.values, &cfg, &mut inc_obj, &mut inc_counts)?;
                heap.push(child);
            }
        }
    }

    if timed_out {
        let stay = stay_objective(state, &cfg)?;
        if inc_obj > stay {
            return decision_from_counts(state, &inc_counts, inc_obj, SolveStatus::TimeoutFeasible);
        }
        let mut kept = keep_current_decision(state, &cfg)?;
        kept.status = SolveStatus::TimeoutKeptCurrent;
        return Ok(kept);
    }

    // Proven optimal: canonicalize ties through the count-space solver and
    // cross-check the search result against it.
    let canon = solve_count_dp(state, &cfg)?;
    let gap = (canon.objective_value - inc_obj).abs();
    if gap > 1e-9 * (1.0 + canon.objective_value.abs()) {
        return Err(SolveError::Internal(format!(
            "search optimum {inc_obj} disagrees with count-space optimum {}",
            canon.objective_value
        )));
    }
    Ok(canon)
}

/// Solve a node's relaxation; returns the node with `bound` and `values`
/// filled in, or None when infeasible.
fn evaluate(problem: &MilpProblem, mut node: SearchNode) -> Result<Option<SearchNode>, SolveError> {
    let mut rows = problem.rows.clone();
    rows.extend(node.extra_rows.iter().cloned());
    let lp = LpProblem {
        objective: problem.objective.clone(),
        rows,
        lower: node.lower.clone(),
        upper: node.upper.clone(),
    };
    match solve_lp(&lp).map_err(|e| SolveError::Lp(e.to_string()))? {
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Optimal { objective, values } => {
            // Inflate slightly so simplex noise can never prune the optimum.
            let parent = node.bound;
            node.bound = (objective + 1e-6 * (1.0 + objective.abs())).min(parent);
            node.values = values;
            Ok(Some(node))
        }
    }
}

/// Relaxed per-job sizes at an LP point.
fn relaxed_counts(problem: &MilpProblem, values: &[f64]) -> Vec<f64> {
    problem
        .x_cols
        .iter()
        .map(|cols| cols.iter().map(|&c| values[c]).sum())
        .collect()
}

/// If the LP point's counts are integral and admissible, evaluate them
/// exactly and keep the better incumbent.
fn try_candidate(
    problem: &MilpProblem,
    values: &[f64],
    cfg: &SolveConfig,
    inc_obj: &mut f64,
    inc_counts: &mut Vec<u32>,
) -> Result<(), SolveError> {
    let mut counts = Vec::with_capacity(problem.state.jobs.len());
    for (job, nj) in problem.state.jobs.iter().zip(relaxed_counts(problem, values)) {
        let rounded = nj.round();
        if (nj - rounded).abs() > INT_TOL {
            return Ok(());
        }
        let n = rounded as u32;
        if !admissible(&job.spec, n) {
            return Ok(());
        }
        counts.push(n);
    }
    let obj = objective_of_counts(&problem.state, &counts, cfg)?;
    if obj > *inc_obj {
        *inc_obj = obj;
        *inc_counts = counts;
    }
    Ok(())
}

enum Branch {
    /// Split one job's size at `floor`: `Σx <= floor` vs `Σx >= floor + 1`.
    CountSplit { job: usize, floor: u32 },
    /// Fix one binary column to 0 or to 1.
    Binary { col: usize },
    /// Restrict one job's weight support to `[..=k]` vs `[k..]`.
    Sos2Window { job: usize, k: usize },
}

fn pick_branch(problem: &MilpProblem, node: &SearchNode) -> Option<Branch> {
    let counts = relaxed_counts(problem, &node.values);

    // 1: most fractional relaxed size.
    let mut best: Option<(f64, usize)> = None;
    for (j, &nj) in counts.iter().enumerate() {
        let frac = (nj - nj.round()).abs();
        if frac > INT_TOL && best.map_or(true, |(b, _)| frac > b) {
            best = Some((frac, j));
        }
    }
    if let Some((_, job)) = best {
        return Some(Branch::CountSplit {
            job,
            floor: counts[job].floor() as u32,
        });
    }

    // 2: integral size inside the forbidden band: the idle/active selector
    // must be fractional, and branching it resolves the band directly.
    for (j, job) in problem.state.jobs.iter().enumerate() {
        let n = counts[j].round() as u32;
        if !admissible(&job.spec, n) {
            return Some(Branch::Binary {
                col: problem.size_active_col[j],
            });
        }
    }

    // 3: non-adjacent interpolation support.
    for (j, set) in problem.w_cols.iter().enumerate() {
        let support: Vec<usize> = set
            .iter()
            .enumerate()
            .filter(|&(_, &col)| node.values[col] > SUPPORT_TOL)
            .map(|(i, _)| i)
            .collect();
        if let (Some(&lo), Some(&hi)) = (support.first(), support.last()) {
            if hi - lo >= 2 {
                return Some(Branch::Sos2Window {
                    job: j,
                    k: (lo + hi) / 2,
                });
            }
        }
    }

    // 4: most fractional size/direction binary. Assignment and changed-hands
    // binaries never need branching: they do not appear in the objective, so
    // once sizes, windows and these selectors are settled the relaxation is
    // exact.
    let mut best: Option<(f64, usize)> = None;
    for j in 0..problem.state.jobs.len() {
        for col in [
            problem.size_idle_col[j],
            problem.size_active_col[j],
            problem.scale_up_col[j],
            problem.scale_down_col[j],
        ] {
            let v = node.values[col];
            let frac = (v - v.round()).abs();
            if frac > INT_TOL && best.map_or(true, |(b, _)| frac > b) {
                best = Some((frac, col));
            }
        }
    }
    best.map(|(_, col)| Branch::Binary { col })
}

fn apply_branch(
    problem: &MilpProblem,
    node: &SearchNode,
    branch: Branch,
    seq: &mut u64,
) -> Vec<SearchNode> {
    let child = |seq: &mut u64| {
        *seq += 1;
        SearchNode {
            bound: node.bound,
            seq: *seq,
            lower: node.lower.clone(),
            upper: node.upper.clone(),
            extra_rows: node.extra_rows.clone(),
            values: Vec::new(),
        }
    };
    match branch {
        Branch::CountSplit { job, floor } => {
            let terms: Vec<(usize, f64)> =
                problem.x_cols[job].iter().map(|&c| (c, 1.0)).collect();
            let mut lo_side = child(seq);
            lo_side.extra_rows.push(LpRow {
                terms: terms.clone(),
                cmp: Cmp::Le,
                rhs: f64::from(floor),
            });
            let mut hi_side = child(seq);
            hi_side.extra_rows.push(LpRow {
                terms,
                cmp: Cmp::Ge,
                rhs: f64::from(floor) + 1.0,
            });
            vec![lo_side, hi_side]
        }
        Branch::Binary { col } => {
            let mut zero = child(seq);
            zero.upper[col] = 0.0;
            let mut one = child(seq);
            one.lower[col] = 1.0;
            vec![zero, one]
        }
        Branch::Sos2Window { job, k } => {
            let set = &problem.w_cols[job];
            let mut left = child(seq);
            for (i, &col) in set.iter().enumerate() {
                if i > k {
                    left.upper[col] = 0.0;
                }
            }
            let mut right = child(seq);
            for (i, &col) in set.iter().enumerate() {
                if i < k {
                    right.upper[col] = 0.0;
                }
            }
            vec![left, right]
        }
    }
}
