//! The 0/1 integer-program formulation of the allocation decision.
//!
//! Variables, per job `j` over the pool's nodes `n` (all in `[0, 1]`):
//!
//! * `x_jn`        binary: node `n` feeds job `j` next interval.
//! * `yl_j, yu_j`  binaries selecting the size disjunction: the job is idle
//!   (`N_j = 0`) or active (`n_min <= N_j <= n_max`).
//! * `u_jn`        binary tracking `x_jn != c_jn` (node changed hands).
//! * `z_j`         binary selecting which side of the no-migration
//!   disjunction applies: all additions, or all removals.
//! * `zu_j, zd_j`  binaries: the job grew / shrank (each charges its pause).
//! * `w_ji`        continuous interpolation weights over the job's curve
//!   grid; adjacency (at most two nonzero, side by side) is not a linear
//!   constraint and is enforced by the branch-and-bound search.
//!
//! Constants: the current map `c_jn`, current sizes `C_j`, big-M, the
//! planning interval and the objective metric. Disjunction rows use three
//! effective big-M values derived from the configured one: the configured
//! value must dominate the pool size, the job-size rows additionally need
//! `M > n_min` (a job whose minimum exceeds the pool must still be allowed
//! to sit idle), and the migration rows need `M >= 2 |N|` (a rescale by `A`
//! nodes slackens them by `2 A`).

use serde::Serialize;

use super::simplex::{Cmp, LpRow};
use super::{objective_rate, SolveConfig, SolveError};
use crate::model::{ClusterState, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    /// `x_jn`: node feeds job.
    Assign { job: usize, node: usize },
    /// `yl_j`: job sits idle.
    SizeIdle { job: usize },
    /// `yu_j`: job runs within its size bounds.
    SizeActive { job: usize },
    /// `u_jn`: node changed hands for this job.
    Changed { job: usize, node: usize },
    /// `z_j`: selects the all-removals side of the no-migration disjunction.
    ShrinkSelector { job: usize },
    /// `zu_j`: job grew.
    ScaleUp { job: usize },
    /// `zd_j`: job shrank.
    ScaleDown { job: usize },
    /// `w_ji`: interpolation weight on curve grid point `i`.
    Weight { job: usize, point: usize },
}

impl VarKind {
    pub fn is_binary(&self) -> bool {
        !matches!(self, VarKind::Weight { .. })
    }

    pub fn label(&self) -> String {
        match *self {
            VarKind::Assign { job, node } => format!("x_j{job}_n{node}"),
            VarKind::SizeIdle { job } => format!("yl_j{job}"),
            VarKind::SizeActive { job } => format!("yu_j{job}"),
            VarKind::Changed { job, node } => format!("u_j{job}_n{node}"),
            VarKind::ShrinkSelector { job } => format!("z_j{job}"),
            VarKind::ScaleUp { job } => format!("zu_j{job}"),
            VarKind::ScaleDown { job } => format!("zd_j{job}"),
            VarKind::Weight { job, point } => format!("w_j{job}_p{point}"),
        }
    }
}

/// Which part of the model a constraint row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFamily {
    /// Idle-or-within-bounds size disjunction.
    JobSize,
    /// Each node feeds at most one job.
    NodeExclusive,
    /// Change tracking plus the all-additions/all-removals disjunction.
    NoMigration,
    /// Weights sum to one for active jobs and reproduce the chosen size.
    PiecewiseLink,
    /// Grow/shrink indicators consistent with the size change.
    Direction,
}

/// A built instance: LP matrix plus everything the search needs to interpret
/// it (variable roles, SOS2 sets, the snapshot it came from).
#[derive(Debug, Clone)]
pub struct MilpProblem {
    pub state: ClusterState,
    pub cfg: SolveConfig,
    /// Resolved big-M (the configured value or pool + 1).
    pub big_m: u32,
    pub vars: Vec<VarKind>,
    /// Maximization coefficients, one per variable.
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    /// Parallel to `rows`.
    pub families: Vec<RowFamily>,
    /// Pool nodes in id order; `Assign`/`Changed` node indices point here.
    pub node_order: Vec<NodeId>,
    pub x_cols: Vec<Vec<usize>>,
    pub w_cols: Vec<Vec<usize>>,
    pub size_idle_col: Vec<usize>,
    pub size_active_col: Vec<usize>,
    pub scale_up_col: Vec<usize>,
    pub scale_down_col: Vec<usize>,
}

impl MilpProblem {
    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// The ordered weight-column sets, one per job: within each, at most two
    /// adjacent members may be nonzero in an integer-feasible solution.
    pub fn sos2_sets(&self) -> &[Vec<usize>] {
        &self.w_cols
    }

    /// CPLEX-LP-style text dump for eyeballing or feeding external solvers.
    pub fn to_lp_format(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let term = |buf: &mut String, coef: f64, col: usize, first: bool| {
            if first {
                let _ = write!(buf, "{coef} {}", self.vars[col].label());
            } else if coef < 0.0 {
                let _ = write!(buf, " - {} {}", -coef, self.vars[col].label());
            } else {
                let _ = write!(buf, " + {coef} {}", self.vars[col].label());
            }
        };
        out.push_str("Maximize\n obj:");
        let mut first = true;
        for (col, &coef) in self.objective.iter().enumerate() {
            if coef != 0.0 {
                out.push(' ');
                term(&mut out, coef, col, first);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let tag = match self.families[i] {
                RowFamily::JobSize => "size",
                RowFamily::NodeExclusive => "node",
                RowFamily::NoMigration => "migr",
                RowFamily::PiecewiseLink => "link",
                RowFamily::Direction => "dir",
            };
            let _ = write!(out, " {tag}{i}:");
            let mut first = true;
            for &(col, coef) in &row.terms {
                out.push(' ');
                term(&mut out, coef, col, first);
                first = false;
            }
            let cmp = match row.cmp {
                Cmp::Le => "<=",
                Cmp::Eq => "=",
                Cmp::Ge => ">=",
            };
            let _ = writeln!(out, " {cmp} {}", row.rhs);
        }
        out.push_str("Bounds\n");
        for kind in &self.vars {
            let _ = writeln!(out, " 0 <= {} <= 1", kind.label());
        }
        out.push_str("Binary\n");
        for kind in &self.vars {
            if kind.is_binary() {
                let _ = writeln!(out, " {}", kind.label());
            }
        }
        if !self.w_cols.is_empty() {
            out.push_str("SOS\n");
            for (j, set) in self.w_cols.iter().enumerate() {
                let _ = write!(out, " s{j}: S2::");
                for (rank, &col) in set.iter().enumerate() {
                    let _ = write!(out, " {}:{}", self.vars[col].label(), rank + 1);
                }
                out.push('\n');
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Build the integer program for one snapshot.
///
/// Always feasible by construction: every job idle (`x = 0`) satisfies all
/// rows. An empty job list yields a trivial problem with objective 0.
pub fn build_milp(state: &ClusterState, cfg: &SolveConfig) -> Result<MilpProblem, SolveError> {
    let pool = state.budget();
    let big_m = cfg.big_m.unwrap_or(pool + 1);
    if big_m <= pool {
        return Err(SolveError::BadBigM { big_m, pool });
    }
    let max_n_min = state.jobs.iter().map(|j| j.spec.n_min).max().unwrap_or(0);
    let m_size = f64::from(big_m.max(max_n_min + 1));
    let m_migr = f64::from(big_m.max(2 * pool));
    let m_dir = f64::from(big_m);

    let node_order: Vec<NodeId> = state.idle_nodes.iter().cloned().collect();
    let n_nodes = node_order.len();
    let n_jobs = state.jobs.len();

    let mut vars = Vec::new();
    let mut x_cols = Vec::with_capacity(n_jobs);
    let mut u_cols = Vec::with_capacity(n_jobs);
    let mut w_cols = Vec::with_capacity(n_jobs);
    let mut size_idle_col = Vec::with_capacity(n_jobs);
    let mut size_active_col = Vec::with_capacity(n_jobs);
    let mut shrink_col = Vec::with_capacity(n_jobs);
    let mut scale_up_col = Vec::with_capacity(n_jobs);
    let mut scale_down_col = Vec::with_capacity(n_jobs);
    for (j, job) in state.jobs.iter().enumerate() {
        let push = |kind: VarKind, vars: &mut Vec<VarKind>| {
            vars.push(kind);
            vars.len() - 1
        };
        x_cols.push(
            (0..n_nodes)
                .map(|n| push(VarKind::Assign { job: j, node: n }, &mut vars))
                .collect::<Vec<_>>(),
        );
        size_idle_col.push(push(VarKind::SizeIdle { job: j }, &mut vars));
        size_active_col.push(push(VarKind::SizeActive { job: j }, &mut vars));
        u_cols.push(
            (0..n_nodes)
                .map(|n| push(VarKind::Changed { job: j, node: n }, &mut vars))
                .collect::<Vec<_>>(),
        );
        shrink_col.push(push(VarKind::ShrinkSelector { job: j }, &mut vars));
        scale_up_col.push(push(VarKind::ScaleUp { job: j }, &mut vars));
        scale_down_col.push(push(VarKind::ScaleDown { job: j }, &mut vars));
        w_cols.push(
            (0..job.spec.curve.len())
                .map(|i| push(VarKind::Weight { job: j, point: i }, &mut vars))
                .collect::<Vec<_>>(),
        );
    }

    // Current map as constants.
    let c: Vec<Vec<f64>> = state
        .jobs
        .iter()
        .map(|job| {
            node_order
                .iter()
                .map(|n| if job.current_nodes.contains(n) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut families = Vec::new();
    let push_row = |family: RowFamily,
                        terms: Vec<(usize, f64)>,
                        cmp: Cmp,
                        rhs: f64,
                        rows: &mut Vec<LpRow>,
                        families: &mut Vec<RowFamily>| {
        rows.push(LpRow { terms, cmp, rhs });
        families.push(family);
    };

    // Size disjunction: yl + yu = 1; yl forces N = 0; yu forces
    // n_min <= N <= n_max.
    for (j, job) in state.jobs.iter().enumerate() {
        let spec = &job.spec;
        push_row(
            RowFamily::JobSize,
            vec![(size_idle_col[j], 1.0), (size_active_col[j], 1.0)],
            Cmp::Eq,
            1.0,
            &mut rows,
            &mut families,
        );
        let sum_x = |extra: (usize, f64)| -> Vec<(usize, f64)> {
            let mut t: Vec<(usize, f64)> = x_cols[j].iter().map(|&c| (c, 1.0)).collect();
            t.push(extra);
            t
        };
        push_row(
            RowFamily::JobSize,
            sum_x((size_idle_col[j], m_size)),
            Cmp::Le,
            m_size,
            &mut rows,
            &mut families,
        );
        push_row(
            RowFamily::JobSize,
            sum_x((size_active_col[j], -m_size)),
            Cmp::Ge,
            f64::from(spec.n_min) - m_size,
            &mut rows,
            &mut families,
        );
        push_row(
            RowFamily::JobSize,
            sum_x((size_active_col[j], m_size)),
            Cmp::Le,
            f64::from(spec.n_max) + m_size,
            &mut rows,
            &mut families,
        );
    }

    // Each node feeds at most one job.
    if n_jobs > 0 {
        for n in 0..n_nodes {
            let terms = (0..n_jobs).map(|j| (x_cols[j][n], 1.0)).collect();
            push_row(
                RowFamily::NodeExclusive,
                terms,
                Cmp::Le,
                1.0,
                &mut rows,
                &mut families,
            );
        }
    }

    // u_jn = x_jn xor c_jn, then ban mixed additions and removals: z picks
    // the all-removals side of the disjunction.
    for j in 0..n_jobs {
        for n in 0..n_nodes {
            let (u, x, cjn) = (u_cols[j][n], x_cols[j][n], c[j][n]);
            push_row(
                RowFamily::NoMigration,
                vec![(u, 1.0), (x, -1.0)],
                Cmp::Le,
                cjn,
                &mut rows,
                &mut families,
            );
            push_row(
                RowFamily::NoMigration,
                vec![(u, 1.0), (x, -1.0)],
                Cmp::Ge,
                -cjn,
                &mut rows,
                &mut families,
            );
            push_row(
                RowFamily::NoMigration,
                vec![(u, 1.0), (x, 1.0)],
                Cmp::Ge,
                cjn,
                &mut rows,
                &mut families,
            );
            push_row(
                RowFamily::NoMigration,
                vec![(u, 1.0), (x, 1.0)],
                Cmp::Le,
                2.0 - cjn,
                &mut rows,
                &mut families,
            );
        }
        let c_sum: f64 = c[j].iter().sum();
        let mut up_terms: Vec<(usize, f64)> = x_cols[j].iter().map(|&col| (col, 1.0)).collect();
        up_terms.extend(u_cols[j].iter().map(|&col| (col, -1.0)));
        up_terms.push((shrink_col[j], m_migr));
        push_row(
            RowFamily::NoMigration,
            up_terms,
            Cmp::Ge,
            c_sum,
            &mut rows,
            &mut families,
        );
        let mut down_terms: Vec<(usize, f64)> = x_cols[j].iter().map(|&col| (col, 1.0)).collect();
        down_terms.extend(u_cols[j].iter().map(|&col| (col, 1.0)));
        down_terms.push((shrink_col[j], m_migr));
        push_row(
            RowFamily::NoMigration,
            down_terms,
            Cmp::Le,
            c_sum + m_migr,
            &mut rows,
            &mut families,
        );
    }

    // Interpolation weights: they carry mass exactly when the job is active,
    // and reproduce the chosen size.
    for (j, job) in state.jobs.iter().enumerate() {
        let mut mass: Vec<(usize, f64)> = w_cols[j].iter().map(|&col| (col, 1.0)).collect();
        mass.push((size_idle_col[j], 1.0));
        push_row(
            RowFamily::PiecewiseLink,
            mass,
            Cmp::Eq,
            1.0,
            &mut rows,
            &mut families,
        );
        let mut link: Vec<(usize, f64)> = w_cols[j]
            .iter()
            .zip(job.spec.curve.grid())
            .map(|(&col, &g)| (col, f64::from(g)))
            .collect();
        link.extend(x_cols[j].iter().map(|&col| (col, -1.0)));
        push_row(
            RowFamily::PiecewiseLink,
            link,
            Cmp::Eq,
            0.0,
            &mut rows,
            &mut families,
        );
    }

    // Direction indicators: zu = 1 exactly when N > C, zd = 1 exactly when
    // N < C (for binary zu/zd; the LP relaxation only bounds them below,
    // which the search closes by branching).
    for (j, job) in state.jobs.iter().enumerate() {
        let cj = f64::from(job.count());
        let sum_x = |extra: (usize, f64)| -> Vec<(usize, f64)> {
            let mut t: Vec<(usize, f64)> = x_cols[j].iter().map(|&c| (c, 1.0)).collect();
            t.push(extra);
            t
        };
        push_row(
            RowFamily::Direction,
            sum_x((scale_up_col[j], -(m_dir - cj))),
            Cmp::Le,
            cj,
            &mut rows,
            &mut families,
        );
        push_row(
            RowFamily::Direction,
            sum_x((scale_up_col[j], -(cj + 1.0))),
            Cmp::Ge,
            0.0,
            &mut rows,
            &mut families,
        );
        push_row(
            RowFamily::Direction,
            sum_x((scale_down_col[j], m_dir - cj + 1.0)),
            Cmp::Le,
            m_dir,
            &mut rows,
            &mut families,
        );
        push_row(
            RowFamily::Direction,
            sum_x((scale_down_col[j], cj)),
            Cmp::Ge,
            cj,
            &mut rows,
            &mut families,
        );
    }

    // Objective: progress over the planning interval minus pause losses at
    // the current rate.
    let mut objective = vec![0.0f64; vars.len()];
    for (j, job) in state.jobs.iter().enumerate() {
        let spec = &job.spec;
        for (i, &col) in w_cols[j].iter().enumerate() {
            objective[col] = cfg.t_fwd_s * objective_rate(spec, spec.curve.grid()[i], cfg.metric)?;
        }
        let f_c = objective_rate(spec, job.count(), cfg.metric)?;
        objective[scale_up_col[j]] = -f_c * spec.r_up_s;
        objective[scale_down_col[j]] = -f_c * spec.r_dw_s;
    }

    Ok(MilpProblem {
        state: state.clone(),
        cfg: cfg.clone(),
        big_m,
        vars,
        objective,
        rows,
        families,
        node_order,
        x_cols,
        w_cols,
        size_idle_col,
        size_active_col,
        scale_up_col,
        scale_down_col,
    })
}
