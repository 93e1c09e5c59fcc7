//! Dense two-phase primal simplex over boxed variables.
//!
//! Small by design: the allocation MILPs relaxed here have a few hundred rows
//! and columns at most, so a dense tableau beats anything clever. Variable
//! bounds are handled natively: a nonbasic variable sits at either bound and
//! may flip to the other without a basis change, which keeps the tableau at
//! one row per structural constraint instead of one per bound.
//!
//! Phase 1 drives artificial variables out via an auxiliary objective, phase
//! 2 optimises the real one. Entering columns follow Dantzig's rule until the
//! objective stalls, then Bland's rule to rule out cycling. All tie-breaks
//! are index-deterministic so identical inputs give identical solutions.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

/// One linear constraint, sparse terms over structural variables.
#[derive(Debug, Clone)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// maximize `objective · x` subject to `rows`, `lower <= x <= upper`
/// (all bounds finite).
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { objective: f64, values: Vec<f64> },
    Infeasible,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("iteration limit hit ({0} pivots)")]
    IterationLimit(usize),
    #[error("unbounded subproblem")]
    Unbounded,
    #[error("bad problem: {0}")]
    BadProblem(String),
}

const EPS_PIVOT: f64 = 1e-9;
const EPS_COST: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarStatus {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Tableau {
    /// m x ncols coefficients, kept in basis-canonical form.
    t: Vec<Vec<f64>>,
    /// Value of each row's basic variable (shifted space).
    xb: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<VarStatus>,
    /// Upper bound per shifted column; +inf for slacks.
    cap: Vec<f64>,
    ncols: usize,
}

pub fn solve_lp(p: &LpProblem) -> Result<LpOutcome, LpError> {
    let n = p.objective.len();
    if p.lower.len() != n || p.upper.len() != n {
        return Err(LpError::BadProblem("bounds length mismatch".into()));
    }
    for j in 0..n {
        if !(p.lower[j].is_finite() && p.upper[j].is_finite()) || p.lower[j] > p.upper[j] {
            return Err(LpError::BadProblem(format!("bad bounds on column {j}")));
        }
    }
    let m = p.rows.len();

    // Shift x = lower + t so every structural variable lives in [0, cap].
    let mut rhs = Vec::with_capacity(m);
    for row in &p.rows {
        let mut r = row.rhs;
        for &(j, a) in &row.terms {
            if j >= n {
                return Err(LpError::BadProblem(format!("term references column {j}")));
            }
            r -= a * p.lower[j];
        }
        rhs.push(r);
    }

    // Normalize rows to non-negative rhs, then lay out columns:
    // structural | one slack per inequality | one artificial where needed.
    let mut row_sign = vec![1.0f64; m];
    let mut row_cmp = Vec::with_capacity(m);
    for i in 0..m {
        let mut cmp = p.rows[i].cmp;
        if rhs[i] < 0.0 {
            row_sign[i] = -1.0;
            rhs[i] = -rhs[i];
            cmp = match cmp {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
        }
        row_cmp.push(cmp);
    }
    let mut ncols = n;
    let mut slack_col = vec![usize::MAX; m];
    for i in 0..m {
        if row_cmp[i] != Cmp::Eq {
            slack_col[i] = ncols;
            ncols += 1;
        }
    }
    let mut art_col = vec![usize::MAX; m];
    let mut art_cols = Vec::new();
    for i in 0..m {
        if row_cmp[i] != Cmp::Le {
            art_col[i] = ncols;
            art_cols.push(ncols);
            ncols += 1;
        }
    }

    let mut t = vec![vec![0.0f64; ncols]; m];
    for (i, row) in p.rows.iter().enumerate() {
        for &(j, a) in &row.terms {
            t[i][j] += row_sign[i] * a;
        }
        match row_cmp[i] {
            Cmp::Le => t[i][slack_col[i]] = 1.0,
            Cmp::Ge => t[i][slack_col[i]] = -1.0,
            Cmp::Eq => {}
        }
        if art_col[i] != usize::MAX {
            t[i][art_col[i]] = 1.0;
        }
    }

    let mut cap = vec![f64::INFINITY; ncols];
    for j in 0..n {
        cap[j] = p.upper[j] - p.lower[j];
    }
    let mut status = vec![VarStatus::AtLower; ncols];
    let mut basis = Vec::with_capacity(m);
    for i in 0..m {
        let b = if art_col[i] != usize::MAX {
            art_col[i]
        } else {
            slack_col[i]
        };
        status[b] = VarStatus::Basic(i);
        basis.push(b);
    }

    let feas_tol = 1e-7 * (1.0 + rhs.iter().fold(0.0f64, |acc, r| acc.max(r.abs())));
    let mut tab = Tableau {
        t,
        xb: rhs,
        basis,
        status,
        cap,
        ncols,
    };

    if !art_cols.is_empty() {
        let mut cost = vec![0.0f64; ncols];
        for &c in &art_cols {
            cost[c] = -1.0;
        }
        let zrow = tab.canonical_zrow(&cost);
        let allow = vec![true; ncols];
        tab.iterate(zrow, &allow)?;
        let infeas: f64 = art_cols
            .iter()
            .map(|&c| match tab.status[c] {
                VarStatus::Basic(i) => tab.xb[i].max(0.0),
                _ => 0.0,
            })
            .sum();
        if infeas > feas_tol {
            return Ok(LpOutcome::Infeasible);
        }
        // Freeze artificials at zero for phase 2; a degenerate basic one may
        // linger in the basis but can no longer move.
        for &c in &art_cols {
            tab.cap[c] = 0.0;
        }
    }

    // Phase 2, with the objective scaled so reduced-cost tolerances behave
    // the same regardless of the problem's magnitude.
    let scale = p
        .objective
        .iter()
        .fold(0.0f64, |acc, c| acc.max(c.abs()))
        .max(1.0);
    let mut cost = vec![0.0f64; ncols];
    for j in 0..n {
        cost[j] = p.objective[j] / scale;
    }
    let zrow = tab.canonical_zrow(&cost);
    let mut allow = vec![true; ncols];
    for &c in &art_cols {
        allow[c] = false;
    }
    tab.iterate(zrow, &allow)?;

    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let tj = match tab.status[j] {
            VarStatus::Basic(i) => tab.xb[i].clamp(0.0, tab.cap[j].max(0.0)),
            VarStatus::AtLower => 0.0,
            VarStatus::AtUpper => tab.cap[j],
        };
        values.push(p.lower[j] + tj);
    }
    let objective = p
        .objective
        .iter()
        .zip(&values)
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpOutcome::Optimal { objective, values })
}

impl Tableau {
    /// Reduced-cost row for `cost`, canonicalized against the current basis:
    /// `zrow[j] = c_B B^-1 A_j - c_j`, so a nonbasic column improves the
    /// objective when `zrow < 0` at its lower bound or `zrow > 0` at upper.
    fn canonical_zrow(&self, cost: &[f64]) -> Vec<f64> {
        let mut zrow: Vec<f64> = cost.iter().map(|c| -c).collect();
        for (i, &k) in self.basis.iter().enumerate() {
            let factor = zrow[k];
            if factor != 0.0 {
                for (z, a) in zrow.iter_mut().zip(&self.t[i]) {
                    *z -= factor * a;
                }
            }
        }
        zrow
    }

    fn iterate(&mut self, mut zrow: Vec<f64>, allow: &[bool]) -> Result<(), LpError> {
        let m = self.t.len();
        let max_iter = 2000 + 200 * (m + self.ncols);
        let mut bland = false;
        let mut stall = 0usize;

        for _ in 0..max_iter {
            // Entering column.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                if !allow[j] || self.cap[j] <= 0.0 {
                    continue;
                }
                let viol = match self.status[j] {
                    VarStatus::Basic(_) => continue,
                    VarStatus::AtLower => -zrow[j],
                    VarStatus::AtUpper => zrow[j],
                };
                if viol > EPS_COST {
                    if bland {
                        entering = Some((j, viol));
                        break;
                    }
                    if entering.map_or(true, |(_, best)| viol > best) {
                        entering = Some((j, viol));
                    }
                }
            }
            let Some((e, _)) = entering else {
                return Ok(());
            };
            let from_upper = self.status[e] == VarStatus::AtUpper;
            // Moving e by delta changes xb by -s * column_e * delta.
            let s = if from_upper { -1.0 } else { 1.0 };

            // Ratio test: smallest movement that drives a basic variable to
            // one of its bounds, or the entering variable to its other bound.
            let mut min_ratio = self.cap[e];
            for i in 0..m {
                let a = self.t[i][e];
                if a.abs() <= EPS_PIVOT {
                    continue;
                }
                let d = -s * a; // change of xb[i] per unit delta
                let ratio = if d < 0.0 {
                    self.xb[i].max(0.0) / -d
                } else {
                    let cb = self.cap[self.basis[i]];
                    if cb.is_infinite() {
                        continue;
                    }
                    (cb - self.xb[i]).max(0.0) / d
                };
                if ratio < min_ratio {
                    min_ratio = ratio;
                }
            }
            if min_ratio.is_infinite() {
                return Err(LpError::Unbounded);
            }
            // Pick the pivot row among near-minimal ratios, preferring the
            // largest pivot magnitude for stability; ties by lowest row.
            let mut pivot_row: Option<(usize, bool, f64)> = None;
            if min_ratio < self.cap[e] - 1e-12 || self.cap[e].is_infinite() {
                for i in 0..m {
                    let a = self.t[i][e];
                    if a.abs() <= EPS_PIVOT {
                        continue;
                    }
                    let d = -s * a;
                    let (ratio, leaves_at_upper) = if d < 0.0 {
                        (self.xb[i].max(0.0) / -d, false)
                    } else {
                        let cb = self.cap[self.basis[i]];
                        if cb.is_infinite() {
                            continue;
                        }
                        ((cb - self.xb[i]).max(0.0) / d, true)
                    };
                    if ratio <= min_ratio + 1e-9
                        && pivot_row.map_or(true, |(_, _, mag)| a.abs() > mag)
                    {
                        pivot_row = Some((i, leaves_at_upper, a.abs()));
                    }
                }
            }

            let delta = min_ratio.max(0.0);
            if delta <= 1e-12 {
                stall += 1;
                if stall > m + self.ncols {
                    bland = true;
                }
            } else {
                stall = 0;
            }

            match pivot_row {
                None => {
                    // Bound flip: e runs all the way to its other bound.
                    for i in 0..m {
                        self.xb[i] -= s * self.t[i][e] * delta;
                    }
                    self.status[e] = if from_upper {
                        VarStatus::AtLower
                    } else {
                        VarStatus::AtUpper
                    };
                }
                Some((r, leaves_at_upper, _)) => {
                    for i in 0..m {
                        self.xb[i] -= s * self.t[i][e] * delta;
                    }
                    let leaving = self.basis[r];
                    self.status[leaving] = if leaves_at_upper {
                        VarStatus::AtUpper
                    } else {
                        VarStatus::AtLower
                    };
                    self.xb[r] = if from_upper { self.cap[e] - delta } else { delta };
                    self.basis[r] = e;
                    self.status[e] = VarStatus::Basic(r);

                    let piv = self.t[r][e];
                    for v in self.t[r].iter_mut() {
                        *v /= piv;
                    }
                    let pivot_row = std::mem::take(&mut self.t[r]);
                    for (i, row) in self.t.iter_mut().enumerate() {
                        if i != r {
                            let f = row[e];
                            if f != 0.0 {
                                for (vi, vr) in row.iter_mut().zip(&pivot_row) {
                                    *vi -= f * vr;
                                }
                                row[e] = 0.0;
                            }
                        }
                    }
                    let f = zrow[e];
                    if f != 0.0 {
                        for (z, vr) in zrow.iter_mut().zip(&pivot_row) {
                            *z -= f * vr;
                        }
                        zrow[e] = 0.0;
                    }
                    self.t[r] = pivot_row;
                }
            }
        }
        Err(LpError::IterationLimit(max_iter))
    }
}
