//! Evaluation arithmetic over logs and simulation reports: the node-hour
//! resource integral, its equivalent static pool size, the static-baseline
//! outcome, utilization efficiency, and a per-event ledger comparing two
//! runs.

use serde::Serialize;
use thiserror::Error;

use crate::milp::{solve_count_dp, total_rate, SolveConfig, SolveError};
use crate::model::{ClusterState, JobState, NodeId, ObjectiveMetric, TrainerSpec};
use crate::simulator::{PauseCause, SimulationReport, TrainerTimeline};
use crate::trace::EventLog;

/// Six hours, the default window for the windowed-efficiency series.
pub const DEFAULT_WINDOW_S: f64 = 21_600.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("window has zero or negative length")]
    EmptyWindow,
    #[error("duration must be positive")]
    BadDuration,
    #[error("utilization efficiency undefined: static baseline accrued nothing")]
    UndefinedEfficiency,
    #[error("reports disagree on the node-event sequence or horizon")]
    MismatchedReports,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Integral of the pool size over `[t0_s, t1_s]`, in node-hours. The pool is
/// empty before the first event and holds its last size after the final one
/// (the horizon matters to fragment accounting, not to this integral).
pub fn resource_integral(log: &EventLog, t0_s: f64, t1_s: f64) -> f64 {
    if t1_s <= t0_s {
        return 0.0;
    }
    let mut hours = 0.0;
    let mut size = 0u32;
    for (i, e) in log.events.iter().enumerate() {
        let seg_start = e.t_s;
        let seg_end = log.events.get(i + 1).map_or(f64::INFINITY, |n| n.t_s);
        size += e.joins.len() as u32;
        size -= e.leaves.len() as u32;
        let lo = seg_start.max(t0_s);
        let hi = seg_end.min(t1_s);
        if hi > lo {
            hours += f64::from(size) * (hi - lo) / 3600.0;
        }
    }
    hours
}

/// The constant pool size with the same node-hours over the window.
pub fn equivalent_nodes(log: &EventLog, t0_s: f64, t1_s: f64) -> Result<f64, MetricsError> {
    if !(t1_s > t0_s) {
        return Err(MetricsError::EmptyWindow);
    }
    Ok(resource_integral(log, t0_s, t1_s) * 3600.0 / (t1_s - t0_s))
}

/// What a static pool of `floor(n_eq)` nodes would accrue: all jobs present
/// from the start, allocated once with zero rescale costs, running for the
/// whole duration (assumed too large to finish).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticBaseline {
    pub a_s: f64,
    /// Total accrual rate of the one-shot allocation, samples per second.
    pub rate_per_s: f64,
    pub counts: Vec<u32>,
    /// True when jobs exist but none fit the floored pool.
    pub unallocatable: bool,
}

pub fn static_baseline_outcome(
    trainers: &[TrainerSpec],
    n_eq: f64,
    duration_s: f64,
) -> Result<StaticBaseline, MetricsError> {
    if !(duration_s > 0.0) {
        return Err(MetricsError::BadDuration);
    }
    let pool = n_eq.max(0.0).floor() as u32;
    let state = ClusterState {
        idle_nodes: (0..pool).map(|i| NodeId::new(format!("s{i}"))).collect(),
        jobs: trainers
            .iter()
            .map(|t| {
                let mut spec = t.clone();
                spec.r_up_s = 0.0;
                spec.r_dw_s = 0.0;
                JobState::new(spec)
            })
            .collect(),
    };
    let cfg = SolveConfig {
        t_fwd_s: 1.0,
        metric: ObjectiveMetric::Throughput,
        ..SolveConfig::default()
    };
    let decision = solve_count_dp(&state, &cfg)?;
    let counts = decision.counts();
    let rate_per_s: f64 = trainers
        .iter()
        .zip(&counts)
        .map(|(t, &n)| total_rate(&t.curve, n))
        .sum();
    Ok(StaticBaseline {
        a_s: rate_per_s * duration_s,
        rate_per_s,
        counts: counts.clone(),
        unallocatable: !trainers.is_empty() && counts.iter().all(|&n| n == 0),
    })
}

/// U = 100 * a_e / a_s.
pub fn utilization_efficiency(a_e: f64, a_s: f64) -> Result<f64, MetricsError> {
    if !(a_s > 0.0) {
        return Err(MetricsError::UndefinedEfficiency);
    }
    Ok(100.0 * a_e / a_s)
}

/// How well a run used the idle capacity it saw, against the static-pool
/// counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub resource_node_hours: f64,
    pub eq_nodes: f64,
    pub a_e: f64,
    pub a_s: f64,
    pub u_pct: f64,
    /// U over consecutive windows of the requested length.
    pub per_window: Vec<f64>,
}

fn accrued_in(timelines: &[TrainerTimeline], w0: f64, w1: f64) -> f64 {
    timelines
        .iter()
        .flat_map(|tl| &tl.intervals)
        .filter(|i| !i.paused)
        .map(|i| i.rate * (i.end_s.min(w1) - i.start_s.max(w0)).max(0.0))
        .sum()
}

fn lost_in(timelines: &[TrainerTimeline], cause: PauseCause, w0: f64, w1: f64) -> f64 {
    timelines
        .iter()
        .flat_map(|tl| &tl.intervals)
        .filter(|i| i.cause == Some(cause))
        .map(|i| i.rate * (i.end_s.min(w1) - i.start_s.max(w0)).max(0.0))
        .sum()
}

/// Scores a simulation report against the static baseline over the span from
/// the first node event to the report horizon. The windowed series uses the
/// global baseline rate, so every window is scored against the same
/// counterfactual pool.
pub fn efficiency_report(
    log: &EventLog,
    report: &SimulationReport,
    trainers: &[TrainerSpec],
    window_s: f64,
) -> Result<EfficiencyReport, MetricsError> {
    let t0 = log.events.first().map_or(0.0, |e| e.t_s);
    let t1 = report.t_final_s;
    if !(t1 > t0) {
        return Err(MetricsError::EmptyWindow);
    }
    if !(window_s > 0.0) {
        return Err(MetricsError::BadDuration);
    }
    let resource_node_hours = resource_integral(log, t0, t1);
    let eq_nodes = equivalent_nodes(log, t0, t1)?;
    let baseline = static_baseline_outcome(trainers, eq_nodes, t1 - t0)?;
    let a_e = report.a_e_samples;
    let u_pct = utilization_efficiency(a_e, baseline.a_s)?;

    let mut per_window = Vec::new();
    let mut w0 = t0;
    while w0 < t1 {
        let w1 = (w0 + window_s).min(t1);
        let a_e_w = accrued_in(&report.timelines, w0, w1);
        let a_s_w = baseline.rate_per_s * (w1 - w0);
        per_window.push(utilization_efficiency(a_e_w, a_s_w)?);
        w0 = w1;
    }

    Ok(EfficiencyReport {
        resource_node_hours,
        eq_nodes,
        a_e,
        a_s: baseline.a_s,
        u_pct,
        per_window,
    })
}

/// One node-event window in the two-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub t_s: f64,
    pub end_s: f64,
    /// Counterfactual samples each run spent on policy-chosen rescale pauses
    /// inside the window.
    pub investment_a: f64,
    pub investment_b: f64,
    /// Samples each run accrued inside the window.
    pub outcome_a: f64,
    pub outcome_b: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
    /// Windows dropped because run B accrued nothing there.
    pub skipped: usize,
}

impl Ledger {
    pub fn mean_speedup(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.speedup).sum::<f64>() / self.entries.len() as f64)
    }

    pub fn mean_investment_a(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.investment_a).sum::<f64>() / self.entries.len() as f64)
    }
}

/// Splits both runs at the log's node events and compares them window by
/// window. Both reports must come from `log` with the same horizon.
pub fn per_event_ledger(
    log: &EventLog,
    a: &SimulationReport,
    b: &SimulationReport,
) -> Result<Ledger, MetricsError> {
    if a.t_final_s != b.t_final_s {
        return Err(MetricsError::MismatchedReports);
    }
    for report in [a, b] {
        let seen: Vec<f64> = report.events.iter().map(|e| e.t_s).collect();
        if log
            .events
            .iter()
            .any(|e| e.t_s <= report.t_final_s && !seen.contains(&e.t_s))
        {
            return Err(MetricsError::MismatchedReports);
        }
    }

    let mut cuts: Vec<f64> = log
        .events
        .iter()
        .map(|e| e.t_s)
        .filter(|&t| t < a.t_final_s)
        .collect();
    cuts.push(a.t_final_s);

    let mut entries = Vec::new();
    let mut skipped = 0usize;
    for w in cuts.windows(2) {
        let (w0, w1) = (w[0], w[1]);
        let outcome_a = accrued_in(&a.timelines, w0, w1);
        let outcome_b = accrued_in(&b.timelines, w0, w1);
        if outcome_b <= 0.0 {
            skipped += 1;
            continue;
        }
        entries.push(LedgerEntry {
            t_s: w0,
            end_s: w1,
            investment_a: lost_in(&a.timelines, PauseCause::Rescale, w0, w1),
            investment_b: lost_in(&b.timelines, PauseCause::Rescale, w0, w1),
            outcome_a,
            outcome_b,
            speedup: outcome_a / outcome_b,
        });
    }
    Ok(Ledger { entries, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::Event;
    use crate::scalability::ScalabilityCurve;
    use crate::simulator::{run, SimulationConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_then_five() -> EventLog {
        EventLog {
            events: vec![
                Event {
                    t_s: 0.0,
                    joins: vec!["a".into(), "b".into(), "c".into()],
                    leaves: vec![],
                },
                Event {
                    t_s: 1800.0,
                    joins: vec!["d".into(), "e".into()],
                    leaves: vec![],
                },
            ],
            t_end_s: 3600.0,
        }
    }

    #[test]
    fn node_hours_by_hand() {
        let log = three_then_five();
        assert_eq!(resource_integral(&log, 0.0, 3600.0), 4.0);
        assert_eq!(equivalent_nodes(&log, 0.0, 3600.0).unwrap(), 4.0);
    }

    #[test]
    fn constant_pool_is_the_identity() {
        let log = EventLog {
            events: vec![Event {
                t_s: 0.0,
                joins: (0..4).map(|i| NodeId::new(format!("n{i}"))).collect(),
                leaves: vec![],
            }],
            t_end_s: 3600.0,
        };
        assert_eq!(resource_integral(&log, 0.0, 3600.0), 4.0);
        assert_eq!(equivalent_nodes(&log, 600.0, 1800.0).unwrap(), 4.0);
    }

    #[test]
    fn window_before_any_node_is_zero() {
        let mut log = three_then_five();
        log.events[0].t_s = 1000.0;
        assert_eq!(resource_integral(&log, 0.0, 1000.0), 0.0);
    }

    #[test]
    fn empty_window_is_zero_or_an_error() {
        let log = three_then_five();
        assert_eq!(resource_integral(&log, 100.0, 100.0), 0.0);
        assert!(matches!(
            equivalent_nodes(&log, 100.0, 100.0),
            Err(MetricsError::EmptyWindow)
        ));
    }

    #[test]
    fn integral_is_additive() {
        let cfg = crate::trace::SynthConfig {
            n_pool: 10,
            join_rate_per_h: 180.0,
            mean_residency_s: 700.0,
            duration_s: 5400.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..100 {
            let log = crate::trace::synth(&cfg, seed).unwrap();
            let t0 = rng.gen_range(0.0..2000.0);
            let t1 = t0 + rng.gen_range(0.0..2000.0);
            let t2 = t1 + rng.gen_range(0.0..2000.0);
            let whole = resource_integral(&log, t0, t2);
            let split = resource_integral(&log, t0, t1) + resource_integral(&log, t1, t2);
            assert!((whole - split).abs() < 1e-9 * (1.0 + whole.abs()));
        }
    }

    #[test]
    fn eq_nodes_is_bounded_by_the_pool_extremes() {
        let cfg = crate::trace::SynthConfig {
            n_pool: 12,
            join_rate_per_h: 240.0,
            mean_residency_s: 500.0,
            duration_s: 3600.0,
        };
        for seed in 0..20 {
            let log = crate::trace::synth(&cfg, seed).unwrap();
            if log.events.is_empty() {
                continue;
            }
            let t0 = log.events[0].t_s;
            let t1 = log.t_end_s;
            let eq = equivalent_nodes(&log, t0, t1).unwrap();
            let mut size = 0i64;
            let mut lo = i64::MAX;
            let mut hi = 0i64;
            for e in &log.events {
                size += e.joins.len() as i64 - e.leaves.len() as i64;
                lo = lo.min(size);
                hi = hi.max(size);
            }
            assert!(eq <= hi as f64 + 1e-9 && eq >= 0.0);
        }
    }

    #[test]
    fn single_job_baseline_takes_the_whole_pool() {
        let t = trainer("j", 1, 4, linear_curve(1000.0, 4));
        let b = static_baseline_outcome(&[t], 4.0, 100.0).unwrap();
        assert_eq!(b.a_s, 400_000.0);
        assert_eq!(b.counts, vec![4]);
        assert!(!b.unallocatable);
    }

    #[test]
    fn two_identical_jobs_split_a_concave_curve() {
        let curve =
            ScalabilityCurve::new(vec![1, 2, 3, 4], vec![1.0, 1.8, 2.4, 2.8]).unwrap();
        let jobs = vec![
            trainer("a", 1, 4, curve.clone()),
            trainer("b", 1, 4, curve),
        ];
        let b = static_baseline_outcome(&jobs, 4.0, 1.0).unwrap();
        assert!((b.a_s - 3.6).abs() < 1e-12);
        assert_eq!(b.counts, vec![2, 2]);
    }

    #[test]
    fn no_resources_flags_the_baseline() {
        let t = trainer("j", 2, 4, linear_curve(10.0, 4));
        let b = static_baseline_outcome(&[t], 0.0, 10.0).unwrap();
        assert_eq!(b.a_s, 0.0);
        assert!(b.unallocatable);
        // Fractional pool below the minimum size floors to 1 < n_min.
        let t = trainer("j", 2, 4, linear_curve(10.0, 4));
        let b = static_baseline_outcome(&[t], 1.9, 10.0).unwrap();
        assert_eq!(b.a_s, 0.0);
        assert!(b.unallocatable);
    }

    #[test]
    fn efficiency_ratios_are_plain_arithmetic() {
        assert_eq!(utilization_efficiency(5.0, 5.0).unwrap(), 100.0);
        assert_eq!(utilization_efficiency(4.0, 5.0).unwrap(), 80.0);
        assert!(matches!(
            utilization_efficiency(1.0, 0.0),
            Err(MetricsError::UndefinedEfficiency)
        ));
    }

    #[test]
    fn ideal_run_scores_one_hundred_percent() {
        // Static pool, one job that swallows it from t=0 with free rescaling:
        // the run IS the static baseline.
        let spec = trainer("j", 1, 4, linear_curve(1000.0, 4));
        let log = EventLog {
            events: vec![Event {
                t_s: 0.0,
                joins: (0..4).map(|i| NodeId::new(format!("n{i}"))).collect(),
                leaves: vec![],
            }],
            t_end_s: 3600.0,
        };
        let report = run(&log, &[spec.clone()], &SimulationConfig::default()).unwrap();
        let eff = efficiency_report(&log, &report, &[spec], DEFAULT_WINDOW_S).unwrap();
        assert!((eff.u_pct - 100.0).abs() < 1e-9);
        assert_eq!(eff.eq_nodes, 4.0);
        assert_eq!(eff.per_window.len(), 1);
        assert!((eff.per_window[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn windowed_series_covers_the_whole_span() {
        let spec = trainer("j", 1, 4, linear_curve(10.0, 4));
        let log = EventLog {
            events: vec![Event {
                t_s: 0.0,
                joins: (0..2).map(|i| NodeId::new(format!("n{i}"))).collect(),
                leaves: vec![],
            }],
            t_end_s: 10_000.0,
        };
        let report = run(&log, &[spec.clone()], &SimulationConfig::default()).unwrap();
        let eff = efficiency_report(&log, &report, &[spec], 3000.0).unwrap();
        assert_eq!(eff.per_window.len(), 4);
        for u in &eff.per_window {
            assert!((u - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_reports_have_unit_speedup() {
        let spec = trainer("j", 1, 4, linear_curve(10.0, 4));
        let log = three_then_five();
        let report = run(&log, &[spec], &SimulationConfig::default()).unwrap();
        let ledger = per_event_ledger(&log, &report, &report).unwrap();
        assert!(!ledger.entries.is_empty());
        for e in &ledger.entries {
            assert_eq!(e.speedup, 1.0);
        }
        assert_eq!(ledger.skipped, 0);
    }

    #[test]
    fn hand_built_pair_doubles() {
        // Run A's curve is twice run B's everywhere: one window, speedup 2.
        let log = EventLog {
            events: vec![Event {
                t_s: 0.0,
                joins: vec!["x".into(), "y".into()],
                leaves: vec![],
            }],
            t_end_s: 100.0,
        };
        let fast = trainer("j", 1, 2, linear_curve(2.0, 2));
        let slow = trainer("j", 1, 2, linear_curve(1.0, 2));
        let a = run(&log, &[fast], &SimulationConfig::default()).unwrap();
        let b = run(&log, &[slow], &SimulationConfig::default()).unwrap();
        let ledger = per_event_ledger(&log, &a, &b).unwrap();
        assert_eq!(ledger.entries.len(), 1);
        let e = &ledger.entries[0];
        assert_eq!(e.outcome_a, 400.0);
        assert_eq!(e.outcome_b, 200.0);
        assert_eq!(e.speedup, 2.0);
    }

    #[test]
    fn zero_outcome_windows_are_skipped_and_counted() {
        // No nodes after t=50: the second window accrues nothing in either
        // run and is skipped.
        let log = EventLog {
            events: vec![
                Event {
                    t_s: 0.0,
                    joins: vec!["x".into()],
                    leaves: vec![],
                },
                Event {
                    t_s: 50.0,
                    joins: vec![],
                    leaves: vec!["x".into()],
                },
            ],
            t_end_s: 100.0,
        };
        let spec = trainer("j", 1, 2, linear_curve(1.0, 2));
        let report = run(&log, &[spec], &SimulationConfig::default()).unwrap();
        let ledger = per_event_ledger(&log, &report, &report).unwrap();
        assert_eq!(ledger.entries.len(), 1);
        assert_eq!(ledger.skipped, 1);
    }

    #[test]
    fn mismatched_reports_are_rejected() {
        let spec = trainer("j", 1, 4, linear_curve(10.0, 4));
        let log_a = three_then_five();
        let mut log_b = three_then_five();
        log_b.events[1].t_s = 2000.0;
        let a = run(&log_a, &[spec.clone()], &SimulationConfig::default()).unwrap();
        let b = run(&log_b, &[spec], &SimulationConfig::default()).unwrap();
        assert!(matches!(
            per_event_ledger(&log_a, &a, &b),
            Err(MetricsError::MismatchedReports)
        ));
    }

    #[test]
    fn investment_tracks_rescale_pauses_only() {
        let mut spec = trainer("j", 1, 4, linear_curve(10.0, 4));
        spec.r_up_s = 5.0;
        let log = three_then_five();
        let report = run(&log, &[spec], &SimulationConfig::default()).unwrap();
        let ledger = per_event_ledger(&log, &report, &report).unwrap();
        // Up-scales at t=0 (to 3 nodes) and t=1800 (to the n_max of 4): 5 s
        // of pause at the new allocation's rate each time.
        let total_investment: f64 = ledger.entries.iter().map(|e| e.investment_a).sum();
        assert!((total_investment - (5.0 * 30.0 + 5.0 * 40.0)).abs() < 1e-9);
        assert!((report.rescale_cost_samples - total_investment).abs() < 1e-9);
    }
}
