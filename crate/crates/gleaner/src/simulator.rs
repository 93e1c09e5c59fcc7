//! Event-driven replay of a node-availability log against a job queue and an
//! allocation policy.
//!
//! Triggers are node joins/leaves, job arrivals, and job completions. At each
//! trigger, in order: departed nodes are torn out of their jobs (forced
//! preemption, charged the shrink pause), completed jobs release their nodes,
//! queued jobs are admitted FCFS up to the parallel-job cap, the policy is
//! re-run on the updated state, and its decision is applied with the
//! appropriate rescale pauses. Work accrues between triggers at the
//! piecewise-linear curve rate; a job reaching its sample target completes at
//! the exact linear-interpolation crossing, which is itself a trigger.
//!
//! Decisions are instantaneous by default; `charge_solver_time` adds the
//! measured solver wall time to the pauses it triggers (and makes reports
//! nondeterministic).

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::milp::{
    build_milp, solve_bb, solve_count_dp, total_rate, AllocationDecision, Direction, SolveError,
};
use crate::model::{ClusterState, JobState, TrainerSpec};
use crate::policies::{admit_fcfs, equal_share, PolicyConfig, PolicyKind};
use crate::trace::EventLog;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy failed at t={t_s}: {source}")]
    Policy { t_s: f64, source: SolveError },
    #[error("bad simulation config: {0}")]
    BadConfig(&'static str),
}

/// Which implementation answers MILP-policy solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Bb,
    #[default]
    CountDp,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub policy_cfg: PolicyConfig,
    /// MILP solver backend; ignored by the equal-share policy.
    pub solver: SolverKind,
    /// Charge measured solver wall time into rescale pauses.
    pub charge_solver_time: bool,
    /// Truncate the run at this time; defaults to the log horizon.
    pub horizon_s: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            policy_cfg: PolicyConfig::default(),
            solver: SolverKind::default(),
            charge_solver_time: false,
            horizon_s: None,
        }
    }
}

/// One maximal stretch of constant allocation and pause state for one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub n: u32,
    pub paused: bool,
    /// Curve rate at `n`. Accrued only when not paused; for paused intervals
    /// this is the counterfactual loss rate.
    pub rate: f64,
    /// Why the interval is paused; absent on producing intervals.
    pub cause: Option<PauseCause>,
}

impl TimelineInterval {
    pub fn length_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Samples accrued over this interval.
    pub fn accrued(&self) -> f64 {
        if self.paused {
            0.0
        } else {
            self.rate * self.length_s()
        }
    }

    /// Samples the pause cost, zero for producing intervals.
    pub fn lost(&self) -> f64 {
        if self.paused {
            self.rate * self.length_s()
        } else {
            0.0
        }
    }
}

/// Why a pause was charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PauseCause {
    Rescale,
    Preemption,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaleRecord {
    pub t_s: f64,
    pub direction: Direction,
    pub from_n: u32,
    pub to_n: u32,
    pub pause_s: f64,
    /// True when triggered by node departure rather than a policy choice.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainerTimeline {
    pub name: String,
    pub arrival_s: f64,
    pub admit_s: Option<f64>,
    pub completion_s: Option<f64>,
    pub samples: f64,
    pub intervals: Vec<TimelineInterval>,
    pub rescales: Vec<RescaleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobEventRecord {
    pub name: String,
    pub n: u32,
    pub direction: Direction,
    /// Pause remaining after this trigger, in seconds.
    pub pause_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t_s: f64,
    /// Pool size right after the trigger.
    pub n_idle: u32,
    pub objective_value: f64,
    pub status: crate::milp::SolveStatus,
    pub solver_wall_s: f64,
    pub jobs: Vec<JobEventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    /// One timeline per trainer, in input order.
    pub timelines: Vec<TrainerTimeline>,
    /// One record per trigger timestamp.
    pub events: Vec<EventRecord>,
    /// Total samples accrued across all jobs.
    pub a_e_samples: f64,
    /// Counterfactual samples lost to policy-chosen rescale pauses.
    pub rescale_cost_samples: f64,
    /// Counterfactual samples lost to forced-preemption pauses.
    pub preemption_cost_samples: f64,
    pub t_final_s: f64,
}

/// A piece of one job's accrual between two triggers.
#[derive(Debug, Clone, PartialEq)]
pub struct AccrualSlice {
    pub start_s: f64,
    pub end_s: f64,
    pub n: u32,
    pub paused: bool,
    /// Curve rate at `n`; accrues only when not paused.
    pub rate: f64,
}

/// Splits `[from_s, to_s]` per job into paused and producing slices.
/// `pause_until` is absolute and aligned with `state.jobs`. The sample delta
/// for a job is the sum of `rate * (end - start)` over its non-paused slices.
pub fn accrue(
    state: &ClusterState,
    pause_until: &[f64],
    from_s: f64,
    to_s: f64,
) -> Vec<Vec<AccrualSlice>> {
    state
        .jobs
        .iter()
        .zip(pause_until)
        .map(|(job, &until)| {
            let mut slices = Vec::new();
            if to_s <= from_s {
                return slices;
            }
            let n = job.count();
            let rate = total_rate(&job.spec.curve, n);
            let split = until.clamp(from_s, to_s);
            if split > from_s {
                slices.push(AccrualSlice {
                    start_s: from_s,
                    end_s: split,
                    n,
                    paused: true,
                    rate,
                });
            }
            if to_s > split {
                slices.push(AccrualSlice {
                    start_s: split,
                    end_s: to_s,
                    n,
                    paused: false,
                    rate,
                });
            }
            slices
        })
        .collect()
}

/// Installs a decision: rewrites each job's node set and returns the new
/// absolute pause deadline for every rescaled job (index into `state.jobs`).
/// An up- or down-scale replaces any pause already running; an unchanged job
/// keeps whatever pause it had.
pub fn apply_decision(
    state: &mut ClusterState,
    decision: &AllocationDecision,
    t_s: f64,
    extra_pause_s: f64,
) -> Vec<(usize, f64)> {
    let mut pauses = Vec::new();
    for (j, (job, decided)) in state.jobs.iter_mut().zip(&decision.jobs).enumerate() {
        job.current_nodes = decided.nodes.clone();
        let pause = match decided.direction {
            Direction::Up => job.spec.r_up_s,
            Direction::Down => job.spec.r_dw_s,
            Direction::Unchanged => continue,
        };
        pauses.push((j, t_s + pause + extra_pause_s));
    }
    pauses
}

struct JobRun {
    trainer: usize,
    pause_until: f64,
    pause_cause: PauseCause,
}

struct Master {
    spec: TrainerSpec,
    admit_s: Option<f64>,
    completion_s: Option<f64>,
    samples: f64,
    intervals: Vec<TimelineInterval>,
    rescales: Vec<RescaleRecord>,
}

impl Master {
    fn push_interval(&mut self, s: AccrualSlice, cause: Option<PauseCause>) {
        if s.end_s <= s.start_s {
            return;
        }
        if let Some(last) = self.intervals.last_mut() {
            if last.end_s == s.start_s
                && last.n == s.n
                && last.paused == s.paused
                && last.rate == s.rate
                && last.cause == cause
            {
                last.end_s = s.end_s;
                return;
            }
        }
        self.intervals.push(TimelineInterval {
            start_s: s.start_s,
            end_s: s.end_s,
            n: s.n,
            paused: s.paused,
            rate: s.rate,
            cause,
        });
    }
}

/// Accounting for one inter-trigger window: samples accrue on producing
/// slices, paused slices charge their counterfactual to the pause cause.
fn fold_window(
    master: &mut [Master],
    costs: &mut (f64, f64),
    state: &ClusterState,
    runs: &[JobRun],
    from_s: f64,
    to_s: f64,
) {
    for (j, slices) in accrue(state, &pause_vec(runs), from_s, to_s)
        .into_iter()
        .enumerate()
    {
        let run = &runs[j];
        let m = &mut master[run.trainer];
        for s in slices {
            let amount = s.rate * (s.end_s - s.start_s);
            let cause = s.paused.then_some(run.pause_cause);
            if s.paused {
                match run.pause_cause {
                    PauseCause::Rescale => costs.0 += amount,
                    PauseCause::Preemption => costs.1 += amount,
                }
            } else {
                m.samples += amount;
            }
            m.push_interval(s, cause);
        }
    }
}

/// Replays `log` against `trainers` under `cfg`. Deterministic for identical
/// inputs unless solver time is charged.
pub fn run(
    log: &EventLog,
    trainers: &[TrainerSpec],
    cfg: &SimulationConfig,
) -> Result<SimulationReport, SimError> {
    if cfg.policy_cfg.pj_max == 0 {
        return Err(SimError::BadConfig("pj_max must be at least 1"));
    }
    if let Some(h) = cfg.horizon_s {
        if !(h > 0.0) {
            return Err(SimError::BadConfig("horizon_s must be positive"));
        }
    }
    let t_final = cfg.horizon_s.unwrap_or(log.t_end_s);

    let mut master: Vec<Master> = trainers
        .iter()
        .map(|spec| Master {
            spec: spec.clone(),
            admit_s: None,
            completion_s: None,
            samples: 0.0,
            intervals: Vec::new(),
            rescales: Vec::new(),
        })
        .collect();

    // Arrival order: by timestamp, input order breaking ties.
    let mut arrival_order: Vec<usize> = (0..trainers.len()).collect();
    arrival_order.sort_by(|&a, &b| trainers[a].arrival_s.total_cmp(&trainers[b].arrival_s));
    let mut next_arrival = 0usize;
    let mut pending: VecDeque<usize> = VecDeque::new();

    let mut state = ClusterState {
        idle_nodes: BTreeSet::new(),
        jobs: Vec::new(),
    };
    let mut runs: Vec<JobRun> = Vec::new();
    let mut ev_idx = 0usize;
    let mut events_out: Vec<EventRecord> = Vec::new();
    // (rescale, preemption) counterfactual sample losses.
    let mut costs = (0.0f64, 0.0f64);

    let mut now = 0.0f64;
    if let Some(e) = log.events.first() {
        now = now.min(e.t_s);
    }
    if let Some(&first) = arrival_order.first() {
        now = now.min(trainers[first].arrival_s);
    }

    loop {
        // Earliest upcoming trigger of each kind.
        let t_event = log.events.get(ev_idx).map(|e| e.t_s);
        let t_arrival = arrival_order
            .get(next_arrival)
            .map(|&i| trainers[i].arrival_s);
        let mut t_completion: Option<f64> = None;
        let mut completing: Vec<usize> = Vec::new();
        for (j, (job, run)) in state.jobs.iter().zip(&runs).enumerate() {
            let m = &master[run.trainer];
            let rate = total_rate(&job.spec.curve, job.count());
            if rate <= 0.0 {
                continue;
            }
            let t_avail = run.pause_until.max(now);
            let remaining = m.spec.total_samples - m.samples;
            let t_done = t_avail + remaining / rate;
            match t_completion {
                Some(t) if t_done > t => {}
                Some(t) if t_done == t => completing.push(j),
                _ => {
                    t_completion = Some(t_done);
                    completing = vec![j];
                }
            }
        }

        let t_next = [t_event, t_arrival, t_completion]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min);
        if t_next > t_final {
            fold_window(&mut master, &mut costs, &state, &runs, now, t_final);
            break;
        }

        // Accrue up to the trigger.
        fold_window(&mut master, &mut costs, &state, &runs, now, t_next);
        now = t_next;

        // Completions at exactly this instant.
        if t_completion == Some(t_next) {
            for (j, (job, run)) in state
                .jobs
                .drain(..)
                .zip(runs.drain(..))
                .enumerate()
                .collect::<Vec<_>>()
            {
                let m = &mut master[run.trainer];
                if completing.contains(&j) {
                    m.samples = m.spec.total_samples;
                    m.completion_s = Some(t_next);
                } else {
                    state.jobs.push(job);
                    runs.push(run);
                }
            }
        }

        // Node joins and leaves; departures force preemption.
        let mut lost: Vec<u32> = vec![0; state.jobs.len()];
        while ev_idx < log.events.len() && log.events[ev_idx].t_s == t_next {
            let ev = &log.events[ev_idx];
            for n in &ev.leaves {
                state.idle_nodes.remove(n);
                for (j, job) in state.jobs.iter_mut().enumerate() {
                    if job.current_nodes.remove(n) {
                        lost[j] += 1;
                    }
                }
            }
            for n in &ev.joins {
                state.idle_nodes.insert(n.clone());
            }
            ev_idx += 1;
        }
        for (j, &n_lost) in lost.iter().enumerate() {
            if n_lost == 0 {
                continue;
            }
            let to_n = state.jobs[j].count();
            let run = &mut runs[j];
            let m = &mut master[run.trainer];
            let r_dw = m.spec.r_dw_s;
            run.pause_until = run.pause_until.max(t_next + r_dw);
            run.pause_cause = PauseCause::Preemption;
            m.rescales.push(RescaleRecord {
                t_s: t_next,
                direction: Direction::Down,
                from_n: to_n + n_lost,
                to_n,
                pause_s: r_dw,
                forced: true,
            });
        }

        // Job arrivals and FCFS admission.
        while next_arrival < arrival_order.len()
            && trainers[arrival_order[next_arrival]].arrival_s <= t_next
        {
            pending.push_back(arrival_order[next_arrival]);
            next_arrival += 1;
        }
        let admit_n = admit_fcfs(
            pending.make_contiguous(),
            state.jobs.len(),
            cfg.policy_cfg.pj_max,
        )
        .len();
        for _ in 0..admit_n {
            let idx = pending.pop_front().unwrap();
            master[idx].admit_s = Some(t_next);
            state.jobs.push(JobState::new(trainers[idx].clone()));
            runs.push(JobRun {
                trainer: idx,
                pause_until: f64::NEG_INFINITY,
                pause_cause: PauseCause::Rescale,
            });
        }

        // Policy decision on the updated state.
        let started = cfg.charge_solver_time.then(Instant::now);
        let decision = decide(&state, cfg).map_err(|source| SimError::Policy { t_s: t_next, source })?;
        let solver_wall_s = started.map_or(0.0, |s| s.elapsed().as_secs_f64());

        let before: Vec<u32> = state.jobs.iter().map(JobState::count).collect();
        for (j, until) in apply_decision(&mut state, &decision, t_next, solver_wall_s) {
            let run = &mut runs[j];
            run.pause_until = until;
            run.pause_cause = PauseCause::Rescale;
            let m = &mut master[run.trainer];
            m.rescales.push(RescaleRecord {
                t_s: t_next,
                direction: decision.jobs[j].direction,
                from_n: before[j],
                to_n: decision.jobs[j].count,
                pause_s: until - t_next,
                forced: false,
            });
        }

        events_out.push(EventRecord {
            t_s: t_next,
            n_idle: state.idle_nodes.len() as u32,
            objective_value: decision.objective_value,
            status: decision.status,
            solver_wall_s,
            jobs: state
                .jobs
                .iter()
                .zip(&runs)
                .zip(&decision.jobs)
                .map(|((job, run), d)| JobEventRecord {
                    name: job.spec.name.clone(),
                    n: job.count(),
                    direction: d.direction,
                    pause_s: (run.pause_until - t_next).max(0.0),
                })
                .collect(),
        });
    }

    let a_e = master.iter().map(|m| m.samples).sum();
    Ok(SimulationReport {
        timelines: master
            .into_iter()
            .zip(trainers)
            .map(|(m, spec)| TrainerTimeline {
                name: spec.name.clone(),
                arrival_s: spec.arrival_s,
                admit_s: m.admit_s,
                completion_s: m.completion_s,
                samples: m.samples,
                intervals: m.intervals,
                rescales: m.rescales,
            })
            .collect(),
        events: events_out,
        a_e_samples: a_e,
        rescale_cost_samples: costs.0,
        preemption_cost_samples: costs.1,
        t_final_s: t_final,
    })
}

fn pause_vec(runs: &[JobRun]) -> Vec<f64> {
    runs.iter().map(|r| r.pause_until).collect()
}

fn decide(state: &ClusterState, cfg: &SimulationConfig) -> Result<AllocationDecision, SolveError> {
    let solve = &cfg.policy_cfg.solve;
    match cfg.policy_cfg.policy {
        PolicyKind::EqualShare => equal_share(state, &cfg.policy_cfg),
        PolicyKind::Milp => match cfg.solver {
            SolverKind::CountDp => solve_count_dp(state, solve),
            SolverKind::Bb => solve_bb(&build_milp(state, solve)?, solve.timeout_ms),
        },
    }
}
