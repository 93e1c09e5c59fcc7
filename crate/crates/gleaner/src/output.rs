//! Report serialization: summary JSON plus flat CSV files.
//!
//! All numbers are written with Rust's shortest-roundtrip float formatting,
//! so identical in-memory reports serialize to identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::metrics::EfficiencyReport;
use crate::simulator::{SimulationReport, TrainerTimeline};
use crate::trace::TraceStats;

/// Scalar rollup of one simulation, written as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub t_final_s: f64,
    pub a_e_samples: f64,
    pub rescale_cost_samples: f64,
    pub preemption_cost_samples: f64,
    pub events: usize,
    pub trainers: Vec<TrainerSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainerSummary {
    pub name: String,
    pub arrival_s: f64,
    pub admit_s: Option<f64>,
    pub completion_s: Option<f64>,
    pub samples: f64,
    pub rescale_count: usize,
    /// Admission to completion, censored at the end of the run. Absent when
    /// the job was never admitted.
    pub runtime_s: Option<f64>,
}

fn runtime_of(tl: &TrainerTimeline, t_final_s: f64) -> Option<f64> {
    tl.admit_s
        .map(|admit| tl.completion_s.unwrap_or(t_final_s) - admit)
}

pub fn summarize(report: &SimulationReport) -> Summary {
    Summary {
        t_final_s: report.t_final_s,
        a_e_samples: report.a_e_samples,
        rescale_cost_samples: report.rescale_cost_samples,
        preemption_cost_samples: report.preemption_cost_samples,
        events: report.events.len(),
        trainers: report
            .timelines
            .iter()
            .map(|tl| TrainerSummary {
                name: tl.name.clone(),
                arrival_s: tl.arrival_s,
                admit_s: tl.admit_s,
                completion_s: tl.completion_s,
                samples: tl.samples,
                rescale_count: tl.rescales.len(),
                runtime_s: runtime_of(tl, report.t_final_s),
            })
            .collect(),
    }
}

/// Mean job runtime (admission to completion, censored at the run end) over
/// the jobs that were admitted. 0 when nothing ran.
pub fn mean_runtime_s(report: &SimulationReport) -> f64 {
    let runtimes: Vec<f64> = report
        .timelines
        .iter()
        .filter_map(|tl| runtime_of(tl, report.t_final_s))
        .collect();
    if runtimes.is_empty() {
        0.0
    } else {
        runtimes.iter().sum::<f64>() / runtimes.len() as f64
    }
}

/// Samples lost to policy-chosen rescales, averaged over triggers.
pub fn rescale_cost_per_event(report: &SimulationReport) -> f64 {
    if report.events.is_empty() {
        0.0
    } else {
        report.rescale_cost_samples / report.events.len() as f64
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// Per-trigger decision log. Job columns appear in trainer input order and
/// stay blank until the job is admitted (and after it completes).
pub fn events_csv(report: &SimulationReport) -> String {
    let names: Vec<&str> = report.timelines.iter().map(|tl| tl.name.as_str()).collect();
    let mut out = String::from("t_s,n_idle,objective_value,status,solver_wall_s");
    for name in &names {
        let safe = csv_field(name);
        let _ = write!(out, ",n_{safe},dir_{safe},pause_s_{safe}");
    }
    out.push('\n');
    for ev in &report.events {
        let _ = write!(
            out,
            "{},{},{},{:?},{}",
            ev.t_s, ev.n_idle, ev.objective_value, ev.status, ev.solver_wall_s
        );
        for name in &names {
            match ev.jobs.iter().find(|j| j.name == *name) {
                Some(j) => {
                    let _ = write!(out, ",{},{:?},{}", j.n, j.direction, j.pause_s);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// One row per constant-allocation interval of every job.
pub fn timelines_csv(report: &SimulationReport) -> String {
    let mut out = String::from("name,start_s,end_s,n,paused,cause,rate_per_s\n");
    for tl in &report.timelines {
        for iv in &tl.intervals {
            let cause = match iv.cause {
                Some(c) => format!("{c:?}"),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&tl.name),
                iv.start_s,
                iv.end_s,
                iv.n,
                iv.paused,
                cause,
                iv.rate
            );
        }
    }
    out
}

/// Windowed efficiency series. Windows start at `t0_s` and are `window_s`
/// wide, matching the report's `per_window` entries.
pub fn efficiency_windows_csv(eff: &EfficiencyReport, t0_s: f64, window_s: f64) -> String {
    let mut out = String::from("window,start_s,end_s,u_pct\n");
    for (i, u) in eff.per_window.iter().enumerate() {
        let start = t0_s + i as f64 * window_s;
        let _ = writeln!(out, "{i},{start},{},{u}", start + window_s);
    }
    out
}

pub fn stats_csv(stats: &TraceStats) -> String {
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "inc_per_h,{}", stats.inc_per_h);
    let _ = writeln!(out, "dec_per_h,{}", stats.dec_per_h);
    let _ = writeln!(out, "eq_nodes,{}", stats.eq_nodes);
    let _ = writeln!(out, "idle_node_hours,{}", stats.idle_node_hours);
    let _ = writeln!(out, "fragments,{}", stats.fragment_lengths_s.len());
    out
}

pub fn cdf_csv(stats: &TraceStats) -> String {
    let mut out = String::from("length_s,fraction\n");
    for (len, frac) in &stats.cdf {
        let _ = writeln!(out, "{len},{frac}");
    }
    out
}

/// One sweep member's results.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub u_pct: f64,
    pub rescale_cost_per_event: f64,
    pub avg_runtime_s: f64,
    pub resource_node_hours: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("parameter,value,u_pct,rescale_cost_per_event,avg_runtime_s,resource_node_hours\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.parameter),
            r.value,
            r.u_pct,
            r.rescale_cost_per_event,
            r.avg_runtime_s,
            r.resource_node_hours
        );
    }
    out
}

/// Writes the full report bundle for one run into `dir`.
pub fn write_run_reports(
    dir: &Path,
    report: &SimulationReport,
    eff: &EfficiencyReport,
    eff_t0_s: f64,
    window_s: f64,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let summary = serde_json::to_string_pretty(&summarize(report)).expect("serializable");
    fs::write(dir.join("summary.json"), summary + "\n")?;
    fs::write(dir.join("events.csv"), events_csv(report))?;
    fs::write(dir.join("timelines.csv"), timelines_csv(report))?;
    let eff_json = serde_json::to_string_pretty(eff).expect("serializable");
    fs::write(dir.join("efficiency.json"), eff_json + "\n")?;
    fs::write(
        dir.join("efficiency_windows.csv"),
        efficiency_windows_csv(eff, eff_t0_s, window_s),
    )?;
    Ok(())
}
