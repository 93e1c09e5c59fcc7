//! Node-availability logs: parsing, validation, characterization, and
//! synthesis.
//!
//! A log is a time-ordered sequence of join/leave events over a pool of
//! nodes, stored as JSON Lines with fields `{t, join, leave}`. Records that
//! share a timestamp are coalesced into a single event. Characterization
//! reports the arrival/departure rates, the equivalent static pool size, and
//! the distribution of idle-fragment lengths.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Event, Fragment, NodeId};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: timestamp {t} goes backwards (previous {t_prev})")]
    NonMonotone { line: usize, t_prev: f64, t: f64 },
    #[error("line {line}: timestamp {t} is not finite")]
    BadTimestamp { line: usize, t: f64 },
    #[error("line {line}: node {node} joins but is already present")]
    JoinWhilePresent { line: usize, node: String },
    #[error("line {line}: node {node} leaves but is not present")]
    LeaveWhileAbsent { line: usize, node: String },
    #[error("horizon {t_end} is before the last event at {t_last}")]
    BadHorizon { t_end: f64, t_last: f64 },
    #[error("log spans zero seconds")]
    EmptySpan,
    #[error("bad generator config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated, coalesced event log with an explicit horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub t_end_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    t: f64,
    #[serde(default)]
    join: Vec<String>,
    #[serde(default)]
    leave: Vec<String>,
}

impl EventLog {
    /// Parses JSON Lines records, coalescing same-timestamp records and
    /// validating membership transitions. The horizon is the last timestamp;
    /// extend it with [`EventLog::set_horizon`] if the log covers more time.
    pub fn parse(reader: impl BufRead) -> Result<EventLog, TraceError> {
        let mut events: Vec<Event> = Vec::new();
        let mut present: std::collections::BTreeSet<NodeId> = Default::default();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecord = serde_json::from_str(&line)
                .map_err(|source| TraceError::Malformed { line: line_no, source })?;
            if !rec.t.is_finite() {
                return Err(TraceError::BadTimestamp { line: line_no, t: rec.t });
            }
            if let Some(last) = events.last() {
                if rec.t < last.t_s {
                    return Err(TraceError::NonMonotone {
                        line: line_no,
                        t_prev: last.t_s,
                        t: rec.t,
                    });
                }
            }
            for id in &rec.join {
                let node = NodeId::new(id.clone());
                if !present.insert(node) {
                    return Err(TraceError::JoinWhilePresent {
                        line: line_no,
                        node: id.clone(),
                    });
                }
            }
            for id in &rec.leave {
                let node = NodeId::new(id.clone());
                if !present.remove(&node) {
                    return Err(TraceError::LeaveWhileAbsent {
                        line: line_no,
                        node: id.clone(),
                    });
                }
            }
            let joins = rec.join.into_iter().map(NodeId::new);
            let leaves = rec.leave.into_iter().map(NodeId::new);
            match events.last_mut() {
                Some(last) if last.t_s == rec.t => {
                    last.joins.extend(joins);
                    last.leaves.extend(leaves);
                }
                _ => events.push(Event {
                    t_s: rec.t,
                    joins: joins.collect(),
                    leaves: leaves.collect(),
                }),
            }
        }
        let t_end_s = events.last().map_or(0.0, |e| e.t_s);
        Ok(EventLog { events, t_end_s })
    }

    /// Moves the horizon past the last event (e.g. to the full measurement
    /// window). Rejects horizons that would cut events off.
    pub fn set_horizon(&mut self, t_end_s: f64) -> Result<(), TraceError> {
        let t_last = self.events.last().map_or(0.0, |e| e.t_s);
        if t_end_s < t_last {
            return Err(TraceError::BadHorizon { t_end: t_end_s, t_last });
        }
        self.t_end_s = t_end_s;
        Ok(())
    }

    /// Writes the log back out as JSON Lines. Inverse of [`EventLog::parse`]
    /// up to the horizon (which the line format does not carry).
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), TraceError> {
        for e in &self.events {
            let rec = RawRecord {
                t: e.t_s,
                join: e.joins.iter().map(|n| n.as_str().to_string()).collect(),
                leave: e.leaves.iter().map(|n| n.as_str().to_string()).collect(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One idle interval per node, truncated at the horizon; zero-length
/// intervals are dropped. Sorted by node, then start time.
pub fn fragments(log: &EventLog) -> Vec<Fragment> {
    let mut open: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &log.events {
        for n in &e.joins {
            open.insert(n.clone(), e.t_s);
        }
        for n in &e.leaves {
            if let Some(start_s) = open.remove(n) {
                if e.t_s > start_s {
                    out.push(Fragment { node: n.clone(), start_s, end_s: e.t_s });
                }
            }
        }
    }
    for (node, start_s) in open {
        if log.t_end_s > start_s {
            out.push(Fragment { node, start_s, end_s: log.t_end_s });
        }
    }
    out.sort_by(|a, b| (a.node.as_str(), a.start_s).partial_cmp(&(b.node.as_str(), b.start_s)).unwrap());
    out
}

/// Log characterization: event rates, equivalent static pool size, and the
/// idle-fragment length distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStats {
    /// Events with at least one join, per hour of log span.
    pub inc_per_h: f64,
    /// Events with at least one leave, per hour of log span.
    pub dec_per_h: f64,
    /// Idle capacity expressed as a constant pool of this many nodes.
    pub eq_nodes: f64,
    pub idle_node_hours: f64,
    /// Fragment lengths at or above the filter, ascending.
    pub fragment_lengths_s: Vec<f64>,
    /// Cumulative fraction of fragments at or below each distinct length.
    pub cdf: Vec<(f64, f64)>,
}

/// Computes [`TraceStats`] over the span from the first event to the
/// horizon. `min_fragment_s` drops short blips from the length distribution
/// only; the node-hour integral always covers the full log.
pub fn stats(log: &EventLog, min_fragment_s: f64) -> Result<TraceStats, TraceError> {
    let t_first = log.events.first().map_or(0.0, |e| e.t_s);
    let span_s = log.t_end_s - t_first;
    if !(span_s > 0.0) {
        return Err(TraceError::EmptySpan);
    }
    let span_h = span_s / 3600.0;
    let inc = log.events.iter().filter(|e| !e.joins.is_empty()).count();
    let dec = log.events.iter().filter(|e| !e.leaves.is_empty()).count();

    let frags = fragments(log);
    let idle_node_hours = frags.iter().map(Fragment::length_s).sum::<f64>() / 3600.0;

    let mut fragment_lengths_s: Vec<f64> = frags
        .iter()
        .map(Fragment::length_s)
        .filter(|&l| l >= min_fragment_s)
        .collect();
    fragment_lengths_s.sort_by(f64::total_cmp);
    let total = fragment_lengths_s.len() as f64;
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, &l) in fragment_lengths_s.iter().enumerate() {
        let frac = (i + 1) as f64 / total;
        match cdf.last_mut() {
            Some(last) if last.0 == l => last.1 = frac,
            _ => cdf.push((l, frac)),
        }
    }

    Ok(TraceStats {
        inc_per_h: inc as f64 / span_h,
        dec_per_h: dec as f64 / span_h,
        eq_nodes: idle_node_hours / span_h,
        idle_node_hours,
        fragment_lengths_s,
        cdf,
    })
}

/// Synthetic-log generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pool: u32,
    pub join_rate_per_h: f64,
    pub mean_residency_s: f64,
    pub duration_s: f64,
}

/// Draws a log from a Poisson join process with exponentially distributed
/// idle residency, truncated at the duration. Arrivals finding the whole
/// pool already idle are dropped. Deterministic for a given seed.
pub fn synth(cfg: &SynthConfig, seed: u64) -> Result<EventLog, TraceError> {
    if !(cfg.duration_s > 0.0) || !cfg.duration_s.is_finite() {
        return Err(TraceError::BadConfig("duration_s must be positive"));
    }
    if !(cfg.mean_residency_s > 0.0) || !cfg.mean_residency_s.is_finite() {
        return Err(TraceError::BadConfig("mean_residency_s must be positive"));
    }
    if !(cfg.join_rate_per_h >= 0.0) || !cfg.join_rate_per_h.is_finite() {
        return Err(TraceError::BadConfig("join_rate_per_h must be non-negative"));
    }

    let width = cfg.n_pool.saturating_sub(1).to_string().len();
    let name = |i: u32| NodeId::new(format!("n{i:0width$}"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = Vec::new();
    let push = |t: f64, join: Option<NodeId>, leave: Option<NodeId>, events: &mut Vec<Event>| {
        match events.last_mut() {
            Some(last) if last.t_s == t => {
                last.joins.extend(join);
                last.leaves.extend(leave);
            }
            _ => events.push(Event {
                t_s: t,
                joins: join.into_iter().collect(),
                leaves: leave.into_iter().collect(),
            }),
        }
    };

    // Pending leaves, keyed by time then node index for a deterministic pop
    // order even on (measure-zero) ties.
    let mut pending: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    let key = |t: f64, i: u32| (t.to_bits(), i);
    let mut absent: Vec<u32> = (0..cfg.n_pool).collect();

    let mut t = 0.0_f64;
    if cfg.join_rate_per_h > 0.0 && cfg.n_pool > 0 {
        let gap = Exp::new(cfg.join_rate_per_h / 3600.0).unwrap();
        let residency = Exp::new(1.0 / cfg.mean_residency_s).unwrap();
        loop {
            t += gap.sample(&mut rng);
            if t >= cfg.duration_s {
                break;
            }
            // Flush departures scheduled before this arrival.
            while let Some((&(bits, i), &t_leave)) = pending.first_key_value().map(|(k, v)| (k, v)) {
                if t_leave > t {
                    break;
                }
                pending.remove(&(bits, i));
                push(t_leave, None, Some(name(i)), &mut events);
                absent.push(i);
            }
            if absent.is_empty() {
                continue;
            }
            let slot = rng.gen_range(0..absent.len());
            let node = absent.swap_remove(slot);
            push(t, Some(name(node)), None, &mut events);
            let t_leave = t + residency.sample(&mut rng);
            if t_leave < cfg.duration_s {
                pending.insert(key(t_leave, node), t_leave);
            }
        }
    }
    for ((_, i), t_leave) in pending {
        push(t_leave, None, Some(name(i)), &mut events);
    }

    Ok(EventLog { events, t_end_s: cfg.duration_s })
}
