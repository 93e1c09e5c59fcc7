//! End-to-end acceptance checks. Each test prints one `criterion N: PASS` or
//! `criterion N: FAIL` line (visible with `--nocapture`).

use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gleaner::metrics;
use gleaner::milp::{
    solve_count_dp, solve_exhaustive, stay_objective, realize_counts, SolveConfig,
};
use gleaner::model::{Event, JobState, TrainerSpec};
use gleaner::output;
use gleaner::policies::{equal_share, PolicyConfig, PolicyKind};
use gleaner::scalability::ScalabilityCurve;
use gleaner::simulator::{run, SimulationConfig};
use gleaner::trace::{self, EventLog};
use gleaner::verify::{random_instance, run_verification, structural_check, InstanceConfig};

fn criterion(n: u32, body: impl FnOnce() + UnwindSafe) {
    match catch_unwind(body) {
        Ok(()) => println!("criterion {n}: PASS"),
        Err(cause) => {
            println!("criterion {n}: FAIL");
            resume_unwind(cause);
        }
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load_trace(name: &str) -> EventLog {
    let file = File::open(fixture(name)).expect("fixture trace");
    EventLog::parse(BufReader::new(file)).expect("fixture trace parses")
}

fn load_trainers(name: &str) -> Vec<TrainerSpec> {
    let text = std::fs::read_to_string(fixture(name)).expect("fixture trainers");
    serde_json::from_str(&text).expect("fixture trainers parse")
}

fn criterion1_seeds() -> (u64, InstanceConfig) {
    (7, InstanceConfig { max_jobs: 4, max_nodes: 12, max_span: None })
}

#[test]
fn criterion_01_three_solver_equivalence() {
    criterion(1, || {
        let (seed, shape) = criterion1_seeds();
        let started = Instant::now();
        let outcome = run_verification(200, seed, &shape, true);
        let elapsed = started.elapsed();
        assert!(
            outcome.ok(),
            "{} disagreements, first: {}",
            outcome.failures.len(),
            outcome.failures[0].detail
        );
        assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    });
}

#[test]
fn criterion_02_dp_vs_exhaustive_extended() {
    criterion(2, || {
        // Spans capped so the brute-force guard (product of per-job ranges)
        // stays under its ceiling at six jobs.
        let shape = InstanceConfig { max_jobs: 6, max_nodes: 20, max_span: Some(8) };
        let started = Instant::now();
        let mut worst = 0.0f64;
        for i in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let (state, cfg) = random_instance(&mut rng, &shape);
            let dp = solve_count_dp(&state, &cfg).expect("dp solves");
            let ex = solve_exhaustive(&state, &cfg).expect("exhaustive solves");
            assert_eq!(
                dp.objective_value.to_bits(),
                ex.objective_value.to_bits(),
                "instance {i}: dp {} vs exhaustive {}",
                dp.objective_value,
                ex.objective_value
            );
            worst = worst.max((dp.objective_value - ex.objective_value).abs());
        }
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
        assert_eq!(worst, 0.0);
    });
}

#[test]
fn criterion_03_constraint_suite() {
    criterion(3, || {
        let (seed, shape) = criterion1_seeds();
        let mut checked = 0usize;
        for i in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + i);
            let (state, cfg) = random_instance(&mut rng, &shape);
            for (label, decision) in [
                ("count-dp", solve_count_dp(&state, &cfg).expect("dp solves")),
                ("exhaustive", solve_exhaustive(&state, &cfg).expect("exhaustive solves")),
                ("bb", {
                    let p = gleaner::milp::build_milp(&state, &cfg).expect("builds");
                    gleaner::milp::solve_bb(&p, u64::MAX).expect("bb solves")
                }),
            ] {
                structural_check(&state, &decision, label).unwrap();
                checked += 1;
            }
        }
        assert_eq!(checked, 600);
    });
}

#[test]
fn criterion_04_never_worse_properties() {
    criterion(4, || {
        let (seed, shape) = criterion1_seeds();
        let mut stay_cases = 0usize;
        for i in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + i);
            let (state, cfg) = random_instance(&mut rng, &shape);
            let tol = |x: f64| 1e-9 * (1.0 + x.abs());

            let counts: Vec<u32> = state.jobs.iter().map(JobState::count).collect();
            if realize_counts(&state, &counts).is_ok() {
                let stay = stay_objective(&state, &cfg).expect("stay evaluates");
                let dp = solve_count_dp(&state, &cfg).expect("dp solves");
                assert!(
                    dp.objective_value >= stay - tol(stay),
                    "instance {i}: {} < stay {stay}",
                    dp.objective_value
                );
                stay_cases += 1;
            }

            // The zero-cost variant of the same instance.
            let mut free = state.clone();
            for job in &mut free.jobs {
                job.spec.r_up_s = 0.0;
                job.spec.r_dw_s = 0.0;
            }
            let policy = PolicyConfig {
                policy: PolicyKind::EqualShare,
                solve: cfg.clone(),
                pj_max: u32::MAX,
            };
            let eq = equal_share(&free, &policy).expect("equal share");
            let dp = solve_count_dp(&free, &cfg).expect("dp solves");
            assert!(
                dp.objective_value >= eq.objective_value - tol(eq.objective_value),
                "instance {i}: {} < equal-share {}",
                dp.objective_value,
                eq.objective_value
            );
        }
        assert!(stay_cases > 0, "no instance had a feasible current map");
    });
}

#[test]
fn criterion_05_sos2_fidelity() {
    criterion(5, || {
        // Amdahl-style throughput: serial fraction 5%, base rate 1000/s.
        let amdahl = |n: u32| 1000.0 * (n as f64) / (0.95 + 0.05 * n as f64);
        let mut points: Vec<u32> = vec![1, 10, 20, 30, 40, 50, 60];
        let build = |points: &[u32]| {
            ScalabilityCurve::new(
                points.to_vec(),
                points.iter().map(|&g| amdahl(g)).collect(),
            )
            .expect("valid curve")
        };

        let curve = build(&points);
        for &g in &points {
            assert_eq!(curve.evaluate(g).unwrap(), amdahl(g), "grid point {g}");
        }
        for n in 1..=60u32 {
            let w = curve.sos2_weights(n).unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let nonzero: Vec<usize> =
                (0..w.len()).filter(|&k| w[k] != 0.0).collect();
            assert!(nonzero.len() <= 2);
            if nonzero.len() == 2 {
                assert_eq!(nonzero[1] - nonzero[0], 1, "nonzero weights not adjacent");
            }
            let reconstructed: f64 = w
                .iter()
                .zip(curve.rates())
                .map(|(wi, ri)| wi * ri)
                .sum();
            let direct = curve.evaluate(n).unwrap();
            assert!(
                (reconstructed - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                "n = {n}: weights give {reconstructed}, evaluate gives {direct}"
            );
        }

        let max_error = |curve: &ScalabilityCurve| -> (f64, u32) {
            (1..=60u32)
                .map(|n| ((curve.evaluate(n).unwrap() - amdahl(n)).abs(), n))
                .fold((0.0, 1), |best, cand| if cand.0 > best.0 { cand } else { best })
        };
        let (mut err, mut at) = max_error(&curve);
        assert!(err > 0.0, "7-point grid already exact, nothing to refine");
        for _ in 0..6 {
            points.push(at);
            points.sort_unstable();
            points.dedup();
            let refined = build(&points);
            let (next_err, next_at) = max_error(&refined);
            assert!(
                next_err <= err,
                "refining at {at} grew the error: {next_err} > {err}"
            );
            if next_err == 0.0 {
                break;
            }
            err = next_err;
            at = next_at;
        }
    });
}

#[test]
fn criterion_06_metrics_exactness() {
    criterion(6, || {
        // Three nodes for the first half hour, five for the second.
        let log = EventLog {
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
        };
        let hours = metrics::resource_integral(&log, 0.0, 3600.0);
        assert!((hours - 4.0).abs() < 1e-12, "node-hours {hours}");
        let eq = metrics::equivalent_nodes(&log, 0.0, 3600.0).unwrap();
        assert!((eq - 4.0).abs() < 1e-12, "equivalent nodes {eq}");

        for seed in 0..100u64 {
            let cfg = trace::SynthConfig {
                n_pool: 24,
                join_rate_per_h: 60.0,
                mean_residency_s: 900.0,
                duration_s: 7200.0,
            };
            let log = trace::synth(&cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cut = rng.gen_range(0.0..7200.0);
            let whole = metrics::resource_integral(&log, 0.0, 7200.0);
            let split = metrics::resource_integral(&log, 0.0, cut)
                + metrics::resource_integral(&log, cut, 7200.0);
            assert!(
                (whole - split).abs() <= 1e-9 * whole.max(1.0),
                "seed {seed}: {whole} vs {split}"
            );
        }
    });
}

#[test]
fn criterion_07_single_job_closed_form() {
    criterion(7, || {
        let log = {
            let mut log = load_trace("trace-static4.jsonl");
            log.set_horizon(2000.0).unwrap();
            log
        };
        let trainers = load_trainers("trainers-solo.json");
        let report = run(&log, &trainers, &SimulationConfig::default()).unwrap();
        let done = report.timelines[0].completion_s.expect("job completes");
        assert!((done - 1010.0).abs() <= 1e-6, "completed at {done}");
    });
}

fn fixture_config(policy: PolicyKind) -> SimulationConfig {
    SimulationConfig {
        policy_cfg: PolicyConfig {
            policy,
            solve: SolveConfig::default(),
            pj_max: u32::MAX,
        },
        ..SimulationConfig::default()
    }
}

#[test]
fn criterion_08_fixture_regression() {
    criterion(8, || {
        let log = load_trace("trace.jsonl");
        let trainers = load_trainers("trainers-hpo.json");
        assert!(log.events.len() >= 180, "only {} events", log.events.len());
        assert_eq!(trainers.len(), 20);

        let milp = run(&log, &trainers, &fixture_config(PolicyKind::Milp)).unwrap();
        let eq = run(&log, &trainers, &fixture_config(PolicyKind::EqualShare)).unwrap();
        let u_milp = metrics::efficiency_report(&log, &milp, &trainers, metrics::DEFAULT_WINDOW_S)
            .unwrap()
            .u_pct;
        let u_eq = metrics::efficiency_report(&log, &eq, &trainers, metrics::DEFAULT_WINDOW_S)
            .unwrap()
            .u_pct;
        assert!(u_milp >= u_eq, "MILP {u_milp}% < equal-share {u_eq}%");
        for (name, u) in [("milp", u_milp), ("equal-share", u_eq)] {
            assert!(50.0 < u && u < 100.0, "{name} U = {u}% outside (50, 100)");
        }

        let again = run(&log, &trainers, &fixture_config(PolicyKind::Milp)).unwrap();
        let bytes_a = serde_json::to_string(&milp).unwrap();
        let bytes_b = serde_json::to_string(&again).unwrap();
        assert_eq!(bytes_a, bytes_b, "same-seed reports differ");
    });
}

#[test]
fn criterion_09_tfwd_direction() {
    criterion(9, || {
        let log = load_trace("trace.jsonl");
        let trainers = load_trainers("trainers-hpo.json");
        let with_tfwd = |t_fwd_s: f64| {
            let mut cfg = fixture_config(PolicyKind::Milp);
            cfg.policy_cfg.solve.t_fwd_s = t_fwd_s;
            output::rescale_cost_per_event(&run(&log, &trainers, &cfg).unwrap())
        };
        let patient = with_tfwd(300.0);
        let hasty = with_tfwd(10.0);
        assert!(
            patient >= hasty,
            "rescale cost per event: {patient} at 300 s < {hasty} at 10 s"
        );
    });
}

#[test]
fn criterion_10_pjmax_direction() {
    criterion(10, || {
        let log = load_trace("trace.jsonl");
        let trainers = load_trainers("trainers-mixed.json");
        let families: std::collections::BTreeSet<&str> = trainers
            .iter()
            .map(|t| t.name.split('-').next().unwrap())
            .collect();
        assert_eq!(families.len(), 7, "fixture must cover all seven model families");

        let with_cap = |pj_max: u32| {
            let mut cfg = fixture_config(PolicyKind::Milp);
            cfg.policy_cfg.pj_max = pj_max;
            let report = run(&log, &trainers, &cfg).unwrap();
            let u = metrics::efficiency_report(&log, &report, &trainers, metrics::DEFAULT_WINDOW_S)
                .unwrap()
                .u_pct;
            (output::mean_runtime_s(&report), u)
        };
        let (runtime_wide, u_wide) = with_cap(15);
        let (runtime_narrow, u_narrow) = with_cap(5);
        assert!(
            runtime_wide >= runtime_narrow,
            "mean runtime: {runtime_wide} at cap 15 < {runtime_narrow} at cap 5"
        );
        assert!(u_wide >= u_narrow, "U: {u_wide}% at cap 15 < {u_narrow}% at cap 5");
    });
}

#[test]
fn criterion_11_timeout_keeps_current() {
    criterion(11, || {
        let log = load_trace("trace.jsonl");
        let trainers = load_trainers("trainers-hpo.json");
        let mut cfg = fixture_config(PolicyKind::Milp);
        cfg.policy_cfg.solve.timeout_ms = 0;
        let report = run(&log, &trainers, &cfg).unwrap();
        assert!(!report.events.is_empty());
        let mut last: std::collections::BTreeMap<String, u32> = Default::default();
        for ev in &report.events {
            assert_eq!(
                format!("{:?}", ev.status),
                "TimeoutKeptCurrent",
                "at t = {}",
                ev.t_s
            );
            for job in &ev.jobs {
                let before = last.get(&job.name).copied().unwrap_or(0);
                assert_eq!(job.n, before, "{} changed size at t = {}", job.name, ev.t_s);
                last.insert(job.name.clone(), job.n);
            }
        }
    });
}

#[test]
fn criterion_12_trace_stats_exact() {
    criterion(12, || {
        // One crafted hour: joins at 0 (a, b), 600 (c), 1800 (d), 2340 (f),
        // 2700 (e); leaves at 1500 (c), 2700 (d), 3420 (e, f). Fragments:
        // a and b 3600 s, c 900 s, d 900 s, f 1080 s, e 720 s.
        let mut log = load_trace("trace-crafted1h.jsonl");
        log.set_horizon(3600.0).unwrap();

        let stats = trace::stats(&log, 0.0).unwrap();
        assert_eq!(stats.inc_per_h, 5.0);
        assert_eq!(stats.dec_per_h, 3.0);
        assert_eq!(stats.idle_node_hours, 3.0);
        assert_eq!(stats.eq_nodes, 3.0);
        let expected_cdf = vec![
            (720.0, 1.0 / 6.0),
            (900.0, 3.0 / 6.0),
            (1080.0, 4.0 / 6.0),
            (3600.0, 1.0),
        ];
        assert_eq!(stats.cdf, expected_cdf);
    });
}
