//! Gleaner allocates transient idle compute nodes to elastic (rescalable)
//! training jobs and replays recorded node-availability traces to measure
//! how much useful work a pool of leftover nodes can produce.
//!
//! The crate is organised around a single decision problem: given the set of
//! idle nodes right now, the jobs and their measured scalability curves, and
//! the cost of growing or shrinking each job, choose a new nodes-to-jobs map
//! that maximises aggregate progress until the pool changes again. Three
//! interchangeable solvers answer it (`milp::solve_bb`, `milp::solve_count_dp`,
//! `milp::solve_exhaustive`), a baseline policy splits nodes evenly
//! (`policies::equal_share`), and `simulator::run` replays a trace end to end.

pub mod cli;
pub mod metrics;
pub mod milp;
pub mod model;
pub mod output;
pub mod policies;
pub mod scalability;
pub mod simulator;
pub mod trace;
pub mod verify;
