//! Trace-driven decision engine and simulator for migrating interactive
//! notebook cell executions between a local and a remote platform.
//!
//! The crate replays interaction traces captured from a notebook front end
//! and answers two questions: *when* should a cell (or a predicted block of
//! cells) execute remotely, and *how little* state has to move to make that
//! happen. It is organized around the pipeline:
//!
//! 1. [`trace`] — telemetry data model and ingestion of newline-delimited
//!    JSON trace files into validated sessions.
//! 2. [`context`] — interaction-sequence mining: split the execution history
//!    into nondecreasing cell-order runs, score them, and predict the block
//!    of cells the user is about to execute.
//! 3. [`policy`] — the performance-aware migration analyzer and the replay
//!    simulator comparing local-only, remote-only, single-cell, and
//!    block-cell strategies, plus grid sweeps over migration time and
//!    remote speedup.
//! 4. [`knowledge`] — the knowledge-aware policy: probe small parameter
//!    values through a timing oracle, fit one linear model per environment,
//!    and intersect them into a break-even threshold stored in a knowledge
//!    base.
//! 5. [`cellparse`] — a hand-written parser for the notebook cell language
//!    subset, with name-usage extraction (loads, stores, call targets,
//!    keyword arguments, imports).
//! 6. [`statered`] — the notebook state reducer: dependency closure over an
//!    object graph, reduced serialization payloads, and hash-diff
//!    incremental transfers.
//!
//! Everything is deterministic: the same inputs produce byte-identical
//! reports, simulation results, and sweep tables.

pub mod cellparse;
pub mod context;
pub mod knowledge;
pub mod policy;
pub mod statered;
pub mod trace;
