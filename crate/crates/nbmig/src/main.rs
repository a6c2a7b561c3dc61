//! nbmig command line: trace ingestion, context mining, migration
//! simulation, sweeps, threshold fitting, and state reduction.
//!
//! Settings come from flags or from a JSON config file (`--config`);
//! flags win. The `NBMIG_SEED` environment variable overrides any
//! configured seed. JSON artifacts embed a digest of the resolved
//! configuration; CSV artifacts get a sidecar `<file>.meta.json` carrying
//! the digest and the only wall-clock timestamp any run ever writes, so
//! data files stay byte-identical across reruns.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input data error,
//! 4 internal invariant violation.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nbmig::cellparse::{extract_usage, parse_cell};
use nbmig::context::{get_sequences, score_sequences};
use nbmig::knowledge::{
    build_or_update_dataset, fit_models, intersect, AffineOracle, Environment, JitterOracle,
    KnowledgeBase, KnowledgeError, ProbeBudget, RecordedOracle, ThresholdFit, TimingOracle,
};
use nbmig::policy::{
    simulate, sweep, sweep_csv, CellMigration, CostModel, PolicyKind, SimOptions, StatsSource,
    SweepGrid,
};
use nbmig::statered::{
    migration_time, needed_closure, reduce_and_serialize, Direction, NotebookState, StateError,
};
use nbmig::trace::{build_sessions, ingest_report, parse_trace, ExecutionEvent};

#[derive(Parser)]
#[command(
    name = "nbmig",
    version,
    about = "Decision engine and simulator for migrating notebook cell executions"
)]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for randomized oracles. NBMIG_SEED overrides this.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a telemetry trace and print the ingestion report.
    Ingest(IngestArgs),
    /// Mine the interaction history into scored cell sequences.
    Context(ContextArgs),
    /// Replay a trace under one policy and report the total time.
    Simulate(SimulateArgs),
    /// Run every policy over a migration-time x speedup grid; prints CSV.
    Sweep(SweepArgs),
    /// Probe a timing oracle and fit a knowledge-base threshold.
    FitThreshold(FitArgs),
    /// Reduce a notebook state to the payload one cell actually needs.
    Reduce(ReduceArgs),
    /// Parse a single cell; print its name usage and optionally the AST.
    Parse(ParseArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Newline-delimited JSON trace file.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Also write the report JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContextArgs {
    /// Newline-delimited JSON trace file.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Explicit cell-order history, e.g. 1,2,3,2,3; replaces --trace.
    #[arg(long, value_delimiter = ',', value_name = "ORDERS")]
    history: Vec<u32>,
    /// Also write the JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Newline-delimited JSON trace file.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// One of local-only, remote-only, single-cell, block-cell.
    #[arg(long)]
    policy: Option<String>,
    /// Remote speedup factor (local time / remote time).
    #[arg(long)]
    speedup: Option<f64>,
    /// Fixed migration time in ms, split evenly into up and down.
    /// Mutually exclusive with --state.
    #[arg(long)]
    migration_ms: Option<f64>,
    /// Notebook state JSON; derives migration time from the reduced
    /// payload of --cell. Mutually exclusive with --migration-ms.
    #[arg(long, value_name = "FILE")]
    state: Option<PathBuf>,
    /// Cell source file whose needed closure sizes the state transfer.
    #[arg(long, value_name = "FILE")]
    cell: Option<PathBuf>,
    /// Link bandwidth in bytes per ms (state-derived mode).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// One-way link latency in ms (state-derived mode).
    #[arg(long)]
    latency: Option<f64>,
    /// Codec throughput in bytes per ms; charges compression time.
    #[arg(long)]
    codec_rate: Option<f64>,
    /// Compress state payloads.
    #[arg(long)]
    compress: bool,
    /// Minimum sequence score for a block prediction.
    #[arg(long)]
    min_score: Option<f64>,
    /// Migrate predicted blocks without the aggregate break-even test.
    #[arg(long)]
    no_block_guard: bool,
    /// Emit one JSON line per decision, then the summary line.
    #[arg(long)]
    explain: bool,
    /// Also write the full result JSON (summary + decisions) here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Newline-delimited JSON trace file.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Comma-separated remote speedup factors.
    #[arg(long, value_delimiter = ',', value_name = "FACTORS")]
    speedups: Vec<f64>,
    /// Comma-separated migration times in ms.
    #[arg(long, value_delimiter = ',', value_name = "MS")]
    migrations: Vec<f64>,
    /// Minimum sequence score for a block prediction.
    #[arg(long)]
    min_score: Option<f64>,
    /// Migrate predicted blocks without the aggregate break-even test.
    #[arg(long)]
    no_block_guard: bool,
    /// Write the CSV here (plus a <file>.meta.json sidecar).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Parameter name the threshold applies to, e.g. epochs.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated parameter values to probe.
    #[arg(long, value_delimiter = ',', value_name = "VALUES")]
    probes: Vec<i64>,
    /// `affine:local_slope,local_icept,remote_slope,remote_icept` or the
    /// path of a recorded-timings CSV (environment,param_value,total_ms).
    #[arg(long)]
    oracle: Option<String>,
    /// Valid parameter range as lo,hi (inclusive).
    #[arg(long, value_delimiter = ',', num_args = 2, value_name = "LO,HI")]
    range: Vec<i64>,
    /// Relative multiplicative jitter applied to an affine oracle.
    #[arg(long)]
    jitter: Option<f64>,
    /// One-way migration time in ms (already inside remote timings).
    #[arg(long)]
    migration_time: Option<f64>,
    /// Drop any probe whose single measurement exceeds this, in ms.
    #[arg(long)]
    max_wait: Option<f64>,
    /// Repetition cap per probe under the stability rule.
    #[arg(long)]
    reps: Option<u32>,
    /// Knowledge-base JSON file to update with the fitted threshold.
    #[arg(long, value_name = "FILE")]
    kb: Option<PathBuf>,
    /// Seed the KB entry with this expert threshold if it is missing.
    #[arg(long)]
    expert: Option<i64>,
    /// Timestamp (ms) recorded in KB provenance; keeps artifacts
    /// reproducible. Defaults to 0.
    #[arg(long)]
    timestamp: Option<i64>,
    /// Also write the fit JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReduceArgs {
    /// Notebook state JSON file.
    #[arg(long, value_name = "FILE")]
    state: Option<PathBuf>,
    /// Cell source file.
    #[arg(long, value_name = "FILE")]
    cell: Option<PathBuf>,
    /// Compress the payload.
    #[arg(long)]
    compress: bool,
    /// Link bandwidth in bytes per ms; adds a transfer-time estimate.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// One-way link latency in ms.
    #[arg(long)]
    latency: Option<f64>,
    /// Codec throughput in bytes per ms.
    #[arg(long)]
    codec_rate: Option<f64>,
    /// Also write the JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Cell source file.
    #[arg(long, value_name = "FILE")]
    cell: Option<PathBuf>,
    /// Include the full AST (node kind, span, children) in the output.
    #[arg(long)]
    dump_ast: bool,
    /// Also write the JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// JSON config file schema; every field optional, flags override.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    trace: Option<PathBuf>,
    strict: Option<bool>,
    history: Option<Vec<u32>>,
    policy: Option<String>,
    speedup: Option<f64>,
    speedups: Option<Vec<f64>>,
    migrations: Option<Vec<f64>>,
    migration_ms: Option<f64>,
    /// Explicit per-cell local times in ms, keyed by cell order; when
    /// absent, local times are the per-cell median from the trace.
    local_times: Option<BTreeMap<u32, f64>>,
    state: Option<PathBuf>,
    cell: Option<PathBuf>,
    bandwidth: Option<f64>,
    latency: Option<f64>,
    codec_rate: Option<f64>,
    compress: Option<bool>,
    min_score: Option<f64>,
    block_guard: Option<bool>,
    param: Option<String>,
    probes: Option<Vec<i64>>,
    oracle: Option<String>,
    range: Option<(i64, i64)>,
    jitter: Option<f64>,
    migration_time: Option<f64>,
    max_wait: Option<f64>,
    reps: Option<u32>,
    kb: Option<PathBuf>,
    expert: Option<i64>,
    timestamp: Option<i64>,
    seed: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    /// Bad or missing configuration; exit 2.
    Config(String),
    /// Unreadable or invalid input data; exit 3.
    Input(String),
    /// Broken internal invariant; exit 4.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nbmig: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_config(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, file.seed)?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file),
        Command::Context(args) => cmd_context(args, &file),
        Command::Simulate(args) => cmd_simulate(args, &file),
        Command::Sweep(args) => cmd_sweep(args, &file),
        Command::FitThreshold(args) => cmd_fit(args, &file, seed),
        Command::Reduce(args) => cmd_reduce(args, &file),
        Command::Parse(args) => cmd_parse(args, &file),
    }
}

// ---------------------------------------------------------------------------
// Config plumbing

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// NBMIG_SEED beats the flag, the flag beats the file.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Ok(raw) = std::env::var("NBMIG_SEED") {
        return raw
            .parse()
            .map_err(|_| CliError::Config(format!("NBMIG_SEED must be an integer, got {raw:?}")));
    }
    Ok(flag.or(file).unwrap_or(0))
}

fn need<T>(flag: Option<T>, file: Option<T>, field: &str) -> Result<T, CliError> {
    flag.or(file).ok_or_else(|| {
        CliError::Config(format!("missing required setting `{field}` (flag or config file)"))
    })
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_list<T: Clone>(flag: &[T], file: Option<&Vec<T>>) -> Option<Vec<T>> {
    if !flag.is_empty() {
        Some(flag.to_vec())
    } else {
        file.cloned()
    }
}

/// sha256 over the resolved settings; keys come out sorted because
/// serde_json maps are ordered.
fn config_digest(resolved: &Value) -> String {
    let canonical = serde_json::to_vec(resolved).expect("config serialization cannot fail");
    let mut hex = String::with_capacity(64);
    for byte in Sha256::digest(canonical) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

/// Print to stdout and optionally mirror into a file.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, format!("{text}\n"))
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared loading steps

fn load_events(path: &Path, strict: bool) -> Result<Vec<ExecutionEvent>, CliError> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Input(format!("cannot read trace {}: {e}", path.display())))?;
    let parse = parse_trace(BufReader::new(file), strict)
        .map_err(|e| CliError::Input(format!("trace: {e}")))?;
    let sessions = build_sessions(&parse.messages);
    Ok(sessions.all_events())
}

/// Per-cell median of the recorded execution durations.
fn trace_local_times(events: &[ExecutionEvent]) -> BTreeMap<u32, f64> {
    let mut per_cell: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for event in events {
        per_cell
            .entry(event.cell_order)
            .or_default()
            .push(event.duration_ms as f64);
    }
    per_cell
        .into_iter()
        .map(|(order, mut times)| {
            times.sort_by(f64::total_cmp);
            let n = times.len();
            let median = if n % 2 == 1 {
                times[n / 2]
            } else {
                (times[n / 2 - 1] + times[n / 2]) / 2.0
            };
            (order, median)
        })
        .collect()
}

fn parse_policy(name: &str) -> Result<PolicyKind, CliError> {
    PolicyKind::ALL
        .iter()
        .find(|p| p.as_str() == name)
        .copied()
        .ok_or_else(|| {
            let all: Vec<&str> = PolicyKind::ALL.iter().map(|p| p.as_str()).collect();
            CliError::Config(format!(
                "unknown policy {name:?}; expected one of {}",
                all.join(", ")
            ))
        })
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_ingest(args: IngestArgs, file: &FileConfig) -> Result<(), CliError> {
    let trace = need(args.trace, file.trace.clone(), "trace")?;
    let strict = args.strict || file.strict.unwrap_or(false);
    let resolved = json!({
        "command": "ingest",
        "trace": trace.display().to_string(),
        "strict": strict,
    });

    let handle = fs::File::open(&trace)
        .map_err(|e| CliError::Input(format!("cannot read trace {}: {e}", trace.display())))?;
    let parse = parse_trace(BufReader::new(handle), strict)
        .map_err(|e| CliError::Input(format!("trace: {e}")))?;
    let sessions = build_sessions(&parse.messages);
    let report = ingest_report(&parse, &sessions);

    let mut output = serde_json::to_value(&report).expect("report serialization cannot fail");
    output["config_digest"] = Value::String(config_digest(&resolved));
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&output).expect("JSON cannot fail"),
    )
}

fn cmd_context(args: ContextArgs, file: &FileConfig) -> Result<(), CliError> {
    let history: Vec<u32> = if !args.history.is_empty() {
        args.history
    } else if let Some(h) = &file.history {
        h.clone()
    } else {
        let trace = need(args.trace, file.trace.clone(), "trace or history")?;
        let events = load_events(&trace, file.strict.unwrap_or(false))?;
        events.iter().map(|e| e.cell_order).collect()
    };
    let resolved = json!({
        "command": "context",
        "history": history,
    });

    let sequences = get_sequences(&history);
    let stats = score_sequences(&sequences);
    let ranked: Vec<Value> = stats
        .ranked()
        .into_iter()
        .map(|(seq, score)| json!({ "sequence": seq.orders(), "score": score }))
        .collect();
    let output = json!({
        "config_digest": config_digest(&resolved),
        "history_len": history.len(),
        "sequences": ranked,
    });
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&output).expect("JSON cannot fail"),
    )
}

/// Migration-time source shared by simulate: fixed ms or state-derived.
enum MigrationSource {
    Fixed(f64),
    StateDerived {
        state: PathBuf,
        cell: PathBuf,
        bandwidth: f64,
        latency: f64,
        codec_rate: Option<f64>,
        compress: bool,
    },
}

impl MigrationSource {
    fn describe(&self) -> Value {
        match self {
            MigrationSource::Fixed(ms) => json!({ "migration_ms": ms }),
            MigrationSource::StateDerived {
                state,
                cell,
                bandwidth,
                latency,
                codec_rate,
                compress,
            } => json!({
                "state": state.display().to_string(),
                "cell": cell.display().to_string(),
                "bandwidth": bandwidth,
                "latency": latency,
                "codec_rate": codec_rate,
                "compress": compress,
            }),
        }
    }
}

fn resolve_migration_source(args: &SimulateArgs, file: &FileConfig) -> Result<MigrationSource, CliError> {
    let fixed = args.migration_ms.or(file.migration_ms);
    let state = args.state.clone().or_else(|| file.state.clone());
    match (fixed, state) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "exactly one migration-time source: `migration_ms` and `state` are mutually exclusive"
                .to_string(),
        )),
        (None, None) => Err(CliError::Config(
            "missing migration-time source: set `migration_ms` or `state`".to_string(),
        )),
        (Some(ms), None) => {
            if ms.is_nan() || ms < 0.0 {
                return Err(CliError::Config(format!(
                    "`migration_ms` must be nonnegative, got {ms}"
                )));
            }
            Ok(MigrationSource::Fixed(ms))
        }
        (None, Some(state)) => {
            let cell = need(args.cell.clone(), file.cell.clone(), "cell")?;
            let bandwidth = need(args.bandwidth, file.bandwidth, "bandwidth")?;
            let latency = need(args.latency, file.latency, "latency")?;
            if bandwidth.is_nan() || bandwidth <= 0.0 {
                return Err(CliError::Config(format!(
                    "`bandwidth` must be positive, got {bandwidth}"
                )));
            }
            if latency.is_nan() || latency < 0.0 {
                return Err(CliError::Config(format!(
                    "`latency` must be nonnegative, got {latency}"
                )));
            }
            let codec_rate = args.codec_rate.or(file.codec_rate);
            if let Some(rate) = codec_rate {
                if rate.is_nan() || rate <= 0.0 {
                    return Err(CliError::Config(format!(
                        "`codec_rate` must be positive, got {rate}"
                    )));
                }
            }
            Ok(MigrationSource::StateDerived {
                state,
                cell,
                bandwidth,
                latency,
                codec_rate,
                compress: args.compress || file.compress.unwrap_or(false),
            })
        }
    }
}

fn cmd_simulate(args: SimulateArgs, file: &FileConfig) -> Result<(), CliError> {
    let trace = need(args.trace.clone(), file.trace.clone(), "trace")?;
    let policy_name = need(args.policy.clone(), file.policy.clone(), "policy")?;
    let policy = parse_policy(&policy_name)?;
    let speedup_factor = need(args.speedup, file.speedup, "speedup")?;
    if speedup_factor.is_nan() || speedup_factor <= 0.0 {
        return Err(CliError::Config(format!(
            "`speedup` must be positive, got {speedup_factor}"
        )));
    }
    let source = resolve_migration_source(&args, file)?;
    let min_score = pick(args.min_score, file.min_score, 0.0);
    let block_guard = if args.no_block_guard {
        false
    } else {
        file.block_guard.unwrap_or(true)
    };

    let resolved = json!({
        "command": "simulate",
        "trace": trace.display().to_string(),
        "policy": policy.as_str(),
        "speedup": speedup_factor,
        "migration_source": source.describe(),
        "min_score": min_score,
        "block_guard": block_guard,
        "local_times": file.local_times,
    });

    let events = load_events(&trace, file.strict.unwrap_or(false))?;
    let local_times = match &file.local_times {
        Some(map) => map.clone(),
        None => trace_local_times(&events),
    };

    let mut opts = SimOptions {
        min_score,
        block_guard,
        ..SimOptions::default()
    };
    let model = match &source {
        MigrationSource::Fixed(ms) => {
            CostModel::symmetric(local_times.clone(), speedup_factor, *ms)
                .map_err(|e| CliError::Config(format!("policy: {e}")))?
        }
        MigrationSource::StateDerived {
            state,
            cell,
            bandwidth,
            latency,
            codec_rate,
            compress,
        } => {
            let state_doc = NotebookState::from_json(&read_input(state, "state")?)
                .map_err(|e| CliError::Input(format!("statered: {e}")))?;
            let cell_src = read_input(cell, "cell")?;
            let ast =
                parse_cell(&cell_src).map_err(|e| CliError::Input(format!("cellparse: {e}")))?;
            let usage = extract_usage(&ast);
            match nbmig::statered::migration_times(
                &state_doc, &usage, *bandwidth, *latency, *codec_rate, *compress,
            ) {
                Ok((up_ms, down_ms)) => {
                    CostModel::new(local_times.clone(), speedup_factor, up_ms, down_ms)
                        .map_err(|e| CliError::Internal(format!("policy: {e}")))?
                }
                Err(StateError::LocalFallback { objects }) => {
                    // Non-serializable needed state: every cell runs local
                    // and no migration is ever charged.
                    for &order in local_times.keys() {
                        opts.per_cell.insert(order, CellMigration::LocalFallback);
                    }
                    eprintln!(
                        "nbmig: state cannot be serialized ({}); falling back to local execution",
                        objects.join(", ")
                    );
                    CostModel::new(local_times.clone(), speedup_factor, 0.0, 0.0)
                        .map_err(|e| CliError::Internal(format!("policy: {e}")))?
                }
                Err(e) => return Err(CliError::Input(format!("statered: {e}"))),
            }
        }
    };

    let stats = matches!(policy, PolicyKind::BlockCell).then_some(StatsSource::Prefix);
    let result = simulate(&events, &model, policy, stats, &opts)
        .map_err(|e| CliError::Input(format!("policy: {e}")))?;

    let digest = config_digest(&resolved);
    let summary = json!({
        "config_digest": digest,
        "policy": policy.as_str(),
        "total_ms": result.total_time,
        "migrations": result.migration_count,
        "decisions": result.decisions.len(),
    });
    if args.explain {
        for decision in &result.decisions {
            println!(
                "{}",
                serde_json::to_string(decision).expect("decision serialization cannot fail")
            );
        }
        println!("{}", serde_json::to_string(&summary).expect("JSON cannot fail"));
    } else {
        println!("{}", serde_json::to_string_pretty(&summary).expect("JSON cannot fail"));
    }
    if let Some(out) = &args.out {
        let full = json!({
            "config_digest": summary["config_digest"],
            "policy": policy.as_str(),
            "total_ms": result.total_time,
            "migrations": result.migration_count,
            "decisions": result.decisions,
        });
        fs::write(out, serde_json::to_string_pretty(&full).expect("JSON cannot fail") + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, file: &FileConfig) -> Result<(), CliError> {
    let trace = need(args.trace, file.trace.clone(), "trace")?;
    let speedups = pick_list(&args.speedups, file.speedups.as_ref())
        .ok_or_else(|| CliError::Config("missing required setting `speedups`".to_string()))?;
    let migrations = pick_list(&args.migrations, file.migrations.as_ref())
        .ok_or_else(|| CliError::Config("missing required setting `migrations`".to_string()))?;
    for s in &speedups {
        if s.is_nan() || *s <= 0.0 {
            return Err(CliError::Config(format!("`speedups` must be positive, got {s}")));
        }
    }
    for m in &migrations {
        if m.is_nan() || *m < 0.0 {
            return Err(CliError::Config(format!("`migrations` must be nonnegative, got {m}")));
        }
    }
    let min_score = pick(args.min_score, file.min_score, 0.0);
    let block_guard = if args.no_block_guard {
        false
    } else {
        file.block_guard.unwrap_or(true)
    };
    let resolved = json!({
        "command": "sweep",
        "trace": trace.display().to_string(),
        "speedups": speedups,
        "migrations": migrations,
        "min_score": min_score,
        "block_guard": block_guard,
        "local_times": file.local_times,
    });

    let events = load_events(&trace, file.strict.unwrap_or(false))?;
    let local_times = match &file.local_times {
        Some(map) => map.clone(),
        None => trace_local_times(&events),
    };
    let opts = SimOptions {
        min_score,
        block_guard,
        ..SimOptions::default()
    };
    let grid = SweepGrid {
        migration_times_ms: migrations.clone(),
        remote_speedups: speedups.clone(),
    };
    let rows = sweep(&events, StatsSource::Prefix, &local_times, &grid, &opts)
        .map_err(|e| CliError::Input(format!("policy: {e}")))?;
    let expected = migrations.len() * speedups.len() * PolicyKind::ALL.len();
    if rows.len() != expected {
        return Err(CliError::Internal(format!(
            "sweep produced {} rows, expected {expected}",
            rows.len()
        )));
    }

    let csv = sweep_csv(&rows);
    print!("{csv}");
    if let Some(out) = &args.out {
        fs::write(out, &csv)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.display())))?;
        // The sidecar run log is the only artifact carrying wall-clock
        // time; the CSV itself stays byte-identical across reruns.
        let stamp_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let meta = json!({
            "config_digest": config_digest(&resolved),
            "rows": rows.len(),
            "created_unix_ms": stamp_ms,
        });
        let meta_path = out.with_extension(match out.extension() {
            Some(ext) => format!("{}.meta.json", ext.to_string_lossy()),
            None => "meta.json".to_string(),
        });
        fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).expect("JSON cannot fail") + "\n",
        )
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", meta_path.display())))?;
    }
    Ok(())
}

fn parse_oracle(
    spec: &str,
    jitter: Option<f64>,
    seed: u64,
) -> Result<Box<dyn TimingOracle>, CliError> {
    if let Some(rest) = spec.strip_prefix("affine:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 4 {
            return Err(CliError::Config(format!(
                "`oracle` affine spec needs 4 comma-separated numbers \
                 (local_slope,local_icept,remote_slope,remote_icept), got {}",
                parts.len()
            )));
        }
        let mut nums = [0.0f64; 4];
        for (slot, raw) in nums.iter_mut().zip(&parts) {
            *slot = raw.trim().parse().map_err(|_| {
                CliError::Config(format!("`oracle` affine spec: {raw:?} is not a number"))
            })?;
        }
        let base = AffineOracle {
            local_slope: nums[0],
            local_intercept: nums[1],
            remote_slope: nums[2],
            remote_intercept: nums[3],
        };
        return Ok(match jitter {
            Some(j) if j > 0.0 => Box::new(JitterOracle::new(base, j, seed)),
            _ => Box::new(base),
        });
    }
    if jitter.is_some_and(|j| j > 0.0) {
        return Err(CliError::Config(
            "`jitter` applies only to an affine oracle".to_string(),
        ));
    }
    // Anything else is a recorded-timings CSV path.
    let path = Path::new(spec);
    let text = read_input(path, "recorded timings")?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("environment,param_value,total_ms"))
        {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "recorded timings line {}: expected environment,param_value,total_ms",
                i + 1
            )));
        }
        let environment = match fields[0].trim() {
            "local" => Environment::Local,
            "remote" => Environment::Remote,
            other => {
                return Err(CliError::Input(format!(
                    "recorded timings line {}: unknown environment {other:?}",
                    i + 1
                )))
            }
        };
        let value: i64 = fields[1].trim().parse().map_err(|_| {
            CliError::Input(format!("recorded timings line {}: bad param_value", i + 1))
        })?;
        let time: f64 = fields[2].trim().parse().map_err(|_| {
            CliError::Input(format!("recorded timings line {}: bad total_ms", i + 1))
        })?;
        samples.push((environment, value, time));
    }
    Ok(Box::new(RecordedOracle::new(samples)))
}

fn map_knowledge_error(e: KnowledgeError) -> CliError {
    match e {
        KnowledgeError::InvalidBudget(_) | KnowledgeError::ThresholdOutOfRange { .. } => {
            CliError::Config(format!("knowledge: {e}"))
        }
        _ => CliError::Input(format!("knowledge: {e}")),
    }
}

fn cmd_fit(args: FitArgs, file: &FileConfig, seed: u64) -> Result<(), CliError> {
    let param = need(args.param, file.param.clone(), "param")?;
    let probes = pick_list(&args.probes, file.probes.as_ref())
        .ok_or_else(|| CliError::Config("missing required setting `probes`".to_string()))?;
    let oracle_spec = need(args.oracle, file.oracle.clone(), "oracle")?;
    let range: (i64, i64) = if args.range.len() == 2 {
        (args.range[0], args.range[1])
    } else {
        file.range.unwrap_or((1, 1000))
    };
    if range.0 > range.1 {
        return Err(CliError::Config(format!(
            "`range` lo {} exceeds hi {}",
            range.0, range.1
        )));
    }
    if let Some(bad) = probes.iter().find(|p| **p < range.0 || **p > range.1) {
        return Err(CliError::Config(format!(
            "`probes` value {bad} outside `range` [{}, {}]",
            range.0, range.1
        )));
    }
    let jitter = args.jitter.or(file.jitter);
    let budget = ProbeBudget {
        migration_time_ms: pick(args.migration_time, file.migration_time, 120_000.0),
        max_wait_ms: pick(args.max_wait, file.max_wait, f64::INFINITY),
        max_repetitions: pick(args.reps, file.reps, 5),
    };
    budget.validate().map_err(map_knowledge_error)?;
    let timestamp = pick(args.timestamp, file.timestamp, 0);
    let kb_path = args.kb.or_else(|| file.kb.clone());
    let expert = args.expert.or(file.expert);

    let resolved = json!({
        "command": "fit-threshold",
        "param": param,
        "probes": probes,
        "oracle": oracle_spec,
        "range": [range.0, range.1],
        "jitter": jitter,
        "migration_time": budget.migration_time_ms,
        "max_wait": if budget.max_wait_ms.is_finite() { Some(budget.max_wait_ms) } else { None },
        "reps": budget.max_repetitions,
        "kb": kb_path.as_ref().map(|p| p.display().to_string()),
        "expert": expert,
        "timestamp": timestamp,
        "seed": seed,
    });

    let mut oracle = parse_oracle(&oracle_spec, jitter, seed)?;
    let dataset =
        build_or_update_dataset(&probes, oracle.as_mut(), &budget).map_err(map_knowledge_error)?;
    let (local, remote) = fit_models(&dataset).map_err(map_knowledge_error)?;
    let fit: ThresholdFit =
        intersect(&local, &remote, range).map_err(map_knowledge_error)?;

    let mut kb_updated = false;
    if let Some(path) = &kb_path {
        let mut kb = if path.exists() {
            KnowledgeBase::from_json(&read_input(path, "knowledge base")?)
                .map_err(|e| CliError::Input(format!("knowledge: {e}")))?
        } else {
            KnowledgeBase::default()
        };
        if !kb.entries.contains_key(&param) {
            let Some(threshold) = expert else {
                return Err(CliError::Config(format!(
                    "knowledge base has no entry for `{param}`; seed one with --expert"
                )));
            };
            kb.seed_expert(&param, range, threshold, timestamp)
                .map_err(map_knowledge_error)?;
        }
        kb.record_fit(&param, &fit, timestamp)
            .map_err(map_knowledge_error)?;
        fs::write(path, kb.to_json() + "\n")
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        kb_updated = true;
    }

    let output = json!({
        "config_digest": config_digest(&resolved),
        "parameter": param,
        "local": local,
        "remote": remote,
        "x_star": fit.x_star,
        "threshold": fit.threshold,
        "migrate_above": fit.migrate_above,
        "note": fit.note,
        "samples": dataset.samples.len(),
        "budget_exhausted": dataset.budget_exhausted,
        "warnings": dataset.warnings,
        "kb_updated": kb_updated,
    });
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&output).expect("JSON cannot fail"),
    )
}

fn cmd_reduce(args: ReduceArgs, file: &FileConfig) -> Result<(), CliError> {
    let state_path = need(args.state, file.state.clone(), "state")?;
    let cell_path = need(args.cell, file.cell.clone(), "cell")?;
    let compress = args.compress || file.compress.unwrap_or(false);
    let bandwidth = args.bandwidth.or(file.bandwidth);
    let latency = args.latency.or(file.latency);
    let codec_rate = args.codec_rate.or(file.codec_rate);
    let resolved = json!({
        "command": "reduce",
        "state": state_path.display().to_string(),
        "cell": cell_path.display().to_string(),
        "compress": compress,
        "bandwidth": bandwidth,
        "latency": latency,
        "codec_rate": codec_rate,
    });

    let state = NotebookState::from_json(&read_input(&state_path, "state")?)
        .map_err(|e| CliError::Input(format!("statered: {e}")))?;
    let cell_src = read_input(&cell_path, "cell")?;
    let ast = parse_cell(&cell_src).map_err(|e| CliError::Input(format!("cellparse: {e}")))?;
    let usage = extract_usage(&ast);
    let closure = needed_closure(&state, &usage);
    let mut payload =
        reduce_and_serialize(&state, &closure.needed, Direction::LocalToRemote, compress)
            .map_err(|e| CliError::Input(format!("statered: {e}")))?;
    payload.missing_names = closure.missing_names.clone();

    let full_bytes = state.total_bytes();
    let reduced_bytes = payload.total_bytes;
    let ratio = if reduced_bytes > 0 {
        Some(full_bytes as f64 / reduced_bytes as f64)
    } else {
        None
    };
    let transfer = match (bandwidth, latency) {
        (Some(bw), Some(lat)) => {
            let ms = migration_time(&payload, bw, lat, codec_rate)
                .map_err(|e| CliError::Config(format!("statered: {e}")))?;
            Some(ms)
        }
        _ => None,
    };

    let output = json!({
        "config_digest": config_digest(&resolved),
        "manifest": payload,
        "full_bytes": full_bytes,
        "reduced_bytes": reduced_bytes,
        "wire_bytes": payload.wire_bytes(),
        "reduction_ratio": ratio,
        "transfer_ms": transfer,
    });
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&output).expect("JSON cannot fail"),
    )
}

fn cmd_parse(args: ParseArgs, file: &FileConfig) -> Result<(), CliError> {
    let cell_path = need(args.cell, file.cell.clone(), "cell")?;
    let resolved = json!({
        "command": "parse",
        "cell": cell_path.display().to_string(),
        "dump_ast": args.dump_ast,
    });

    let source = read_input(&cell_path, "cell")?;
    let ast = parse_cell(&source).map_err(|e| CliError::Input(format!("cellparse: {e}")))?;
    let usage = extract_usage(&ast);

    let mut output = json!({
        "config_digest": config_digest(&resolved),
        "statements": ast.statements.len(),
        "usage": usage,
    });
    if args.dump_ast {
        output["ast"] = serde_json::to_value(&ast).expect("AST serialization cannot fail");
    }
    emit(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&output).expect("JSON cannot fail"),
    )
}
