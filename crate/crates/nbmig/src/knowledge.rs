//! Knowledge-aware migration thresholds.
//!
//! Some cells carry their cost in a parameter (training epochs being the
//! canonical case). For those, a fixed speedup model is worse than a
//! per-parameter break-even threshold: probe a few small parameter values
//! in both environments, fit a line per environment, intersect, and store
//! floor of the intersection in a knowledge base. The decision rule is
//! then "migrate when the value is strictly greater than the threshold".
//! Entries start from an expert-seeded guess and are refined in the
//! background as cells of interest change.
//!
//! Real executions are replaced by a pluggable [`TimingOracle`]; remote
//! measurements include the migration cost (it shows up as the remote
//! line's intercept).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::mpsc::Receiver;
use std::sync::RwLock;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cellparse::{parse_cell, Expr, Stmt, SyntaxError};

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("no stable probes: {0}")]
    EmptyDataset(String),
    #[error("need at least 2 distinct stable parameter values for the {0:?} environment")]
    InsufficientData(Environment),
    #[error("local and remote models have the same slope; intersection undefined")]
    ParallelLines,
    #[error("invalid probe budget: {0}")]
    InvalidBudget(String),
    #[error("malformed knowledge base: {0}")]
    MalformedKb(String),
    #[error("threshold {threshold} outside valid range [{lo}, {hi}]")]
    ThresholdOutOfRange { threshold: i64, lo: i64, hi: i64 },
    #[error("no knowledge-base entry for parameter {0:?}")]
    UnknownParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Local,
    Remote,
}

// ---------------------------------------------------------------------------
// Timing oracles

/// One measured execution. Remote measurements include migration time.
pub trait TimingOracle {
    fn measure(&mut self, environment: Environment, param_value: i64) -> f64;
}

/// Noiseless affine timings: `slope * value + intercept` per environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineOracle {
    pub local_slope: f64,
    pub local_intercept: f64,
    pub remote_slope: f64,
    pub remote_intercept: f64,
}

impl TimingOracle for AffineOracle {
    fn measure(&mut self, environment: Environment, param_value: i64) -> f64 {
        let v = param_value as f64;
        match environment {
            Environment::Local => self.local_slope * v + self.local_intercept,
            Environment::Remote => self.remote_slope * v + self.remote_intercept,
        }
    }
}

/// Affine timings with seeded multiplicative jitter, uniform in
/// `[1 - rel_jitter, 1 + rel_jitter]`.
#[derive(Debug, Clone)]
pub struct JitterOracle {
    pub base: AffineOracle,
    pub rel_jitter: f64,
    rng: ChaCha8Rng,
}

impl JitterOracle {
    pub fn new(base: AffineOracle, rel_jitter: f64, seed: u64) -> Self {
        JitterOracle {
            base,
            rel_jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl TimingOracle for JitterOracle {
    fn measure(&mut self, environment: Environment, param_value: i64) -> f64 {
        let noiseless = self.base.measure(environment, param_value);
        let factor = 1.0 + self.rng.gen_range(-self.rel_jitter..=self.rel_jitter);
        noiseless * factor
    }
}

/// Replays recorded timings in order; when a series runs out its last
/// value repeats, so repetition loops terminate.
#[derive(Debug, Clone, Default)]
pub struct RecordedOracle {
    series: BTreeMap<(Environment, i64), Vec<f64>>,
    cursors: BTreeMap<(Environment, i64), usize>,
}

impl RecordedOracle {
    pub fn new(samples: impl IntoIterator<Item = (Environment, i64, f64)>) -> Self {
        let mut series: BTreeMap<(Environment, i64), Vec<f64>> = BTreeMap::new();
        for (env, value, time) in samples {
            series.entry((env, value)).or_default().push(time);
        }
        RecordedOracle {
            series,
            cursors: BTreeMap::new(),
        }
    }

    pub fn has_probe(&self, environment: Environment, param_value: i64) -> bool {
        self.series.contains_key(&(environment, param_value))
    }
}

impl TimingOracle for RecordedOracle {
    fn measure(&mut self, environment: Environment, param_value: i64) -> f64 {
        let key = (environment, param_value);
        let Some(series) = self.series.get(&key) else {
            return f64::INFINITY; // unknown probe can never finish
        };
        let cursor = self.cursors.entry(key).or_insert(0);
        let value = series[(*cursor).min(series.len() - 1)];
        *cursor += 1;
        value
    }
}

// ---------------------------------------------------------------------------
// Datasets

/// Aggregated measurements for one (parameter value, environment) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSample {
    pub param_value: i64,
    pub environment: Environment,
    /// Median of the repetitions, in milliseconds.
    pub total_time: f64,
    pub repetitions: u32,
    pub stdev: f64,
    /// Stability rule: at least 2 repetitions with stdev within 10% of
    /// the median. Unstable samples stay in the dataset but are flagged
    /// and excluded from fitting.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TimingDataset {
    pub samples: Vec<TimingSample>,
    pub warnings: Vec<String>,
    /// True when any probe was dropped because it could not finish
    /// within the waiting budget.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeBudget {
    /// One-way migration cost in ms. Informational for reporting, and a
    /// consistency bound: remote measurements include it, so a max_wait
    /// below it could never admit any remote probe.
    pub migration_time_ms: f64,
    /// A single measurement above this is dropped (with a warning).
    pub max_wait_ms: f64,
    /// Repetition cap per probe when the stability rule will not settle.
    pub max_repetitions: u32,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        ProbeBudget {
            migration_time_ms: 120_000.0,
            max_wait_ms: f64::INFINITY,
            max_repetitions: 5,
        }
    }
}

impl ProbeBudget {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.max_wait_ms < self.migration_time_ms {
            return Err(KnowledgeError::InvalidBudget(format!(
                "max_wait {} ms is below the migration time {} ms; no remote probe can finish",
                self.max_wait_ms, self.migration_time_ms
            )));
        }
        if self.max_repetitions < 2 {
            return Err(KnowledgeError::InvalidBudget(
                "at least 2 repetitions are required by the stability rule".to_string(),
            ));
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Sample standard deviation (n-1 denominator).
fn stdev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Probe both environments and aggregate per the stability rule.
///
/// Probes run in ascending order; because times grow with the parameter,
/// dropping over-budget measurements prunes the largest values first.
/// Returns [`KnowledgeError::EmptyDataset`] when either environment ends
/// with fewer than 2 stable distinct parameter values.
pub fn build_or_update_dataset(
    probes: &[i64],
    oracle: &mut dyn TimingOracle,
    budget: &ProbeBudget,
) -> Result<TimingDataset, KnowledgeError> {
    budget.validate()?;
    let mut sorted_probes: Vec<i64> = probes.to_vec();
    sorted_probes.sort_unstable();
    sorted_probes.dedup();

    let mut dataset = TimingDataset::default();
    for environment in [Environment::Local, Environment::Remote] {
        for &value in &sorted_probes {
            let mut measurements = Vec::new();
            let mut dropped = false;
            let (med, sd, stable) = loop {
                let t = oracle.measure(environment, value);
                if t > budget.max_wait_ms {
                    dropped = true;
                    break (0.0, 0.0, false);
                }
                measurements.push(t);
                if measurements.len() >= 2 {
                    let mut sorted = measurements.clone();
                    sorted.sort_by(f64::total_cmp);
                    let med = median(&sorted);
                    let sd = stdev(&measurements);
                    if sd <= 0.10 * med {
                        break (med, sd, true);
                    }
                    if measurements.len() as u32 >= budget.max_repetitions {
                        break (med, sd, false);
                    }
                }
            };
            if dropped {
                dataset.warnings.push(format!(
                    "probe {value} dropped for {environment:?}: exceeds max_wait {} ms",
                    budget.max_wait_ms
                ));
                dataset.budget_exhausted = true;
                continue;
            }
            if !stable {
                dataset.warnings.push(format!(
                    "probe {value} unstable for {environment:?} after {} repetitions",
                    measurements.len()
                ));
            }
            dataset.samples.push(TimingSample {
                param_value: value,
                environment,
                total_time: med,
                repetitions: measurements.len() as u32,
                stdev: sd,
                stable,
            });
        }
    }

    for environment in [Environment::Local, Environment::Remote] {
        let distinct: BTreeSet<i64> = dataset
            .samples
            .iter()
            .filter(|s| s.environment == environment && s.stable)
            .map(|s| s.param_value)
            .collect();
        if distinct.len() < 2 {
            return Err(KnowledgeError::EmptyDataset(format!(
                "{} stable parameter values for {environment:?}, need 2",
                distinct.len()
            )));
        }
    }
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearModel {
    /// Milliseconds per parameter unit.
    pub slope: f64,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, value: f64) -> f64 {
        self.slope * value + self.intercept
    }
}

fn ols(points: &[(f64, f64)]) -> LinearModel {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    LinearModel {
        slope,
        intercept: mean_y - slope * mean_x,
    }
}

/// Ordinary least squares per environment over the stable samples.
pub fn fit_models(dataset: &TimingDataset) -> Result<(LinearModel, LinearModel), KnowledgeError> {
    let mut fitted = Vec::with_capacity(2);
    for environment in [Environment::Local, Environment::Remote] {
        let points: Vec<(f64, f64)> = dataset
            .samples
            .iter()
            .filter(|s| s.environment == environment && s.stable)
            .map(|s| (s.param_value as f64, s.total_time))
            .collect();
        let distinct: BTreeSet<i64> = points.iter().map(|(x, _)| *x as i64).collect();
        if distinct.len() < 2 {
            return Err(KnowledgeError::InsufficientData(environment));
        }
        fitted.push(ols(&points));
    }
    Ok((fitted[0], fitted[1]))
}

/// Where the two fitted lines cross, reduced to an integer decision rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdFit {
    /// Continuous intersection of the two lines.
    pub x_star: f64,
    /// floor(x_star) clamped into the valid range.
    pub threshold: i64,
    /// True when the local line grows faster, so values above the
    /// threshold favor the remote side. False means migrating never pays
    /// off for larger values; the decision rule is then "never migrate".
    pub migrate_above: bool,
    /// Set when clamping or a degenerate geometry forced the result.
    pub note: Option<String>,
}

pub fn intersect(
    m_local: &LinearModel,
    m_remote: &LinearModel,
    valid_range: (i64, i64),
) -> Result<ThresholdFit, KnowledgeError> {
    let (lo, hi) = valid_range;
    if m_local.slope == m_remote.slope {
        return Err(KnowledgeError::ParallelLines);
    }
    let x_star = (m_remote.intercept - m_local.intercept) / (m_local.slope - m_remote.slope);
    let migrate_above = m_local.slope > m_remote.slope;
    let raw = x_star.floor() as i64;
    let threshold = raw.clamp(lo, hi);
    let mut note = None;
    if !migrate_above {
        note = Some(
            "remote line grows faster than local; migration never pays off above the intersection"
                .to_string(),
        );
    } else if raw < lo {
        note = Some(format!(
            "intersection {x_star} below range minimum {lo}; remote is better everywhere in range"
        ));
    } else if raw > hi {
        note = Some(format!(
            "intersection {x_star} above range maximum {hi}; remote never wins inside the range"
        ));
    }
    Ok(ThresholdFit {
        x_star,
        threshold,
        migrate_above,
        note,
    })
}

// ---------------------------------------------------------------------------
// Cell knowledge extraction

pub const DEFAULT_METHODS_OF_INTEREST: &[&str] = &["fit"];

/// Where a piece of knowledge came from, as a flat record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOrigin {
    pub notebook_id: String,
    pub cell_id: String,
    pub timestamp_ms: i64,
}

/// Parameters readable off one cell's source.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CellKnowledge {
    /// Integer-literal keyword arguments on calls of interest.
    pub parameters: BTreeMap<String, i64>,
    /// Keywords on calls of interest whose value is not an integer
    /// literal; reported, never guessed.
    pub unextractable: BTreeSet<String>,
    pub is_cell_of_interest: bool,
    pub origin: Option<CellOrigin>,
}

/// Extract parameters from calls to registered methods of interest.
/// A cell is "of interest" when such a call passes at least one keyword.
pub fn notebook_to_kb(cell_source: &str) -> Result<CellKnowledge, SyntaxError> {
    notebook_to_kb_with(cell_source, DEFAULT_METHODS_OF_INTEREST)
}

pub fn notebook_to_kb_with(
    cell_source: &str,
    methods_of_interest: &[&str],
) -> Result<CellKnowledge, SyntaxError> {
    let ast = parse_cell(cell_source)?;
    let mut knowledge = CellKnowledge::default();
    let mut stack: Vec<&Stmt> = ast.statements.iter().collect();
    while let Some(stmt) = stack.pop() {
        match stmt {
            Stmt::Assign { value, .. } | Stmt::ExprStatement { value, .. } => {
                scan_expr(value, methods_of_interest, &mut knowledge);
            }
            Stmt::Return { value: Some(v), .. } => scan_expr(v, methods_of_interest, &mut knowledge),
            Stmt::Return { value: None, .. } | Stmt::Import { .. } => {}
            Stmt::If { test, body, orelse, .. } => {
                scan_expr(test, methods_of_interest, &mut knowledge);
                stack.extend(body.iter());
                stack.extend(orelse.iter());
            }
            Stmt::For { iter, body, .. } => {
                scan_expr(iter, methods_of_interest, &mut knowledge);
                stack.extend(body.iter());
            }
            // A definition body does not run when the cell does.
            Stmt::FunctionDef(_) => {}
        }
    }
    Ok(knowledge)
}

fn scan_expr(expr: &Expr, methods: &[&str], out: &mut CellKnowledge) {
    match expr {
        Expr::Call { func, args, kwargs, .. } => {
            scan_expr(func, methods, out);
            for a in args {
                scan_expr(a, methods, out);
            }
            for kw in kwargs {
                scan_expr(&kw.value, methods, out);
            }
            let of_interest = func
                .dotted_path()
                .and_then(|p| p.rsplit('.').next().map(str::to_string))
                .map(|last| methods.contains(&last.as_str()))
                .unwrap_or(false);
            if of_interest && !kwargs.is_empty() {
                out.is_cell_of_interest = true;
                for kw in kwargs {
                    match &kw.value {
                        Expr::Literal { value: crate::cellparse::Literal::Int(v), .. } => {
                            out.parameters.insert(kw.name.clone(), *v);
                        }
                        _ => {
                            out.unextractable.insert(kw.name.clone());
                        }
                    }
                }
            }
        }
        Expr::BinOp { left, right, .. } | Expr::Compare { left, right, .. } => {
            scan_expr(left, methods, out);
            scan_expr(right, methods, out);
        }
        Expr::ListDisplay { elements, .. } => {
            for e in elements {
                scan_expr(e, methods, out);
            }
        }
        Expr::Attribute { value, .. } => scan_expr(value, methods, out),
        Expr::Name(_) | Expr::Literal { .. } => {}
    }
}

// ---------------------------------------------------------------------------
// Knowledge base

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceSource {
    Expert,
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub timestamp: i64,
    pub source: ProvenanceSource,
    pub threshold: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbEntry {
    pub parameter_name: String,
    /// Inclusive.
    pub valid_range: (i64, i64),
    /// Migrate when value > threshold (and migrate_above holds).
    pub threshold: i64,
    pub migrate_above: bool,
    /// Append-only; the expert seed is always the first record.
    pub provenance: Vec<ProvenanceRecord>,
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    range: (i64, i64),
    threshold: i64,
    #[serde(default = "default_true")]
    migrate_above: bool,
    provenance: Vec<ProvenanceRecord>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub entries: BTreeMap<String, KbEntry>,
}

impl KnowledgeBase {
    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let wire: BTreeMap<String, WireEntry> = serde_json::from_str(text)
            .map_err(|e| KnowledgeError::MalformedKb(e.to_string()))?;
        let mut kb = KnowledgeBase::default();
        for (name, w) in wire {
            let entry = KbEntry {
                parameter_name: name.clone(),
                valid_range: w.range,
                threshold: w.threshold,
                migrate_above: w.migrate_above,
                provenance: w.provenance,
            };
            entry.check()?;
            kb.entries.insert(name, entry);
        }
        Ok(kb)
    }

    pub fn to_json(&self) -> String {
        let wire: BTreeMap<&String, WireEntry> = self
            .entries
            .iter()
            .map(|(name, e)| {
                (
                    name,
                    WireEntry {
                        range: e.valid_range,
                        threshold: e.threshold,
                        migrate_above: e.migrate_above,
                        provenance: e.provenance.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&wire).expect("KB serialization cannot fail")
    }

    /// Create an entry from an expert estimate; first provenance record.
    pub fn seed_expert(
        &mut self,
        parameter: &str,
        valid_range: (i64, i64),
        threshold: i64,
        timestamp: i64,
    ) -> Result<(), KnowledgeError> {
        let entry = KbEntry {
            parameter_name: parameter.to_string(),
            valid_range,
            threshold,
            migrate_above: true,
            provenance: vec![ProvenanceRecord {
                timestamp,
                source: ProvenanceSource::Expert,
                threshold,
            }],
        };
        entry.check()?;
        self.entries.insert(parameter.to_string(), entry);
        Ok(())
    }

    /// Replace the threshold from a fit, appending provenance.
    pub fn record_fit(
        &mut self,
        parameter: &str,
        fit: &ThresholdFit,
        timestamp: i64,
    ) -> Result<(), KnowledgeError> {
        let entry = self
            .entries
            .get_mut(parameter)
            .ok_or_else(|| KnowledgeError::UnknownParameter(parameter.to_string()))?;
        entry.threshold = fit.threshold.clamp(entry.valid_range.0, entry.valid_range.1);
        entry.migrate_above = fit.migrate_above;
        entry.provenance.push(ProvenanceRecord {
            timestamp,
            source: ProvenanceSource::Fitted,
            threshold: entry.threshold,
        });
        Ok(())
    }
}

impl KbEntry {
    fn check(&self) -> Result<(), KnowledgeError> {
        let (lo, hi) = self.valid_range;
        if self.threshold < lo || self.threshold > hi {
            return Err(KnowledgeError::ThresholdOutOfRange {
                threshold: self.threshold,
                lo,
                hi,
            });
        }
        if self.provenance.is_empty() {
            return Err(KnowledgeError::MalformedKb(format!(
                "entry {:?} has no provenance",
                self.parameter_name
            )));
        }
        Ok(())
    }
}

/// Serialized-writer store. Readers see either the old or the new entry,
/// never a partial one.
#[derive(Debug, Default)]
pub struct KbStore {
    inner: RwLock<KnowledgeBase>,
}

impl KbStore {
    pub fn new(kb: KnowledgeBase) -> Self {
        KbStore {
            inner: RwLock::new(kb),
        }
    }

    pub fn snapshot(&self) -> KnowledgeBase {
        self.inner.read().expect("KB lock poisoned").clone()
    }

    pub fn update<T>(&self, f: impl FnOnce(&mut KnowledgeBase) -> T) -> T {
        let mut kb = self.inner.write().expect("KB lock poisoned");
        f(&mut kb)
    }
}

/// Migrate iff a known parameter strictly exceeds its threshold.
/// The explanation cites parameter, value, threshold, and provenance.
pub fn should_migrate_knowledge(
    cell: &CellKnowledge,
    kb: &KnowledgeBase,
) -> Result<(bool, String), KnowledgeError> {
    let known: Vec<(&String, &i64, &KbEntry)> = cell
        .parameters
        .iter()
        .filter_map(|(name, value)| kb.entries.get(name).map(|e| (name, value, e)))
        .collect();
    if known.is_empty() {
        let wanted = cell
            .parameters
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        return Err(KnowledgeError::UnknownParameter(wanted));
    }
    for (name, value, entry) in &known {
        if entry.migrate_above && **value > entry.threshold {
            let last = entry.provenance.last().expect("provenance nonempty");
            return Ok((
                true,
                format!(
                    "migrate: {name}={value} > threshold {} ({:?}-set, {} provenance records)",
                    entry.threshold,
                    last.source,
                    entry.provenance.len()
                ),
            ));
        }
    }
    let (name, value, entry) = known[0];
    let last = entry.provenance.last().expect("provenance nonempty");
    let reason = if entry.migrate_above {
        format!(
            "stay local: {name}={value} <= threshold {} ({:?}-set, {} provenance records)",
            entry.threshold,
            last.source,
            entry.provenance.len()
        )
    } else {
        format!(
            "stay local: migration never pays off for {name} (threshold {}, {:?}-set)",
            entry.threshold, last.source
        )
    };
    Ok((false, reason))
}

// ---------------------------------------------------------------------------
// Background update loop

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellEvent {
    pub notebook_id: String,
    pub cell_id: String,
    pub source: String,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbUpdate {
    pub parameter: String,
    pub old_threshold: i64,
    pub new_threshold: i64,
    pub x_star: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoopReport {
    pub updates: Vec<KbUpdate>,
    pub warnings: Vec<String>,
}

/// Hash of the cell's parsed shape: whitespace and comment edits do not
/// change it, so they do not trigger rebuilds. Source positions are
/// stripped before hashing for the same reason.
fn normalized_source_hash(source: &str) -> Option<[u8; 32]> {
    let ast = parse_cell(source).ok()?;
    let mut value = serde_json::to_value(&ast).expect("AST serialization cannot fail");
    strip_spans(&mut value);
    let canonical = serde_json::to_vec(&value).expect("JSON serialization cannot fail");
    Some(Sha256::digest(canonical).into())
}

fn strip_spans(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("span");
            for v in map.values_mut() {
                strip_spans(v);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                strip_spans(v);
            }
        }
        _ => {}
    }
}

/// Drain cell events, rebuilding datasets and refitting thresholds for
/// known parameters of cells of interest. Per-cell failures are contained
/// as warnings; the loop never aborts on one bad cell. Runs until the
/// sending side closes the channel.
pub fn kb_update_loop(
    events: Receiver<CellEvent>,
    store: &KbStore,
    oracle: &mut dyn TimingOracle,
    probes: &[i64],
    budget: &ProbeBudget,
) -> LoopReport {
    let mut report = LoopReport::default();
    let mut seen: HashMap<(String, String), [u8; 32]> = HashMap::new();
    while let Ok(event) = events.recv() {
        let Some(hash) = normalized_source_hash(&event.source) else {
            report.warnings.push(format!(
                "cell {}/{} skipped: source does not parse",
                event.notebook_id, event.cell_id
            ));
            continue;
        };
        let key = (event.notebook_id.clone(), event.cell_id.clone());
        if seen.get(&key) == Some(&hash) {
            continue; // unchanged content: no rebuild
        }
        seen.insert(key, hash);

        let knowledge = match notebook_to_kb(&event.source) {
            Ok(k) => k,
            Err(e) => {
                report.warnings.push(format!(
                    "cell {}/{} skipped: {e}",
                    event.notebook_id, event.cell_id
                ));
                continue;
            }
        };
        if !knowledge.is_cell_of_interest {
            continue;
        }
        for parameter in knowledge.parameters.keys() {
            let Some(entry) = store.snapshot().entries.get(parameter).cloned() else {
                continue; // not a known parameter; nothing to refit
            };
            let result = build_or_update_dataset(probes, oracle, budget)
                .and_then(|dataset| fit_models(&dataset))
                .and_then(|(local, remote)| intersect(&local, &remote, entry.valid_range));
            match result {
                Ok(fit) => {
                    let old = entry.threshold;
                    let applied = store.update(|kb| {
                        kb.record_fit(parameter, &fit, event.timestamp_ms)
                    });
                    match applied {
                        Ok(()) => report.updates.push(KbUpdate {
                            parameter: parameter.clone(),
                            old_threshold: old,
                            new_threshold: fit.threshold.clamp(entry.valid_range.0, entry.valid_range.1),
                            x_star: fit.x_star,
                        }),
                        Err(e) => report.warnings.push(format!("KB write failed: {e}")),
                    }
                }
                Err(e) => {
                    report.warnings.push(format!(
                        "refit failed for {parameter} on cell {}/{}: {e}",
                        event.notebook_id, event.cell_id
                    ));
                }
            }
        }
    }
    report
}
