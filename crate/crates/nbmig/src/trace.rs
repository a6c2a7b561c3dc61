//! Telemetry data model and trace ingestion.
//!
//! Traces are newline-delimited JSON files, one telemetry message per line,
//! with the wire field names `datetime` (ISO-8601), `cell_id`,
//! `notebook_id`, `cell_ids`, `session_id`, `path`, and `type`. Ingestion
//! sorts messages by timestamp, groups them into sessions, and pairs
//! `cell-execution-started` / `cell-execution-completed` messages into
//! [`ExecutionEvent`]s whose durations are the started→completed deltas
//! (queueing delay between request and start is deliberately excluded).

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, SecondsFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six telemetry message types emitted by the notebook front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgType {
    SessionStarted,
    SessionDisposed,
    CellExecutionRequested,
    CellExecutionStarted,
    CellExecutionCompleted,
    CellModified,
}

impl MsgType {
    pub const ALL: [MsgType; 6] = [
        MsgType::SessionStarted,
        MsgType::SessionDisposed,
        MsgType::CellExecutionRequested,
        MsgType::CellExecutionStarted,
        MsgType::CellExecutionCompleted,
        MsgType::CellModified,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MsgType::SessionStarted => "session-started",
            MsgType::SessionDisposed => "session-disposed",
            MsgType::CellExecutionRequested => "cell-execution-requested",
            MsgType::CellExecutionStarted => "cell-execution-started",
            MsgType::CellExecutionCompleted => "cell-execution-completed",
            MsgType::CellModified => "cell-modified",
        }
    }

    /// True for the four message types that refer to a specific cell.
    pub fn is_cell_scoped(&self) -> bool {
        matches!(
            self,
            MsgType::CellExecutionRequested
                | MsgType::CellExecutionStarted
                | MsgType::CellExecutionCompleted
                | MsgType::CellModified
        )
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsgType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or(())
    }
}

/// One user or kernel event captured by the front end.
///
/// Timestamps are integer milliseconds since the Unix epoch; sub-millisecond
/// precision in the input is truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryMessage {
    pub timestamp_ms: i64,
    pub cell_id: String,
    pub notebook_id: String,
    /// Ordered list of cell ids currently in the notebook.
    pub cell_ids: Vec<String>,
    pub session_id: String,
    pub notebook_path: String,
    pub msg_type: MsgType,
}

/// Wire representation matching the trace file schema exactly.
#[derive(Debug, Serialize, Deserialize)]
struct WireMessage {
    datetime: String,
    cell_id: String,
    notebook_id: String,
    cell_ids: Vec<String>,
    session_id: String,
    path: String,
    #[serde(rename = "type")]
    msg_type: String,
}

fn parse_datetime_ms(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp_millis());
    }
    // Tolerate naive timestamps (no offset); interpreted as UTC.
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .map(|n| n.and_utc().timestamp_millis())
}

fn format_datetime_ms(ms: i64) -> String {
    DateTime::from_timestamp_millis(ms)
        .expect("timestamp out of datetime range")
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl TelemetryMessage {
    fn from_wire(wire: WireMessage, line: usize) -> Result<Self, TraceError> {
        let msg_type = MsgType::from_str(&wire.msg_type).map_err(|_| {
            TraceError::UnknownMessageType {
                line,
                found: wire.msg_type.clone(),
            }
        })?;
        let timestamp_ms =
            parse_datetime_ms(&wire.datetime).ok_or_else(|| TraceError::MalformedRecord {
                line,
                reason: format!("invalid datetime {:?}", wire.datetime),
            })?;
        if msg_type.is_cell_scoped() && !wire.cell_ids.contains(&wire.cell_id) {
            return Err(TraceError::MalformedRecord {
                line,
                reason: format!(
                    "cell_id {:?} not present in cell_ids for {} message",
                    wire.cell_id, msg_type
                ),
            });
        }
        Ok(TelemetryMessage {
            timestamp_ms,
            cell_id: wire.cell_id,
            notebook_id: wire.notebook_id,
            cell_ids: wire.cell_ids,
            session_id: wire.session_id,
            notebook_path: wire.path,
            msg_type,
        })
    }

    fn to_wire(&self) -> WireMessage {
        WireMessage {
            datetime: format_datetime_ms(self.timestamp_ms),
            cell_id: self.cell_id.clone(),
            notebook_id: self.notebook_id.clone(),
            cell_ids: self.cell_ids.clone(),
            session_id: self.session_id.clone(),
            path: self.notebook_path.clone(),
            msg_type: self.msg_type.as_str().to_string(),
        }
    }
}

/// One paired cell execution inside a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionEvent {
    /// Position in the whole interaction history across the ingestion run
    /// (the notebook execution index).
    pub index: u64,
    /// Position of the cell in the notebook when execution started.
    pub cell_order: u32,
    pub cell_id: String,
    /// Execution time in milliseconds (completed minus started).
    pub duration_ms: i64,
}

/// One session-started…session-disposed span with its paired events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub notebook_id: String,
    /// True when the session had no `session-started` message and was opened
    /// implicitly at the first message carrying its session id.
    pub implicit_start: bool,
    pub events: Vec<ExecutionEvent>,
    /// Every message observed for this session, execution-related or not.
    pub raw: Vec<TelemetryMessage>,
}

/// A `cell-execution-completed` that had no matching started message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrphanEvent {
    pub session_id: String,
    pub cell_id: String,
    pub timestamp_ms: i64,
    pub reason: String,
}

/// A malformed line skipped during tolerant parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

/// Result of parsing a trace byte stream.
#[derive(Debug, Clone, Default)]
pub struct TraceParse {
    pub messages: Vec<TelemetryMessage>,
    pub skipped: Vec<SkippedRecord>,
}

/// Result of grouping messages into sessions.
#[derive(Debug, Clone, Default)]
pub struct SessionSet {
    pub sessions: Vec<Session>,
    pub orphans: Vec<OrphanEvent>,
}

impl SessionSet {
    /// All execution events across sessions, ordered by global index.
    pub fn all_events(&self) -> Vec<ExecutionEvent> {
        let mut events: Vec<ExecutionEvent> = self
            .sessions
            .iter()
            .flat_map(|s| s.events.iter().cloned())
            .collect();
        events.sort_by_key(|e| e.index);
        events
    }

    /// The chronological cell-order history feeding the context detector.
    pub fn history(&self) -> Vec<u32> {
        self.all_events().iter().map(|e| e.cell_order).collect()
    }

    pub fn event_count(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }
}

/// Ingestion summary; serialized as the machine-readable report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub messages: usize,
    pub sessions: usize,
    pub events: usize,
    pub skipped: usize,
    pub orphans: usize,
    pub implicit_starts: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown message type {found:?}")]
    UnknownMessageType { line: usize, found: String },
    #[error("i/o error reading trace: {0}")]
    Io(String),
}

/// Parse a newline-delimited JSON trace.
///
/// In tolerant mode (`strict = false`) malformed lines are collected into
/// [`TraceParse::skipped`]; in strict mode the first bad line aborts the
/// parse. Unknown message types are errors in both modes (skipped or fatal
/// respectively). Blank lines are ignored.
pub fn parse_trace<R: BufRead>(reader: R, strict: bool) -> Result<TraceParse, TraceError> {
    let mut parse = TraceParse::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let result = serde_json::from_str::<WireMessage>(trimmed)
            .map_err(|e| TraceError::MalformedRecord {
                line: line_no,
                reason: format!("invalid JSON: {e}"),
            })
            .and_then(|wire| TelemetryMessage::from_wire(wire, line_no));
        match result {
            Ok(msg) => parse.messages.push(msg),
            Err(err) if strict => return Err(err),
            Err(err) => parse.skipped.push(SkippedRecord {
                line: line_no,
                reason: err.to_string(),
            }),
        }
    }
    Ok(parse)
}

/// Convenience wrapper over [`parse_trace`] for in-memory strings.
pub fn parse_trace_str(s: &str, strict: bool) -> Result<TraceParse, TraceError> {
    parse_trace(s.as_bytes(), strict)
}

/// Serialize messages back to the newline-delimited wire format.
pub fn serialize_trace(msgs: &[TelemetryMessage]) -> String {
    let mut out = String::new();
    for msg in msgs {
        out.push_str(&serde_json::to_string(&msg.to_wire()).expect("wire serialization"));
        out.push('\n');
    }
    out
}

struct SessionBuilder {
    session_id: String,
    notebook_id: String,
    implicit_start: bool,
    raw: Vec<TelemetryMessage>,
    /// cell_id → (started timestamp, cell order at start).
    pending: BTreeMap<String, (i64, u32)>,
    events: Vec<ExecutionEvent>,
}

impl SessionBuilder {
    fn new(msg: &TelemetryMessage, implicit_start: bool) -> Self {
        SessionBuilder {
            session_id: msg.session_id.clone(),
            notebook_id: msg.notebook_id.clone(),
            implicit_start,
            raw: Vec::new(),
            pending: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    fn finish(self) -> Session {
        Session {
            session_id: self.session_id,
            notebook_id: self.notebook_id,
            implicit_start: self.implicit_start,
            events: self.events,
            raw: self.raw,
        }
    }
}

/// Group messages into sessions and pair executions into events.
///
/// Messages are sorted by timestamp first (stable, so input order breaks
/// ties). One [`Session`] is produced per started…disposed span; a missing
/// `session-disposed` closes the session at the last message, and a missing
/// `session-started` opens one implicitly (flagged). Completed messages with
/// no matching started are recorded as orphans and dropped.
pub fn build_sessions(msgs: &[TelemetryMessage]) -> SessionSet {
    let mut sorted: Vec<&TelemetryMessage> = msgs.iter().collect();
    sorted.sort_by_key(|m| m.timestamp_ms);

    // Builders in opening order; `open` maps a session id to the builder
    // currently accepting its messages.
    let mut builders: Vec<SessionBuilder> = Vec::new();
    let mut open: BTreeMap<String, usize> = BTreeMap::new();
    let mut orphans: Vec<OrphanEvent> = Vec::new();
    let mut next_index: u64 = 0;

    for msg in sorted {
        let slot = match (open.get(&msg.session_id), msg.msg_type) {
            // A fresh session-started always begins a new span.
            (_, MsgType::SessionStarted) => {
                open.remove(&msg.session_id);
                builders.push(SessionBuilder::new(msg, false));
                let idx = builders.len() - 1;
                open.insert(msg.session_id.clone(), idx);
                idx
            }
            (Some(&idx), _) => idx,
            (None, _) => {
                // Tolerant mode: open implicitly at the first message
                // carrying a new session id.
                builders.push(SessionBuilder::new(msg, true));
                let idx = builders.len() - 1;
                open.insert(msg.session_id.clone(), idx);
                idx
            }
        };
        let builder = &mut builders[slot];
        builder.raw.push(msg.clone());

        match msg.msg_type {
            MsgType::CellExecutionStarted => {
                match msg.cell_ids.iter().position(|c| *c == msg.cell_id) {
                    Some(order) => {
                        builder
                            .pending
                            .insert(msg.cell_id.clone(), (msg.timestamp_ms, order as u32));
                    }
                    None => orphans.push(OrphanEvent {
                        session_id: msg.session_id.clone(),
                        cell_id: msg.cell_id.clone(),
                        timestamp_ms: msg.timestamp_ms,
                        reason: "started cell absent from cell_ids".to_string(),
                    }),
                }
            }
            MsgType::CellExecutionCompleted => match builder.pending.remove(&msg.cell_id) {
                Some((started_ms, cell_order)) => {
                    builder.events.push(ExecutionEvent {
                        index: next_index,
                        cell_order,
                        cell_id: msg.cell_id.clone(),
                        duration_ms: msg.timestamp_ms - started_ms,
                    });
                    next_index += 1;
                }
                None => orphans.push(OrphanEvent {
                    session_id: msg.session_id.clone(),
                    cell_id: msg.cell_id.clone(),
                    timestamp_ms: msg.timestamp_ms,
                    reason: "completed without a matching started".to_string(),
                }),
            },
            MsgType::SessionDisposed => {
                open.remove(&msg.session_id);
            }
            _ => {}
        }
    }

    SessionSet {
        sessions: builders.into_iter().map(SessionBuilder::finish).collect(),
        orphans,
    }
}

/// Fabricate a chronological event list from a plain cell-order history,
/// for synthetic traces. Recorded durations are zero; the simulator takes
/// execution times from its cost model, not from events.
pub fn synthetic_events(orders: &[u32]) -> Vec<ExecutionEvent> {
    orders
        .iter()
        .enumerate()
        .map(|(i, &order)| ExecutionEvent {
            index: i as u64,
            cell_order: order,
            cell_id: format!("cell-{order}"),
            duration_ms: 0,
        })
        .collect()
}

/// Assemble the ingestion report from a parse and its session build.
pub fn ingest_report(parse: &TraceParse, set: &SessionSet) -> IngestReport {
    IngestReport {
        messages: parse.messages.len(),
        sessions: set.sessions.len(),
        events: set.event_count(),
        skipped: parse.skipped.len(),
        orphans: set.orphans.len(),
        implicit_starts: set.sessions.iter().filter(|s| s.implicit_start).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BASE_MS: i64 = 1_700_000_000_000;

    fn msg(
        ts_offset: i64,
        session: &str,
        cell: &str,
        cells: &[&str],
        msg_type: MsgType,
    ) -> TelemetryMessage {
        TelemetryMessage {
            timestamp_ms: BASE_MS + ts_offset,
            cell_id: cell.to_string(),
            notebook_id: "nb1".to_string(),
            cell_ids: cells.iter().map(|c| c.to_string()).collect(),
            session_id: session.to_string(),
            notebook_path: "work/nb1.ipynb".to_string(),
            msg_type,
        }
    }

    fn line(ts: &str, cell: &str, cells: &str, session: &str, ty: &str) -> String {
        format!(
            r#"{{"datetime":"{ts}","cell_id":"{cell}","notebook_id":"nb1","cell_ids":{cells},"session_id":"{session}","path":"work/nb1.ipynb","type":"{ty}"}}"#
        )
    }

    #[test]
    fn parses_minimal_well_formed_record() {
        let input = line(
            "2024-01-05T10:00:00.000Z",
            "c1",
            r#"["c1","c2"]"#,
            "s1",
            "cell-execution-requested",
        );
        let parse = parse_trace_str(&input, false).unwrap();
        assert_eq!(parse.messages.len(), 1);
        assert_eq!(parse.skipped.len(), 0);
        let m = &parse.messages[0];
        assert_eq!(m.msg_type, MsgType::CellExecutionRequested);
        assert_eq!(m.cell_id, "c1");
        assert_eq!(m.cell_ids, vec!["c1".to_string(), "c2".to_string()]);
    }

    #[test]
    fn empty_stream_is_empty_parse() {
        let parse = parse_trace_str("", false).unwrap();
        assert!(parse.messages.is_empty());
        assert!(parse.skipped.is_empty());
    }

    #[test]
    fn unknown_message_type_is_fatal_in_strict_mode() {
        let mut input = String::new();
        for i in 0..3 {
            input.push_str(&line(
                &format!("2024-01-05T10:00:0{i}.000Z"),
                "c1",
                r#"["c1"]"#,
                "s1",
                "cell-modified",
            ));
            input.push('\n');
        }
        input.push_str(&line(
            "2024-01-05T10:00:03.000Z",
            "c1",
            r#"["c1"]"#,
            "s1",
            "cell-deleted",
        ));
        let err = parse_trace_str(&input, true).unwrap_err();
        assert_eq!(
            err,
            TraceError::UnknownMessageType {
                line: 4,
                found: "cell-deleted".to_string()
            }
        );
        // Tolerant mode collects the bad line instead.
        let parse = parse_trace_str(&input, false).unwrap();
        assert_eq!(parse.messages.len(), 3);
        assert_eq!(parse.skipped.len(), 1);
        assert_eq!(parse.skipped[0].line, 4);
    }

    #[test]
    fn cell_id_must_appear_in_cell_ids_for_cell_scoped_messages() {
        let input = line(
            "2024-01-05T10:00:00.000Z",
            "c9",
            r#"["c1","c2"]"#,
            "s1",
            "cell-execution-started",
        );
        let parse = parse_trace_str(&input, false).unwrap();
        assert_eq!(parse.messages.len(), 0);
        assert_eq!(parse.skipped.len(), 1);
        // Session-scoped messages are exempt.
        let input = line(
            "2024-01-05T10:00:00.000Z",
            "",
            r#"["c1"]"#,
            "s1",
            "session-started",
        );
        let parse = parse_trace_str(&input, true).unwrap();
        assert_eq!(parse.messages.len(), 1);
    }

    #[test]
    fn sub_millisecond_precision_is_truncated() {
        let input = line(
            "2024-01-05T10:00:00.123456Z",
            "c1",
            r#"["c1"]"#,
            "s1",
            "cell-modified",
        );
        let parse = parse_trace_str(&input, true).unwrap();
        assert_eq!(parse.messages[0].timestamp_ms % 1000, 123);
    }

    #[test]
    fn pairs_started_completed_into_duration() {
        let msgs = vec![
            msg(0, "s1", "", &["c1"], MsgType::SessionStarted),
            msg(50, "s1", "c1", &["c1"], MsgType::CellExecutionRequested),
            msg(100, "s1", "c1", &["c1"], MsgType::CellExecutionStarted),
            msg(350, "s1", "c1", &["c1"], MsgType::CellExecutionCompleted),
            msg(400, "s1", "", &["c1"], MsgType::SessionDisposed),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions.len(), 1);
        let session = &set.sessions[0];
        assert_eq!(session.events.len(), 1);
        assert_eq!(session.events[0].duration_ms, 250);
        assert_eq!(session.events[0].cell_order, 0);
        assert!(!session.implicit_start);
        assert_eq!(session.raw.len(), 5);
        assert!(set.orphans.is_empty());
    }

    #[test]
    fn empty_session_has_no_events() {
        let msgs = vec![
            msg(0, "s1", "", &[], MsgType::SessionStarted),
            msg(10, "s1", "", &[], MsgType::SessionDisposed),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions.len(), 1);
        assert!(set.sessions[0].events.is_empty());
    }

    #[test]
    fn interleaved_sessions_partition_events() {
        let msgs = vec![
            msg(0, "s1", "", &["a"], MsgType::SessionStarted),
            msg(5, "s2", "", &["x"], MsgType::SessionStarted),
            msg(10, "s1", "a", &["a"], MsgType::CellExecutionStarted),
            msg(15, "s2", "x", &["x"], MsgType::CellExecutionStarted),
            msg(20, "s1", "a", &["a"], MsgType::CellExecutionCompleted),
            msg(25, "s2", "x", &["x"], MsgType::CellExecutionCompleted),
            msg(30, "s1", "", &["a"], MsgType::SessionDisposed),
            msg(35, "s2", "", &["x"], MsgType::SessionDisposed),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions.len(), 2);
        // Oracle: partition events by grouping the input by session id.
        for session in &set.sessions {
            assert_eq!(session.events.len(), 1);
            let expected_cell = if session.session_id == "s1" { "a" } else { "x" };
            assert_eq!(session.events[0].cell_id, expected_cell);
        }
        // Global indices interleave in completion order.
        let all = set.all_events();
        assert_eq!(all[0].cell_id, "a");
        assert_eq!(all[1].cell_id, "x");
    }

    #[test]
    fn orphan_completed_is_recorded_and_dropped() {
        let msgs = vec![
            msg(0, "s1", "", &["c1"], MsgType::SessionStarted),
            msg(10, "s1", "c1", &["c1"], MsgType::CellExecutionCompleted),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions[0].events.len(), 0);
        assert_eq!(set.orphans.len(), 1);
        assert_eq!(set.orphans[0].cell_id, "c1");
    }

    #[test]
    fn missing_session_started_opens_implicitly_and_is_flagged() {
        let msgs = vec![
            msg(0, "s1", "c1", &["c1"], MsgType::CellExecutionStarted),
            msg(100, "s1", "c1", &["c1"], MsgType::CellExecutionCompleted),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions.len(), 1);
        assert!(set.sessions[0].implicit_start);
        assert_eq!(set.sessions[0].events.len(), 1);
        let report = ingest_report(&TraceParse::default(), &set);
        assert_eq!(report.implicit_starts, 1);
    }

    #[test]
    fn cell_modified_stays_in_raw_but_produces_no_event() {
        let msgs = vec![
            msg(0, "s1", "", &["c1"], MsgType::SessionStarted),
            msg(5, "s1", "c1", &["c1"], MsgType::CellModified),
            msg(10, "s1", "", &["c1"], MsgType::SessionDisposed),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions[0].events.len(), 0);
        assert_eq!(set.sessions[0].raw.len(), 3);
    }

    #[test]
    fn cell_order_is_position_in_cell_ids_at_start() {
        let msgs = vec![
            msg(0, "s1", "", &[], MsgType::SessionStarted),
            msg(10, "s1", "c2", &["c1", "c2", "c3"], MsgType::CellExecutionStarted),
            msg(90, "s1", "c2", &["c1", "c2", "c3"], MsgType::CellExecutionCompleted),
        ];
        let set = build_sessions(&msgs);
        assert_eq!(set.sessions[0].events[0].cell_order, 1);
    }

    #[test]
    fn report_is_deterministic_json() {
        let input = [
            line("2024-01-05T10:00:00Z", "", "[]", "s1", "session-started"),
            line(
                "2024-01-05T10:00:01Z",
                "c1",
                r#"["c1"]"#,
                "s1",
                "cell-execution-started",
            ),
            line(
                "2024-01-05T10:00:02Z",
                "c1",
                r#"["c1"]"#,
                "s1",
                "cell-execution-completed",
            ),
            "{bad json".to_string(),
        ]
        .join("\n");
        let run = |input: &str| {
            let parse = parse_trace_str(input, false).unwrap();
            let set = build_sessions(&parse.messages);
            serde_json::to_string(&ingest_report(&parse, &set)).unwrap()
        };
        let a = run(&input);
        let b = run(&input);
        assert_eq!(a, b);
        assert_eq!(
            a,
            r#"{"messages":3,"sessions":1,"events":1,"skipped":1,"orphans":0,"implicit_starts":0}"#
        );
    }

    fn arb_message() -> impl Strategy<Value = TelemetryMessage> {
        let cell_pool = prop::collection::vec("[a-z][a-z0-9]{0,5}", 1..5);
        (
            0..4_000_000_000_000i64,
            cell_pool,
            any::<prop::sample::Index>(),
            prop::sample::select(MsgType::ALL.to_vec()),
            "[a-z]{1,4}",
        )
            .prop_map(|(ts, cells, pick, msg_type, session)| {
                let cell_id = if msg_type.is_cell_scoped() {
                    cells[pick.index(cells.len())].clone()
                } else {
                    String::new()
                };
                TelemetryMessage {
                    timestamp_ms: ts,
                    cell_id,
                    notebook_id: "nb".to_string(),
                    cell_ids: cells,
                    session_id: session,
                    notebook_path: "p/nb.ipynb".to_string(),
                    msg_type,
                }
            })
    }

    proptest! {
        // parse ∘ serialize is the identity on valid message lists.
        #[test]
        fn roundtrip_preserves_messages(msgs in prop::collection::vec(arb_message(), 0..20)) {
            let text = serialize_trace(&msgs);
            let parse = parse_trace_str(&text, true).unwrap();
            prop_assert_eq!(parse.messages, msgs);
            prop_assert!(parse.skipped.is_empty());
        }

        // Total events across sessions equals the number of matched
        // started/completed pairs, counted independently.
        #[test]
        fn event_count_matches_pair_oracle(msgs in prop::collection::vec(arb_message(), 0..40)) {
            let set = build_sessions(&msgs);
            // Oracle: replay per (session, cell) in timestamp order, counting
            // completions that follow an unconsumed start.
            let mut sorted: Vec<&TelemetryMessage> = msgs.iter().collect();
            sorted.sort_by_key(|m| m.timestamp_ms);
            let mut open: std::collections::HashMap<(String, String), u32> =
                std::collections::HashMap::new();
            let mut pairs = 0usize;
            for m in sorted {
                // Session boundaries reset pending starts the same way the
                // builder does.
                match m.msg_type {
                    MsgType::SessionStarted | MsgType::SessionDisposed => {
                        open.retain(|(s, _), _| *s != m.session_id);
                    }
                    MsgType::CellExecutionStarted => {
                        if m.cell_ids.contains(&m.cell_id) {
                            open.insert((m.session_id.clone(), m.cell_id.clone()), 1);
                        }
                    }
                    MsgType::CellExecutionCompleted => {
                        let matched = open.remove(&(m.session_id.clone(), m.cell_id.clone()));
                        pairs += usize::from(matched.is_some());
                    }
                    _ => {}
                }
            }
            prop_assert_eq!(set.event_count(), pairs);
        }

        // Timestamps within one session are nondecreasing after ingestion.
        #[test]
        fn session_raw_is_time_sorted(msgs in prop::collection::vec(arb_message(), 0..40)) {
            let set = build_sessions(&msgs);
            for session in &set.sessions {
                for pair in session.raw.windows(2) {
                    prop_assert!(pair[0].timestamp_ms <= pair[1].timestamp_ms);
                }
            }
        }
    }
}
