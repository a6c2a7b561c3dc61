//! Notebook state reduction and incremental migration payloads.
//!
//! The kernel's global namespace is modeled as an object graph: named
//! top-level bindings point at objects, objects reference other objects
//! (container elements, closure captures, module members). A migration
//! does not ship the whole namespace: it ships the transitive closure of
//! what the next cell actually needs, seeded from the cell's static usage.
//! Later transfers in either direction ship hash-diffs instead of full
//! snapshots.
//!
//! All operations are pure over immutable snapshots; nothing here mutates
//! a state in place.

pub mod codec;

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cellparse::NameUsage;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("malformed state: {0}")]
    Malformed(String),
    #[error("needed set references unknown object ids: {0:?}")]
    UnknownObjects(Vec<String>),
    #[error("objects {objects:?} are not serializable; the cell must execute locally")]
    LocalFallback { objects: Vec<String> },
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("codec rate must be positive, got {0}")]
    InvalidCodecRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Variable,
    Function,
    Module,
}

/// One object in the modeled namespace graph.
///
/// `payload_size` is the declared serialized size; the actual byte content
/// used for hashing and compression is a canonical synthesis of `content`
/// stretched to that size, so changing either the content or the size
/// changes the hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamespaceObject {
    pub id: String,
    pub name: Option<String>,
    pub kind: ObjectKind,
    pub payload_size: u64,
    pub references: Vec<String>,
    pub hashable: bool,
    pub serializable: bool,
    pub content: String,
}

impl NamespaceObject {
    /// Module objects ship as name-only markers: the remote side is
    /// assumed to have the module installed, so they carry zero bytes.
    pub fn effective_size(&self) -> u64 {
        match self.kind {
            ObjectKind::Module => 0,
            _ => self.payload_size,
        }
    }

    /// Deterministic byte encoding of exactly `effective_size` bytes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let n = self.effective_size() as usize;
        if n == 0 {
            return Vec::new();
        }
        let seed: Vec<u8> = if self.content.is_empty() {
            let mut s = self.id.as_bytes().to_vec();
            s.push(0);
            s
        } else {
            self.content.as_bytes().to_vec()
        };
        seed.iter().cycle().take(n).copied().collect()
    }

    /// Present iff the object is hashable. Computed on demand so it can
    /// never go stale against the content.
    pub fn content_hash(&self) -> Option<String> {
        if !self.hashable {
            return None;
        }
        let digest = Sha256::digest(self.canonical_bytes());
        Some(format!("{digest:x}"))
    }
}

/// Snapshot of a kernel namespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotebookState {
    pub objects: BTreeMap<String, NamespaceObject>,
    pub bindings: BTreeMap<String, String>,
    /// Bumped on every cell execution by whoever owns the live namespace.
    pub generation: u64,
}

#[derive(Serialize, Deserialize)]
struct WireObject {
    id: String,
    #[serde(default)]
    name: Option<String>,
    kind: ObjectKind,
    size: u64,
    #[serde(default)]
    refs: Vec<String>,
    hashable: bool,
    serializable: bool,
    #[serde(default)]
    content: String,
}

#[derive(Serialize, Deserialize)]
struct WireState {
    objects: Vec<WireObject>,
    #[serde(default)]
    bindings: BTreeMap<String, String>,
    #[serde(default)]
    generation: u64,
}

impl NotebookState {
    pub fn empty() -> Self {
        NotebookState {
            objects: BTreeMap::new(),
            bindings: BTreeMap::new(),
            generation: 0,
        }
    }

    /// Parse the state fixture format:
    /// `{objects: [{id, name, kind, size, refs, hashable, serializable,
    /// content}], bindings: {name: id}, generation}`.
    pub fn from_json(text: &str) -> Result<Self, StateError> {
        let wire: WireState =
            serde_json::from_str(text).map_err(|e| StateError::Malformed(e.to_string()))?;
        let mut objects = BTreeMap::new();
        for w in wire.objects {
            let obj = NamespaceObject {
                id: w.id,
                name: w.name,
                kind: w.kind,
                payload_size: w.size,
                references: w.refs,
                hashable: w.hashable,
                serializable: w.serializable,
                content: w.content,
            };
            if objects.insert(obj.id.clone(), obj.clone()).is_some() {
                return Err(StateError::Malformed(format!("duplicate object id {:?}", obj.id)));
            }
        }
        let state = NotebookState {
            objects,
            bindings: wire.bindings,
            generation: wire.generation,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        let wire = WireState {
            objects: self
                .objects
                .values()
                .map(|o| WireObject {
                    id: o.id.clone(),
                    name: o.name.clone(),
                    kind: o.kind,
                    size: o.payload_size,
                    refs: o.references.clone(),
                    hashable: o.hashable,
                    serializable: o.serializable,
                    content: o.content.clone(),
                })
                .collect(),
            bindings: self.bindings.clone(),
            generation: self.generation,
        };
        serde_json::to_string_pretty(&wire).expect("state serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), StateError> {
        for obj in self.objects.values() {
            for r in &obj.references {
                if !self.objects.contains_key(r) {
                    return Err(StateError::Malformed(format!(
                        "object {:?} references unknown id {:?}",
                        obj.id, r
                    )));
                }
            }
        }
        for (name, id) in &self.bindings {
            if !self.objects.contains_key(id) {
                return Err(StateError::Malformed(format!(
                    "binding {name:?} targets unknown id {id:?}"
                )));
            }
        }
        Ok(())
    }

    /// Declared bytes of the whole state (module markers count zero).
    pub fn total_bytes(&self) -> u64 {
        self.objects.values().map(|o| o.effective_size()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LocalToRemote,
    RemoteToLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    FullReduced,
    Diff,
}

/// What one directional transfer would carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationPayload {
    pub direction: Direction,
    pub mode: PayloadMode,
    pub included: BTreeSet<String>,
    pub total_bytes: u64,
    pub compressed: bool,
    pub compressed_bytes: Option<u64>,
    /// Seed names that resolved to no binding; assumed present on both
    /// sides (builtins), listed for audit.
    pub missing_names: BTreeSet<String>,
}

impl MigrationPayload {
    pub fn to_manifest_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    /// Bytes that actually travel for the object data.
    pub fn wire_bytes(&self) -> u64 {
        if self.compressed {
            self.compressed_bytes.unwrap_or(self.total_bytes)
        } else {
            self.total_bytes
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureResult {
    pub needed: BTreeSet<String>,
    pub missing_names: BTreeSet<String>,
}

/// Transitive closure of the objects a cell's execution depends on.
///
/// Seeds are the bindings of `usage.loads`, the roots of dotted call
/// targets, and imported module names; the walk then follows object
/// references (for functions, those are their recorded free-name edges).
/// Names with no binding are reported, not fatal — they may be builtins.
pub fn needed_closure(state: &NotebookState, usage: &NameUsage) -> ClosureResult {
    let mut seed_names: BTreeSet<&str> = BTreeSet::new();
    seed_names.extend(usage.loads.iter().map(String::as_str));
    seed_names.extend(usage.imports.iter().map(String::as_str));
    for target in &usage.called {
        if let Some(root) = target.split('.').next() {
            seed_names.insert(root);
        }
    }

    let mut needed = BTreeSet::new();
    let mut missing = BTreeSet::new();
    let mut queue: Vec<&str> = Vec::new();
    for name in seed_names {
        match state.bindings.get(name) {
            Some(id) => {
                if needed.insert(id.clone()) {
                    queue.push(id);
                }
            }
            None => {
                missing.insert(name.to_string());
            }
        }
    }
    while let Some(id) = queue.pop() {
        if let Some(obj) = state.objects.get(id) {
            for r in &obj.references {
                if needed.insert(r.clone()) {
                    queue.push(r);
                }
            }
        }
    }
    ClosureResult {
        needed,
        missing_names: missing,
    }
}

fn object_stream(state: &NotebookState, included: &BTreeSet<String>) -> Vec<u8> {
    let mut stream = Vec::new();
    for id in included {
        if let Some(obj) = state.objects.get(id) {
            stream.extend_from_slice(id.as_bytes());
            stream.push(0);
            stream.extend_from_slice(&obj.canonical_bytes());
        }
    }
    stream
}

fn payload_bytes(state: &NotebookState, included: &BTreeSet<String>, compress: bool) -> (u64, Option<u64>) {
    let total: u64 = included
        .iter()
        .filter_map(|id| state.objects.get(id))
        .map(|o| o.effective_size())
        .sum();
    let compressed_bytes = if compress {
        let encoded = codec::compress(&object_stream(state, included));
        Some(codec::data_len(&encoded) as u64)
    } else {
        None
    };
    (total, compressed_bytes)
}

/// Build the full reduced payload for a first transfer.
///
/// Fails with [`StateError::LocalFallback`] when any needed object cannot
/// be serialized: the cell then executes locally and no bytes move.
pub fn reduce_and_serialize(
    state: &NotebookState,
    needed: &BTreeSet<String>,
    direction: Direction,
    compress: bool,
) -> Result<MigrationPayload, StateError> {
    let unknown: Vec<String> = needed
        .iter()
        .filter(|id| !state.objects.contains_key(*id))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(StateError::UnknownObjects(unknown));
    }
    let unserializable: Vec<String> = needed
        .iter()
        .filter(|id| !state.objects[*id].serializable)
        .cloned()
        .collect();
    if !unserializable.is_empty() {
        return Err(StateError::LocalFallback {
            objects: unserializable,
        });
    }
    let (total_bytes, compressed_bytes) = payload_bytes(state, needed, compress);
    Ok(MigrationPayload {
        direction,
        mode: PayloadMode::FullReduced,
        included: needed.clone(),
        total_bytes,
        compressed: compress,
        compressed_bytes,
        missing_names: BTreeSet::new(),
    })
}

/// Incremental payload: new objects, objects whose hash changed, and
/// unhasheable objects (always carried, at the cost of extra bytes).
pub fn diff_payload(
    before: &NotebookState,
    after: &NotebookState,
    direction: Direction,
) -> MigrationPayload {
    let mut included = BTreeSet::new();
    for (id, obj) in &after.objects {
        let carry = match before.objects.get(id) {
            None => true,
            Some(prev) => !obj.hashable || prev.content_hash() != obj.content_hash(),
        };
        if carry {
            included.insert(id.clone());
        }
    }
    let (total_bytes, _) = payload_bytes(after, &included, false);
    MigrationPayload {
        direction,
        mode: PayloadMode::Diff,
        included,
        total_bytes,
        compressed: false,
        compressed_bytes: None,
        missing_names: BTreeSet::new(),
    }
}

/// Wall-clock cost of one directional transfer in milliseconds:
/// latency + wire bytes / bandwidth, plus compression of the raw bytes
/// and decompression of the wire bytes when the payload is compressed
/// and a codec rate is given.
pub fn migration_time(
    payload: &MigrationPayload,
    bandwidth_bytes_per_ms: f64,
    latency_ms: f64,
    codec_rate: Option<f64>,
) -> Result<f64, StateError> {
    if bandwidth_bytes_per_ms.is_nan() || bandwidth_bytes_per_ms <= 0.0 {
        return Err(StateError::InvalidBandwidth(bandwidth_bytes_per_ms));
    }
    if let Some(rate) = codec_rate {
        if rate.is_nan() || rate <= 0.0 {
            return Err(StateError::InvalidCodecRate(rate));
        }
    }
    let wire = payload.wire_bytes() as f64;
    let mut time = latency_ms + wire / bandwidth_bytes_per_ms;
    if payload.compressed {
        if let Some(rate) = codec_rate {
            time += payload.total_bytes as f64 / rate; // compress raw
            time += wire / rate; // decompress on arrival
        }
    }
    Ok(time)
}

/// Apply a payload received from `source` on top of `base`.
///
/// Objects in the payload overwrite `base`'s; bindings follow for every
/// source name whose object is now present. The binding table is metadata
/// riding along with the payload, not counted in its bytes.
pub fn apply_payload(
    base: &NotebookState,
    source: &NotebookState,
    payload: &MigrationPayload,
) -> NotebookState {
    let mut out = base.clone();
    for id in &payload.included {
        if let Some(obj) = source.objects.get(id) {
            out.objects.insert(id.clone(), obj.clone());
        }
    }
    for (name, id) in &source.bindings {
        if out.objects.contains_key(id) {
            out.bindings.insert(name.clone(), id.clone());
        }
    }
    out.generation = source.generation;
    out
}

/// The sub-state a receiver should end up with: `needed` objects plus the
/// bindings that point into them.
pub fn needed_subgraph(state: &NotebookState, needed: &BTreeSet<String>) -> NotebookState {
    NotebookState {
        objects: state
            .objects
            .iter()
            .filter(|(id, _)| needed.contains(*id))
            .map(|(id, o)| (id.clone(), o.clone()))
            .collect(),
        bindings: state
            .bindings
            .iter()
            .filter(|(_, id)| needed.contains(*id))
            .map(|(n, id)| (n.clone(), id.clone()))
            .collect(),
        generation: state.generation,
    }
}

/// State-derived migration costs for a cell: the up transfer carries the
/// full reduced closure, the down transfer is estimated as the steady
/// diff (unhasheable objects in the closure, which always travel back).
/// Propagates [`StateError::LocalFallback`] when the closure cannot be
/// serialized.
pub fn migration_times(
    state: &NotebookState,
    usage: &NameUsage,
    bandwidth_bytes_per_ms: f64,
    latency_ms: f64,
    codec_rate: Option<f64>,
    compress: bool,
) -> Result<(f64, f64), StateError> {
    let closure = needed_closure(state, usage);
    let mut up = reduce_and_serialize(state, &closure.needed, Direction::LocalToRemote, compress)?;
    up.missing_names = closure.missing_names.clone();
    let down_included: BTreeSet<String> = closure
        .needed
        .iter()
        .filter(|id| !state.objects[*id].hashable)
        .cloned()
        .collect();
    let (down_total, down_compressed) = payload_bytes(state, &down_included, compress);
    let down = MigrationPayload {
        direction: Direction::RemoteToLocal,
        mode: PayloadMode::Diff,
        included: down_included,
        total_bytes: down_total,
        compressed: compress,
        compressed_bytes: down_compressed,
        missing_names: BTreeSet::new(),
    };
    let up_ms = migration_time(&up, bandwidth_bytes_per_ms, latency_ms, codec_rate)?;
    let down_ms = migration_time(&down, bandwidth_bytes_per_ms, latency_ms, codec_rate)?;
    Ok((up_ms, down_ms))
}
