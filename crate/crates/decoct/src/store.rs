//! On-disk contract: JSON-lines for records, memories, queries, and eval
//! samples; a single JSON document for trees. Every file opens with a
//! header carrying `format_version`; writes go through a temp file and an
//! atomic rename. docs/formats.md is normative.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StoreError};
use crate::metrics::EvalSample;
use crate::model::{ExperienceRecord, Memory, MemoryEntry, MemoryKind};
use crate::tree::ConceptTree;

/// Version written to and accepted from every file.
pub const FORMAT_VERSION: u32 = 1;

/// A named query, the unit of retrieval and evaluation inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: String,
    pub text: String,
}

/// One retrieval result row as written by `decoct retrieve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub query_id: String,
    pub query: String,
    pub entry_ids: Vec<String>,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_leaf_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_fallback: Option<bool>,
}

/// One row of `decoct analyze-entropy` output: a (query, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub query_id: String,
    /// Context condition: base, relevant, or random.
    pub condition: String,
    /// Estimated conditional entropy, nats.
    pub value_nats: f64,
    pub mean_length: f64,
    pub num_samples: usize,
    /// Gain relative to the base condition; absent on base rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub information_gain_nats: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct LineHeader {
    format_version: u32,
    file_kind: String,
}

#[derive(Serialize, Deserialize)]
struct MemoryHeader {
    format_version: u32,
    file_kind: String,
    id: String,
    kind: MemoryKind,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format_version: u32,
    #[serde(flatten)]
    tree: ConceptTree,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Classifies a serde error: missing-field errors become schema errors
/// naming the field, everything else is a parse error.
fn classify(path: &Path, line: usize, e: &serde_json::Error) -> StoreError {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            return StoreError::Schema {
                path: path.display().to_string(),
                line,
                field: field.to_string(),
            };
        }
    }
    StoreError::Parse {
        path: path.display().to_string(),
        line,
        message: msg,
    }
}

/// Writes bytes to a temp file in the target directory, then renames into
/// place so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| io_err(path, e))?);
    }
    Ok(lines)
}

fn check_header(path: &Path, lines: &[String], expect_kind: &str) -> Result<(), StoreError> {
    let first = lines.first().ok_or_else(|| StoreError::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    let header: LineHeader =
        serde_json::from_str(first).map_err(|e| classify(path, 1, &e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(StoreError::Version {
            path: path.display().to_string(),
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.file_kind != expect_kind {
        return Err(StoreError::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected {expect_kind} file, found {}", header.file_kind),
        });
    }
    Ok(())
}

fn parse_body<T: DeserializeOwned>(path: &Path, lines: &[String]) -> Result<Vec<T>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| classify(path, i + 1, &e))?);
    }
    Ok(out)
}

fn render_jsonl<H: Serialize, T: Serialize>(header: &H, items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(serde_json::to_string(header).expect("serializable").as_bytes());
    buf.push(b'\n');
    for item in items {
        buf.extend_from_slice(serde_json::to_string(item).expect("serializable").as_bytes());
        buf.push(b'\n');
    }
    buf
}

pub fn save_records(records: &[ExperienceRecord], path: &Path) -> Result<()> {
    let header = LineHeader {
        format_version: FORMAT_VERSION,
        file_kind: "records".into(),
    };
    write_atomic(path, &render_jsonl(&header, records))?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<ExperienceRecord>> {
    let lines = read_lines(path)?;
    check_header(path, &lines, "records")?;
    let records: Vec<ExperienceRecord> = parse_body(path, &lines)?;
    for (i, record) in records.iter().enumerate() {
        record.validate().map_err(|e| StoreError::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

pub fn save_memory(memory: &Memory, path: &Path) -> Result<()> {
    let header = MemoryHeader {
        format_version: FORMAT_VERSION,
        file_kind: "memory".into(),
        id: memory.id.clone(),
        kind: memory.kind,
        provenance: memory.provenance.clone(),
    };
    write_atomic(path, &render_jsonl(&header, &memory.entries))?;
    Ok(())
}

pub fn load_memory(path: &Path) -> Result<Memory> {
    let lines = read_lines(path)?;
    // memory headers carry extra fields; version/kind checks first
    check_header(path, &lines, "memory")?;
    let header: MemoryHeader =
        serde_json::from_str(&lines[0]).map_err(|e| classify(path, 1, &e))?;
    let entries: Vec<MemoryEntry> = parse_body(path, &lines)?;
    let memory = Memory {
        id: header.id,
        kind: header.kind,
        provenance: header.provenance,
        entries,
    };
    memory.validate().map_err(|e| StoreError::Parse {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    Ok(memory)
}

pub fn save_queries(queries: &[QueryItem], path: &Path) -> Result<()> {
    let header = LineHeader {
        format_version: FORMAT_VERSION,
        file_kind: "queries".into(),
    };
    write_atomic(path, &render_jsonl(&header, queries))?;
    Ok(())
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryItem>> {
    let lines = read_lines(path)?;
    check_header(path, &lines, "queries")?;
    Ok(parse_body(path, &lines)?)
}

pub fn save_eval_samples(samples: &[EvalSample], path: &Path) -> Result<()> {
    let header = LineHeader {
        format_version: FORMAT_VERSION,
        file_kind: "eval".into(),
    };
    write_atomic(path, &render_jsonl(&header, samples))?;
    Ok(())
}

pub fn load_eval_samples(path: &Path) -> Result<Vec<EvalSample>> {
    let lines = read_lines(path)?;
    check_header(path, &lines, "eval")?;
    Ok(parse_body(path, &lines)?)
}

pub fn save_contexts(rows: &[ContextRow], path: &Path) -> Result<()> {
    let header = LineHeader {
        format_version: FORMAT_VERSION,
        file_kind: "contexts".into(),
    };
    write_atomic(path, &render_jsonl(&header, rows))?;
    Ok(())
}

pub fn load_contexts(path: &Path) -> Result<Vec<ContextRow>> {
    let lines = read_lines(path)?;
    check_header(path, &lines, "contexts")?;
    Ok(parse_body(path, &lines)?)
}

pub fn save_entropy_rows(rows: &[EntropyRow], path: &Path) -> Result<()> {
    let header = LineHeader {
        format_version: FORMAT_VERSION,
        file_kind: "entropy".into(),
    };
    write_atomic(path, &render_jsonl(&header, rows))?;
    Ok(())
}

pub fn load_entropy_rows(path: &Path) -> Result<Vec<EntropyRow>> {
    let lines = read_lines(path)?;
    check_header(path, &lines, "entropy")?;
    Ok(parse_body(path, &lines)?)
}

pub fn save_tree(tree: &ConceptTree, path: &Path) -> Result<()> {
    let doc = TreeFile {
        format_version: FORMAT_VERSION,
        tree: tree.clone(),
    };
    let mut bytes = serde_json::to_vec(&doc).expect("serializable");
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn load_tree(path: &Path) -> Result<ConceptTree> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| classify(path, 1, &e))?;
    match probe.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(StoreError::Version {
                path: path.display().to_string(),
                found: v as u32,
                expected: FORMAT_VERSION,
            }
            .into())
        }
        None => {
            return Err(StoreError::Schema {
                path: path.display().to_string(),
                line: 1,
                field: "format_version".into(),
            }
            .into())
        }
    }
    let doc: TreeFile = serde_json::from_str(&raw).map_err(|e| classify(path, 1, &e))?;
    Ok(doc.tree)
}
