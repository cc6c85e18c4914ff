//! Annotated-table documents: single JSON files or zip archives of them.
//!
//! A document presents exactly one header row per table; multi-row headers
//! must be merged upstream. Cells are kept verbatim.

use std::collections::BTreeSet;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTable {
    pub table_index: usize,
    #[serde(default)]
    pub caption: String,
    pub header_row: Vec<String>,
    pub body: Vec<Vec<String>>,
}

impl AnnotatedTable {
    pub fn n_cols(&self) -> usize {
        self.header_row.len()
    }

    pub fn n_rows(&self) -> usize {
        self.body.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    #[serde(skip)]
    pub source_filename: String,
    pub tables: Vec<AnnotatedTable>,
}

impl AnnotatedDocument {
    /// Set when the document holds no tables; such documents are accepted.
    pub fn is_empty_warning(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("documents serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedJson {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation{}: {detail}", location(*.table_index, *.row))]
    SchemaViolation {
        table_index: Option<usize>,
        row: Option<usize>,
        detail: String,
    },
    #[error("not a zip archive: {0}")]
    NotAnArchive(String),
    #[error("archive contains no files")]
    EmptyArchive,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("cannot read archive member: {0}")]
    UnreadableMember(String),
}

fn location(table: Option<usize>, row: Option<usize>) -> String {
    match (table, row) {
        (Some(t), Some(r)) => format!(" in table {t}, row {r}"),
        (Some(t), None) => format!(" in table {t}"),
        _ => String::new(),
    }
}

fn schema(table_index: Option<usize>, row: Option<usize>, detail: impl Into<String>) -> IngestError {
    IngestError::SchemaViolation {
        table_index,
        row,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub filename: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: Vec<String>,
    pub rejected: Vec<Rejection>,
    /// doc_ids accepted with zero tables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub empty_documents: Vec<String>,
}

/// doc_id fallback: the file name without directories or extension.
pub fn doc_id_from_filename(filename: &str) -> String {
    let base = filename.rsplit(['/', '\\']).next().unwrap_or(filename);
    Path::new(base)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| base.to_string())
}

fn string_list(value: &Value, table: usize, row: Option<usize>, what: &str) -> Result<Vec<String>, IngestError> {
    let items = value
        .as_array()
        .ok_or_else(|| schema(Some(table), row, format!("{what} must be an array of strings")))?;
    items
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            cell.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(Some(table), row, format!("{what}[{k}] must be a string")))
        })
        .collect()
}

fn parse_table(value: &Value, position: usize) -> Result<AnnotatedTable, IngestError> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(Some(position), None, "table must be an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "table_index" | "caption" | "header_row" | "body") {
            return Err(schema(Some(position), None, format!("unknown field {key:?}")));
        }
    }
    let table_index = match obj.get("table_index") {
        None => position,
        Some(v) => {
            let idx = v
                .as_u64()
                .ok_or_else(|| schema(Some(position), None, "table_index must be a non-negative integer"))?;
            if idx != position as u64 {
                return Err(schema(
                    Some(position),
                    None,
                    format!("table_index {idx} is not contiguous (expected {position})"),
                ));
            }
            position
        }
    };
    let caption = match obj.get("caption") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema(Some(position), None, "caption must be a string"))?
            .to_string(),
    };
    let header_row = string_list(
        obj.get("header_row")
            .ok_or_else(|| schema(Some(position), None, "missing header_row"))?,
        position,
        None,
        "header_row",
    )?;
    if header_row.is_empty() {
        return Err(schema(Some(position), None, "header_row must have at least one column"));
    }
    let rows = obj
        .get("body")
        .ok_or_else(|| schema(Some(position), None, "missing body"))?
        .as_array()
        .ok_or_else(|| schema(Some(position), None, "body must be an array of rows"))?;
    let mut body = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let cells = string_list(row, position, Some(r), "row")?;
        if cells.len() != header_row.len() {
            return Err(schema(
                Some(position),
                Some(r),
                format!("row has {} cells, header has {}", cells.len(), header_row.len()),
            ));
        }
        body.push(cells);
    }
    Ok(AnnotatedTable {
        table_index,
        caption,
        header_row,
        body,
    })
}

/// Parses one document. Ragged rows are rejected, never padded.
pub fn parse_document(bytes: &[u8], filename: &str) -> Result<AnnotatedDocument, IngestError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| IngestError::MalformedJson {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(None, None, "document must be a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "doc_id" | "tables") {
            return Err(schema(None, None, format!("unknown field {key:?}")));
        }
    }
    let doc_id = match obj.get("doc_id") {
        None | Some(Value::Null) => String::new(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema(None, None, "doc_id must be a string"))?
            .to_string(),
    };
    let doc_id = if doc_id.is_empty() {
        doc_id_from_filename(filename)
    } else {
        doc_id
    };
    if doc_id.is_empty() {
        return Err(schema(None, None, "doc_id is empty and no filename to derive it from"));
    }
    let tables = obj
        .get("tables")
        .ok_or_else(|| schema(None, None, "missing tables"))?
        .as_array()
        .ok_or_else(|| schema(None, None, "tables must be an array"))?
        .iter()
        .enumerate()
        .map(|(i, t)| parse_table(t, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AnnotatedDocument {
        doc_id,
        source_filename: filename.to_string(),
        tables,
    })
}

fn has_extension(name: &str, ext: &str) -> bool {
    name.len() > ext.len() && name[name.len() - ext.len()..].eq_ignore_ascii_case(ext)
}

/// Parses every `.json` member of a zip archive, in member-name order.
///
/// A bad member is reported and skipped; it never aborts the batch.
pub fn parse_archive(bytes: &[u8]) -> Result<(Vec<AnnotatedDocument>, IngestReport), IngestError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| IngestError::NotAnArchive(e.to_string()))?;
    let mut members: Vec<(String, usize)> = Vec::new();
    for i in 0..archive.len() {
        let entry = archive
            .by_index_raw(i)
            .map_err(|e| IngestError::NotAnArchive(e.to_string()))?;
        if !entry.is_dir() {
            members.push((entry.name().to_string(), i));
        }
    }
    if members.is_empty() {
        return Err(IngestError::EmptyArchive);
    }
    members.sort();

    let mut documents = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = BTreeSet::new();
    for (name, index) in members {
        let outcome = if has_extension(&name, ".json") {
            read_member(&mut archive, index).and_then(|data| parse_document(&data, &name))
        } else if has_extension(&name, ".pdf") {
            Err(IngestError::UnsupportedFormat("pdf conversion not bundled".into()))
        } else {
            Err(IngestError::UnsupportedFormat(format!(
                "{name} is not a .json document"
            )))
        };
        let outcome = outcome.and_then(|doc| {
            if seen.insert(doc.doc_id.clone()) {
                Ok(doc)
            } else {
                Err(IngestError::DuplicateDocId(doc.doc_id))
            }
        });
        match outcome {
            Ok(doc) => {
                if doc.is_empty_warning() {
                    report.empty_documents.push(doc.doc_id.clone());
                }
                report.accepted.push(doc.doc_id.clone());
                documents.push(doc);
            }
            Err(err) => report.rejected.push(Rejection {
                filename: name,
                reason: err.to_string(),
            }),
        }
    }
    Ok((documents, report))
}

fn read_member(archive: &mut zip::ZipArchive<Cursor<&[u8]>>, index: usize) -> Result<Vec<u8>, IngestError> {
    let mut file = archive
        .by_index(index)
        .map_err(|e| IngestError::UnreadableMember(e.to_string()))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)
        .map_err(|e| IngestError::UnreadableMember(e.to_string()))?;
    Ok(data)
}

/// True when the bytes start with a zip local-file or end-of-directory signature.
pub fn looks_like_zip(bytes: &[u8]) -> bool {
    bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06")
}

/// Dispatches on content: zip archives go through [`parse_archive`], anything
/// else is parsed as a single document.
pub fn parse_upload(bytes: &[u8], filename: &str) -> Result<(Vec<AnnotatedDocument>, IngestReport), IngestError> {
    if looks_like_zip(bytes) || has_extension(filename, ".zip") {
        return parse_archive(bytes);
    }
    if has_extension(filename, ".pdf") || bytes.starts_with(b"%PDF") {
        return Err(IngestError::UnsupportedFormat("pdf conversion not bundled".into()));
    }
    let doc = parse_document(bytes, filename)?;
    let report = IngestReport {
        accepted: vec![doc.doc_id.clone()],
        rejected: Vec::new(),
        empty_documents: if doc.is_empty_warning() {
            vec![doc.doc_id.clone()]
        } else {
            Vec::new()
        },
    };
    Ok((vec![doc], report))
}
