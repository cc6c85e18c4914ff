//! Uploaded documents, persisted one file per doc_id under `<data_dir>/documents`.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use carbon_tables::ingest::{AnnotatedDocument, AnnotatedTable};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("document {0:?} already exists")]
    Duplicate(String),
    #[error("document {0:?} is missing from storage")]
    Missing(String),
    #[error("storage error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt stored document {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Serialize, Deserialize)]
struct StoredDocument {
    doc_id: String,
    source_filename: String,
    tables: Vec<AnnotatedTable>,
}

#[derive(Debug)]
pub struct DocumentStore {
    dir: PathBuf,
    docs: RwLock<BTreeMap<String, Arc<AnnotatedDocument>>>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl DocumentStore {
    /// Opens the store, loading every document already on disk.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut docs = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let doc = read_document(&path)?;
                docs.insert(doc.doc_id.clone(), Arc::new(doc));
            }
        }
        Ok(Self {
            dir,
            docs: RwLock::new(docs),
        })
    }

    fn path_for(&self, doc_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", hex::encode(doc_id)))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.read().unwrap().contains_key(doc_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.docs.read().unwrap().keys().cloned().collect()
    }

    /// Persists and indexes a document. Existing ids are rejected unless
    /// `overwrite` is set.
    pub fn insert(&self, doc: AnnotatedDocument, overwrite: bool) -> Result<(), StoreError> {
        let mut docs = self.docs.write().unwrap();
        if !overwrite && docs.contains_key(&doc.doc_id) {
            return Err(StoreError::Duplicate(doc.doc_id));
        }
        let path = self.path_for(&doc.doc_id);
        let stored = StoredDocument {
            doc_id: doc.doc_id.clone(),
            source_filename: doc.source_filename.clone(),
            tables: doc.tables.clone(),
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(&stored).expect("documents serialize")).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        docs.insert(doc.doc_id.clone(), Arc::new(doc));
        Ok(())
    }

    /// Reads a document back from disk; jobs use this so they see what is
    /// actually stored at run time.
    pub fn load(&self, doc_id: &str) -> Result<AnnotatedDocument, StoreError> {
        let path = self.path_for(doc_id);
        if !path.exists() {
            return Err(StoreError::Missing(doc_id.to_string()));
        }
        read_document(&path)
    }
}

fn read_document(path: &Path) -> Result<AnnotatedDocument, StoreError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let stored: StoredDocument = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(AnnotatedDocument {
        doc_id: stored.doc_id,
        source_filename: stored.source_filename,
        tables: stored.tables,
    })
}
