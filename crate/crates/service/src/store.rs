//! Corpus store backed by one JSON-lines file.
//!
//! Every mutation works on a copy of the affected document, writes the whole
//! corpus to a temporary file next to the store and renames it into place.
//! Only then is the in-memory copy updated, so a failed validation or write
//! leaves both the file and memory untouched.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use clinotate::corpus::{read_corpus, validate_corpus, write_corpus, CorpusError};
use clinotate::{AnnotatedDocument, Ontology};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot read store `{path}`: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("store holds invalid annotations: {0}")]
    Invalid(String),
    #[error("store write failed: {0}")]
    Write(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct Store {
    path: Option<PathBuf>,
    docs: Vec<AnnotatedDocument>,
    by_id: HashMap<String, usize>,
}

impl Store {
    /// Loads and validates the corpus file.
    pub fn open(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Store, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = fs::File::open(&path).map_err(|source| StoreError::Open {
            path: path.clone(),
            source,
        })?;
        let docs = read_corpus(BufReader::new(file))?;
        let mut store = Store::in_memory(docs, ontology)?;
        store.path = Some(path);
        Ok(store)
    }

    /// A store that is never written to disk.
    pub fn in_memory(docs: Vec<AnnotatedDocument>, ontology: &Ontology) -> Result<Store, StoreError> {
        let problems = validate_corpus(&docs, ontology);
        if !problems.is_empty() {
            let first: Vec<String> = problems
                .iter()
                .take(3)
                .map(|(doc, who, e)| format!("{doc}/{who}: {e}"))
                .collect();
            return Err(StoreError::Invalid(first.join("; ")));
        }
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.doc.id.clone(), i)).collect();
        Ok(Store {
            path: None,
            docs,
            by_id,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn documents(&self) -> &[AnnotatedDocument] {
        &self.docs
    }

    pub fn document(&self, id: &str) -> Option<&AnnotatedDocument> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    /// Applies `f` to a copy of document `id` and commits the copy if `f`
    /// succeeds and the corpus is persisted. `Ok(None)` means no such
    /// document.
    pub fn update<T, E>(
        &mut self,
        id: &str,
        f: impl FnOnce(&mut AnnotatedDocument) -> Result<T, E>,
    ) -> Result<Option<T>, UpdateError<E>> {
        let Some(&i) = self.by_id.get(id) else {
            return Ok(None);
        };
        let mut copy = self.docs[i].clone();
        let out = f(&mut copy).map_err(UpdateError::Rejected)?;
        if copy != self.docs[i] {
            let previous = std::mem::replace(&mut self.docs[i], copy);
            if let Err(e) = self.persist() {
                self.docs[i] = previous;
                return Err(UpdateError::Store(e));
            }
        }
        Ok(Some(out))
    }

    fn persist(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        write_corpus(&mut tmp, &self.docs)?;
        tmp.flush()?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }
}

#[derive(Debug)]
pub enum UpdateError<E> {
    Rejected(E),
    Store(StoreError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use clinotate::corpus::{corpus_to_string, Document, Mention, RecordType};
    use clinotate::Span;

    fn corpus() -> Vec<AnnotatedDocument> {
        vec![AnnotatedDocument::new(Document {
            id: "d1".into(),
            patient_id: "p1".into(),
            date: chrono::NaiveDate::from_ymd_opt(2022, 3, 4).unwrap(),
            record_type: RecordType::DailyNote,
            specialty: "pneumologia".into(),
            text: "derrame pleural".into(),
        })]
    }

    #[test]
    fn update_persists_and_rejection_does_not() {
        let o = Ontology::seed();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(&path, corpus_to_string(&corpus())).unwrap();
        let mut store = Store::open(&path, &o).unwrap();

        let added = store
            .update("d1", |d| {
                let doc = d.doc.clone();
                d.annotator_mut("gold")
                    .add_mention(Mention::new(Span::new(8, 15), "anatomic_structure"), &o, &doc)
                    .cloned()
            })
            .unwrap()
            .unwrap();
        assert_eq!(added.id, "gold-m1");
        let on_disk = fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, corpus_to_string(store.documents()));

        let r = store.update("d1", |d| {
            let doc = d.doc.clone();
            d.annotator_mut("gold")
                .add_mention(Mention::new(Span::new(3, 12), "anatomic_structure"), &o, &doc)
                .cloned()
        });
        assert!(matches!(r, Err(UpdateError::Rejected(_))));
        assert_eq!(fs::read_to_string(&path).unwrap(), on_disk);
        assert!(store.update("nope", |_| Ok::<_, ()>(())).unwrap().is_none());
    }

    #[test]
    fn failed_write_rolls_back_memory() {
        let o = Ontology::seed();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("c.jsonl");
        fs::create_dir(path.parent().unwrap()).unwrap();
        fs::write(&path, corpus_to_string(&corpus())).unwrap();
        let mut store = Store::open(&path, &o).unwrap();
        let before = store.documents().to_vec();
        fs::remove_dir_all(path.parent().unwrap()).unwrap();

        let r = store.update("d1", |d| {
            let doc = d.doc.clone();
            d.annotator_mut("gold")
                .add_mention(Mention::new(Span::new(8, 15), "anatomic_structure"), &o, &doc)
                .map(|_| ())
        });
        assert!(matches!(r, Err(UpdateError::Store(_))));
        assert_eq!(store.documents(), before.as_slice());
    }
}
