use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{preprocess, CorpusSplit, Document};
use crate::{Error, Result};

/// One line of `documents.jsonl`. Either `text` (raw) or `tokens`
/// (already preprocessed) must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl DocumentRecord {
    pub fn into_document(self) -> std::result::Result<Document, String> {
        let tokens = match (self.tokens, self.text) {
            (Some(tokens), _) => tokens,
            (None, Some(text)) => preprocess(&text),
            (None, None) => return Err("record has neither \"text\" nor \"tokens\"".into()),
        };
        Ok(Document::new(self.doc_id, self.patient_id, tokens).with_labels(self.labels))
    }
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        Self {
            doc_id: d.doc_id.clone(),
            patient_id: d.patient_id.clone(),
            text: None,
            tokens: Some(d.tokens.clone()),
            labels: d.labels.iter().cloned().collect(),
        }
    }
}

/// Read `documents.jsonl`. Documents with no tokens left after
/// preprocessing are rejected.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (line, record) in read_document_records(path)? {
        let doc = record.into_document().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })?;
        if doc.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Raw records with their 1-based line numbers.
pub fn read_document_records(path: &Path) -> Result<Vec<(usize, DocumentRecord)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, &DocumentRecord::from(d))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<CorpusSplit> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_split(path: &Path, split: &CorpusSplit) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, split)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_and_preprocessed_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(
            &path,
            r#"{"doc_id":"a","patient_id":"p","text":"Acute HF 12","labels":["428"]}
{"doc_id":"b","patient_id":"q","tokens":["chest","pain"]}
"#,
        )
        .unwrap();
        let docs = read_documents(&path).unwrap();
        assert_eq!(docs[0].tokens, vec!["acute", "hf"]);
        assert!(docs[0].labels.contains("428"));
        assert_eq!(docs[1].tokens, vec!["chest", "pain"]);

        let out = dir.path().join("out.jsonl");
        write_documents(&out, &docs).unwrap();
        assert_eq!(read_documents(&out).unwrap(), docs);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        std::fs::write(&path, "{\"doc_id\":\"a\",\"patient_id\":\"p\",\"tokens\":[]}\n{\"doc_id\":\"b\"}\n").unwrap();
        match read_documents(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
