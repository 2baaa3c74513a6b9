//! Dictionary annotation, per-token concept alignment, the raw-codes
//! baseline and import of character-offset annotations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, MAX_TOKENS};
use crate::ontology::{Dictionary, LabelSpace};
use crate::{Error, Result};

/// A concept code attached to the token span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub code: String,
}

impl Annotation {
    pub fn new(start: usize, end: usize, code: impl Into<String>) -> Self {
        Self {
            start,
            end,
            code: code.into(),
        }
    }

    pub fn span_len(&self) -> usize {
        self.end - self.start
    }
}

/// Greedy leftmost longest-match annotation.
///
/// At each position the longest dictionary phrase starting there is taken;
/// one annotation is emitted per code of that phrase (in dictionary order)
/// and scanning resumes after the phrase.
pub fn annotate(tokens: &[String], dictionary: &Dictionary) -> Vec<Annotation> {
    let mut out = Vec::new();
    let max_len = dictionary.max_phrase_len();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=max_len.min(tokens.len() - i))
            .rev()
            .find_map(|len| dictionary.get(&tokens[i..i + len]).map(|codes| (len, codes)));
        match longest {
            Some((len, codes)) => {
                out.extend(codes.iter().map(|c| Annotation::new(i, i + len, c.clone())));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Annotate a whole corpus in parallel, storing the result on each document.
pub fn annotate_corpus(docs: &mut [Document], dictionary: &Dictionary) {
    use rayon::prelude::*;
    docs.par_iter_mut()
        .for_each(|d| d.annotations = Some(annotate(&d.tokens, dictionary)));
}

/// Per-token concept sets and the selected (first-emitted) concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenConceptAlignment {
    /// Codes of every annotation covering token n, in emission order.
    pub concept_sets: Vec<Vec<String>>,
    /// Code of the first-emitted annotation covering token n.
    pub selected: Vec<Option<String>>,
}

impl TokenConceptAlignment {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

pub fn align(n_tokens: usize, annotations: &[Annotation]) -> Result<TokenConceptAlignment> {
    let mut concept_sets: Vec<Vec<String>> = vec![Vec::new(); n_tokens];
    for a in annotations {
        if a.start >= a.end || a.end > n_tokens {
            return Err(Error::SpanOutOfRange {
                start: a.start,
                end: a.end,
                len: n_tokens,
            });
        }
        for set in &mut concept_sets[a.start..a.end] {
            if !set.contains(&a.code) {
                set.push(a.code.clone());
            }
        }
    }
    let selected = concept_sets.iter().map(|s| s.first().cloned()).collect();
    Ok(TokenConceptAlignment { concept_sets, selected })
}

/// Document-level prediction straight from annotations: label l is on iff
/// some annotation carries code l.
pub fn raw_codes_predict<'a, I>(codes: I, label_space: &LabelSpace) -> Vec<bool>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut y = vec![false; label_space.len()];
    for c in codes {
        if let Some(i) = label_space.index_of(c) {
            y[i] = true;
        }
    }
    y
}

/// One line of `annotations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub spans: Vec<Annotation>,
}

pub fn write_annotations(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        let rec = AnnotationRecord {
            doc_id: d.doc_id.clone(),
            spans: d.annotations.clone().unwrap_or_default(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<HashMap<String, Vec<Annotation>>> {
    read_jsonl::<AnnotationRecord>(path)?
        .into_iter()
        .map(|r| Ok((r.doc_id, r.spans)))
        .collect()
}

/// Attach annotations to documents, validating spans against token counts.
/// Documents absent from `annotations` keep `None`.
pub fn attach_annotations(docs: &mut [Document], annotations: &HashMap<String, Vec<Annotation>>) -> Result<()> {
    for d in docs {
        if let Some(spans) = annotations.get(&d.doc_id) {
            for a in spans {
                if a.start >= a.end || a.end > d.len() {
                    return Err(Error::SpanOutOfRange {
                        start: a.start,
                        end: a.end,
                        len: d.len(),
                    });
                }
            }
            d.annotations = Some(spans.clone());
        }
    }
    Ok(())
}

/// Character-offset span as produced by external annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalSpan {
    pub begin_char: usize,
    pub end_char: usize,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub doc_id: String,
    pub spans: Vec<ExternalSpan>,
}

pub fn read_external_annotations(path: &Path) -> Result<HashMap<String, Vec<ExternalSpan>>> {
    read_jsonl::<ExternalRecord>(path)?
        .into_iter()
        .map(|r| Ok((r.doc_id, r.spans)))
        .collect()
}

/// Result of mapping external spans onto preprocessed tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportOutcome {
    pub annotations: Vec<Annotation>,
    /// Spans whose characters fell only on tokens removed by preprocessing.
    pub discarded: usize,
}

/// Map character-offset spans over `raw_text` onto the token indices that
/// [`crate::corpus::preprocess`] produces for the same text.
pub fn import_external(raw_text: &str, spans: &[ExternalSpan]) -> Result<ImportOutcome> {
    let n_chars = raw_text.chars().count();
    // (char_begin, char_end, surviving token index)
    let mut surviving: Vec<(usize, usize, usize)> = Vec::new();
    let mut token_start: Option<usize> = None;
    let mut kept = 0usize;
    let mut flush = |begin: usize, end: usize, word: &str, surviving: &mut Vec<(usize, usize, usize)>| {
        if word.chars().any(char::is_alphabetic) && kept < MAX_TOKENS {
            surviving.push((begin, end, kept));
            kept += 1;
        }
    };
    let chars: Vec<char> = raw_text.chars().collect();
    for (i, ch) in chars.iter().enumerate() {
        match (ch.is_whitespace(), token_start) {
            (false, None) => token_start = Some(i),
            (true, Some(s)) => {
                let word: String = chars[s..i].iter().collect();
                flush(s, i, &word, &mut surviving);
                token_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = token_start {
        let word: String = chars[s..].iter().collect();
        flush(s, chars.len(), &word, &mut surviving);
    }

    let mut out = ImportOutcome::default();
    for span in spans {
        if span.begin_char > span.end_char || span.end_char > n_chars {
            return Err(Error::OffsetOutOfRange {
                begin: span.begin_char,
                end: span.end_char,
                len: n_chars,
            });
        }
        let mut covered = surviving
            .iter()
            .filter(|&&(b, e, _)| b < span.end_char && span.begin_char < e)
            .map(|&(_, _, idx)| idx);
        match covered.next() {
            Some(first) => {
                let last = covered.next_back().unwrap_or(first);
                out.annotations.push(Annotation::new(first, last + 1, span.code.clone()));
            }
            None => out.discarded += 1,
        }
    }
    if out.discarded > 0 {
        log::warn!("discarded {} external span(s) over removed tokens", out.discarded);
    }
    Ok(out)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
