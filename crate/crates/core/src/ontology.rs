//! Code hierarchy, phrase dictionary, concept vocabulary and label space.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess, Document, Vocabulary};
use crate::{Error, Result};

/// Marker used in `ontology.tsv` for "no parent".
pub const ROOT_MARKER: &str = "-";

/// Tree-shaped code hierarchy: every code has at most one parent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    parents: BTreeMap<String, Option<String>>,
}

impl Ontology {
    /// Build and validate from `(child, parent)` pairs in declaration order.
    pub fn from_edges<I>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Option<String>)>,
    {
        let edges: Vec<_> = edges.into_iter().collect();
        let mut parents = BTreeMap::new();
        for (i, (child, parent)) in edges.iter().enumerate() {
            if parents.insert(child.clone(), parent.clone()).is_some() {
                return Err(Error::Parse {
                    path: Default::default(),
                    line: i + 1,
                    message: format!("duplicate code {child}"),
                });
            }
        }
        let ont = Self { parents };
        ont.validate(&edges)?;
        Ok(ont)
    }

    fn validate(&self, edges: &[(String, Option<String>)]) -> Result<()> {
        for (i, (child, parent)) in edges.iter().enumerate() {
            if let Some(p) = parent {
                if !self.parents.contains_key(p) {
                    return Err(Error::DanglingParent {
                        line: i + 1,
                        child: child.clone(),
                        parent: p.clone(),
                    });
                }
            }
        }
        // Walk each chain; a revisit within one walk is a cycle.
        let mut finished: HashSet<&str> = HashSet::new();
        for (i, (child, _)) in edges.iter().enumerate() {
            let mut seen: Vec<&str> = Vec::new();
            let mut cur = Some(child.as_str());
            while let Some(c) = cur {
                if finished.contains(c) {
                    break;
                }
                if seen.contains(&c) {
                    seen.push(c);
                    return Err(Error::Cycle {
                        line: i + 1,
                        cycle: seen.join(" -> "),
                    });
                }
                seen.push(c);
                cur = self.parents[c].as_deref();
            }
            finished.extend(seen);
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(child), Some(parent), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected child<TAB>parent".into(),
                });
            };
            let child = child.trim();
            let parent = parent.trim();
            if child.is_empty() || parent.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "empty field".into(),
                });
            }
            let parent = (parent != ROOT_MARKER).then(|| parent.to_string());
            edges.push((child.to_string(), parent));
        }
        Self::from_edges(edges).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (child, parent) in &self.parents {
            writeln!(w, "{child}\t{}", parent.as_deref().unwrap_or(ROOT_MARKER))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn contains(&self, code: &str) -> bool {
        self.parents.contains_key(code)
    }

    pub fn parent(&self, code: &str) -> Option<&str> {
        self.parents.get(code).and_then(|p| p.as_deref())
    }

    /// `code` followed by its ancestors, ending at a root.
    pub fn ancestors(&self, code: &str) -> Result<Vec<&str>> {
        let (first, mut parent) = self
            .parents
            .get_key_value(code)
            .ok_or_else(|| Error::UnknownCode(code.to_string()))?;
        let mut chain = vec![first.as_str()];
        while let Some(p) = parent {
            let (key, next) = self.parents.get_key_value(p.as_str()).expect("validated");
            chain.push(key.as_str());
            parent = next;
        }
        Ok(chain)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.parents.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }
}

/// Phrase → concept codes. Phrases are kept in first-seen order and codes
/// per phrase in file order, which fixes annotation emission order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    entries: Vec<(Vec<String>, Vec<String>)>,
    index: HashMap<Vec<String>, usize>,
    max_phrase_len: usize,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a mapping. The phrase must already be preprocessed and nonempty.
    pub fn insert(&mut self, phrase: Vec<String>, code: impl Into<String>) {
        assert!(!phrase.is_empty(), "dictionary phrases are nonempty");
        let code = code.into();
        self.max_phrase_len = self.max_phrase_len.max(phrase.len());
        match self.index.get(&phrase) {
            Some(&i) => {
                let codes = &mut self.entries[i].1;
                if !codes.contains(&code) {
                    codes.push(code);
                }
            }
            None => {
                self.index.insert(phrase.clone(), self.entries.len());
                self.entries.push((phrase, vec![code]));
            }
        }
    }

    pub fn get(&self, phrase: &[String]) -> Option<&[String]> {
        self.index.get(phrase).map(|&i| self.entries[i].1.as_slice())
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[String], &[String])> {
        self.entries.iter().map(|(p, c)| (p.as_slice(), c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct phrases mapped to each code.
    pub fn phrases_per_code(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for (_, codes) in &self.entries {
            for c in codes {
                *counts.entry(c.as_str()).or_default() += 1;
            }
        }
        counts
    }

    /// Load `phrase<TAB>code` lines. Phrases are preprocessed; when an
    /// ontology is supplied every code must belong to it.
    pub fn load(path: &Path, ontology: Option<&Ontology>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut dict = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let mut fields = line.split('\t');
            let (Some(phrase), Some(code), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(err("expected phrase<TAB>code".into()));
            };
            let tokens = preprocess(phrase);
            if tokens.is_empty() {
                return Err(err(format!("phrase {phrase:?} is empty after preprocessing")));
            }
            let code = code.trim();
            if code.is_empty() {
                return Err(err("empty code".into()));
            }
            if let Some(ont) = ontology {
                if !ont.contains(code) {
                    return Err(err(format!("code {code} not in ontology")));
                }
            }
            dict.insert(tokens, code);
        }
        Ok(dict)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (phrase, codes) in &self.entries {
            let phrase = phrase.join(" ");
            for c in codes {
                writeln!(w, "{phrase}\t{c}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Ordered label codes; position defines the output index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    codes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let codes: Vec<String> = codes.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::Parse {
                    path: Default::default(),
                    line: i + 1,
                    message: format!("duplicate label {c}"),
                });
            }
        }
        Ok(Self { codes, index })
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let codes = text.lines().map(str::trim).filter(|l| !l.is_empty());
        Self::new(codes).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for c in &self.codes {
            writeln!(w, "{c}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Binary gold vector for a label set; codes outside the space are ignored.
    pub fn encode(&self, labels: &BTreeSet<String>) -> Vec<bool> {
        let mut y = vec![false; self.len()];
        for l in labels {
            if let Some(i) = self.index_of(l) {
                y[i] = true;
            }
        }
        y
    }
}

/// Concept vocabulary from training annotations: codes annotated in at least
/// `min_df` training documents, plus every ancestor of those codes.
pub fn build_concept_vocabulary(train_docs: &[Document], ontology: Option<&Ontology>, min_df: usize) -> Result<Vocabulary> {
    let base = Vocabulary::from_documents(
        train_docs.iter().map(|d| {
            d.annotations
                .as_deref()
                .unwrap_or(&[])
                .iter()
                .map(|a| a.code.as_str())
        }),
        min_df,
    )?;
    let mut codes: BTreeSet<String> = base.entries()[2..].iter().cloned().collect();
    if let Some(ont) = ontology {
        for c in base.entries()[2..].iter() {
            if let Ok(chain) = ont.ancestors(c) {
                codes.extend(chain.into_iter().map(str::to_string));
            }
        }
    }
    Ok(Vocabulary::from_items(codes, min_df))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(pairs: &[(&str, &str)]) -> Vec<(String, Option<String>)> {
        pairs
            .iter()
            .map(|(c, p)| (c.to_string(), (*p != "-").then(|| p.to_string())))
            .collect()
    }

    #[test]
    fn chain_ancestors() {
        let ont = Ontology::from_edges(edges(&[("c", "p"), ("p", "r"), ("r", "-")])).unwrap();
        assert_eq!(ont.ancestors("c").unwrap(), vec!["c", "p", "r"]);
        assert_eq!(ont.ancestors("r").unwrap(), vec!["r"]);
        assert!(matches!(ont.ancestors("zzz"), Err(Error::UnknownCode(_))));
    }

    #[test]
    fn two_node_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.tsv");
        std::fs::write(&path, "a\tb\nb\ta\n").unwrap();
        assert!(matches!(Ontology::load(&path), Err(Error::Cycle { .. })));
    }

    #[test]
    fn dangling_parent_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.tsv");
        std::fs::write(&path, "r\t-\na\tr\nb\tnope\n").unwrap();
        match Ontology::load(&path) {
            Err(Error::DanglingParent { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.tsv");
        std::fs::write(&empty, "").unwrap();
        assert!(Ontology::load(&empty).unwrap().is_empty());

        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "r\t-\nonly-one-field\n").unwrap();
        match Ontology::load(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dictionary_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "heart failure\t428\nHeart Failure\t428.0\n").unwrap();
        let d = Dictionary::load(&path, None).unwrap();
        let key = vec!["heart".to_string(), "failure".to_string()];
        assert_eq!(d.get(&key).unwrap(), &["428".to_string(), "428.0".to_string()]);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn dictionary_rejects_unknown_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "heart failure\t999\n").unwrap();
        let ont = Ontology::from_edges(edges(&[("428", "-")])).unwrap();
        assert!(matches!(Dictionary::load(&path, Some(&ont)), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn label_space_rejects_duplicates() {
        assert!(LabelSpace::new(["a", "b", "a"]).is_err());
        let ls = LabelSpace::new(["a", "b"]).unwrap();
        assert_eq!(ls.index_of("b"), Some(1));
    }
}
