//! Documents, preprocessing, vocabularies and patient-disjoint splits.

mod io;
mod stats;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::Annotation;
use crate::{Error, Result};

pub use io::{read_document_records, read_documents, read_split, write_documents, write_split, DocumentRecord};
pub use stats::{coverage_stats, CoverageStats};
pub use synthetic::{generate_synthetic, LabelScheme, SplitCounts, SyntheticCorpus, SyntheticSpec, VariantDistribution};

/// Documents longer than this are truncated during preprocessing.
pub const MAX_TOKENS: usize = 2500;

/// A tokenized note with its gold codes and, optionally, concept annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub patient_id: String,
    pub tokens: Vec<String>,
    pub labels: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<Annotation>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, patient_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            patient_id: patient_id.into(),
            tokens,
            labels: BTreeSet::new(),
            annotations: None,
        }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace-tokenize, drop tokens with no alphabetic character, lowercase,
/// and truncate to [`MAX_TOKENS`].
pub fn preprocess(raw_text: &str) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter(|t| t.chars().any(char::is_alphabetic))
        .map(str::to_lowercase)
        .take(MAX_TOKENS)
        .collect()
}

/// Dense string→index map with reserved PAD (0) and UNK (1) slots.
///
/// Used both for words and for concept codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Entries in index order; the first two are the reserved symbols.
    entries: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    min_doc_frequency: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const PAD_SYMBOL: &'static str = "<pad>";
    pub const UNK_SYMBOL: &'static str = "<unk>";

    /// Build from an iterator of per-document item sets. Items appearing in
    /// at least `min_df` documents receive their own index, assigned in
    /// lexicographic order.
    pub fn from_documents<'a, I, J>(docs: I, min_df: usize) -> Result<Self>
    where
        I: IntoIterator<Item = J>,
        J: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            let distinct: HashSet<&str> = doc.into_iter().collect();
            for item in distinct {
                *df.entry(item).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let kept = df
            .into_iter()
            .filter(|&(item, count)| count >= min_df && !Self::is_reserved(item))
            .map(|(item, _)| item.to_string());
        Ok(Self::from_sorted(kept, min_df))
    }

    /// Build from explicit entries (deduplicated and sorted).
    pub fn from_items<I, S>(items: I, min_df: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = items
            .into_iter()
            .map(Into::into)
            .filter(|s| !Self::is_reserved(s))
            .collect();
        Self::from_sorted(set, min_df)
    }

    fn from_sorted(items: impl IntoIterator<Item = String>, min_df: usize) -> Self {
        let mut entries = vec![Self::PAD_SYMBOL.to_string(), Self::UNK_SYMBOL.to_string()];
        entries.extend(items);
        let mut vocab = Self {
            entries,
            index: HashMap::new(),
            min_doc_frequency: min_df,
        };
        vocab.rebuild_index();
        vocab
    }

    fn is_reserved(s: &str) -> bool {
        s == Self::PAD_SYMBOL || s == Self::UNK_SYMBOL
    }

    /// Restore the lookup table after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
    }

    /// Index of `item`, or [`Vocabulary::UNK`] if it is not in the vocabulary.
    pub fn lookup(&self, item: &str) -> usize {
        if item == Self::PAD_SYMBOL {
            return Self::UNK;
        }
        self.index.get(item).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, item: &str) -> bool {
        !Self::is_reserved(item) && self.index.contains_key(item)
    }

    pub fn get(&self, idx: usize) -> Option<&str> {
        self.entries.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() <= 2
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn min_doc_frequency(&self) -> usize {
        self.min_doc_frequency
    }
}

/// Build the word vocabulary from training documents.
pub fn build_vocabulary(train_docs: &[Document], min_df: usize) -> Result<Vocabulary> {
    Vocabulary::from_documents(
        train_docs.iter().map(|d| d.tokens.iter().map(String::as_str)),
        min_df,
    )
}

/// Disjoint train/dev/test document-id sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.dev, &self.test]
    }

    /// Partition `docs` into (train, dev, test) by id. Documents not named in
    /// the split are dropped.
    pub fn apply(&self, docs: &[Document]) -> (Vec<Document>, Vec<Document>, Vec<Document>) {
        let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let pick = |ids: &[String]| -> Vec<Document> {
            ids.iter()
                .filter_map(|id| by_id.get(id.as_str()).map(|d| (*d).clone()))
                .collect()
        };
        (pick(&self.train), pick(&self.dev), pick(&self.test))
    }
}

/// Patient-disjoint split.
///
/// Distinct patient ids are sorted, shuffled with a ChaCha8 stream seeded by
/// `seed`, and walked in that order. Each patient group goes to the first
/// split whose cumulative document target (rounded `ratio prefix sum * total`)
/// is still above the number of documents assigned before it.
pub fn split_by_patient(docs: &[Document], ratios: &[f64], seed: u64) -> Result<CorpusSplit> {
    if ratios.len() != 3 {
        return Err(Error::InvalidSplit(format!("expected 3 ratios, got {}", ratios.len())));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidSplit(format!("ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for d in docs {
        groups.entry(d.patient_id.as_str()).or_default().push(d.doc_id.as_str());
    }
    if groups.len() < ratios.len() {
        return Err(Error::InvalidSplit(format!(
            "{} distinct patients for {} splits",
            groups.len(),
            ratios.len()
        )));
    }
    let mut patients: Vec<&str> = groups.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let total = docs.len() as f64;
    let mut cumulative = Vec::with_capacity(ratios.len());
    let mut acc = 0.0;
    for r in ratios {
        acc += r;
        cumulative.push((acc * total).round() as usize);
    }

    let mut parts: [Vec<String>; 3] = Default::default();
    let mut assigned = 0usize;
    for p in patients {
        let target = cumulative
            .iter()
            .position(|&c| assigned < c)
            .unwrap_or(ratios.len() - 1);
        let ids = &groups[p];
        parts[target].extend(ids.iter().map(|s| s.to_string()));
        assigned += ids.len();
    }
    let [train, dev, test] = parts;
    Ok(CorpusSplit { train, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, patient: &str, tokens: &[&str]) -> Document {
        Document::new(id, patient, tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn preprocess_drops_numeric_tokens() {
        assert_eq!(preprocess("BP 120/80"), vec!["bp"]);
        assert!(preprocess("").is_empty());
        assert_eq!(preprocess("Heart-Failure x2 42"), vec!["heart-failure", "x2"]);
    }

    #[test]
    fn preprocess_truncates() {
        let text = vec!["word"; 3000].join(" ");
        assert_eq!(preprocess(&text).len(), MAX_TOKENS);
    }

    #[test]
    fn vocabulary_threshold() {
        let docs = vec![
            doc("a", "p", &["x", "y"]),
            doc("b", "p", &["x", "y"]),
            doc("c", "p", &["x", "x"]),
        ];
        let v = build_vocabulary(&docs, 3).unwrap();
        assert_eq!(v.lookup("y"), Vocabulary::UNK);
        assert_eq!(v.lookup("x"), 2);
        assert_eq!(v.get(Vocabulary::PAD), Some("<pad>"));
        assert_eq!(v.lookup("never-seen"), Vocabulary::UNK);
    }

    #[test]
    fn vocabulary_is_sorted() {
        let docs = vec![doc("a", "p", &["zeta", "alpha", "mid"])];
        let v = build_vocabulary(&docs, 1).unwrap();
        assert_eq!(&v.entries()[2..], &["alpha", "mid", "zeta"]);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(build_vocabulary(&[], 3), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn shared_patient_lands_together() {
        let mut docs: Vec<_> = (0..10).map(|i| doc(&format!("d{i}"), &format!("q{i}"), &["a"])).collect();
        docs.push(doc("x1", "p1", &["a"]));
        docs.push(doc("x2", "p1", &["a"]));
        for seed in 0..20 {
            let s = split_by_patient(&docs, &[0.6, 0.2, 0.2], seed).unwrap();
            let holder: Vec<_> = s.parts().iter().map(|p| p.iter().any(|d| d == "x1") as u8 + p.iter().any(|d| d == "x2") as u8).collect();
            assert!(holder.contains(&2), "seed {seed}: {holder:?}");
        }
    }

    #[test]
    fn split_is_deterministic() {
        let docs: Vec<_> = (0..30).map(|i| doc(&format!("d{i}"), &format!("p{i}"), &["a"])).collect();
        assert_eq!(
            split_by_patient(&docs, &[0.8, 0.1, 0.1], 7).unwrap(),
            split_by_patient(&docs, &[0.8, 0.1, 0.1], 7).unwrap()
        );
    }

    #[test]
    fn too_few_patients() {
        let docs = vec![doc("a", "p", &["x"]), doc("b", "p", &["x"])];
        assert!(matches!(split_by_patient(&docs, &[0.5, 0.25, 0.25], 0), Err(Error::InvalidSplit(_))));
    }
}
