//! Seeded synthetic corpora with controllable concept coverage, phrase
//! variation and annotation specificity.
//!
//! Vocabulary layout: filler words start with `f`, phrase words with `p`,
//! both followed by a base-26 letter index, so phrases never collide with
//! filler text and the greedy annotator recovers every inserted phrase.
//! The ontology has three levels: leaf concepts `C####` under groups `G###`
//! under chapters `R##`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusSplit, Document, MAX_TOKENS};
use crate::annotator::Annotation;
use crate::ontology::{Dictionary, LabelSpace, Ontology};
use crate::{Error, Result};

/// Distribution of the number of distinct phrases per concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantDistribution {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
    /// Weights over 1, 2, 3, ...
    Weights(Vec<f64>),
}

impl VariantDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Fixed(n) => *n >= 1,
            Self::Uniform { min, max } => *min >= 1 && min <= max,
            Self::Weights(w) => !w.is_empty() && w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("bad variants distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        match self {
            Self::Fixed(n) => *n,
            Self::Uniform { min, max } => rng.gen_range(*min..=*max),
            Self::Weights(w) => {
                let total: f64 = w.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (i, x) in w.iter().enumerate() {
                    if u < *x {
                        return i + 1;
                    }
                    u -= x;
                }
                w.iter().rposition(|x| *x > 0.0).unwrap() + 1
            }
        }
    }
}

/// How document labels relate to the concepts a document mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelScheme {
    /// Each label `L##` is a noisy OR over a fixed random subset of concepts:
    /// every distinct mentioned concept in the subset independently turns the
    /// label on with probability `label_signal`.
    NoisyOr { concepts_per_label: usize },
    /// Labels are exactly the leaf concepts mentioned; the label space is the
    /// set of leaf codes. `label_signal` is unused.
    ConceptCodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub concept_count: usize,
    pub label_count: usize,
    pub docs_per_split: SplitCounts,
    pub mean_doc_length: usize,
    /// Target fraction of tokens covered by annotations.
    pub coverage: f64,
    pub variants_per_concept: VariantDistribution,
    pub label_signal: f64,
    /// Probability that a phrase's dictionary entry carries the parent code
    /// of its concept instead of the concept itself.
    pub specificity_mismatch: f64,
    pub label_scheme: LabelScheme,
    /// Fraction of phrases that are two tokens long.
    #[serde(default = "default_two_token_rate")]
    pub two_token_rate: f64,
    /// Children per ontology node.
    #[serde(default = "default_fanout")]
    pub fanout: usize,
    pub seed: u64,
}

fn default_two_token_rate() -> f64 {
    0.2
}

fn default_fanout() -> usize {
    4
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 400,
            concept_count: 60,
            label_count: 20,
            docs_per_split: SplitCounts { train: 200, dev: 50, test: 100 },
            mean_doc_length: 60,
            coverage: 0.35,
            variants_per_concept: VariantDistribution::Fixed(5),
            label_signal: 0.9,
            specificity_mismatch: 0.0,
            label_scheme: LabelScheme::NoisyOr { concepts_per_label: 3 },
            two_token_rate: default_two_token_rate(),
            fanout: default_fanout(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.vocab_size == 0 || self.concept_count == 0 || self.label_count == 0 || self.mean_doc_length == 0 {
            return bad("all counts must be positive");
        }
        let s = &self.docs_per_split;
        if s.train == 0 || s.dev == 0 || s.test == 0 {
            return bad("every split needs at least one document");
        }
        for (name, v) in [
            ("coverage", self.coverage),
            ("label_signal", self.label_signal),
            ("specificity_mismatch", self.specificity_mismatch),
            ("two_token_rate", self.two_token_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidSpec(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.fanout < 1 {
            return bad("fanout must be positive");
        }
        if let LabelScheme::NoisyOr { concepts_per_label } = self.label_scheme {
            if concepts_per_label == 0 || concepts_per_label > self.concept_count {
                return bad("concepts_per_label must be in 1..=concept_count");
            }
        }
        self.variants_per_concept.validate()?;
        if self.coverage > 0.0 && (self.mean_doc_length as f64) * self.coverage < 1.0 {
            return Err(Error::CoverageUnreachable(format!(
                "mean_doc_length {} * coverage {} is below one annotated token per document",
                self.mean_doc_length, self.coverage
            )));
        }
        if self.coverage > 0.0 && self.coverage < 1.0 && self.mean_doc_length >= MAX_TOKENS {
            return Err(Error::CoverageUnreachable(format!(
                "mean_doc_length {} leaves no room under the {MAX_TOKENS}-token cap",
                self.mean_doc_length
            )));
        }
        Ok(())
    }
}

/// Everything the generator produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// All documents (train, dev, test in that order), with gold annotations attached.
    pub documents: Vec<Document>,
    pub dictionary: Dictionary,
    pub ontology: Ontology,
    pub label_space: LabelSpace,
    pub split: CorpusSplit,
    /// Leaf concept codes in index order.
    pub concepts: Vec<String>,
    /// Distinct surface phrases owned by each concept (parallel to `concepts`).
    pub concept_phrases: Vec<Vec<Vec<String>>>,
}

impl SyntheticCorpus {
    /// Distinct phrases per concept, recounted from `concept_phrases`.
    pub fn variant_counts(&self) -> Vec<usize> {
        self.concept_phrases
            .iter()
            .map(|ps| ps.iter().collect::<BTreeSet<_>>().len())
            .collect()
    }
}

fn letters(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

pub fn filler_word(i: usize) -> String {
    format!("f{}", letters(i))
}

pub fn phrase_word(i: usize) -> String {
    format!("p{}", letters(i))
}

fn concept_code(i: usize) -> String {
    format!("C{i:04}")
}

/// Geometric with mean `mean` on {1, 2, ...}, truncated to [`MAX_TOKENS`].
fn sample_length(rng: &mut impl Rng, mean: usize) -> usize {
    if mean <= 1 {
        return 1;
    }
    let p = 1.0 / mean as f64;
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let n = (u.ln() / (1.0 - p).ln()).ceil() as usize;
    n.clamp(1, MAX_TOKENS)
}

enum Item {
    Phrase(usize, usize),
    Filler(usize),
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Ontology: leaves -> groups -> chapters.
    let n_groups = spec.concept_count.div_ceil(spec.fanout);
    let n_chapters = n_groups.div_ceil(spec.fanout);
    let concepts: Vec<String> = (0..spec.concept_count).map(concept_code).collect();
    let group = |i: usize| format!("G{:03}", i / spec.fanout);
    let mut edges: Vec<(String, Option<String>)> = Vec::new();
    for c in 0..n_chapters {
        edges.push((format!("R{c:02}"), None));
    }
    for g in 0..n_groups {
        edges.push((format!("G{g:03}"), Some(format!("R{:02}", g / spec.fanout))));
    }
    for (i, c) in concepts.iter().enumerate() {
        edges.push((c.clone(), Some(group(i))));
    }
    let ontology = Ontology::from_edges(edges)?;

    // Phrases and dictionary.
    let mut next_word = 0usize;
    let mut dictionary = Dictionary::new();
    let mut concept_phrases = Vec::with_capacity(spec.concept_count);
    let mut phrase_codes = Vec::with_capacity(spec.concept_count);
    for (i, code) in concepts.iter().enumerate() {
        let n_variants = spec.variants_per_concept.sample(&mut rng);
        let mut phrases = Vec::with_capacity(n_variants);
        let mut codes = Vec::with_capacity(n_variants);
        for _ in 0..n_variants {
            let len = if rng.gen::<f64>() < spec.two_token_rate { 2 } else { 1 };
            let phrase: Vec<String> = (0..len)
                .map(|_| {
                    next_word += 1;
                    phrase_word(next_word - 1)
                })
                .collect();
            let emitted = if rng.gen::<f64>() < spec.specificity_mismatch {
                group(i)
            } else {
                code.clone()
            };
            dictionary.insert(phrase.clone(), emitted.clone());
            phrases.push(phrase);
            codes.push(emitted);
        }
        concept_phrases.push(phrases);
        phrase_codes.push(codes);
    }

    // Label structure.
    let (label_space, label_members) = match spec.label_scheme {
        LabelScheme::NoisyOr { concepts_per_label } => {
            let codes: Vec<String> = (0..spec.label_count).map(|i| format!("L{i:03}")).collect();
            let all: Vec<usize> = (0..spec.concept_count).collect();
            let members: Vec<Vec<usize>> = (0..spec.label_count)
                .map(|_| {
                    let mut m: Vec<usize> = all.choose_multiple(&mut rng, concepts_per_label).copied().collect();
                    m.sort_unstable();
                    m
                })
                .collect();
            (LabelSpace::new(codes)?, Some(members))
        }
        LabelScheme::ConceptCodes => (LabelSpace::new(concepts.clone())?, None),
    };

    // Documents.
    let counts = spec.docs_per_split;
    let total_docs = counts.train + counts.dev + counts.test;
    let mut documents = Vec::with_capacity(total_docs);
    let mut split = CorpusSplit::default();
    for d in 0..total_docs {
        let target_len = sample_length(&mut rng, spec.mean_doc_length);
        let exact = spec.coverage * target_len as f64;
        let mut budget = exact.floor() as usize;
        if rng.gen::<f64>() < exact - exact.floor() {
            budget += 1;
        }

        let mut items = Vec::new();
        let mut annotated = 0usize;
        while annotated < budget {
            let c = rng.gen_range(0..spec.concept_count);
            let v = rng.gen_range(0..concept_phrases[c].len());
            annotated += concept_phrases[c][v].len();
            items.push(Item::Phrase(c, v));
        }
        let fillers = if spec.coverage >= 1.0 {
            0
        } else if spec.coverage <= 0.0 || annotated == 0 {
            target_len
        } else {
            (annotated as f64 * (1.0 - spec.coverage) / spec.coverage).round() as usize
        };
        for _ in 0..fillers {
            items.push(Item::Filler(rng.gen_range(0..spec.vocab_size)));
        }
        items.shuffle(&mut rng);

        let mut tokens = Vec::new();
        let mut annotations = Vec::new();
        let mut mentioned = BTreeSet::new();
        for item in &items {
            match *item {
                Item::Filler(w) => tokens.push(filler_word(w)),
                Item::Phrase(c, v) => {
                    let phrase = &concept_phrases[c][v];
                    if tokens.len() + phrase.len() > MAX_TOKENS {
                        continue;
                    }
                    annotations.push(Annotation::new(tokens.len(), tokens.len() + phrase.len(), phrase_codes[c][v].clone()));
                    tokens.extend(phrase.iter().cloned());
                    mentioned.insert(c);
                }
            }
        }
        tokens.truncate(MAX_TOKENS);
        if tokens.is_empty() {
            tokens.push(filler_word(rng.gen_range(0..spec.vocab_size)));
        }

        let labels: BTreeSet<String> = match &label_members {
            Some(members) => members
                .iter()
                .enumerate()
                .filter(|(_, m)| {
                    let hits = m.iter().filter(|c| mentioned.contains(c)).count();
                    (0..hits).any(|_| rng.gen::<f64>() < spec.label_signal)
                })
                .map(|(l, _)| label_space.codes()[l].clone())
                .collect(),
            None => mentioned.iter().map(|&c| concepts[c].clone()).collect(),
        };

        let doc_id = format!("doc{d:05}");
        let mut doc = Document::new(doc_id.clone(), format!("pt{d:05}"), tokens);
        doc.labels = labels;
        doc.annotations = Some(annotations);
        match d {
            d if d < counts.train => split.train.push(doc_id),
            d if d < counts.train + counts.dev => split.dev.push(doc_id),
            _ => split.test.push(doc_id),
        }
        documents.push(doc);
    }

    Ok(SyntheticCorpus {
        documents,
        dictionary,
        ontology,
        label_space,
        split,
        concepts,
        concept_phrases,
    })
}
