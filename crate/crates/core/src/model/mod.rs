//! The document classifier: token composition, optional overlap attention
//! and hierarchy embeddings, convolution, per-label attention pooling.
//!
//! Gradients are computed by hand; see `tests/gradients.rs` for the finite
//! difference checks.

mod checkpoint;
mod gate;
pub mod layers;
mod params;
mod policy;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::align;
use crate::corpus::{build_vocabulary, Document, Vocabulary};
use crate::multitask::{span_repr, AuxCache, AuxConfig, AuxHead, SharePoint};
use crate::ontology::{build_concept_vocabulary, LabelSpace, Ontology};
use crate::{Error, Result};

pub use checkpoint::Checkpoint;
pub use gate::GateTable;
pub use layers::{LabelAttention, Scorer};
pub use params::{Adam, Params};
pub use policy::{MatchedRepr, TokenPolicy, UnmatchedRepr};

use layers::{col2im, im2col, label_attention, sigmoid, softmax, softmax_backward, softplus, uniform_matrix, xavier, ScorerCache};

/// RNG stream ids derived from one seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_AUX_INIT: u64 = 1;
pub(crate) const STREAM_DROPOUT: u64 = 2;
pub(crate) const STREAM_SHUFFLE: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub policy: TokenPolicy,
    /// Attend over every concept covering a token instead of taking the first.
    pub overlap_attention: bool,
    /// Hierarchy-aware concept embeddings.
    pub gram: bool,
    pub embed_dim: usize,
    pub conv_dim: usize,
    pub kernel_width: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub attention_hidden: usize,
    /// Minimum count for a (word, concept) pair to get its own gate.
    pub min_pair_count: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            policy: TokenPolicy::BASELINE,
            overlap_attention: false,
            gram: false,
            embed_dim: 100,
            conv_dim: 50,
            kernel_width: 10,
            dropout: 0.2,
            learning_rate: 1e-4,
            batch_size: 12,
            attention_hidden: 20,
            min_pair_count: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("conv_dim", self.conv_dim),
            ("kernel_width", self.kernel_width),
            ("batch_size", self.batch_size),
            ("attention_hidden", self.attention_hidden),
            ("min_pair_count", self.min_pair_count),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// One auxiliary training target: tokens `[start, end)` annotated with `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxSpan {
    pub start: usize,
    pub end: usize,
    pub target: usize,
}

/// A document mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub doc_id: String,
    pub words: Vec<usize>,
    /// Concept indices covering each token, first-emitted first. Empty when
    /// the policy does not read annotations.
    pub concepts: Vec<Vec<usize>>,
    pub gate_slots: Vec<usize>,
    pub gold: Vec<bool>,
    /// Auxiliary targets; only filled for training.
    pub spans: Vec<AuxSpan>,
}

impl EncodedDoc {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn matched(&self, n: usize) -> bool {
        self.concepts.get(n).is_some_and(|c| !c.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub aux: Option<AuxConfig>,
    pub words: Vocabulary,
    pub concepts: Vocabulary,
    pub labels: LabelSpace,
    pub gates: GateTable,
    /// For each concept index: itself followed by its in-vocabulary ancestors.
    pub ancestors: Vec<Vec<usize>>,
    pub params: Params,
}

/// Per-document loss pieces of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    /// Summed per-document BCE (each averaged over labels).
    pub bce: f64,
    /// Summed auxiliary negative log-likelihood over spans.
    pub aux_nll: f64,
    pub spans: usize,
    pub aux_correct: usize,
    pub lambda: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        if self.spans == 0 || self.lambda == 0.0 {
            self.bce
        } else {
            self.bce + self.lambda * self.aux_nll / self.spans as f64
        }
    }

    fn merge(&mut self, other: &BatchLoss) {
        self.bce += other.bce;
        self.aux_nll += other.aux_nll;
        self.spans += other.spans;
        self.aux_correct += other.aux_correct;
    }
}

enum EmbedCache {
    Plain(usize),
    Gram {
        chain: Vec<usize>,
        inputs: Vec<Array1<f64>>,
        caches: Vec<ScorerCache>,
        alpha: Vec<f64>,
    },
}

struct ConceptVec {
    out: Array1<f64>,
    kind: ConceptKind,
}

enum ConceptKind {
    Single(EmbedCache),
    Overlap {
        context_words: [usize; 4],
        candidates: Vec<(Array1<f64>, EmbedCache)>,
        inputs: Vec<Array1<f64>>,
        caches: Vec<ScorerCache>,
        alpha: Vec<f64>,
    },
}

enum TokenCache {
    Word,
    Zero,
    Concept(ConceptVec),
    Gate { slot: usize, beta: f64, concept: ConceptVec },
}

/// Everything the backward pass needs from one forward pass.
pub struct Forward {
    tokens: Vec<TokenCache>,
    /// Composed input after dropout, d_e × N.
    pub x: Array2<f64>,
    mask: Option<Array2<f64>>,
    patches: Array2<f64>,
    /// Convolution output, d_c × N.
    pub h: Array2<f64>,
    pub attention: LabelAttention,
}

struct SpanCache {
    z: Array1<f64>,
    argcols: Vec<usize>,
    head: AuxCache,
    target: usize,
}

impl Model {
    /// Fresh model with initialized parameters.
    pub fn new(
        config: ModelConfig,
        aux: Option<AuxConfig>,
        words: Vocabulary,
        concepts: Vocabulary,
        labels: LabelSpace,
        gates: GateTable,
        ontology: Option<&Ontology>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(a) = &aux {
            a.validate()?;
        }
        if labels.is_empty() {
            return Err(Error::Config("label space is empty".into()));
        }
        let ancestors = concept_chains(&concepts, ontology);
        let d = config.embed_dim;
        let mut rng = stream_rng(config.seed, STREAM_INIT);
        let mut word_emb = uniform_matrix(&mut rng, words.len(), d, 0.1);
        word_emb.row_mut(Vocabulary::PAD).fill(0.0);
        let mut concept_emb = uniform_matrix(&mut rng, concepts.len(), d, 0.1);
        concept_emb.row_mut(Vocabulary::PAD).fill(0.0);
        let overlap = Scorer::new(&mut rng, 5 * d, config.attention_hidden);
        let gram = Scorer::new(&mut rng, 2 * d, config.attention_hidden);
        let conv_w = xavier(&mut rng, config.conv_dim, config.kernel_width * d);
        let label_query = xavier(&mut rng, labels.len(), config.conv_dim);
        let label_out = xavier(&mut rng, labels.len(), config.conv_dim);
        let aux_head = aux.map(|a| {
            let input = match a.share_point {
                SharePoint::PreConvolution => d,
                SharePoint::PostConvolution => config.conv_dim,
            };
            AuxHead::new(&mut stream_rng(config.seed, STREAM_AUX_INIT), a.head, input, concepts.len())
        });
        let params = Params {
            word_emb,
            concept_emb,
            gate_logits: Array1::zeros(gates.len()),
            overlap,
            gram,
            conv_w,
            conv_b: Array1::zeros(config.conv_dim),
            label_query,
            label_out,
            label_bias: Array1::zeros(labels.len()),
            aux: aux_head,
        };
        Ok(Self {
            config,
            aux,
            words,
            concepts,
            labels,
            gates,
            ancestors,
            params,
        })
    }

    /// Build vocabularies and the gate table from the training documents,
    /// then initialize.
    pub fn from_training(
        config: ModelConfig,
        aux: Option<AuxConfig>,
        train: &[Document],
        labels: LabelSpace,
        ontology: Option<&Ontology>,
        min_df: usize,
    ) -> Result<Self> {
        let needs_annotations = config.policy.reads_annotations() || aux.is_some_and(|a| a.lambda > 0.0);
        if needs_annotations {
            if let Some(d) = train.iter().find(|d| d.annotations.is_none()) {
                return Err(Error::MissingAnnotations(d.doc_id.clone()));
            }
        }
        let words = build_vocabulary(train, min_df)?;
        let concepts = build_concept_vocabulary(train, ontology, min_df)?;
        let gates = if config.policy.matched == MatchedRepr::Gate {
            let mut pairs = Vec::new();
            for d in train {
                let alignment = align(d.len(), d.annotations.as_deref().unwrap_or(&[]))?;
                for (tok, sel) in d.tokens.iter().zip(&alignment.selected) {
                    if let Some(code) = sel {
                        pairs.push((words.lookup(tok), concepts.lookup(code)));
                    }
                }
            }
            GateTable::from_observations(pairs, concepts.len(), config.min_pair_count)
        } else {
            GateTable::default()
        };
        Self::new(config, aux, words, concepts, labels, gates, ontology)
    }

    /// Restore lookup tables after deserialization.
    pub fn rebuild_indices(&mut self) {
        self.words.rebuild_index();
        self.concepts.rebuild_index();
        self.labels.rebuild_index();
        self.gates.rebuild_index();
    }

    pub fn policy(&self) -> TokenPolicy {
        self.config.policy
    }

    /// Encode for inference. Annotations are read only when the policy
    /// consumes them.
    pub fn encode(&self, doc: &Document) -> Result<EncodedDoc> {
        self.encode_inner(doc, false)
    }

    /// Encode for training, including auxiliary span targets when the model
    /// has an auxiliary head.
    pub fn encode_for_training(&self, doc: &Document) -> Result<EncodedDoc> {
        self.encode_inner(doc, true)
    }

    fn encode_inner(&self, doc: &Document, training: bool) -> Result<EncodedDoc> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        let words: Vec<usize> = doc.tokens.iter().map(|t| self.words.lookup(t)).collect();
        let mut concepts = Vec::new();
        let mut gate_slots = vec![0; words.len()];
        if self.config.policy.reads_annotations() {
            let anns = doc
                .annotations
                .as_deref()
                .ok_or_else(|| Error::MissingAnnotations(doc.doc_id.clone()))?;
            let alignment = align(doc.len(), anns)?;
            concepts = alignment
                .concept_sets
                .iter()
                .map(|set| set.iter().map(|c| self.concepts.lookup(c)).collect::<Vec<_>>())
                .collect();
            for (n, set) in concepts.iter().enumerate() {
                if let Some(&c) = set.first() {
                    gate_slots[n] = self.gates.slot(words[n], c);
                }
            }
        }
        let mut spans = Vec::new();
        if training {
            if let Some(aux) = &self.aux {
                match doc.annotations.as_deref() {
                    Some(anns) => {
                        for a in anns {
                            if a.start >= a.end || a.end > doc.len() {
                                return Err(Error::SpanOutOfRange {
                                    start: a.start,
                                    end: a.end,
                                    len: doc.len(),
                                });
                            }
                            spans.push(AuxSpan {
                                start: a.start,
                                end: a.end,
                                target: self.concepts.lookup(&a.code),
                            });
                        }
                    }
                    None if aux.lambda > 0.0 => return Err(Error::MissingAnnotations(doc.doc_id.clone())),
                    None => {}
                }
            }
        }
        Ok(EncodedDoc {
            doc_id: doc.doc_id.clone(),
            words,
            concepts,
            gate_slots,
            gold: self.labels.encode(&doc.labels),
            spans,
        })
    }

    fn word_row(&self, w: usize) -> ArrayView1<'_, f64> {
        self.params.word_emb.row(w)
    }

    fn concept_embed(&self, c: usize) -> (Array1<f64>, EmbedCache) {
        let p = &self.params;
        let chain = &self.ancestors[c];
        if !self.config.gram || chain.len() <= 1 {
            return (p.concept_emb.row(c).to_owned(), EmbedCache::Plain(c));
        }
        let own = p.concept_emb.row(c);
        let mut inputs = Vec::with_capacity(chain.len());
        let mut caches = Vec::with_capacity(chain.len());
        let mut scores = Vec::with_capacity(chain.len());
        for &a in chain {
            let input = ndarray::concatenate![Axis(0), own, p.concept_emb.row(a)];
            let (s, cache) = p.gram.score(input.view());
            inputs.push(input);
            caches.push(cache);
            scores.push(s);
        }
        let alpha = softmax(&scores);
        let mut out = Array1::zeros(own.len());
        for (&a, &w) in chain.iter().zip(&alpha) {
            out.scaled_add(w, &p.concept_emb.row(a));
        }
        let cache = EmbedCache::Gram {
            chain: chain.clone(),
            inputs,
            caches,
            alpha,
        };
        (out, cache)
    }

    fn concept_embed_backward(&self, cache: &EmbedCache, dout: ArrayView1<f64>, grads: &mut Params) {
        match cache {
            EmbedCache::Plain(c) => {
                let mut row = grads.concept_emb.row_mut(*c);
                row += &dout;
            }
            EmbedCache::Gram {
                chain,
                inputs,
                caches,
                alpha,
            } => {
                let d = self.config.embed_dim;
                let p = &self.params;
                let dalpha: Vec<f64> = chain.iter().map(|&a| p.concept_emb.row(a).dot(&dout)).collect();
                for (&a, &w) in chain.iter().zip(alpha) {
                    grads.concept_emb.row_mut(a).scaled_add(w, &dout);
                }
                let ds = softmax_backward(alpha, &dalpha);
                let own = chain[0];
                for (j, &a) in chain.iter().enumerate() {
                    let dx = p.gram.backward(inputs[j].view(), &caches[j], ds[j], &mut grads.gram);
                    let mut r = grads.concept_emb.row_mut(own);
                    r += &dx.slice(s![..d]);
                    let mut r = grads.concept_emb.row_mut(a);
                    r += &dx.slice(s![d..]);
                }
            }
        }
    }

    fn concept_vec(&self, doc: &EncodedDoc, n: usize) -> ConceptVec {
        let set = &doc.concepts[n];
        if !self.config.overlap_attention || set.len() == 1 {
            let (out, cache) = self.concept_embed(set[0]);
            return ConceptVec {
                out,
                kind: ConceptKind::Single(cache),
            };
        }
        let context_words = context_window(&doc.words, n);
        let context = ndarray::concatenate![
            Axis(0),
            self.word_row(context_words[0]),
            self.word_row(context_words[1]),
            self.word_row(context_words[2]),
            self.word_row(context_words[3])
        ];
        let candidates: Vec<(Array1<f64>, EmbedCache)> = set.iter().map(|&c| self.concept_embed(c)).collect();
        let mut inputs = Vec::with_capacity(set.len());
        let mut caches = Vec::with_capacity(set.len());
        let mut scores = Vec::with_capacity(set.len());
        for (v, _) in &candidates {
            let input = ndarray::concatenate![Axis(0), context.view(), v.view()];
            let (sc, cache) = self.params.overlap.score(input.view());
            inputs.push(input);
            caches.push(cache);
            scores.push(sc);
        }
        let alpha = softmax(&scores);
        let mut out = Array1::zeros(self.config.embed_dim);
        for ((v, _), &w) in candidates.iter().zip(&alpha) {
            out.scaled_add(w, v);
        }
        ConceptVec {
            out,
            kind: ConceptKind::Overlap {
                context_words,
                candidates,
                inputs,
                caches,
                alpha,
            },
        }
    }

    fn concept_vec_backward(&self, cv: &ConceptVec, dout: ArrayView1<f64>, grads: &mut Params) {
        match &cv.kind {
            ConceptKind::Single(cache) => self.concept_embed_backward(cache, dout, grads),
            ConceptKind::Overlap {
                context_words,
                candidates,
                inputs,
                caches,
                alpha,
            } => {
                let d = self.config.embed_dim;
                let dalpha: Vec<f64> = candidates.iter().map(|(v, _)| v.dot(&dout)).collect();
                let ds = softmax_backward(alpha, &dalpha);
                for (j, (_, cache)) in candidates.iter().enumerate() {
                    let dx = self
                        .params
                        .overlap
                        .backward(inputs[j].view(), &caches[j], ds[j], &mut grads.overlap);
                    for (k, &w) in context_words.iter().enumerate() {
                        let mut r = grads.word_emb.row_mut(w);
                        r += &dx.slice(s![k * d..(k + 1) * d]);
                    }
                    let dv = &dx.slice(s![4 * d..]) + &(&dout * alpha[j]);
                    self.concept_embed_backward(cache, dv.view(), grads);
                }
            }
        }
    }

    fn compose(&self, doc: &EncodedDoc, n: usize) -> (Array1<f64>, TokenCache) {
        let w = doc.words[n];
        let policy = self.config.policy;
        let zero = || (Array1::zeros(self.config.embed_dim), TokenCache::Zero);
        if !doc.matched(n) {
            return match policy.unmatched {
                UnmatchedRepr::Word => (self.word_row(w).to_owned(), TokenCache::Word),
                UnmatchedRepr::Zero => zero(),
            };
        }
        match policy.matched {
            MatchedRepr::Word => (self.word_row(w).to_owned(), TokenCache::Word),
            MatchedRepr::Zero => zero(),
            MatchedRepr::Concept => {
                let cv = self.concept_vec(doc, n);
                (cv.out.clone(), TokenCache::Concept(cv))
            }
            MatchedRepr::Gate => {
                let cv = self.concept_vec(doc, n);
                let slot = doc.gate_slots[n];
                let beta = sigmoid(self.params.gate_logits[slot]);
                let out = &cv.out * beta + &(&self.word_row(w) * (1.0 - beta));
                (out, TokenCache::Gate { slot, beta, concept: cv })
            }
        }
    }

    fn compose_backward(&self, doc: &EncodedDoc, n: usize, cache: &TokenCache, dd: ArrayView1<f64>, grads: &mut Params) {
        let w = doc.words[n];
        match cache {
            TokenCache::Zero => {}
            TokenCache::Word => {
                let mut r = grads.word_emb.row_mut(w);
                r += &dd;
            }
            TokenCache::Concept(cv) => self.concept_vec_backward(cv, dd, grads),
            TokenCache::Gate { slot, beta, concept } => {
                grads.word_emb.row_mut(w).scaled_add(1.0 - beta, &dd);
                let dbeta = (&concept.out - &self.word_row(w)).dot(&dd);
                grads.gate_logits[*slot] += dbeta * beta * (1.0 - beta);
                let dc = &dd * *beta;
                self.concept_vec_backward(concept, dc.view(), grads);
            }
        }
    }

    /// Composed input matrix X (d_e × N), before dropout.
    pub fn build_input(&self, doc: &EncodedDoc) -> Result<Array2<f64>> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        let mut x = Array2::zeros((self.config.embed_dim, doc.len()));
        for n in 0..doc.len() {
            x.column_mut(n).assign(&self.compose(doc, n).0);
        }
        Ok(x)
    }

    /// Full forward pass. Dropout is applied when `dropout_rng` is given.
    pub fn forward(&self, doc: &EncodedDoc, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        if doc.is_empty() {
            return Err(Error::EmptyDocument(doc.doc_id.clone()));
        }
        let n_tokens = doc.len();
        let mut x = Array2::zeros((self.config.embed_dim, n_tokens));
        let mut tokens = Vec::with_capacity(n_tokens);
        for n in 0..n_tokens {
            let (col, cache) = self.compose(doc, n);
            x.column_mut(n).assign(&col);
            tokens.push(cache);
        }
        let p = self.config.dropout;
        let mask = match dropout_rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let m = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < p { 0.0 } else { keep });
                x *= &m;
                Some(m)
            }
            _ => None,
        };
        let (patches, h, attention) = self.encode_columns(&x, n_tokens);
        Ok(Forward {
            tokens,
            x,
            mask,
            patches,
            h,
            attention,
        })
    }

    fn encode_columns(&self, x: &Array2<f64>, n_valid: usize) -> (Array2<f64>, Array2<f64>, LabelAttention) {
        let p = &self.params;
        let patches = im2col(x.view(), self.config.kernel_width);
        let mut h = p.conv_w.dot(&patches);
        for mut col in h.columns_mut() {
            col += &p.conv_b;
        }
        h.mapv_inplace(f64::tanh);
        let attention = label_attention(h.view(), &p.label_query, &p.label_out, &p.label_bias, n_valid);
        (patches, h, attention)
    }

    /// Label probabilities without dropout.
    pub fn predict(&self, doc: &EncodedDoc) -> Result<Array1<f64>> {
        Ok(self.forward(doc, None)?.attention.probs)
    }

    /// Label probabilities plus the L × N attention maps.
    pub fn predict_with_attention(&self, doc: &EncodedDoc) -> Result<(Array1<f64>, Array2<f64>)> {
        let f = self.forward(doc, None)?;
        Ok((f.attention.probs, f.attention.attention))
    }

    /// Batched inference: documents are padded with zero columns to the
    /// longest one and padded columns are masked out of the label attention.
    pub fn predict_batch(&self, docs: &[EncodedDoc]) -> Result<Vec<Array1<f64>>> {
        let width = docs.iter().map(EncodedDoc::len).max().unwrap_or(0);
        docs.par_iter()
            .map(|doc| {
                let x = self.build_input(doc)?;
                let mut padded = Array2::zeros((self.config.embed_dim, width));
                padded.slice_mut(s![.., ..doc.len()]).assign(&x);
                Ok(self.encode_columns(&padded, doc.len()).2.probs)
            })
            .collect()
    }

    /// Probabilities for many documents in parallel.
    pub fn predict_all(&self, docs: &[EncodedDoc]) -> Result<Vec<Array1<f64>>> {
        docs.par_iter().map(|d| self.predict(d)).collect()
    }

    /// Shared representation the auxiliary head reads.
    fn aux_columns<'a>(&self, f: &'a Forward) -> Option<&'a Array2<f64>> {
        self.aux.map(|a| match a.share_point {
            SharePoint::PreConvolution => &f.x,
            SharePoint::PostConvolution => &f.h,
        })
    }

    fn aux_spans(&self, doc: &EncodedDoc, f: &Forward) -> Result<Vec<SpanCache>> {
        let (Some(head), Some(cols)) = (&self.params.aux, self.aux_columns(f)) else {
            return Ok(Vec::new());
        };
        doc.spans
            .iter()
            .map(|sp| {
                let (z, argcols) = span_repr(cols.view(), sp.start, sp.end)?;
                let head_cache = head.forward(z.view());
                Ok(SpanCache {
                    z,
                    argcols,
                    head: head_cache,
                    target: sp.target,
                })
            })
            .collect()
    }

    /// (predicted, target) concept indices for every training span, without dropout.
    pub fn tag_spans(&self, doc: &EncodedDoc) -> Result<Vec<(usize, usize)>> {
        let f = self.forward(doc, None)?;
        Ok(self
            .aux_spans(doc, &f)?
            .iter()
            .map(|s| (crate::multitask::argmax(&s.head.probs), s.target))
            .collect())
    }

    /// Backpropagate label-logit gradients (and optional extra gradients on
    /// X after dropout or on H) into `grads`.
    fn backward(
        &self,
        doc: &EncodedDoc,
        f: &Forward,
        dlogits: &Array1<f64>,
        dx_extra: Option<&Array2<f64>>,
        dh_extra: Option<&Array2<f64>>,
        grads: &mut Params,
    ) {
        let p = &self.params;
        let la = &f.attention;
        let n_valid = doc.len();
        grads.label_bias += dlogits;
        let mut dpooled = p.label_out.clone();
        for (l, mut row) in dpooled.rows_mut().into_iter().enumerate() {
            grads.label_out.row_mut(l).scaled_add(dlogits[l], &la.pooled.row(l));
            row *= dlogits[l];
        }
        let da = dpooled.dot(&f.h);
        let mut dh = dpooled.t().dot(&la.attention);
        let mut dscores = Array2::zeros(da.raw_dim());
        for l in 0..da.nrows() {
            let a = la.attention.row(l);
            let a = a.slice(s![..n_valid]);
            let g = da.row(l);
            let g = g.slice(s![..n_valid]);
            let ds = softmax_backward(a.as_slice().unwrap_or(&a.to_vec()), &g.to_vec());
            dscores.row_mut(l).slice_mut(s![..n_valid]).assign(&Array1::from(ds));
        }
        grads.label_query += &dscores.dot(&f.h.t());
        dh += &p.label_query.t().dot(&dscores);
        if let Some(e) = dh_extra {
            dh += e;
        }
        let mut dz = dh;
        dz.zip_mut_with(&f.h, |g, &hv| *g *= 1.0 - hv * hv);
        grads.conv_w += &dz.dot(&f.patches.t());
        grads.conv_b += &dz.sum_axis(Axis(1));
        let dpatches = p.conv_w.t().dot(&dz);
        let mut dx = col2im(dpatches.view(), self.config.embed_dim, self.config.kernel_width);
        if let Some(e) = dx_extra {
            dx += e;
        }
        if let Some(m) = &f.mask {
            dx *= m;
        }
        for (n, cache) in f.tokens.iter().enumerate() {
            self.compose_backward(doc, n, cache, dx.column(n), grads);
        }
    }

    /// Loss and gradient for one document. `aux_scale` multiplies the
    /// auxiliary NLL gradient (λ divided by the batch span count); zero skips
    /// the auxiliary path entirely.
    pub fn doc_gradient(&self, doc: &EncodedDoc, dropout_rng: Option<&mut ChaCha8Rng>, aux_scale: f64, grads: &mut Params) -> Result<BatchLoss> {
        let f = self.forward(doc, dropout_rng)?;
        let la = &f.attention;
        let n_labels = la.logits.len() as f64;
        let mut loss = BatchLoss::default();
        let mut dlogits = Array1::zeros(la.logits.len());
        for l in 0..la.logits.len() {
            let o = la.logits[l];
            let y = if doc.gold[l] { 1.0 } else { 0.0 };
            loss.bce += (softplus(o) - y * o) / n_labels;
            dlogits[l] = (la.probs[l] - y) / n_labels;
        }
        let mut dx_extra = None;
        let mut dh_extra = None;
        if aux_scale > 0.0 && !doc.spans.is_empty() {
            let spans = self.aux_spans(doc, &f)?;
            let head = self.params.aux.as_ref().expect("aux spans imply a head");
            let cols = self.aux_columns(&f).expect("aux spans imply a share point");
            let mut extra = Array2::zeros(cols.raw_dim());
            let grad_head = grads.aux.as_mut().expect("gradient has aux head");
            for sp in &spans {
                let pt = sp.head.probs[sp.target];
                loss.aux_nll -= pt.max(f64::MIN_POSITIVE).ln();
                loss.spans += 1;
                if crate::multitask::argmax(&sp.head.probs) == sp.target {
                    loss.aux_correct += 1;
                }
                let mut dl = Array1::from(sp.head.probs.clone());
                dl[sp.target] -= 1.0;
                dl *= aux_scale;
                let dz = head.backward(sp.z.view(), &sp.head, &dl, grad_head);
                for (i, &c) in sp.argcols.iter().enumerate() {
                    extra[[i, c]] += dz[i];
                }
            }
            match self.aux.expect("head implies config").share_point {
                SharePoint::PreConvolution => dx_extra = Some(extra),
                SharePoint::PostConvolution => dh_extra = Some(extra),
            }
        }
        self.backward(doc, &f, &dlogits, dx_extra.as_ref(), dh_extra.as_ref(), grads);
        Ok(loss)
    }

    /// Joint loss and summed gradient of a batch. Documents are processed in
    /// parallel, each with its own dropout stream drawn from `dropout_rng`,
    /// and gradients are summed in document order.
    pub fn batch_gradient(&self, batch: &[&EncodedDoc], lambda: f64, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(BatchLoss, Params)> {
        let has_aux = self.params.aux.is_some() && lambda > 0.0;
        let total_spans: usize = if has_aux { batch.iter().map(|d| d.spans.len()).sum() } else { 0 };
        let aux_scale = if total_spans > 0 { lambda / total_spans as f64 } else { 0.0 };
        let seeds: Option<Vec<u64>> = dropout_rng.map(|rng| batch.iter().map(|_| rng.gen()).collect());
        let parts: Vec<Result<(BatchLoss, Params)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, doc)| {
                let mut g = self.params.zeros_like();
                let mut rng = seeds.as_ref().map(|s| ChaCha8Rng::seed_from_u64(s[i]));
                let loss = self.doc_gradient(doc, rng.as_mut(), aux_scale, &mut g)?;
                Ok((loss, g))
            })
            .collect();
        let mut total = BatchLoss {
            lambda,
            ..Default::default()
        };
        let mut grads: Option<Params> = None;
        for part in parts {
            let (loss, g) = part?;
            total.merge(&loss);
            match &mut grads {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let mut grads = grads.unwrap_or_else(|| self.params.zeros_like());
        grads.word_emb.row_mut(Vocabulary::PAD).fill(0.0);
        grads.concept_emb.row_mut(Vocabulary::PAD).fill(0.0);
        Ok((total, grads))
    }

    /// Joint loss of a batch without dropout, including the auxiliary term
    /// whenever the model has a head and `lambda > 0`.
    pub fn batch_loss(&self, batch: &[&EncodedDoc], lambda: f64) -> Result<f64> {
        let mut total = BatchLoss {
            lambda,
            ..Default::default()
        };
        for doc in batch {
            let f = self.forward(doc, None)?;
            let la = &f.attention;
            let n_labels = la.logits.len() as f64;
            for l in 0..la.logits.len() {
                let y = if doc.gold[l] { 1.0 } else { 0.0 };
                total.bce += (softplus(la.logits[l]) - y * la.logits[l]) / n_labels;
            }
            if lambda > 0.0 {
                for sp in self.aux_spans(doc, &f)? {
                    total.aux_nll -= sp.head.probs[sp.target].max(f64::MIN_POSITIVE).ln();
                    total.spans += 1;
                }
            }
        }
        Ok(total.total())
    }
}

fn context_window(words: &[usize], n: usize) -> [usize; 4] {
    let at = |i: isize| {
        if i < 0 || i as usize >= words.len() {
            Vocabulary::PAD
        } else {
            words[i as usize]
        }
    };
    let n = n as isize;
    [at(n - 2), at(n - 1), at(n + 1), at(n + 2)]
}

fn concept_chains(concepts: &Vocabulary, ontology: Option<&Ontology>) -> Vec<Vec<usize>> {
    concepts
        .entries()
        .iter()
        .enumerate()
        .map(|(i, code)| {
            if i < 2 {
                return vec![i];
            }
            let mut chain = vec![i];
            if let Some(chain_codes) = ontology.and_then(|o| o.ancestors(code).ok()) {
                chain.extend(
                    chain_codes[1..]
                        .iter()
                        .filter(|c| concepts.contains(c))
                        .map(|c| concepts.lookup(c)),
                );
            }
            chain
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::Annotation;
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn fixture(policy: TokenPolicy) -> (Model, Vec<Document>) {
        let mut docs = Vec::new();
        for i in 0..4 {
            let mut d = Document::new(format!("d{i}"), format!("p{i}"), toks("the chest pain was severe and acute today"))
                .with_labels(if i % 2 == 0 { vec!["A"] } else { vec!["B"] });
            d.annotations = Some(vec![Annotation::new(1, 3, "C1"), Annotation::new(2, 3, "C2"), Annotation::new(5, 6, "C3")]);
            docs.push(d);
        }
        let edges = vec![
            ("C1".to_string(), Some("G1".to_string())),
            ("C2".to_string(), Some("G1".to_string())),
            ("C3".to_string(), Some("G1".to_string())),
            ("G1".to_string(), None),
        ];
        let ont = Ontology::from_edges(edges).unwrap();
        let config = ModelConfig {
            policy,
            embed_dim: 6,
            conv_dim: 4,
            kernel_width: 3,
            attention_hidden: 5,
            ..Default::default()
        };
        let labels = LabelSpace::new(["A", "B"]).unwrap();
        let model = Model::from_training(config, None, &docs, labels, Some(&ont), 1).unwrap();
        (model, docs)
    }

    #[test]
    fn baseline_input_is_word_embeddings() {
        let (m, docs) = fixture(TokenPolicy::BASELINE);
        let mut d = docs[0].clone();
        d.annotations = None;
        let e = m.encode(&d).unwrap();
        let x = m.build_input(&e).unwrap();
        for (n, &w) in e.words.iter().enumerate() {
            assert_eq!(x.column(n), m.params.word_emb.row(w));
        }
    }

    #[test]
    fn decomposition_sums_to_baseline() {
        let (base, docs) = fixture(TokenPolicy::BASELINE);
        let mut dummy = base.clone();
        dummy.config.policy = TokenPolicy::DUMMY_CONCEPTS;
        let mut only = base.clone();
        only.config.policy = TokenPolicy::CONCEPTS_ONLY;
        let xb = base.build_input(&base.encode(&docs[0]).unwrap()).unwrap();
        let xd = dummy.build_input(&dummy.encode(&docs[0]).unwrap()).unwrap();
        let xo = only.build_input(&only.encode(&docs[0]).unwrap()).unwrap();
        assert_eq!(xd + xo, xb);
    }

    #[test]
    fn gate_extremes_match_named_policies() {
        let (mut gate, docs) = fixture(TokenPolicy::LINEAR_COMBINATION);
        let mut replace = gate.clone();
        replace.config.policy = TokenPolicy::FULL_REPLACE;
        let mut base = gate.clone();
        base.config.policy = TokenPolicy::BASELINE;
        let e = gate.encode(&docs[1]).unwrap();
        gate.params.gate_logits.fill(f64::NEG_INFINITY);
        let pb = base.predict(&base.encode(&docs[1]).unwrap()).unwrap();
        let pg = gate.predict(&e).unwrap();
        for (a, b) in pb.iter().zip(&pg) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        gate.params.gate_logits.fill(f64::INFINITY);
        let pr = replace.predict(&replace.encode(&docs[1]).unwrap()).unwrap();
        let pg = gate.predict(&e).unwrap();
        for (a, b) in pr.iter().zip(&pg) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn full_replace_spans_share_vector() {
        let (m, docs) = fixture(TokenPolicy::FULL_REPLACE);
        let mut d = docs[0].clone();
        d.annotations = Some(vec![Annotation::new(1, 3, "C1")]);
        let x = m.build_input(&m.encode(&d).unwrap()).unwrap();
        assert_eq!(x.column(1), x.column(2));
        let base = m.params.word_emb.row(m.words.lookup("the"));
        assert_eq!(x.column(0), base);
    }

    #[test]
    fn gate_half_mixes_equally() {
        let (mut m, docs) = fixture(TokenPolicy::LINEAR_COMBINATION);
        let mut d = docs[0].clone();
        d.annotations = Some(vec![Annotation::new(5, 6, "C3")]);
        let e = m.encode(&d).unwrap();
        let w = e.words[5];
        let c = m.concepts.lookup("C3");
        m.params.word_emb.row_mut(w).fill(0.0);
        m.params.word_emb[[w, 0]] = 1.0;
        m.params.concept_emb.row_mut(c).fill(0.0);
        m.params.concept_emb[[c, 1]] = 1.0;
        m.params.gate_logits.fill(0.0);
        let x = m.build_input(&e).unwrap();
        assert_eq!(x[[0, 5]], 0.5);
        assert_eq!(x[[1, 5]], 0.5);
        assert!(x.column(5).iter().skip(2).all(|&v| v == 0.0));
    }

    #[test]
    fn padded_batch_matches_single() {
        let (m, mut docs) = fixture(TokenPolicy::LINEAR_COMBINATION);
        docs[1].tokens.truncate(3);
        docs[1].annotations = Some(vec![Annotation::new(1, 3, "C1")]);
        let enc: Vec<_> = docs.iter().map(|d| m.encode(d).unwrap()).collect();
        let batch = m.predict_batch(&enc).unwrap();
        for (e, b) in enc.iter().zip(&batch) {
            let single = m.predict(e).unwrap();
            for (x, y) in single.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empty_document_rejected() {
        let (m, _) = fixture(TokenPolicy::BASELINE);
        let d = Document::new("e", "p", vec![]);
        assert!(matches!(m.encode(&d), Err(Error::EmptyDocument(_))));
    }

    #[test]
    fn augmented_policy_requires_annotations() {
        let (m, docs) = fixture(TokenPolicy::FULL_REPLACE);
        let mut d = docs[0].clone();
        d.annotations = None;
        assert!(matches!(m.encode(&d), Err(Error::MissingAnnotations(_))));
    }

    #[test]
    fn gram_root_and_chains() {
        let (m, _) = fixture(TokenPolicy::FULL_REPLACE);
        let g1 = m.concepts.lookup("G1");
        let c1 = m.concepts.lookup("C1");
        assert_eq!(m.ancestors[g1], vec![g1]);
        assert_eq!(m.ancestors[c1], vec![c1, g1]);
    }
}
