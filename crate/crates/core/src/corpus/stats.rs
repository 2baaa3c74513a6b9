use serde::{Deserialize, Serialize};

use super::Document;

/// Concept-extraction statistics over an annotated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub documents: usize,
    pub total_concepts: usize,
    pub mean_concepts_per_doc: f64,
    /// Mean over documents of the fraction of tokens inside at least one annotation.
    pub mean_coverage: f64,
    pub mean_tokens_per_doc: f64,
}

pub fn coverage_stats(docs: &[Document]) -> CoverageStats {
    let mut total_concepts = 0usize;
    let mut coverage_sum = 0.0;
    let mut token_sum = 0usize;
    for d in docs {
        token_sum += d.len();
        let anns = d.annotations.as_deref().unwrap_or(&[]);
        total_concepts += anns.len();
        if d.is_empty() {
            continue;
        }
        let mut covered = vec![false; d.len()];
        for a in anns {
            for c in covered.iter_mut().take(a.end.min(d.len())).skip(a.start) {
                *c = true;
            }
        }
        coverage_sum += covered.iter().filter(|&&c| c).count() as f64 / d.len() as f64;
    }
    let n = docs.len().max(1) as f64;
    CoverageStats {
        documents: docs.len(),
        total_concepts,
        mean_concepts_per_doc: total_concepts as f64 / n,
        mean_coverage: coverage_sum / n,
        mean_tokens_per_doc: token_sum as f64 / n,
    }
}
