use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;

/// Index of gate parameters keyed by (word index, concept index).
///
/// Slot 0 is the general (UNK, UNK) fallback. Lookup order for `(w, c)`:
/// the exact pair; `(UNK, c)` when the word is unknown; `(w, UNK)` when the
/// concept is unknown; otherwise the general slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTable {
    keys: Vec<(usize, usize)>,
    #[serde(skip)]
    index: HashMap<(usize, usize), usize>,
}

impl Default for GateTable {
    fn default() -> Self {
        Self::from_keys(vec![(Vocabulary::UNK, Vocabulary::UNK)])
    }
}

impl GateTable {
    /// Pairs seen at least `min_pair_count` times get their own slot; every
    /// known concept gets an (UNK word, concept) slot and every word seen
    /// with an unknown concept gets a (word, UNK concept) slot.
    pub fn from_observations<I>(pairs: I, n_concepts: usize, min_pair_count: usize) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        const UNK: usize = Vocabulary::UNK;
        let mut counts: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
        for p in pairs {
            *counts.entry(p).or_default() += 1;
        }
        let mut keys = vec![(UNK, UNK)];
        keys.extend((2..n_concepts).map(|c| (UNK, c)));
        for (&(w, c), &n) in &counts {
            let keep = match (w == UNK, c == UNK) {
                (false, false) => n >= min_pair_count,
                (false, true) => true,
                _ => false,
            };
            if keep {
                keys.push((w, c));
            }
        }
        Self::from_keys(keys)
    }

    fn from_keys(keys: Vec<(usize, usize)>) -> Self {
        let mut t = Self { keys, index: HashMap::new() };
        t.rebuild_index();
        t
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    }

    pub fn slot(&self, word: usize, concept: usize) -> usize {
        const UNK: usize = Vocabulary::UNK;
        if let Some(&i) = self.index.get(&(word, concept)) {
            return i;
        }
        let fallback = if word == UNK {
            self.index.get(&(UNK, concept))
        } else if concept == UNK {
            self.index.get(&(word, UNK))
        } else {
            None
        };
        fallback.copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[(usize, usize)] {
        &self.keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fallback_chain() {
        let t = GateTable::from_observations([(5, 3), (5, 3), (6, 3), (7, 1)], 4, 2);
        let exact = t.slot(5, 3);
        assert_ne!(exact, 0);
        assert_eq!(t.keys()[exact], (5, 3));
        // seen once: general slot
        assert_eq!(t.slot(6, 3), 0);
        assert_eq!(t.keys()[t.slot(1, 3)], (1, 3));
        assert_eq!(t.keys()[t.slot(7, 1)], (7, 1));
        assert_eq!(t.slot(1, 1), 0);
        assert_eq!(t.slot(9, 9), 0);
    }
}
