use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Representation of a token that lies inside an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedRepr {
    Word,
    Concept,
    Zero,
    /// Learned per-(word, concept) interpolation between concept and word.
    Gate,
}

/// Representation of a token outside every annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedRepr {
    Word,
    Zero,
}

/// Rule pair deciding how matched and unmatched tokens are represented.
/// The baseline, both augmentation schemes and the ablations are all
/// instances of this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct TokenPolicy {
    pub matched: MatchedRepr,
    pub unmatched: UnmatchedRepr,
}

impl TokenPolicy {
    pub const BASELINE: Self = Self::new(MatchedRepr::Word, UnmatchedRepr::Word);
    pub const FULL_REPLACE: Self = Self::new(MatchedRepr::Concept, UnmatchedRepr::Word);
    pub const LINEAR_COMBINATION: Self = Self::new(MatchedRepr::Gate, UnmatchedRepr::Word);
    pub const DUMMY_CONCEPTS: Self = Self::new(MatchedRepr::Zero, UnmatchedRepr::Word);
    pub const CONCEPTS_ONLY: Self = Self::new(MatchedRepr::Word, UnmatchedRepr::Zero);
    pub const CONCEPTS_ONLY_CONCEPT_EMBEDDINGS: Self = Self::new(MatchedRepr::Concept, UnmatchedRepr::Zero);

    pub const NAMED: [(&'static str, TokenPolicy); 6] = [
        ("baseline", Self::BASELINE),
        ("full-replace", Self::FULL_REPLACE),
        ("linear-combination", Self::LINEAR_COMBINATION),
        ("dummy-concepts", Self::DUMMY_CONCEPTS),
        ("concepts-only", Self::CONCEPTS_ONLY),
        ("concepts-only-concept-embeddings", Self::CONCEPTS_ONLY_CONCEPT_EMBEDDINGS),
    ];

    pub const fn new(matched: MatchedRepr, unmatched: UnmatchedRepr) -> Self {
        Self { matched, unmatched }
    }

    pub fn name(&self) -> Option<&'static str> {
        Self::NAMED.iter().find(|(_, p)| p == self).map(|(n, _)| *n)
    }

    /// Whether the representation depends on which tokens are annotated.
    pub fn reads_annotations(&self) -> bool {
        *self != Self::BASELINE
    }

    pub fn uses_concept_embeddings(&self) -> bool {
        matches!(self.matched, MatchedRepr::Concept | MatchedRepr::Gate)
    }
}

impl Default for TokenPolicy {
    fn default() -> Self {
        Self::BASELINE
    }
}

impl fmt::Display for TokenPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(f, "{:?}/{:?}", self.matched, self.unmatched),
        }
    }
}

impl FromStr for TokenPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::NAMED
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

impl From<TokenPolicy> for String {
    fn from(p: TokenPolicy) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for TokenPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_policies_match_table_columns() {
        use MatchedRepr as M;
        use UnmatchedRepr as U;
        let expect = [
            ("baseline", M::Word, U::Word),
            ("full-replace", M::Concept, U::Word),
            ("linear-combination", M::Gate, U::Word),
            ("dummy-concepts", M::Zero, U::Word),
            ("concepts-only", M::Word, U::Zero),
            ("concepts-only-concept-embeddings", M::Concept, U::Zero),
        ];
        for (name, m, u) in expect {
            let p: TokenPolicy = name.parse().unwrap();
            assert_eq!((p.matched, p.unmatched), (m, u));
            assert_eq!(p.to_string(), name);
        }
        assert!("bogus".parse::<TokenPolicy>().is_err());
    }
}
