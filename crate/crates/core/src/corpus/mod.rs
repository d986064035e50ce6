//! Parse-annotated sentences, CoNLL-U and plain-text readers, the IDF
//! vocabulary, and padded batches.

mod batch;
mod conllu;
mod vocab;

pub use batch::{encode, make_batches, shuffled_batches, Batch, Example};
pub use conllu::{
    attach_labels, parse_conllu, parse_label_sidecar, parse_plain_text, write_conllu, ParseError,
    ParseOutcome,
};
pub use vocab::{rare_token_indices, rare_token_count, Vocabulary, PAD_ID, UNK_ID};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("malformed vocabulary record at line {line}: {message}")]
    VocabularyFormat { line: usize, message: String },
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("sentence {id} has no tokens")]
    EmptySentence { id: String },
    #[error("sentence {id} has no label")]
    MissingLabel { id: String },
    #[error(transparent)]
    Mask(#[from] crate::masks::MaskError),
}

/// A dependency edge from a token to its governor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dependency {
    /// 1-based index of the governing token; 0 is the virtual root.
    pub head: usize,
    /// Lowercased relation label with any `:subtype` suffix removed.
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub dep: Option<Dependency>,
}

impl Token {
    pub fn new(form: impl Into<String>) -> Self {
        Self {
            form: form.into(),
            dep: None,
        }
    }

    pub fn with_dep(form: impl Into<String>, head: usize, deprel: &str) -> Self {
        Self {
            form: form.into(),
            dep: Some(Dependency {
                head,
                deprel: normalize_deprel(deprel),
            }),
        }
    }
}

/// Lowercases a relation label and strips subtypes: `nsubj:pass` → `nsubj`.
pub fn normalize_deprel(raw: &str) -> String {
    raw.split(':').next().unwrap_or(raw).to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub label: Option<usize>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Self {
            id: id.into(),
            tokens,
            label: None,
        }
    }

    /// Whitespace-tokenized sentence without parse annotations.
    pub fn from_text(id: impl Into<String>, text: &str) -> Self {
        Self::new(id, text.split_whitespace().map(Token::new).collect())
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_parsed(&self) -> bool {
        self.tokens.iter().any(|t| t.dep.is_some())
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// Undirected parse edges as 0-based `(dependent, head)` pairs, skipping
    /// root attachments.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &str)> {
        self.tokens.iter().enumerate().filter_map(|(i, t)| {
            t.dep
                .as_ref()
                .filter(|d| d.head != 0)
                .map(|d| (i, d.head - 1, d.deprel.as_str()))
        })
    }

    /// Keeps the first `max_len` tokens. Edges to dropped tokens are removed.
    pub fn truncated(&self, max_len: usize) -> Sentence {
        if self.len() <= max_len {
            return self.clone();
        }
        let tokens = self.tokens[..max_len]
            .iter()
            .map(|t| Token {
                form: t.form.clone(),
                dep: t.dep.clone().filter(|d| d.head <= max_len),
            })
            .collect();
        Sentence {
            id: self.id.clone(),
            tokens,
            label: self.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deprel_subtypes_are_stripped() {
        assert_eq!(normalize_deprel("nsubj:pass"), "nsubj");
        assert_eq!(normalize_deprel("ADVMOD"), "advmod");
        assert_eq!(normalize_deprel("obl:tmod:x"), "obl");
    }

    #[test]
    fn truncation_drops_crossing_edges() {
        let s = Sentence::new(
            "t",
            vec![
                Token::with_dep("a", 3, "nsubj"),
                Token::with_dep("b", 1, "amod"),
                Token::with_dep("c", 0, "root"),
            ],
        );
        let t = s.truncated(2);
        assert_eq!(t.len(), 2);
        assert!(t.tokens[0].dep.is_none());
        assert_eq!(t.tokens[1].dep.as_ref().unwrap().head, 1);
        assert_eq!(t.edges().collect::<Vec<_>>(), vec![(1, 0, "amod")]);
    }
}
