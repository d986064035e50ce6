use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Sentence, Vocabulary, PAD_ID};
use crate::masks::{sentence_masks, MaskRole, RoleMask};

/// One sentence laid out in a fixed `max_len` buffer with its masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sentence_id: String,
    pub ids: Vec<usize>,
    pub length: usize,
    /// Role masks already combined with padding; the padding mask itself
    /// is stored under [`MaskRole::Padding`].
    pub masks: BTreeMap<MaskRole, RoleMask>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub max_len: usize,
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `batch × max_len` token ids.
    pub fn token_ids(&self) -> Vec<Vec<usize>> {
        self.examples.iter().map(|e| e.ids.clone()).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.length).collect()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Truncates each sentence to `max_len`, maps forms to ids, pads with
/// [`PAD_ID`], and precomputes the masks for `roles`.
pub fn encode(
    sentences: &[Sentence],
    vocab: &Vocabulary,
    max_len: usize,
    roles: &[MaskRole],
) -> Result<Vec<Example>, CorpusError> {
    if max_len == 0 {
        return Err(CorpusError::ZeroMaxLen);
    }
    sentences
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(CorpusError::EmptySentence { id: s.id.clone() });
            }
            let s = s.truncated(max_len);
            let mut ids: Vec<usize> = s.forms().map(|f| vocab.id(f)).collect();
            let length = ids.len();
            ids.resize(max_len, PAD_ID);
            Ok(Example {
                sentence_id: s.id.clone(),
                ids,
                length,
                masks: sentence_masks(&s, vocab, roles, max_len)?,
                label: s.label,
            })
        })
        .collect()
}

/// Splits `examples` into batches of `batch_size` (the last may be short).
/// With a seed the order is shuffled deterministically first.
pub fn shuffled_batches(
    examples: &[Example],
    batch_size: usize,
    seed: Option<u64>,
) -> Result<Vec<Batch>, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::ZeroBatchSize);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let max_len = examples.first().map_or(0, |e| e.ids.len());
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            max_len,
            examples: chunk.iter().map(|&i| examples[i].clone()).collect(),
        })
        .collect())
}

pub fn make_batches(
    sentences: &[Sentence],
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    roles: &[MaskRole],
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>, CorpusError> {
    let examples = encode(sentences, vocab, max_len, roles)?;
    shuffled_batches(&examples, batch_size, shuffle_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentences(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence::from_text(format!("s{i}"), &format!("tok{i} common x")).with_label(i % 2))
            .collect()
    }

    #[test]
    fn partition_sizes() {
        let s = sentences(5);
        let v = Vocabulary::build(&s).unwrap();
        let b = make_batches(&s, &v, 2, 4, &[], None).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b[0].lengths(), vec![3, 3]);
        assert_eq!(b[0].labels(), vec![Some(0), Some(1)]);
    }

    #[test]
    fn padding_positions() {
        let s = vec![Sentence::from_text("a", "x y z")];
        let v = Vocabulary::build(&s).unwrap();
        let b = make_batches(&s, &v, 1, 6, &MaskRole::GUIDED, None).unwrap();
        let e = &b[0].examples[0];
        assert_eq!(&e.ids[3..], &[PAD_ID; 3]);
        for m in e.masks.values() {
            for i in 0..6 {
                for j in 3..6 {
                    assert!(!m.is_open(i, j));
                }
            }
        }
    }

    #[test]
    fn shuffle_is_seeded() {
        let s = sentences(9);
        let v = Vocabulary::build(&s).unwrap();
        let ids = |seed| {
            make_batches(&s, &v, 4, 3, &[], Some(seed))
                .unwrap()
                .iter()
                .flat_map(|b| b.examples.iter().map(|e| e.sentence_id.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(7), ids(7));
        assert_ne!(ids(7), ids(8));
    }

    #[test]
    fn truncation_and_errors() {
        let s = vec![Sentence::from_text("a", "p q r s t")];
        let v = Vocabulary::build(&s).unwrap();
        let e = encode(&s, &v, 3, &[MaskRole::RelativePosition]).unwrap();
        assert_eq!(e[0].length, 3);
        assert!(encode(&s, &v, 0, &[]).is_err());
        assert!(shuffled_batches(&e, 0, None).is_err());
    }
}
