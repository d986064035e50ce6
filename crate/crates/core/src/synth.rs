//! Generated two-class task whose label depends only on adjacency.
//!
//! Each sentence has `length` tokens drawn from `w0..w{vocab-1}`. The
//! marker tokens `w0` and `w1` appear exactly once each; every other
//! position holds a filler from `w2..`. The label is 1 when the markers are
//! neighbours (either order) and 0 when at least one token separates them.
//! Classes are balanced in expectation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Sentence, Token};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("vocabulary needs at least 3 forms, got {0}")]
    VocabularyTooSmall(usize),
    #[error("sentences need at least 3 tokens, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train: 2000,
            dev: 500,
            test: 500,
            vocab: 50,
            length: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

fn sentence(id: String, rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Sentence {
    let adjacent = rng.gen_bool(0.5);
    let (a, b) = if adjacent {
        let a = rng.gen_range(0..n - 1);
        (a, a + 1)
    } else {
        loop {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a.abs_diff(b) >= 2 {
                break (a.min(b), a.max(b));
            }
        }
    };
    let (first, second) = if rng.gen_bool(0.5) { (0, 1) } else { (1, 0) };
    let tokens = (0..n)
        .map(|i| {
            let w = if i == a {
                first
            } else if i == b {
                second
            } else {
                rng.gen_range(2..vocab)
            };
            Token::new(format!("w{w}"))
        })
        .collect();
    Sentence::new(id, tokens).with_label(usize::from(adjacent))
}

/// Generates train/dev/test splits. Identical specs give identical data.
pub fn local_pattern_task(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    if spec.vocab < 3 {
        return Err(SynthError::VocabularyTooSmall(spec.vocab));
    }
    if spec.length < 3 {
        return Err(SynthError::TooShort(spec.length));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |name: &str, count: usize| -> Vec<Sentence> {
        (0..count)
            .map(|i| sentence(format!("{name}-{}", i + 1), &mut rng, spec.vocab, spec.length))
            .collect()
    };
    let train = split("train", spec.train);
    let dev = split("dev", spec.dev);
    let test = split("test", spec.test);
    Ok(SynthData { train, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker_positions(s: &Sentence) -> (usize, usize) {
        let forms: Vec<&str> = s.forms().collect();
        let a = forms.iter().position(|&f| f == "w0").unwrap();
        let b = forms.iter().position(|&f| f == "w1").unwrap();
        (a, b)
    }

    #[test]
    fn labels_follow_adjacency() {
        let spec = SynthSpec {
            train: 300,
            dev: 0,
            test: 0,
            ..SynthSpec::default()
        };
        let data = local_pattern_task(&spec).unwrap();
        let mut positives = 0;
        for s in &data.train {
            assert_eq!(s.len(), 12);
            let forms: Vec<&str> = s.forms().collect();
            assert_eq!(forms.iter().filter(|&&f| f == "w0").count(), 1);
            assert_eq!(forms.iter().filter(|&&f| f == "w1").count(), 1);
            let (a, b) = marker_positions(s);
            let expected = usize::from(a.abs_diff(b) == 1);
            assert_eq!(s.label, Some(expected));
            positives += expected;
        }
        assert!((100..200).contains(&positives));
    }

    #[test]
    fn seeded() {
        let spec = SynthSpec {
            train: 20,
            dev: 5,
            test: 5,
            ..SynthSpec::default()
        };
        assert_eq!(local_pattern_task(&spec), local_pattern_task(&spec));
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(local_pattern_task(&spec), local_pattern_task(&other));
    }

    #[test]
    fn rejects_tiny_specs() {
        let spec = SynthSpec {
            vocab: 2,
            ..SynthSpec::default()
        };
        assert_eq!(local_pattern_task(&spec), Err(SynthError::VocabularyTooSmall(2)));
    }
}
