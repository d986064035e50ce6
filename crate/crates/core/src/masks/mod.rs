//! Additive `{0, -inf}` attention masks, one per head role.
//!
//! Every constructor starts from an all-`-inf` `n × n` grid and opens entry
//! `(i, j)` (query `i`, key `j`) according to the role. Rows left with no
//! open entry get a self-attention fallback on the diagonal so softmax
//! stays defined.

mod dump;

pub use dump::{parse_dump_line, render_grid, write_dump_line, DumpRecord};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{rare_token_indices, Sentence, Vocabulary};
use crate::numerics::Tensor;

const MASKED: f64 = f64::NEG_INFINITY;
const OPEN: f64 = 0.0;

/// Token forms that count as separators.
pub const SEPARATORS: [&str; 8] = [",", ";", ".", "?", "!", "[SEP]", "[START]", "[END]"];

/// Relation labels kept by the major-relations role. `obj` is the UD
/// spelling of `dobj`.
pub const MAJOR_RELATIONS: [&str; 5] = ["nsubj", "dobj", "obj", "amod", "advmod"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask shapes differ: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("valid length {n_valid} exceeds mask size {n}")]
    ValidExceedsLength { n_valid: usize, n: usize },
    #[error("unknown role {0:?} (expected one of rarew, seprat, depsyn, majrel, relpos, padding)")]
    UnknownRole(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MaskRole {
    RareWords,
    Separator,
    DepSyntax,
    MajorRelations,
    RelativePosition,
    /// Padding-only mask: the head is unconstrained within the sentence.
    Padding,
}

impl MaskRole {
    /// The five guided roles in head-assignment order.
    pub const GUIDED: [MaskRole; 5] = [
        MaskRole::RareWords,
        MaskRole::Separator,
        MaskRole::DepSyntax,
        MaskRole::MajorRelations,
        MaskRole::RelativePosition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskRole::RareWords => "rarew",
            MaskRole::Separator => "seprat",
            MaskRole::DepSyntax => "depsyn",
            MaskRole::MajorRelations => "majrel",
            MaskRole::RelativePosition => "relpos",
            MaskRole::Padding => "padding",
        }
    }

    /// Whether the role reads dependency annotations.
    pub fn needs_parse(self) -> bool {
        matches!(self, MaskRole::DepSyntax | MaskRole::MajorRelations)
    }
}

impl fmt::Display for MaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskRole {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rarew" => Ok(MaskRole::RareWords),
            "seprat" => Ok(MaskRole::Separator),
            "depsyn" => Ok(MaskRole::DepSyntax),
            "majrel" => Ok(MaskRole::MajorRelations),
            "relpos" => Ok(MaskRole::RelativePosition),
            "padding" => Ok(MaskRole::Padding),
            _ => Err(MaskError::UnknownRole(s.to_string())),
        }
    }
}

impl TryFrom<String> for MaskRole {
    type Error = MaskError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MaskRole> for String {
    fn from(r: MaskRole) -> Self {
        r.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleMask {
    role: MaskRole,
    n: usize,
    values: Vec<f64>,
}

impl RoleMask {
    pub fn masked(role: MaskRole, n: usize) -> Self {
        Self {
            role,
            n,
            values: vec![MASKED; n * n],
        }
    }

    pub fn open(role: MaskRole, n: usize) -> Self {
        Self {
            role,
            n,
            values: vec![OPEN; n * n],
        }
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == OPEN
    }

    pub fn allow(&mut self, i: usize, j: usize) {
        self.values[i * self.n + j] = OPEN;
    }

    pub fn block(&mut self, i: usize, j: usize) {
        self.values[i * self.n + j] = MASKED;
    }

    pub fn row_is_feasible(&self, i: usize) -> bool {
        (0..self.n).any(|j| self.is_open(i, j))
    }

    /// 0-based `(query, key)` pairs of open entries in row-major order.
    pub fn open_entries(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_open(i, j))
            .collect()
    }

    pub fn with_role(mut self, role: MaskRole) -> Self {
        self.role = role;
        self
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.values.clone())
    }

    /// Places this sentence-level mask in the top-left corner of a
    /// `max_len × max_len` grid. Keys beyond the sentence are blocked for
    /// the sentence's query rows; padded query rows are left unconstrained
    /// so that combining with a padding mask hands them the padding row.
    pub fn pad_to(&self, max_len: usize) -> Result<RoleMask, MaskError> {
        if self.n > max_len {
            return Err(MaskError::ValidExceedsLength {
                n_valid: self.n,
                n: max_len,
            });
        }
        let mut out = RoleMask::masked(self.role, max_len);
        for i in 0..max_len {
            for j in 0..max_len {
                let open = if i < self.n {
                    j < self.n && self.is_open(i, j)
                } else {
                    true
                };
                if open {
                    out.allow(i, j);
                }
            }
        }
        Ok(out)
    }
}

/// Every query may attend only to the rarest token positions.
pub fn rare_words_mask_raw(s: &Sentence, vocab: &Vocabulary) -> RoleMask {
    let n = s.len();
    let mut m = RoleMask::masked(MaskRole::RareWords, n);
    for j in rare_token_indices(s, vocab) {
        for i in 0..n {
            m.allow(i, j);
        }
    }
    m
}

pub fn rare_words_mask(s: &Sentence, vocab: &Vocabulary) -> RoleMask {
    apply_fallback(&rare_words_mask_raw(s, vocab), s.len())
}

pub fn is_separator(form: &str) -> bool {
    SEPARATORS.contains(&form)
}

/// Every query may attend only to separator tokens.
pub fn separator_mask_raw(s: &Sentence) -> RoleMask {
    let n = s.len();
    let mut m = RoleMask::masked(MaskRole::Separator, n);
    for (j, form) in s.forms().enumerate() {
        if is_separator(form) {
            for i in 0..n {
                m.allow(i, j);
            }
        }
    }
    m
}

pub fn separator_mask(s: &Sentence) -> RoleMask {
    apply_fallback(&separator_mask_raw(s), s.len())
}

fn edge_mask(s: &Sentence, role: MaskRole, keep: impl Fn(&str) -> bool) -> RoleMask {
    let mut m = RoleMask::masked(role, s.len());
    for (dependent, head, rel) in s.edges() {
        if keep(rel) {
            m.allow(dependent, head);
            m.allow(head, dependent);
        }
    }
    m
}

/// Queries attend to their parse neighbours in either direction.
pub fn dep_syntax_mask_raw(s: &Sentence) -> RoleMask {
    edge_mask(s, MaskRole::DepSyntax, |_| true)
}

pub fn dep_syntax_mask(s: &Sentence) -> RoleMask {
    apply_fallback(&dep_syntax_mask_raw(s), s.len())
}

/// Parse neighbours restricted to nsubj, dobj/obj, amod, and advmod edges.
pub fn major_relations_mask_raw(s: &Sentence) -> RoleMask {
    edge_mask(s, MaskRole::MajorRelations, |rel| {
        MAJOR_RELATIONS.contains(&rel)
    })
}

pub fn major_relations_mask(s: &Sentence) -> RoleMask {
    apply_fallback(&major_relations_mask_raw(s), s.len())
}

/// Centered window of size 3: `|i - j| <= 1`.
pub fn relative_position_mask(n: usize) -> RoleMask {
    let mut m = RoleMask::masked(MaskRole::RelativePosition, n);
    for i in 0..n {
        for j in i.saturating_sub(1)..(i + 2).min(n) {
            m.allow(i, j);
        }
    }
    m
}

/// Keys `j < n_valid` are open for every query.
pub fn padding_mask(n_valid: usize, n: usize) -> Result<RoleMask, MaskError> {
    if n_valid > n {
        return Err(MaskError::ValidExceedsLength { n_valid, n });
    }
    let mut m = RoleMask::masked(MaskRole::Padding, n);
    for i in 0..n {
        for j in 0..n_valid {
            m.allow(i, j);
        }
    }
    Ok(m)
}

/// Opens the diagonal of every infeasible query row `i < n_valid`.
pub fn apply_fallback(m: &RoleMask, n_valid: usize) -> RoleMask {
    let mut out = m.clone();
    for i in 0..n_valid.min(m.n) {
        if !out.row_is_feasible(i) {
            out.allow(i, i);
        }
    }
    out
}

/// Number of open keys in the first row of a padding mask.
fn padding_extent(pad: &RoleMask) -> usize {
    if pad.n == 0 {
        return 0;
    }
    (0..pad.n).take_while(|&j| pad.is_open(0, j)).count()
}

/// Elementwise minimum of a role mask and a padding mask, with the
/// diagonal fallback re-applied to valid rows.
pub fn combine(role: &RoleMask, pad: &RoleMask) -> Result<RoleMask, MaskError> {
    if role.n != pad.n {
        return Err(MaskError::ShapeMismatch {
            left: role.n,
            right: pad.n,
        });
    }
    let values = role
        .values
        .iter()
        .zip(&pad.values)
        .map(|(&a, &b)| a.min(b))
        .collect();
    let merged = RoleMask {
        role: role.role,
        n: role.n,
        values,
    };
    Ok(apply_fallback(&merged, padding_extent(pad)))
}

/// Sentence-level mask for `role`, fallback applied.
pub fn build_mask(role: MaskRole, s: &Sentence, vocab: &Vocabulary) -> RoleMask {
    match role {
        MaskRole::RareWords => rare_words_mask(s, vocab),
        MaskRole::Separator => separator_mask(s),
        MaskRole::DepSyntax => dep_syntax_mask(s),
        MaskRole::MajorRelations => major_relations_mask(s),
        MaskRole::RelativePosition => relative_position_mask(s.len()),
        MaskRole::Padding => RoleMask::open(MaskRole::Padding, s.len()),
    }
}

/// The masks a model with the given head roles needs for one sentence laid
/// out in a `max_len` buffer: each role mask combined with padding, plus
/// the padding mask itself under [`MaskRole::Padding`].
pub fn sentence_masks(
    s: &Sentence,
    vocab: &Vocabulary,
    roles: &[MaskRole],
    max_len: usize,
) -> Result<BTreeMap<MaskRole, RoleMask>, MaskError> {
    let pad = padding_mask(s.len(), max_len)?;
    let mut out = BTreeMap::new();
    for &role in roles {
        if role == MaskRole::Padding || out.contains_key(&role) {
            continue;
        }
        let m = build_mask(role, s, vocab).pad_to(max_len)?;
        out.insert(role, combine(&m, &pad)?);
    }
    out.insert(MaskRole::Padding, pad);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn open_set(m: &RoleMask) -> Vec<(usize, usize)> {
        m.open_entries()
    }

    fn she_runs() -> Sentence {
        Sentence::new(
            "s",
            vec![
                Token::with_dep("She", 2, "nsubj"),
                Token::with_dep("runs", 0, "root"),
            ],
        )
    }

    #[test]
    fn role_names_round_trip() {
        for r in MaskRole::GUIDED.iter().chain([&MaskRole::Padding]) {
            assert_eq!(r.name().parse::<MaskRole>().unwrap(), *r);
        }
        assert!("foo".parse::<MaskRole>().is_err());
    }

    #[test]
    fn rare_words_column() {
        let sents: Vec<Sentence> = ["a b c d e", "a b c d", "a b d e", "a b d e"]
            .iter()
            .enumerate()
            .map(|(i, t)| Sentence::from_text(i.to_string(), t))
            .collect();
        let v = Vocabulary::build(&sents).unwrap();
        let m = rare_words_mask(&sents[0], &v);
        let expected: Vec<_> = (0..5).map(|i| (i, 2)).collect();
        assert_eq!(open_set(&m), expected);
    }

    #[test]
    fn rare_words_all_identical_tokens() {
        let s = Sentence::from_text("x", "w w w");
        let v = Vocabulary::build(std::slice::from_ref(&s)).unwrap();
        let m = rare_words_mask(&s, &v);
        assert_eq!(open_set(&m), vec![(0, 0), (1, 0), (2, 0)]);
    }

    #[test]
    fn separator_hello_world() {
        let s = Sentence::from_text("h", "Hello , world .");
        let m = separator_mask(&s);
        for i in 0..4 {
            assert!(m.is_open(i, 1) && m.is_open(i, 3));
            assert!(!m.is_open(i, 0) && !m.is_open(i, 2));
        }
    }

    #[test]
    fn separator_fallback_is_diagonal() {
        let m = separator_mask(&Sentence::from_text("x", "no punctuation here"));
        assert_eq!(open_set(&m), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn dep_syntax_single_edge() {
        let raw = dep_syntax_mask_raw(&she_runs());
        assert_eq!(open_set(&raw), vec![(0, 1), (1, 0)]);
        assert!(!raw.is_open(0, 0) && !raw.is_open(1, 1));
        assert_eq!(dep_syntax_mask(&she_runs()), raw);
    }

    #[test]
    fn dep_syntax_single_token() {
        let s = Sentence::new("x", vec![Token::with_dep("Go", 0, "root")]);
        assert_eq!(open_set(&dep_syntax_mask(&s)), vec![(0, 0)]);
    }

    #[test]
    fn unparsed_sentence_falls_back() {
        let s = Sentence::from_text("x", "a b c");
        assert_eq!(open_set(&dep_syntax_mask(&s)), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(open_set(&major_relations_mask(&s)), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn major_relations_filter() {
        assert_eq!(open_set(&major_relations_mask(&she_runs())), vec![(0, 1), (1, 0)]);
        let det = Sentence::new(
            "d",
            vec![Token::with_dep("the", 2, "det"), Token::with_dep("dog", 0, "root")],
        );
        assert_eq!(open_set(&major_relations_mask(&det)), vec![(0, 0), (1, 1)]);
        let obj = Sentence::new(
            "o",
            vec![Token::with_dep("eat", 0, "root"), Token::with_dep("it", 1, "obj")],
        );
        assert_eq!(open_set(&major_relations_mask_raw(&obj)), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn relative_position_examples() {
        let m = relative_position_mask(4);
        assert_eq!(
            open_set(&m),
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (3, 2), (3, 3)]
        );
        assert_eq!(open_set(&relative_position_mask(1)), vec![(0, 0)]);
        assert_eq!(relative_position_mask(10).open_entries().len(), 28);
    }

    #[test]
    fn padding_examples() {
        let m = padding_mask(3, 5).unwrap();
        for i in 0..5 {
            assert!(!m.is_open(i, 3) && !m.is_open(i, 4));
            assert!(m.is_open(i, 0) && m.is_open(i, 2));
        }
        assert!(padding_mask(4, 4).unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(
            padding_mask(6, 5),
            Err(MaskError::ValidExceedsLength { n_valid: 6, n: 5 })
        );
    }

    #[test]
    fn combine_falls_back_when_only_pad_column_allowed() {
        let mut role = RoleMask::masked(MaskRole::RareWords, 3);
        role.allow(0, 2);
        role.allow(1, 0);
        let pad = padding_mask(2, 3).unwrap();
        let c = combine(&role, &pad).unwrap();
        assert_eq!(open_set(&c), vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn combine_with_open_pad_is_identity() {
        let role = relative_position_mask(4);
        let pad = padding_mask(4, 4).unwrap();
        assert_eq!(combine(&role, &pad).unwrap(), role);
        assert!(combine(&role, &padding_mask(2, 3).unwrap()).is_err());
    }

    #[test]
    fn fallback_cases() {
        let all = RoleMask::masked(MaskRole::Separator, 3);
        assert_eq!(open_set(&apply_fallback(&all, 3)), vec![(0, 0), (1, 1), (2, 2)]);
        let rel = relative_position_mask(3);
        assert_eq!(apply_fallback(&rel, 3), rel);
        assert_eq!(open_set(&apply_fallback(&all, 1)), vec![(0, 0)]);
    }

    #[test]
    fn padded_sentence_masks_block_pad_columns_in_every_head() {
        let s = Sentence::from_text("x", "a , b");
        let v = Vocabulary::build(std::slice::from_ref(&s)).unwrap();
        let masks = sentence_masks(&s, &v, &MaskRole::GUIDED, 6).unwrap();
        assert_eq!(masks.len(), 6);
        for m in masks.values() {
            for i in 0..6 {
                assert!(m.row_is_feasible(i));
                for j in 3..6 {
                    assert!(!m.is_open(i, j), "{} ({i},{j})", m.role());
                }
            }
        }
    }
}
