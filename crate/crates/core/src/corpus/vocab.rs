use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{CorpusError, Sentence};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD_FORM: &str = "<pad>";
const UNK_FORM: &str = "<unk>";

/// Token forms with sentence-level document frequencies. Each sentence
/// counts as one document; `idf = ln(total_docs / df)`.
///
/// Ids 0 and 1 are reserved for padding and unknown tokens; known forms
/// follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    df: BTreeMap<String, usize>,
    ids: BTreeMap<String, usize>,
    forms: Vec<String>,
    total_docs: usize,
}

impl Vocabulary {
    pub fn build(sentences: &[Sentence]) -> Result<Self, CorpusError> {
        if sentences.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut df = BTreeMap::new();
        for s in sentences {
            let unique: BTreeSet<&str> = s.forms().collect();
            for form in unique {
                *df.entry(form.to_string()).or_insert(0) += 1;
            }
        }
        Ok(Self::from_counts(df, sentences.len()))
    }

    fn from_counts(df: BTreeMap<String, usize>, total_docs: usize) -> Self {
        let mut forms = vec![PAD_FORM.to_string(), UNK_FORM.to_string()];
        let mut ids = BTreeMap::new();
        for form in df.keys() {
            ids.insert(form.clone(), forms.len());
            forms.push(form.clone());
        }
        Self {
            df,
            ids,
            forms,
            total_docs,
        }
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    /// Number of ids including the two reserved ones.
    pub fn size(&self) -> usize {
        self.forms.len()
    }

    pub fn df(&self, form: &str) -> Option<usize> {
        self.df.get(form).copied()
    }

    /// IDF of `form`. Unseen forms are treated as `df = 1`.
    pub fn idf(&self, form: &str) -> f64 {
        let df = self.df(form).unwrap_or(1);
        (self.total_docs as f64 / df as f64).ln()
    }

    pub fn id(&self, form: &str) -> usize {
        self.ids.get(form).copied().unwrap_or(UNK_ID)
    }

    pub fn form(&self, id: usize) -> Option<&str> {
        self.forms.get(id).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.df.iter().map(|(f, &d)| (f.as_str(), d))
    }

    /// Line-oriented text form: a `total_docs` header, then `form<TAB>df`.
    pub fn to_text(&self) -> String {
        let mut out = format!("total_docs\t{}\n", self.total_docs);
        for (form, df) in self.entries() {
            let _ = writeln!(out, "{form}\t{df}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let err = |line: usize, message: &str| CorpusError::VocabularyFormat {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let total_docs = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("total_docs\t"))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| err(1, "missing total_docs header"))?;
        let mut df = BTreeMap::new();
        for (idx, line) in lines {
            let (form, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| err(idx + 1, "expected form<TAB>df"))?;
            let count: usize = count
                .parse()
                .map_err(|_| err(idx + 1, "df is not an integer"))?;
            if count == 0 || count > total_docs {
                return Err(err(idx + 1, "df outside [1, total_docs]"));
            }
            df.insert(form.to_string(), count);
        }
        Ok(Self::from_counts(df, total_docs))
    }

    /// Hex SHA-256 of [`Vocabulary::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// `max(1, ceil(0.1 * n))` for `n ≥ 1`.
pub fn rare_token_count(n: usize) -> usize {
    // ceil(n / 10) in integer arithmetic
    n.div_ceil(10).max(1)
}

/// 0-based positions of the rarest tokens of `s` (highest IDF), in
/// ascending position order. Ties go to the earlier position.
pub fn rare_token_indices(s: &Sentence, vocab: &Vocabulary) -> Vec<usize> {
    if s.is_empty() {
        return Vec::new();
    }
    let mut ranked: Vec<(usize, f64)> = s
        .forms()
        .enumerate()
        .map(|(i, f)| (i, vocab.idf(f)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = ranked
        .into_iter()
        .take(rare_token_count(s.len()))
        .map(|(i, _)| i)
        .collect();
    picked.sort_unstable();
    picked
}
