use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{normalize_deprel, Dependency, Sentence, Token};

/// A rejected sentence. `line` is 1-based in the input text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Sentences that parsed cleanly plus one error per rejected sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub sentences: Vec<Sentence>,
    pub errors: Vec<ParseError>,
}

struct RawToken {
    line: usize,
    id: usize,
    form: String,
    head: Option<usize>,
    deprel: String,
}

#[derive(Default)]
struct Block {
    first_line: usize,
    sent_id: Option<String>,
    label: Option<String>,
    tokens: Vec<RawToken>,
    error: Option<ParseError>,
}

impl Block {
    fn fail(&mut self, line: usize, message: impl Into<String>) {
        if self.error.is_none() {
            self.error = Some(ParseError {
                line,
                message: message.into(),
            });
        }
    }

    fn finish(self, ordinal: usize) -> Result<Sentence, ParseError> {
        if let Some(err) = self.error {
            return Err(err);
        }
        let n = self.tokens.len();
        for (k, t) in self.tokens.iter().enumerate() {
            if t.id != k + 1 {
                return Err(ParseError {
                    line: t.line,
                    message: format!("token id {} out of sequence (expected {})", t.id, k + 1),
                });
            }
        }
        let annotated = self.tokens.iter().filter(|t| t.head.is_some()).count();
        if annotated != 0 && annotated != n {
            let line = self
                .tokens
                .iter()
                .find(|t| t.head.is_none())
                .map_or(self.first_line, |t| t.line);
            return Err(ParseError {
                line,
                message: "HEAD missing on some tokens but not others".into(),
            });
        }
        if annotated == n {
            let mut roots = 0;
            for t in &self.tokens {
                let head = t.head.unwrap_or_default();
                if head > n {
                    return Err(ParseError {
                        line: t.line,
                        message: format!("HEAD {head} exceeds sentence length {n}"),
                    });
                }
                if head == t.id {
                    return Err(ParseError {
                        line: t.line,
                        message: "token is its own head".into(),
                    });
                }
                if t.deprel.is_empty() || t.deprel == "_" {
                    return Err(ParseError {
                        line: t.line,
                        message: "DEPREL is empty".into(),
                    });
                }
                roots += usize::from(head == 0);
            }
            if roots != 1 {
                return Err(ParseError {
                    line: self.first_line,
                    message: format!("expected exactly one root, found {roots}"),
                });
            }
        }
        let label = match self.label {
            Some(raw) => Some(raw.parse::<usize>().map_err(|_| ParseError {
                line: self.first_line,
                message: format!("label {raw:?} is not a non-negative integer"),
            })?),
            None => None,
        };
        let tokens = self
            .tokens
            .into_iter()
            .map(|t| Token {
                form: t.form,
                dep: t.head.map(|head| Dependency {
                    head,
                    deprel: normalize_deprel(&t.deprel),
                }),
            })
            .collect();
        Ok(Sentence {
            id: self.sent_id.unwrap_or_else(|| ordinal.to_string()),
            tokens,
            label,
        })
    }
}

fn comment_value<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    let rest = comment.trim_start_matches('#').trim_start();
    let rest = rest.strip_prefix(key)?.trim_start();
    Some(rest.strip_prefix('=')?.trim())
}

/// Reads CoNLL-U text. Multiword-token (`1-2`) and empty-node (`1.1`) lines
/// are skipped. A malformed sentence is dropped and reported; parsing
/// continues with the next block.
pub fn parse_conllu(text: &str) -> ParseOutcome {
    let mut outcome = ParseOutcome::default();
    let mut block: Option<Block> = None;
    let mut ordinal = 0;

    let mut flush = |block: &mut Option<Block>, outcome: &mut ParseOutcome| {
        if let Some(b) = block.take() {
            if b.tokens.is_empty() && b.error.is_none() {
                return;
            }
            ordinal += 1;
            match b.finish(ordinal) {
                Ok(s) => outcome.sentences.push(s),
                Err(e) => outcome.errors.push(e),
            }
        }
    };

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut block, &mut outcome);
            continue;
        }
        let b = block.get_or_insert_with(|| Block {
            first_line: line_no,
            ..Block::default()
        });
        if line.starts_with('#') {
            if let Some(v) = comment_value(line, "sent_id") {
                b.sent_id = Some(v.to_string());
            } else if let Some(v) = comment_value(line, "label") {
                b.label = Some(v.to_string());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            b.fail(line_no, format!("expected 10 columns, found {}", cols.len()));
            continue;
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let Ok(id) = cols[0].parse::<usize>() else {
            b.fail(line_no, format!("ID {:?} is not an integer", cols[0]));
            continue;
        };
        let head = match cols[6] {
            "_" => None,
            h => match h.parse::<usize>() {
                Ok(h) => Some(h),
                Err(_) => {
                    b.fail(line_no, format!("HEAD {h:?} is not an integer"));
                    continue;
                }
            },
        };
        b.tokens.push(RawToken {
            line: line_no,
            id,
            form: cols[1].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    flush(&mut block, &mut outcome);
    outcome
}

/// Writes the retained columns (ID, FORM, HEAD, DEPREL) back as CoNLL-U.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "# sent_id = {}", s.id);
        if let Some(label) = s.label {
            let _ = writeln!(out, "# label = {label}");
        }
        for (i, t) in s.tokens.iter().enumerate() {
            let (head, deprel) = match &t.dep {
                Some(d) => (d.head.to_string(), d.deprel.as_str()),
                None => ("_".to_string(), "_"),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                head,
                deprel
            );
        }
        out.push('\n');
    }
    out
}

/// Plain-text input: one sentence per line, whitespace-tokenized. A line of
/// the form `LABEL<TAB>text` carries an integer class label.
pub fn parse_plain_text(text: &str) -> ParseOutcome {
    let mut outcome = ParseOutcome::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = match line.split_once('\t') {
            Some((l, body)) => match l.trim().parse::<usize>() {
                Ok(l) => (Some(l), body),
                Err(_) => {
                    outcome.errors.push(ParseError {
                        line: idx + 1,
                        message: format!("label {l:?} is not a non-negative integer"),
                    });
                    continue;
                }
            },
            None => (None, line),
        };
        let mut s = Sentence::from_text((outcome.sentences.len() + 1).to_string(), body);
        s.label = label;
        outcome.sentences.push(s);
    }
    outcome
}

/// Reads a `sentence-id<TAB>label` sidecar file.
pub fn parse_label_sidecar(text: &str) -> Result<HashMap<String, usize>, ParseError> {
    let mut labels = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ParseError {
            line: idx + 1,
            message,
        };
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `id<TAB>label`".into()))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|_| err(format!("label {label:?} is not a non-negative integer")))?;
        labels.insert(id.trim().to_string(), label);
    }
    Ok(labels)
}

/// Fills labels from a sidecar map; existing `# label` values are replaced.
pub fn attach_labels(sentences: &mut [Sentence], labels: &HashMap<String, usize>) {
    for s in sentences {
        if let Some(&l) = labels.get(&s.id) {
            s.label = Some(l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHE_RUNS: &str = "# sent_id = s1\n1\tShe\tshe\tPRON\t_\t_\t2\tnsubj\t_\t_\n2\truns\trun\tVERB\t_\t_\t0\troot\t_\t_\n";

    #[test]
    fn minimal_block() {
        let out = parse_conllu(SHE_RUNS);
        assert!(out.errors.is_empty());
        assert_eq!(out.sentences.len(), 1);
        let s = &out.sentences[0];
        assert_eq!(s.id, "s1");
        assert_eq!(s.len(), 2);
        let dep = s.tokens[0].dep.as_ref().unwrap();
        assert_eq!((dep.head, dep.deprel.as_str()), (2, "nsubj"));
    }

    #[test]
    fn bad_head_names_the_line_and_parsing_continues() {
        let text = format!(
            "1\tA\t_\t_\t_\t_\tx\tdep\t_\t_\n2\tB\t_\t_\t_\t_\t0\troot\t_\t_\n\n{SHE_RUNS}"
        );
        let out = parse_conllu(&text);
        assert_eq!(out.sentences.len(), 1);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].line, 1);
        assert!(out.errors[0].message.contains("HEAD"));
    }

    #[test]
    fn missing_columns_rejected() {
        let out = parse_conllu("1\tA\t_\t_\n");
        assert!(out.sentences.is_empty());
        assert_eq!(out.errors[0].line, 1);
    }

    #[test]
    fn multiword_and_empty_nodes_skipped() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n1.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n2\tn't\t_\t_\t_\t_\t1\tadvmod\t_\t_\n";
        let out = parse_conllu(text);
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        assert_eq!(out.sentences[0].len(), 2);
    }

    #[test]
    fn label_comment_and_subtype() {
        let text = "# label = 1\n1\tit\t_\t_\t_\t_\t2\tnsubj:pass\t_\t_\n2\tfell\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let out = parse_conllu(text);
        let s = &out.sentences[0];
        assert_eq!(s.label, Some(1));
        assert_eq!(s.id, "1");
        assert_eq!(s.tokens[0].dep.as_ref().unwrap().deprel, "nsubj");
    }

    #[test]
    fn two_roots_rejected() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        assert_eq!(parse_conllu(text).errors.len(), 1);
    }

    #[test]
    fn self_loop_rejected() {
        let text = "1\ta\t_\t_\t_\t_\t1\tdep\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let out = parse_conllu(text);
        assert_eq!(out.errors[0].line, 1);
    }

    #[test]
    fn unannotated_heads_give_unparsed_sentence() {
        let text = "1\ta\t_\t_\t_\t_\t_\t_\t_\t_\n2\tb\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let out = parse_conllu(text);
        assert!(!out.sentences[0].is_parsed());
    }

    #[test]
    fn plain_text_with_labels() {
        let out = parse_plain_text("1\tgood movie\nbad  one .\n");
        assert_eq!(out.sentences.len(), 2);
        assert_eq!(out.sentences[0].label, Some(1));
        assert_eq!(out.sentences[1].label, None);
        assert_eq!(out.sentences[1].len(), 3);
        assert!(!out.sentences[0].is_parsed());
    }

    #[test]
    fn sidecar_labels() {
        let map = parse_label_sidecar("s1\t0\ns2\t3\n").unwrap();
        let mut out = parse_conllu(SHE_RUNS).sentences;
        attach_labels(&mut out, &map);
        assert_eq!(out[0].label, Some(0));
        assert!(parse_label_sidecar("s1 0\n").is_err());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let s = parse_conllu(SHE_RUNS).sentences;
        let again = parse_conllu(&write_conllu(&s)).sentences;
        assert_eq!(s, again);
    }
}
