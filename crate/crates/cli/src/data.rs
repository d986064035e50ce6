use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use guided_attn::corpus::{attach_labels, parse_conllu, parse_label_sidecar, parse_plain_text, Sentence};
use guided_attn::harness::Dataset;
use guided_attn::masks::MaskRole;

/// Reads one corpus file. `.conllu`/`.conll` files are parsed as CoNLL-U,
/// anything else as plain text. A `<stem>.labels` file next to it, if
/// present, supplies labels by sentence id.
pub fn load_file(path: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let conllu = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("conllu" | "conll")
    );
    let outcome = if conllu {
        parse_conllu(&text)
    } else {
        parse_plain_text(&text)
    };
    if let Some(first) = outcome.errors.first() {
        bail!(
            "{}: {} malformed sentence(s), first at {first}",
            path.display(),
            outcome.errors.len()
        );
    }
    let mut sentences = outcome.sentences;
    let sidecar = path.with_extension("labels");
    if sidecar.is_file() {
        let text = std::fs::read_to_string(&sidecar)
            .with_context(|| format!("cannot read {}", sidecar.display()))?;
        let labels = parse_label_sidecar(&text).with_context(|| format!("in {}", sidecar.display()))?;
        attach_labels(&mut sentences, &labels);
    }
    if sentences.is_empty() {
        bail!("{} contains no sentences", path.display());
    }
    Ok(sentences)
}

/// Finds `<split>.conllu`, `<split>.conll`, or `<split>.txt` in `dir`.
pub fn split_path(dir: &Path, split: &str) -> Result<PathBuf> {
    for ext in ["conllu", "conll", "txt"] {
        let p = dir.join(format!("{split}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    bail!("{} has no {split}.conllu, {split}.conll, or {split}.txt", dir.display())
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Sentence>> {
    load_file(&split_path(dir, split)?)
}

/// A data directory with train, dev, and test splits. The dataset is named
/// after the directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("data")
        .to_string();
    Ok(Dataset {
        name,
        train: load_split(dir, "train")?,
        dev: load_split(dir, "dev")?,
        test: load_split(dir, "test")?,
    })
}

/// Warns when parse-based roles are requested for sentences that carry no
/// parse; those masks reduce to the diagonal fallback.
pub fn warn_unparsed(source: &str, sentences: &[Sentence], roles: &[MaskRole]) {
    let needs: Vec<&str> = roles.iter().filter(|r| r.needs_parse()).map(|r| r.name()).collect();
    if needs.is_empty() {
        return;
    }
    let unparsed = sentences.iter().filter(|s| !s.is_parsed()).count();
    if unparsed > 0 {
        eprintln!(
            "warning: {source}: {unparsed} of {} sentences have no dependency parse; {} masks fall back to the diagonal",
            sentences.len(),
            needs.join(", ")
        );
    }
}
