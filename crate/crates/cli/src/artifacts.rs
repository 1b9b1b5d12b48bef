//! Reading and writing run artifacts. Every text file starts with a
//! `#!detprod config_sha256=<hex>` line that readers strip.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use detprod::corpus::{read_tokenized, write_tokenized};
use detprod::{parse_transcript, NounLexicon, Utterance, Vocabulary};
use serde::Serialize;

const HEADER_PREFIX: &str = "#!detprod ";

pub fn header(hash: &str) -> String {
    format!("{HEADER_PREFIX}config_sha256={hash}\n")
}

/// Drops a leading provenance header, if any.
pub fn strip_header(text: &str) -> &str {
    match text.strip_prefix(HEADER_PREFIX) {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}

/// The hash recorded in `text`'s header.
pub fn header_hash(text: &str) -> Option<&str> {
    let line = text.strip_prefix(HEADER_PREFIX)?.lines().next()?;
    line.strip_prefix("config_sha256=")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, hash: &str, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, header(hash) + body).with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON with the hash as a top-level `config_sha256` field.
pub fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    match &mut v {
        serde_json::Value::Object(map) => {
            map.insert("config_sha256".into(), hash.into());
        }
        _ => bail!("JSON artifact must be an object"),
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_tokenized(strip_header(&read_text(path)?)))
}

pub fn write_corpus<T: AsRef<[String]>>(path: &Path, hash: &str, utterances: &[T]) -> Result<()> {
    write_text(path, hash, &write_tokenized(utterances))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_text(path)?;
    Vocabulary::from_tsv(strip_header(&text)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_vocab(path: &Path, hash: &str, vocab: &Vocabulary) -> Result<()> {
    write_text(path, hash, &vocab.to_tsv())
}

pub fn read_lexicon(path: Option<&Path>) -> Result<NounLexicon> {
    match path {
        Some(p) => NounLexicon::parse(&read_text(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(NounLexicon::bundled()),
    }
}

/// Parses transcripts (CHAT or plain text) in the order given.
pub fn read_transcripts(paths: &[impl AsRef<Path>]) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = read_text(p)?;
        out.extend(parse_transcript(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    Ok(out)
}

/// `token<TAB>count` rows; the count is the last column, so vocabulary
/// files are accepted too. `#` lines and column headers are skipped.
pub fn read_counts(path: &Path) -> Result<HashMap<String, u64>> {
    let text = read_text(path)?;
    let mut counts = HashMap::new();
    for (i, line) in strip_header(&text).lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() || line.starts_with("token\t") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [token, .., count] = cols[..] else {
            bail!("{}:{}: expected token<TAB>count", path.display(), i + 1);
        };
        let count: u64 =
            count.trim().parse().with_context(|| format!("{}:{}: bad count", path.display(), i + 1))?;
        *counts.entry(token.to_string()).or_default() += count;
    }
    Ok(counts)
}

pub fn write_counts(path: &Path, hash: &str, counts: &HashMap<String, u64>) -> Result<()> {
    let mut rows: Vec<(&String, &u64)> = counts.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let body: String = rows.iter().map(|(t, c)| format!("{t}\t{c}\n")).collect();
    write_text(path, hash, &body)
}
