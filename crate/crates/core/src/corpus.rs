//! Transcript ingestion, child-directed filtering, capped vocabularies and
//! fixed-length encoding.
//!
//! Only a small subset of the CHAT transcription format is understood:
//! `*SPK:` utterance tiers (with tab-indented continuation lines), `@`
//! headers and `%` dependent tiers, which are skipped. Annotation material
//! is dropped token by token instead of being rejected.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
pub const EOS_ID: usize = 2;
/// Number of reserved ids preceding the word ids.
pub const NUM_SPECIALS: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";
pub const EOS_TOKEN: &str = "<eos>";

pub const DEFAULT_MAX_WORDS: usize = 3000;
pub const DEFAULT_MAX_LEN: usize = 10;

/// Speaker code used for plain-text lines without a `SPEAKER<TAB>` prefix.
pub const UNKNOWN_SPEAKER: &str = "UNK";

const TERMINATORS: [&str; 3] = [".", "?", "!"];
const FILLERS: [&str; 3] = ["xxx", "yyy", "www"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed utterance tier (expected `*CODE:`): {text:?}")]
    MalformedTier { line: usize, text: String },
    #[error("line {line}: invalid speaker code {code:?}")]
    BadSpeaker { line: usize, code: String },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("max_words must be at least 1")]
    ZeroMaxWords,
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabulary { line: usize, reason: String },
}

/// One speaker turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, tokens: Vec<String>) -> Self {
        Self { speaker: speaker.into(), tokens }
    }
}

impl AsRef<[String]> for Utterance {
    fn as_ref(&self) -> &[String] {
        &self.tokens
    }
}

fn is_speaker_code(code: &str) -> bool {
    !code.is_empty()
        && code
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Removes time-alignment bullets and `[...]` / `<...>` spans.
fn strip_spans(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut square = 0usize;
    let mut angle = 0usize;
    let mut bullet = false;
    for c in text.chars() {
        match c {
            '\u{15}' => {
                bullet = !bullet;
                out.push(' ');
            }
            _ if bullet => {}
            '[' => {
                square += 1;
                out.push(' ');
            }
            ']' if square > 0 => {
                square -= 1;
                out.push(' ');
            }
            '<' => {
                angle += 1;
                out.push(' ');
            }
            '>' if angle > 0 => {
                angle -= 1;
                out.push(' ');
            }
            _ if square > 0 || angle > 0 => {}
            _ => out.push(c),
        }
    }
    out
}

/// Normalises one whitespace-delimited token, pushing zero or more output
/// tokens (a trailing terminator is split off as its own token).
fn push_clean_token(raw: &str, out: &mut Vec<String>) {
    if raw.starts_with('&') || raw.starts_with('+') {
        return;
    }
    let lower = raw.to_lowercase();
    if TERMINATORS.contains(&lower.as_str()) {
        out.push(lower);
        return;
    }
    // Omitted-word markers such as `0is`.
    if lower.len() > 1 && lower.starts_with('0') && lower[1..].starts_with(char::is_alphabetic) {
        return;
    }

    let mut word = lower.as_str();
    let mut terminal = None;
    while let Some(last) = word.chars().last() {
        if matches!(last, '.' | '?' | '!') {
            terminal.get_or_insert(last);
            word = &word[..word.len() - 1];
        } else if matches!(last, ',' | ';' | '"') {
            word = &word[..word.len() - 1];
        } else {
            break;
        }
    }
    let word = match word.find('@') {
        Some(0) => "",
        Some(i) => &word[..i],
        None => word,
    };
    let word: String = word
        .chars()
        .filter(|c| !matches!(c, '(' | ')' | ':' | '^' | '"' | '\u{2191}' | '\u{2193}'))
        .collect();

    if !word.is_empty()
        && word.chars().any(char::is_alphanumeric)
        && !FILLERS.contains(&word.as_str())
    {
        out.push(word);
    }
    if let Some(t) = terminal {
        out.push(t.to_string());
    }
}

/// Tokenises the body of an utterance tier.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for raw in strip_spans(text).split_whitespace() {
        push_clean_token(raw, &mut tokens);
    }
    tokens
}

/// Parses a CHAT transcript into utterances in document order.
pub fn parse_chat(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    // Fold tab-indented continuation lines into their tier first.
    let mut tiers: Vec<(usize, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.starts_with([' ', '\t']) {
            if let Some((_, tier)) = tiers.last_mut() {
                tier.push(' ');
                tier.push_str(line.trim());
            }
            continue;
        }
        if !line.trim().is_empty() {
            tiers.push((i + 1, line.to_string()));
        }
    }

    let mut utterances = Vec::new();
    for (line_no, tier) in tiers {
        let Some(rest) = tier.strip_prefix('*') else {
            continue;
        };
        let Some((code, body)) = rest.split_once(':') else {
            return Err(CorpusError::MalformedTier { line: line_no, text: tier });
        };
        let code = code.trim();
        if !is_speaker_code(code) {
            return Err(CorpusError::BadSpeaker { line: line_no, code: code.to_string() });
        }
        utterances.push(Utterance::new(code, tokenize(body)));
    }
    Ok(utterances)
}

/// Plain text: one utterance per line, optionally prefixed by `SPEAKER<TAB>`.
/// Blank lines are skipped.
pub fn parse_plain(text: &str) -> Vec<Utterance> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| match line.split_once('\t') {
            Some((code, body)) if is_speaker_code(code.trim()) => {
                Utterance::new(code.trim(), tokenize(body))
            }
            _ => Utterance::new(UNKNOWN_SPEAKER, tokenize(line)),
        })
        .collect()
}

/// Dispatches on content: any line starting with `*` or `@` means CHAT.
pub fn parse_transcript(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    let chat = text.lines().any(|l| l.starts_with('*') || l.starts_with('@'));
    if chat {
        parse_chat(text)
    } else {
        Ok(parse_plain(text))
    }
}

/// Reads a tokenized corpus file. Every line is one utterance, empty lines
/// included, so generated corpora keep their cardinality.
pub fn read_tokenized(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

pub fn write_tokenized<T: AsRef<[String]>>(utterances: &[T]) -> String {
    let mut out = String::new();
    for u in utterances {
        out.push_str(&u.as_ref().join(" "));
        out.push('\n');
    }
    out
}

pub fn filter_child_directed(
    utterances: &[Utterance],
    child_codes: &BTreeSet<String>,
) -> Vec<Utterance> {
    utterances
        .iter()
        .filter(|u| !child_codes.contains(&u.speaker))
        .cloned()
        .collect()
}

/// Token ↔ id mapping over the most frequent words plus reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    id_of: HashMap<String, usize>,
    max_words: usize,
}

fn is_special(token: &str) -> bool {
    matches!(token, PAD_TOKEN | OOV_TOKEN | EOS_TOKEN)
}

impl Vocabulary {
    /// Builds from explicit `(token, count)` entries; they are re-sorted by
    /// descending count then token and capped at `max_words`.
    pub fn from_counts(
        counts: impl IntoIterator<Item = (String, u64)>,
        max_words: usize,
    ) -> Result<Self, CorpusError> {
        if max_words == 0 {
            return Err(CorpusError::ZeroMaxWords);
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c > 0 && !is_special(t))
            .collect();
        if entries.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_words);
        Ok(Self::from_sorted(entries, max_words))
    }

    fn from_sorted(entries: Vec<(String, u64)>, max_words: usize) -> Self {
        let mut id_of: HashMap<String, usize> = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i + NUM_SPECIALS))
            .collect();
        id_of.insert(PAD_TOKEN.to_string(), PAD_ID);
        id_of.insert(OOV_TOKEN.to_string(), OOV_ID);
        id_of.insert(EOS_TOKEN.to_string(), EOS_ID);
        Self { entries, id_of, max_words }
    }

    /// Id of `token`; unknown tokens map to [`OOV_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.id_of.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID => Some(PAD_TOKEN),
            OOV_ID => Some(OOV_TOKEN),
            EOS_ID => Some(EOS_TOKEN),
            _ => self.entries.get(id - NUM_SPECIALS).map(|(t, _)| t.as_str()),
        }
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.entries.len() + NUM_SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.entries.len()
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    /// Word entries in id order (descending count).
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn encode(&self, tokens: &[String], max_len: usize) -> EncodedUtterance {
        encode_utterance(tokens, self, max_len)
    }

    /// Maps ids back to tokens, dropping PAD.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD_ID)
            .map(|&id| self.token(id).unwrap_or(OOV_TOKEN).to_string())
            .collect()
    }

    /// Token ids without padding or truncation.
    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// TSV serialisation: a `#specials` row, a column header, then one
    /// `token<TAB>id<TAB>count` row per word.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "#specials\tPAD={PAD_ID}\tOOV={OOV_ID}\tEOS={EOS_ID}\tmax_words={}\n",
            self.max_words
        );
        out.push_str("token\tid\tcount\n");
        for (i, (t, c)) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{}\t{c}", i + NUM_SPECIALS);
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, reason: &str| CorpusError::BadVocabulary {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some("#specials") {
            return Err(bad(1, "missing #specials header"));
        }
        let mut max_words = DEFAULT_MAX_WORDS;
        for field in fields {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(1, "bad header field"))?;
            let v: usize = v.parse().map_err(|_| bad(1, "bad header value"))?;
            let expected = match k {
                "PAD" => PAD_ID,
                "OOV" => OOV_ID,
                "EOS" => EOS_ID,
                "max_words" => {
                    max_words = v;
                    continue;
                }
                _ => return Err(bad(1, "unknown header field")),
            };
            if v != expected {
                return Err(bad(1, "special ids do not match this build"));
            }
        }

        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() || (i == 1 && line.starts_with("token\t")) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [token, id, count] = cols[..] else {
                return Err(bad(i + 1, "expected token, id and count"));
            };
            let id: usize = id.parse().map_err(|_| bad(i + 1, "bad id"))?;
            let count: u64 = count.parse().map_err(|_| bad(i + 1, "bad count"))?;
            if id != entries.len() + NUM_SPECIALS {
                return Err(bad(i + 1, "ids must be dense and ordered"));
            }
            if count == 0 || token.is_empty() || is_special(token) {
                return Err(bad(i + 1, "invalid entry"));
            }
            entries.push((token.to_string(), count));
        }
        if entries.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self::from_sorted(entries, max_words))
    }
}

/// Counts every token and keeps the `max_words` most frequent.
pub fn build_vocabulary<T: AsRef<[String]>>(
    utterances: &[T],
    max_words: usize,
) -> Result<Vocabulary, CorpusError> {
    if max_words == 0 {
        return Err(CorpusError::ZeroMaxWords);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for u in utterances {
        for t in u.as_ref() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts.into_iter().map(|(t, c)| (t.to_string(), c)), max_words)
}

/// Fixed-length id sequence; padding, if any, is a prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedUtterance(Vec<usize>);

impl EncodedUtterance {
    /// Wraps raw ids. Callers are responsible for the PAD-prefix layout.
    pub fn from_ids(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids after the PAD prefix.
    pub fn content(&self) -> &[usize] {
        let start = self.0.iter().position(|&i| i != PAD_ID).unwrap_or(self.0.len());
        &self.0[start..]
    }
}

/// Maps tokens to ids, keeps the first `max_len`, and left-pads with PAD.
pub fn encode_utterance(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> EncodedUtterance {
    let kept = tokens.len().min(max_len);
    let mut ids = vec![PAD_ID; max_len - kept];
    ids.extend(tokens[..kept].iter().map(|t| vocab.id(t)));
    EncodedUtterance(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub utterances: usize,
    pub tokens: usize,
    pub types: usize,
}

pub fn corpus_stats<T: AsRef<[String]>>(utterances: &[T]) -> CorpusStats {
    let mut types = HashSet::new();
    let mut tokens = 0;
    for u in utterances {
        tokens += u.as_ref().len();
        types.extend(u.as_ref().iter().map(String::as_str));
    }
    CorpusStats { utterances: utterances.len(), tokens, types: types.len() }
}
