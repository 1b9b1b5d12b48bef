//! Interpolated modified Kneser-Ney bigram/trigram models.
//!
//! Sentences are padded on the left with `order - 1` begin-of-sentence
//! markers (the PAD id doubles as that marker; it is never predicted) and
//! terminated with EOS. The highest order uses raw counts; every lower order
//! uses continuation counts, the number of distinct words seen immediately
//! before the n-gram. Each order has three discounts `D1, D2, D3+` estimated
//! from its own count-of-counts `n_k`:
//!
//! ```text
//! Y = n1 / (n1 + 2 n2),   D_k = k - (k + 1) Y n_{k+1} / n_k
//! ```
//!
//! The unigram level interpolates with the uniform distribution over every
//! predictable id, so any word in the vocabulary gets positive mass.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Vocabulary, EOS_ID, PAD_ID};
use crate::seed;

/// Begin-of-sentence context marker.
pub const BOS_ID: usize = PAD_ID;

/// Discount used when count-of-counts cannot support the estimate.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

const FORMAT_MAGIC: &str = "detprod-kneser-ney";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("order must be 2 or 3, got {0}")]
    BadOrder(usize),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(usize),
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3plus: f64,
}

impl Discounts {
    pub const FALLBACK: Self =
        Self { d1: FALLBACK_DISCOUNT, d2: FALLBACK_DISCOUNT, d3plus: FALLBACK_DISCOUNT };

    /// Estimate from the counts of one order. Falls back to
    /// [`FALLBACK_DISCOUNT`] when `n1`, `n2` or `n3` is zero.
    pub fn estimate(counts: impl IntoIterator<Item = u64>) -> (Self, bool) {
        let mut n = [0u64; 5];
        for c in counts {
            if (1..=4).contains(&c) {
                n[c as usize] += 1;
            }
        }
        if n[1] == 0 || n[2] == 0 || n[3] == 0 {
            return (Self::FALLBACK, true);
        }
        let [_, n1, n2, n3, n4] = n.map(|x| x as f64);
        let y = n1 / (n1 + 2.0 * n2);
        let d = Self {
            d1: (1.0 - 2.0 * y * n2 / n1).clamp(0.0, 1.0),
            d2: (2.0 - 3.0 * y * n3 / n2).clamp(0.0, 2.0),
            d3plus: (3.0 - 4.0 * y * n4 / n3).clamp(0.0, 3.0),
        };
        (d, false)
    }

    #[inline]
    pub fn for_count(&self, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }
}

#[derive(Debug, Clone)]
struct ContextEntry {
    total: u64,
    /// Σ D(c) over the followers of this context.
    reserved: f64,
    followers: Vec<(u32, u64)>,
}

#[derive(Debug, Clone)]
struct Level {
    counts: HashMap<Vec<u32>, u64>,
    contexts: HashMap<Vec<u32>, ContextEntry>,
    discounts: Discounts,
}

impl Level {
    fn new(counts: HashMap<Vec<u32>, u64>, discounts: Discounts) -> Self {
        let mut contexts: HashMap<Vec<u32>, ContextEntry> = HashMap::new();
        for (gram, &c) in &counts {
            let (ctx, w) = gram.split_at(gram.len() - 1);
            let e = contexts.entry(ctx.to_vec()).or_insert(ContextEntry {
                total: 0,
                reserved: 0.0,
                followers: Vec::new(),
            });
            e.total += c;
            e.followers.push((w[0], c));
        }
        for e in contexts.values_mut() {
            e.followers.sort_unstable();
            // Summed in id order so saved and retrained models agree bitwise.
            e.reserved = e.followers.iter().map(|&(_, c)| discounts.for_count(c)).sum();
        }
        Self { counts, contexts, discounts }
    }

    fn sorted_counts(&self) -> Vec<(&Vec<u32>, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(g, c)| (g, *c)).collect();
        v.sort_unstable();
        v
    }
}

#[derive(Debug, Clone)]
pub struct KneserNeyModel {
    order: usize,
    tokens: Vec<String>,
    /// `levels[k - 1]` holds the k-gram statistics.
    levels: Vec<Level>,
    unigram: Vec<f64>,
}

impl KneserNeyModel {
    /// Trains on id sequences; EOS is appended to each sentence here.
    pub fn train(
        sentences: &[Vec<usize>],
        vocab: &Vocabulary,
        order: usize,
    ) -> Result<Self, NgramError> {
        if !(2..=3).contains(&order) {
            return Err(NgramError::BadOrder(order));
        }
        if sentences.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let v = vocab.len();
        let mut top: HashMap<Vec<u32>, u64> = HashMap::new();
        let mut padded: Vec<u32> = Vec::new();
        for s in sentences {
            padded.clear();
            padded.resize(order - 1, BOS_ID as u32);
            for &id in s {
                if id >= v || id == PAD_ID {
                    return Err(NgramError::UnknownId(id));
                }
                padded.push(id as u32);
            }
            padded.push(EOS_ID as u32);
            for gram in padded.windows(order) {
                *top.entry(gram.to_vec()).or_default() += 1;
            }
        }

        // Continuation counts: distinct left extensions in the level above.
        let mut tables = vec![top];
        for _ in 1..order {
            let above = tables.last().unwrap();
            let mut lower: HashMap<Vec<u32>, u64> = HashMap::new();
            for gram in above.keys() {
                *lower.entry(gram[1..].to_vec()).or_default() += 1;
            }
            tables.push(lower);
        }
        tables.reverse();

        let levels = tables
            .into_iter()
            .enumerate()
            .map(|(i, counts)| {
                let (d, fallback) = Discounts::estimate(counts.values().copied());
                if fallback {
                    warn!(
                        "order-{} count-of-counts too sparse for modified KN discounts; using {}",
                        i + 1,
                        FALLBACK_DISCOUNT
                    );
                }
                Level::new(counts, d)
            })
            .collect();
        Ok(Self::assemble(order, vocab_tokens(vocab), levels))
    }

    fn assemble(order: usize, tokens: Vec<String>, levels: Vec<Level>) -> Self {
        let mut model = Self { order, tokens, levels, unigram: Vec::new() };
        model.unigram = model.unigram_distribution();
        model
    }

    fn unigram_distribution(&self) -> Vec<f64> {
        let v = self.tokens.len();
        let predictable = (v - 1) as f64;
        let mut dist = vec![0.0; v];
        let level = &self.levels[0];
        match level.contexts.get(&Vec::new()) {
            Some(e) if e.total > 0 => {
                let total = e.total as f64;
                let uniform = e.reserved / total / predictable;
                for (w, p) in dist.iter_mut().enumerate() {
                    if w != BOS_ID {
                        *p = uniform;
                    }
                }
                for &(w, c) in &e.followers {
                    dist[w as usize] += (c as f64 - level.discounts.for_count(c)).max(0.0) / total;
                }
            }
            _ => {
                for (w, p) in dist.iter_mut().enumerate() {
                    if w != BOS_ID {
                        *p = 1.0 / predictable;
                    }
                }
            }
        }
        dist
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Size of the id space, BOS/PAD included.
    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn discounts(&self, n: usize) -> Discounts {
        self.levels[n - 1].discounts
    }

    /// The last `order - 1` ids of `context`, left-padded with BOS.
    fn full_context(&self, context: &[usize]) -> Vec<u32> {
        let want = self.order - 1;
        let mut ctx = vec![BOS_ID as u32; want.saturating_sub(context.len())];
        let start = context.len().saturating_sub(want);
        ctx.extend(context[start..].iter().map(|&i| i as u32));
        ctx
    }

    fn prob_at(&self, k: usize, ctx: &[u32], word: u32) -> f64 {
        if k == 1 {
            return self.unigram[word as usize];
        }
        let lower = self.prob_at(k - 1, &ctx[1..], word);
        let level = &self.levels[k - 1];
        match level.contexts.get(ctx) {
            Some(e) => {
                let mut gram = ctx.to_vec();
                gram.push(word);
                let c = level.counts.get(&gram).copied().unwrap_or(0);
                let discounted = (c as f64 - level.discounts.for_count(c)).max(0.0);
                (discounted + e.reserved * lower) / e.total as f64
            }
            None => lower,
        }
    }

    /// `P(word | context)`. Only the last `order - 1` ids of `context` are
    /// used; shorter contexts are padded with BOS. BOS itself has
    /// probability zero.
    pub fn prob(&self, context: &[usize], word: usize) -> f64 {
        if word >= self.tokens.len() || word == BOS_ID {
            return 0.0;
        }
        let ctx = self.full_context(context);
        self.prob_at(self.order, &ctx, word as u32)
    }

    /// Full next-word distribution indexed by id.
    pub fn distribution(&self, context: &[usize]) -> Vec<f64> {
        let ctx = self.full_context(context);
        let mut dist = self.unigram.clone();
        for k in 2..=self.order {
            let level = &self.levels[k - 1];
            let Some(e) = level.contexts.get(&ctx[self.order - k..]) else {
                continue;
            };
            let total = e.total as f64;
            let scale = e.reserved / total;
            for p in dist.iter_mut() {
                *p *= scale;
            }
            for &(w, c) in &e.followers {
                dist[w as usize] += (c as f64 - level.discounts.for_count(c)).max(0.0) / total;
            }
        }
        dist
    }

    /// Samples a sentence starting with `seed_word`, stopping at EOS (not
    /// emitted) or after `max_len` tokens.
    ///
    /// Each step draws `u ~ U[0,1)` and inverts the CDF over candidates sorted
    /// by descending probability (ties by id), so `u = 0` follows the most
    /// probable continuation.
    pub fn generate<R: Rng + ?Sized>(&self, seed_word: usize, max_len: usize, rng: &mut R) -> Vec<usize> {
        if max_len == 0 {
            return Vec::new();
        }
        let mut history = vec![BOS_ID; self.order - 1];
        history.push(seed_word);
        let mut out = vec![seed_word];
        let mut order: Vec<usize> = Vec::with_capacity(self.tokens.len());
        while out.len() < max_len {
            let dist = self.distribution(&history);
            order.clear();
            order.extend((0..dist.len()).filter(|&w| dist[w] > 0.0));
            order.sort_unstable_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = *order.last().expect("non-empty distribution");
            for &w in &order {
                acc += dist[w];
                if u < acc {
                    next = w;
                    break;
                }
            }
            if next == EOS_ID {
                break;
            }
            out.push(next);
            history.push(next);
        }
        out
    }

    /// One generated sentence per source sentence, seeded with the source's
    /// first non-PAD id. Sentence `i` uses an rng derived from `(seed, i)`.
    pub fn generate_corpus(&self, sources: &[Vec<usize>], max_len: usize, seed: u64) -> Vec<Vec<usize>> {
        sources
            .iter()
            .enumerate()
            .map(|(i, src)| match src.iter().find(|&&id| id != PAD_ID) {
                Some(&first) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, i as u64));
                    self.generate(first, max_len, &mut rng)
                }
                None => Vec::new(),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter_map(|&i| self.tokens.get(i).cloned())
            .collect()
    }

    /// Text serialisation:
    ///
    /// ```text
    /// detprod-kneser-ney 1
    /// order <n>
    /// vocab <V>
    /// <token for id 0> ... one per line
    /// level <k> <D1> <D2> <D3+> <entries>
    /// <id> <id> ...<TAB><count>     sorted by ids
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_MAGIC} {FORMAT_VERSION}\norder {}\nvocab {}\n", self.order, self.tokens.len());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        for (k, level) in self.levels.iter().enumerate() {
            let d = level.discounts;
            let _ = writeln!(
                out,
                "level {} {:?} {:?} {:?} {}",
                k + 1,
                d.d1,
                d.d2,
                d.d3plus,
                level.counts.len()
            );
            for (gram, c) in level.sorted_counts() {
                let ids: Vec<String> = gram.iter().map(u32::to_string).collect();
                let _ = writeln!(out, "{}\t{c}", ids.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NgramError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| NgramError::Format {
                line: 0,
                reason: format!("unexpected end of file, expected {what}"),
            })
        };
        let fail = |line: usize, reason: &str| NgramError::Format { line, reason: reason.to_string() };

        let (ln, header) = next("header")?;
        if header != format!("{FORMAT_MAGIC} {FORMAT_VERSION}") {
            return Err(fail(ln, "not a version-1 Kneser-Ney model"));
        }
        let field = |(ln, line): (usize, &str), key: &str| -> Result<usize, NgramError> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| fail(ln, &format!("expected `{key} <n>`")))
        };
        let order = field(next("order")?, "order")?;
        if !(2..=3).contains(&order) {
            return Err(NgramError::BadOrder(order));
        }
        let v = field(next("vocab")?, "vocab")?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            tokens.push(next("token")?.1.to_string());
        }

        let mut levels = Vec::with_capacity(order);
        for k in 1..=order {
            let (ln, line) = next("level header")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parsed = match parts[..] {
                ["level", lk, d1, d2, d3, n] => (|| {
                    Some((
                        lk.parse::<usize>().ok()?,
                        Discounts {
                            d1: d1.parse().ok()?,
                            d2: d2.parse().ok()?,
                            d3plus: d3.parse().ok()?,
                        },
                        n.parse::<usize>().ok()?,
                    ))
                })(),
                _ => None,
            };
            let Some((lk, discounts, n)) = parsed else {
                return Err(fail(ln, "bad level header"));
            };
            if lk != k {
                return Err(fail(ln, "levels out of order"));
            }
            let mut counts = HashMap::with_capacity(n);
            for _ in 0..n {
                let (ln, line) = next("n-gram")?;
                let (ids, c) = line.split_once('\t').ok_or_else(|| fail(ln, "missing count"))?;
                let gram: Vec<u32> = ids
                    .split(' ')
                    .map(|s| s.parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| fail(ln, "bad id"))?;
                if gram.len() != k || gram.iter().any(|&i| i as usize >= v) {
                    return Err(fail(ln, "n-gram has wrong length or unknown id"));
                }
                let c: u64 = c.parse().map_err(|_| fail(ln, "bad count"))?;
                counts.insert(gram, c);
            }
            levels.push(Level::new(counts, discounts));
        }
        Ok(Self::assemble(order, tokens, levels))
    }
}

fn vocab_tokens(vocab: &Vocabulary) -> Vec<String> {
    (0..vocab.len())
        .map(|i| vocab.token(i).expect("dense ids").to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use rand::RngCore;

    fn corpus(lines: &[&str]) -> (Vocabulary, Vec<Vec<usize>>) {
        let toks: Vec<Vec<String>> = lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect();
        let vocab = build_vocabulary(&toks, 100).unwrap();
        let ids = toks.iter().map(|t| vocab.ids(t)).collect();
        (vocab, ids)
    }

    /// Always yields zero, so every uniform draw is 0.0.
    struct Zeros;
    impl RngCore for Zeros {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (v, ids) = corpus(&["a b"]);
        assert!(matches!(KneserNeyModel::train(&ids, &v, 4), Err(NgramError::BadOrder(4))));
        assert!(matches!(KneserNeyModel::train(&[], &v, 2), Err(NgramError::EmptyCorpus)));
        assert!(matches!(
            KneserNeyModel::train(&[vec![999]], &v, 2),
            Err(NgramError::UnknownId(999))
        ));
    }

    #[test]
    fn discount_estimate() {
        // n1=4, n2=2, n3=1, n4=1
        let (d, fallback) = Discounts::estimate([1, 1, 1, 1, 2, 2, 3, 4, 9]);
        assert!(!fallback);
        let y = 4.0 / 8.0;
        assert!((d.d1 - (1.0 - 2.0 * y * 2.0 / 4.0)).abs() < 1e-15);
        assert!((d.d2 - (2.0 - 3.0 * y * 1.0 / 2.0)).abs() < 1e-15);
        assert!((d.d3plus - (3.0 - 4.0 * y * 1.0 / 1.0)).abs() < 1e-15);
        assert_eq!(Discounts::estimate([1, 1, 3]), (Discounts::FALLBACK, true));
    }

    #[test]
    fn distributions_normalise() {
        let (v, ids) = corpus(&["a b c", "a c", "b a c d", "d d a", "the dog ran"]);
        for order in [2, 3] {
            let m = KneserNeyModel::train(&ids, &v, order).unwrap();
            for ctx in [vec![], vec![3], vec![3, 4], vec![1, 1], vec![7, 5]] {
                let dist = m.distribution(&ctx);
                let total: f64 = dist.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "order {order} ctx {ctx:?}: {total}");
                assert_eq!(dist[BOS_ID], 0.0);
                for (w, p) in dist.iter().enumerate() {
                    assert!((p - m.prob(&ctx, w)).abs() < 1e-14);
                    if w != BOS_ID {
                        assert!(*p > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn unseen_context_backs_off_fully() {
        let (v, ids) = corpus(&["a b", "a c", "b c"]);
        let m = KneserNeyModel::train(&ids, &v, 2).unwrap();
        let oov = crate::corpus::OOV_ID;
        assert_eq!(m.distribution(&[oov]), m.unigram);
    }

    #[test]
    fn zero_quantile_follows_argmax_chain() {
        let (v, ids) = corpus(&["a b c", "a b c", "a b c", "a b c", "a b d", "b d", "c a", "d a b"]);
        let m = KneserNeyModel::train(&ids, &v, 2).unwrap();
        let out = m.generate(v.id("a"), 10, &mut Zeros);
        let mut expect = vec![v.id("a")];
        loop {
            let dist = m.distribution(&expect);
            let best = (0..dist.len())
                .max_by(|&x, &y| dist[x].total_cmp(&dist[y]).then(y.cmp(&x)))
                .unwrap();
            if best == EOS_ID || expect.len() == 10 {
                break;
            }
            expect.push(best);
        }
        assert_eq!(out, expect);
        assert_eq!(m.decode(&out), ["a", "b", "c"]);
    }

    #[test]
    fn generated_corpus_shape() {
        let (v, ids) = corpus(&["a b c", "the dog", "b a"]);
        let m = KneserNeyModel::train(&ids, &v, 3).unwrap();
        let mut sources = ids.clone();
        sources.push(vec![PAD_ID, PAD_ID]);
        let out = m.generate_corpus(&sources, 10, 5);
        assert_eq!(out.len(), 4);
        assert!(out[3].is_empty());
        for (o, s) in out.iter().zip(&ids) {
            assert_eq!(o[0], s[0]);
            assert!(o.len() <= 10 && !o.contains(&EOS_ID));
        }
        assert_eq!(out, m.generate_corpus(&sources, 10, 5));
    }

    #[test]
    fn text_round_trip_preserves_probabilities() {
        let (v, ids) = corpus(&["a b c", "a c", "b a c d", "d d a", "a b c", "a b"]);
        let m = KneserNeyModel::train(&ids, &v, 3).unwrap();
        let text = m.to_text();
        let back = KneserNeyModel::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        for ctx in [vec![3, 4], vec![5], vec![]] {
            assert_eq!(back.distribution(&ctx), m.distribution(&ctx));
        }
        assert!(KneserNeyModel::from_text("garbage").is_err());
    }
}
