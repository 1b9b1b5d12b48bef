//! Determiner/noun overlap.
//!
//! The empirical score is the share of distinct nouns attested right after at
//! least two distinct determiners. The expected score assumes nouns are drawn
//! from a Zipf distribution over `N` ranks and determiners independently from
//! `d_i`, for `S` pair tokens. For a noun of probability `p` the chance of
//! seeing it with at least two determiners is
//!
//! ```text
//! 1 + (D-1)(1-p)^S - Σ_i (d_i p + 1 - p)^S
//! ```
//!
//! by inclusion–exclusion over "no determiner" and "only determiner i".
//! [`monte_carlo_overlap`] estimates the same quantity by simulation.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::zipf::{ZipfDistribution, ZipfError};

const DEFAULT_LEXICON: &str = include_str!("../data/nouns.txt");

#[derive(Debug, Error, PartialEq)]
pub enum OverlapError {
    #[error("determiner profile: {0}")]
    BadProfile(String),
    #[error("need at least one noun rank")]
    NoNouns,
    #[error(transparent)]
    Zipf(#[from] ZipfError),
    #[error("noun lexicon is empty")]
    EmptyLexicon,
    #[error("replicates must be at least 1")]
    NoReplicates,
}

/// Determiners and their relative frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminerProfile {
    determiners: Vec<String>,
    probs: Vec<f64>,
}

impl DeterminerProfile {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, OverlapError> {
        if entries.is_empty() {
            return Err(OverlapError::BadProfile("no determiners".into()));
        }
        let mut seen = HashSet::new();
        for (d, p) in &entries {
            if !seen.insert(d.as_str()) {
                return Err(OverlapError::BadProfile(format!("duplicate determiner {d:?}")));
            }
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(OverlapError::BadProfile(format!("probability of {d:?} is {p}")));
            }
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OverlapError::BadProfile(format!("probabilities sum to {total}")));
        }
        let (determiners, probs) = entries.into_iter().unzip();
        Ok(Self { determiners, probs })
    }

    /// `a` 39.3%, `the` 60.7%.
    pub fn english_default() -> Self {
        Self::new(vec![("a".into(), 0.393), ("the".into(), 0.607)]).expect("valid default")
    }

    /// Equal weight on each determiner.
    pub fn uniform(determiners: &[&str]) -> Result<Self, OverlapError> {
        let p = 1.0 / determiners.len().max(1) as f64;
        Self::new(determiners.iter().map(|d| (d.to_string(), p)).collect())
    }

    pub fn determiners(&self) -> &[String] {
        &self.determiners
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.determiners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.determiners.is_empty()
    }

    fn index_of(&self, token: &str) -> Option<usize> {
        self.determiners.iter().position(|d| d == token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapParams {
    n: usize,
    s: u64,
    a: f64,
    profile: DeterminerProfile,
    zipf: ZipfDistribution,
}

impl OverlapParams {
    pub fn new(n: usize, s: u64, a: f64, profile: DeterminerProfile) -> Result<Self, OverlapError> {
        if n == 0 {
            return Err(OverlapError::NoNouns);
        }
        let zipf = ZipfDistribution::new(n, a)?;
        Ok(Self { n, s, a, profile, zipf })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> u64 {
        self.s
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn d(&self) -> usize {
        self.profile.len()
    }

    pub fn profile(&self) -> &DeterminerProfile {
        &self.profile
    }
}

/// `x^s` for `x = 1 - q`, via `exp(s · ln(1 - q))`.
#[inline]
fn pow_one_minus(q: f64, s: f64) -> f64 {
    (s * (-q).ln_1p()).exp()
}

fn overlap_for_prob(p: f64, params: &OverlapParams) -> f64 {
    if params.s == 0 || params.d() == 1 {
        return 0.0;
    }
    let s = params.s as f64;
    let d = params.d() as f64;
    let none = pow_one_minus(p, s);
    let single: f64 = params
        .profile
        .probs()
        .iter()
        .map(|di| pow_one_minus((1.0 - di) * p, s))
        .sum();
    (1.0 + (d - 1.0) * none - single).clamp(0.0, 1.0)
}

/// Expected overlap of the noun at frequency rank `r`.
pub fn expected_overlap_at_rank(r: usize, params: &OverlapParams) -> Result<f64, OverlapError> {
    let p = params.zipf.prob(r)?;
    Ok(overlap_for_prob(p, params))
}

/// Mean of [`expected_overlap_at_rank`] over all `N` ranks.
pub fn expected_overlap(params: &OverlapParams) -> f64 {
    let total: f64 = params
        .zipf
        .probs()
        .iter()
        .map(|&p| overlap_for_prob(p, params))
        .sum();
    total / params.n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Smallest representable change in `mean`: `1 / (N * replicates)`.
    pub resolution: f64,
}

impl McEstimate {
    /// `|value - mean| <= k` standard errors. The standard error is floored at
    /// the resolution, since a saturated cell (every replicate at 0 or 1)
    /// reports zero spread.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (value - self.mean).abs() <= k * self.std_error.max(self.resolution)
    }
}

/// Simulates `S` independent (determiner, noun-rank) draws per replicate and
/// scores the share of the `N` ranks seen with ≥ 2 distinct determiners.
///
/// Replicate `k` uses its own stream seeded from `(seed, k)`, so the result
/// does not depend on the thread pool.
pub fn monte_carlo_overlap(
    params: &OverlapParams,
    replicates: usize,
    seed: u64,
) -> Result<McEstimate, OverlapError> {
    if replicates == 0 {
        return Err(OverlapError::NoReplicates);
    }
    if params.s == 0 || params.d() == 1 {
        return Ok(McEstimate { mean: 0.0, std_error: 0.0, resolution: 1.0 / (params.n * replicates) as f64 });
    }
    let n = params.n;
    let d = params.d();
    // One draw picks a (rank, determiner) cell of the product distribution.
    let weights: Vec<f64> = params
        .zipf
        .probs()
        .iter()
        .flat_map(|pr| params.profile.probs().iter().map(move |pd| pr * pd))
        .collect();
    let cells = WeightedAliasIndex::new(weights).map_err(|e| OverlapError::BadProfile(e.to_string()))?;
    let cell_of: Vec<(u32, u32)> = (0..n as u32).flat_map(|r| (0..d as u32).map(move |k| (r, k))).collect();

    let fractions: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map_init(
            || (vec![u32::MAX; n], vec![false; n]),
            |(first, both), rep| {
                first.fill(u32::MAX);
                both.fill(false);
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed::derive(seed, rep));
                let mut overlapping = 0usize;
                for _ in 0..params.s {
                    let (noun, det) = cell_of[cells.sample(&mut rng)];
                    let noun = noun as usize;
                    match first[noun] {
                        u32::MAX => first[noun] = det,
                        f if f != det && !both[noun] => {
                            both[noun] = true;
                            overlapping += 1;
                            if overlapping == n {
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                overlapping as f64 / n as f64
            },
        )
        .collect();

    let k = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / k;
    let std_error = if fractions.len() > 1 {
        let var = fractions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, std_error, resolution: 1.0 / (n * replicates) as f64 })
}

/// Words treated as nouns when scoring determiner+noun pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NounLexicon {
    nouns: HashSet<String>,
}

impl NounLexicon {
    pub fn from_words<I, S>(words: I) -> Result<Self, OverlapError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let nouns: HashSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if nouns.is_empty() {
            return Err(OverlapError::EmptyLexicon);
        }
        Ok(Self { nouns })
    }

    /// One noun per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, OverlapError> {
        Self::from_words(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    /// The word list bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is non-empty")
    }

    pub fn contains(&self, word: &str) -> bool {
        self.nouns.contains(word)
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }
}

/// Multiset of (determiner, noun) pairs, keyed by noun with per-determiner
/// counts in profile order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairCounts {
    by_noun: BTreeMap<String, Vec<u64>>,
    determiners: Vec<String>,
}

impl PairCounts {
    /// S: total pair tokens.
    pub fn s(&self) -> u64 {
        self.by_noun.values().flatten().sum()
    }

    /// N: distinct nouns.
    pub fn n(&self) -> usize {
        self.by_noun.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_noun.is_empty()
    }

    pub fn count(&self, determiner: &str, noun: &str) -> u64 {
        let Some(i) = self.determiners.iter().position(|d| d == determiner) else {
            return 0;
        };
        self.by_noun.get(noun).map_or(0, |c| c[i])
    }

    /// Total pair count per noun.
    pub fn noun_counts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.by_noun.iter().map(|(n, c)| (n.as_str(), c.iter().sum()))
    }

    /// Flattened `(determiner, noun, count)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.by_noun.iter().flat_map(move |(noun, counts)| {
            counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(move |(i, c)| (self.determiners[i].as_str(), noun.as_str(), *c))
        })
    }
}

pub fn extract_det_noun_pairs<T: AsRef<[String]>>(
    utterances: &[T],
    profile: &DeterminerProfile,
    lexicon: &NounLexicon,
) -> PairCounts {
    let mut pairs = PairCounts { by_noun: BTreeMap::new(), determiners: profile.determiners.clone() };
    for u in utterances {
        for w in u.as_ref().windows(2) {
            let Some(d) = profile.index_of(&w[0]) else { continue };
            if lexicon.contains(&w[1]) {
                let entry = pairs
                    .by_noun
                    .entry(w[1].clone())
                    .or_insert_with(|| vec![0; profile.len()]);
                entry[d] += 1;
            }
        }
    }
    pairs
}

/// Share of distinct nouns seen with at least two distinct determiners.
pub fn empirical_overlap(pairs: &PairCounts) -> f64 {
    if pairs.by_noun.is_empty() {
        return 0.0;
    }
    let both = pairs
        .by_noun
        .values()
        .filter(|c| c.iter().filter(|&&x| x > 0).count() >= 2)
        .count();
    both as f64 / pairs.by_noun.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: u64,
    pub empirical: f64,
    pub expected: f64,
}

/// Pairs, empirical overlap and expected overlap at the measured `N`, `S`.
pub fn overlap_report<T: AsRef<[String]>>(
    utterances: &[T],
    profile: &DeterminerProfile,
    lexicon: &NounLexicon,
    a: f64,
) -> Result<OverlapReport, OverlapError> {
    let pairs = extract_det_noun_pairs(utterances, profile, lexicon);
    let empirical = empirical_overlap(&pairs);
    let expected = if pairs.n() == 0 {
        0.0
    } else {
        expected_overlap(&OverlapParams::new(pairs.n(), pairs.s(), a, profile.clone())?)
    };
    Ok(OverlapReport { n: pairs.n(), s: pairs.s(), empirical, expected })
}
