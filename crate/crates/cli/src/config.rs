//! Run configuration: one TOML file, every field defaulted.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use detprod::corpus::{DEFAULT_MAX_LEN, DEFAULT_MAX_WORDS};
use detprod::{DeterminerProfile, DropoutPlacement};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the directory relative input paths resolve against.
pub const DATA_ROOT_ENV: &str = "DETPROD_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub autoencoder: AeSection,
    pub ngram: NgramSection,
    pub overlap: OverlapSection,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// CHAT or plain-text transcripts.
    pub corpora: Vec<PathBuf>,
    /// One noun per line; the bundled list when absent.
    pub lexicon: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Speaker codes dropped as child speech.
    pub child_speakers: Vec<String>,
    pub max_words: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeSection {
    pub emb_dim: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropouts: Vec<f64>,
    pub learning_rate: f64,
    pub placement: DropoutPlacement,
    pub mask_pad: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NgramSection {
    pub orders: Vec<usize>,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZipfPopulation {
    /// Nouns seen directly after a determiner.
    Nouns,
    AllWords,
}

/// A fixed shape, or `"fit"` to use the corpus estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZipfShape {
    Fixed(f64),
    Fit(FitMarker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMarker {
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminerWeight {
    pub word: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapSection {
    pub determiners: Vec<DeterminerWeight>,
    pub zipf_a: ZipfShape,
    pub zipf_population: ZipfPopulation,
    /// Monte Carlo replicates per scored corpus; 0 skips the check.
    pub mc_replicates: usize,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpora: Vec::new(), lexicon: None, output: PathBuf::from("detprod-out") }
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { child_speakers: vec!["CHI".into()], max_words: DEFAULT_MAX_WORDS, max_len: DEFAULT_MAX_LEN }
    }
}

impl Default for AeSection {
    fn default() -> Self {
        Self {
            emb_dim: 30,
            latent_dim: 20,
            epochs: 10,
            batch_size: 64,
            dropouts: vec![0.1, 0.2, 0.3],
            learning_rate: 0.001,
            placement: DropoutPlacement::default(),
            mask_pad: false,
        }
    }
}

impl Default for NgramSection {
    fn default() -> Self {
        Self { orders: vec![2, 3], max_len: DEFAULT_MAX_LEN }
    }
}

impl Default for OverlapSection {
    fn default() -> Self {
        Self {
            determiners: vec![
                DeterminerWeight { word: "a".into(), p: 0.393 },
                DeterminerWeight { word: "the".into(), p: 0.607 },
            ],
            zipf_a: ZipfShape::Fixed(1.06),
            zipf_population: ZipfPopulation::Nouns,
            mc_replicates: 0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            corpus: CorpusSection::default(),
            autoencoder: AeSection::default(),
            ngram: NgramSection::default(),
            overlap: OverlapSection::default(),
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing config")
    }

    /// Reads `path`; relative input paths are resolved against `data_root`,
    /// or the config file's directory when there is none.
    pub fn load(path: &Path, data_root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = match data_root {
            Some(root) => root.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.resolve_inputs(&base);
        Ok(cfg)
    }

    pub fn resolve_inputs(&mut self, base: &Path) {
        for p in &mut self.paths.corpora {
            *p = resolve(base, p);
        }
        if let Some(l) = &mut self.paths.lexicon {
            *l = resolve(base, l);
        }
    }

    pub fn profile(&self) -> Result<DeterminerProfile> {
        let entries = self.overlap.determiners.iter().map(|d| (d.word.clone(), d.p)).collect();
        Ok(DeterminerProfile::new(entries)?)
    }

    /// Checks values and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        if self.paths.corpora.is_empty() {
            bail!("config lists no corpora");
        }
        for p in self.paths.corpora.iter().chain(&self.paths.lexicon) {
            if !p.exists() {
                bail!("input path does not exist: {}", p.display());
            }
        }
        self.profile()?;
        let ae = &self.autoencoder;
        if self.corpus.max_words == 0 || self.corpus.max_len == 0 {
            bail!("max_words and max_len must be positive");
        }
        if ae.emb_dim == 0 || ae.latent_dim == 0 || ae.batch_size == 0 {
            bail!("autoencoder dimensions and batch size must be positive");
        }
        if let Some(d) = ae.dropouts.iter().find(|d| !(0.0..1.0).contains(*d)) {
            bail!("dropout {d} outside [0, 1)");
        }
        if let Some(o) = self.ngram.orders.iter().find(|o| !(2..=3).contains(*o)) {
            bail!("n-gram order {o} unsupported (2 or 3)");
        }
        if let ZipfShape::Fixed(a) = self.overlap.zipf_a {
            if !(a.is_finite() && a > 0.0) {
                bail!("zipf_a must be positive");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.output = PathBuf::new();
        config_hash(&canonical)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Hex SHA-256 of `value` serialised as JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

/// Label used for dropout-specific artifacts, e.g. `0.3` → `ae_30`.
pub fn ae_label(dropout: f64) -> String {
    format!("ae_{:02}", (dropout * 100.0).round() as u32)
}

pub fn ngram_label(order: usize) -> &'static str {
    match order {
        2 => "bigram",
        3 => "trigram",
        _ => "ngram",
    }
}
