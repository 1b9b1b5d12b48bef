//! End-to-end run: ingest, vocabulary, Zipf fit, models, generation, scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use detprod::autoencoder::list_checkpoints;
use detprod::overlap::McEstimate;
use detprod::{
    build_vocabulary, encode_utterance, extract_det_noun_pairs, filter_child_directed, fit_zipf_shape,
    monte_carlo_overlap, overlap_report, rank_frequencies, seed, AeConfig, AutoencoderModel,
    DeterminerProfile, KneserNeyModel, NounLexicon, OverlapParams, TrainOptions, Utterance, Vocabulary,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, header};
use crate::config::{ae_label, ngram_label, RunConfig, ZipfPopulation, ZipfShape};

pub const RESULTS_HEADER: &str = "source,N,S,expected_overlap,empirical_overlap";
pub const CURVE_HEADER: &str = "epoch,dropout,empirical_overlap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub source: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: u64,
    pub expected_overlap: f64,
    pub empirical_overlap: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub monte_carlo: Option<McEstimate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Overlaps to 3 decimals, after a provenance line.
    pub fn to_csv(&self, hash: &str) -> String {
        let mut out = header(hash);
        out.push_str(RESULTS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3}",
                r.source, r.n, r.s, r.expected_overlap, r.empirical_overlap
            );
        }
        out
    }

    pub fn row(&self, source: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.source == source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfRecord {
    pub a: f64,
    pub r_squared: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub dropout: f64,
    pub empirical_overlap: f64,
}

pub fn curve_csv(rows: &[CurveRow], hash: &str) -> String {
    let mut out = header(hash);
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{:.3}", r.epoch, r.dropout, r.empirical_overlap);
    }
    out
}

/// Scores one corpus; `expected_overlap` uses the corpus's own N and S.
pub fn score_corpus<T: AsRef<[String]> + Sync>(
    source: &str,
    utterances: &[T],
    profile: &DeterminerProfile,
    lexicon: &NounLexicon,
    a: f64,
    mc_replicates: usize,
    mc_seed: u64,
) -> Result<ResultRow> {
    let report = overlap_report(utterances, profile, lexicon, a)?;
    let monte_carlo = if mc_replicates > 0 && report.n > 0 {
        let params = OverlapParams::new(report.n, report.s, a, profile.clone())?;
        Some(monte_carlo_overlap(&params, mc_replicates, mc_seed)?)
    } else {
        None
    };
    Ok(ResultRow {
        source: source.to_string(),
        n: report.n,
        s: report.s,
        expected_overlap: report.expected,
        empirical_overlap: report.empirical,
        monte_carlo,
    })
}

/// Fits the Zipf shape on determiner-following nouns or on every word.
pub fn fit_population<T: AsRef<[String]>>(
    utterances: &[T],
    population: ZipfPopulation,
    profile: &DeterminerProfile,
    lexicon: &NounLexicon,
) -> Result<ZipfRecord> {
    let counts: HashMap<String, u64> = match population {
        ZipfPopulation::Nouns => extract_det_noun_pairs(utterances, profile, lexicon)
            .noun_counts()
            .map(|(n, c)| (n.to_string(), c))
            .collect(),
        ZipfPopulation::AllWords => {
            let mut m = HashMap::new();
            for u in utterances {
                for t in u.as_ref() {
                    *m.entry(t.clone()).or_default() += 1;
                }
            }
            m
        }
    };
    let fit = fit_zipf_shape(&rank_frequencies(&counts)?)?;
    Ok(ZipfRecord { a: fit.a, r_squared: fit.r_squared, n: fit.n })
}

/// Greedy reconstructions of `corpus`, as tokens.
pub fn ae_generate(model: &AutoencoderModel, vocab: &Vocabulary, corpus: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
    let max_len = model.config().max_len;
    let encoded: Vec<_> = corpus.iter().map(|u| encode_utterance(u, vocab, max_len)).collect();
    Ok(model.generate_corpus(&encoded)?.iter().map(|ids| vocab.decode(ids)).collect())
}

/// Per-checkpoint empirical overlap of the reconstructed `corpus`, sorted by
/// (dropout, epoch). Unreadable checkpoints are skipped with a warning.
pub fn report_epoch_curve(
    checkpoint_dir: &Path,
    corpus: &[Vec<String>],
    lexicon: &NounLexicon,
    profile: &DeterminerProfile,
    fallback_vocab: Option<&Vocabulary>,
) -> Result<Vec<CurveRow>> {
    let paths = list_checkpoints(checkpoint_dir)
        .with_context(|| format!("listing {}", checkpoint_dir.display()))?;
    if paths.is_empty() {
        bail!("no checkpoints in {}", checkpoint_dir.display());
    }
    let scored: Vec<Option<CurveRow>> = paths
        .par_iter()
        .map(|p| match curve_point(p, corpus, lexicon, profile, fallback_vocab) {
            Ok(row) => Some(row),
            Err(e) => {
                warn!("skipping {}: {e:#}", p.display());
                None
            }
        })
        .collect();
    let mut rows: Vec<CurveRow> = scored.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.dropout.total_cmp(&b.dropout).then(a.epoch.cmp(&b.epoch)));
    Ok(rows)
}

fn curve_point(
    path: &Path,
    corpus: &[Vec<String>],
    lexicon: &NounLexicon,
    profile: &DeterminerProfile,
    fallback_vocab: Option<&Vocabulary>,
) -> Result<CurveRow> {
    let ck = AutoencoderModel::load(path)?;
    let vocab = ck
        .vocab
        .as_ref()
        .or(fallback_vocab)
        .ok_or_else(|| anyhow!("checkpoint has no vocabulary and none was given"))?;
    if vocab.len() != ck.model.config().vocab_size {
        bail!("vocabulary size {} does not match the model's {}", vocab.len(), ck.model.config().vocab_size);
    }
    let generated = ae_generate(&ck.model, vocab, corpus)?;
    let pairs = extract_det_noun_pairs(&generated, profile, lexicon);
    Ok(CurveRow {
        epoch: ck.epoch,
        dropout: ck.model.config().dropout,
        empirical_overlap: detprod::empirical_overlap(&pairs),
    })
}

/// Stage timings, appended to `run.log` as they complete.
struct StageLog {
    file: File,
}

impl StageLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self { file: File::create(path).with_context(|| format!("creating {}", path.display()))? })
    }

    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        info!("stage {stage}");
        let started = Instant::now();
        let out = f().with_context(|| format!("stage `{stage}` failed"));
        let secs = started.elapsed().as_secs_f64();
        let status = if out.is_ok() { "ok" } else { "failed" };
        let _ = writeln!(self.file, "{stage}\t{status}\t{secs:.3}s");
        out
    }
}

#[derive(Debug, Clone, Serialize)]
struct ResultsJson<'a> {
    rows: &'a [ResultRow],
    zipf_a: f64,
    zipf_fit: Option<ZipfRecord>,
    seeds: &'a BTreeMap<String, u64>,
    config: &'a RunConfig,
}

/// Where a run put its artifacts.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub table: ResultTable,
    pub curve: Vec<CurveRow>,
    pub results_csv: PathBuf,
    pub results_json: PathBuf,
    pub curve_csv: PathBuf,
    pub config_hash: String,
}

/// Runs every stage. Validation happens before anything is written.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate().context("invalid config")?;
    let hash = cfg.hash();
    let out = &cfg.paths.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut log = StageLog::create(&out.join("run.log"))?;
    let profile = cfg.profile()?;
    let lexicon = artifacts::read_lexicon(cfg.paths.lexicon.as_deref())?;
    let mut seeds = BTreeMap::new();

    let adult: Vec<Vec<String>> = log.run("ingest", || {
        let utts: Vec<Utterance> = artifacts::read_transcripts(&cfg.paths.corpora)?;
        let child = cfg.corpus.child_speakers.iter().cloned().collect();
        let cds: Vec<Vec<String>> = filter_child_directed(&utts, &child)
            .into_iter()
            .map(|u| u.tokens)
            .filter(|t| !t.is_empty())
            .collect();
        if cds.is_empty() {
            bail!("no child-directed utterances found");
        }
        artifacts::write_corpus(&out.join("corpus.txt"), &hash, &cds)?;
        Ok(cds)
    })?;

    let vocab = log.run("vocab", || {
        let v = build_vocabulary(&adult, cfg.corpus.max_words)?;
        artifacts::write_vocab(&out.join("vocab.tsv"), &hash, &v)?;
        Ok(v)
    })?;

    let (zipf_fit, zipf_a) = log.run("zipf", || {
        let fit = fit_population(&adult, cfg.overlap.zipf_population, &profile, &lexicon);
        let fit = match (fit, cfg.overlap.zipf_a) {
            (Ok(f), _) => Some(f),
            (Err(e), ZipfShape::Fit(_)) => return Err(e),
            (Err(e), ZipfShape::Fixed(_)) => {
                warn!("Zipf fit unavailable: {e:#}");
                None
            }
        };
        if let Some(f) = &fit {
            artifacts::write_json(&out.join("zipf.json"), &hash, f)?;
        }
        let a = match cfg.overlap.zipf_a {
            ZipfShape::Fixed(a) => a,
            ZipfShape::Fit(_) => fit.expect("checked above").a,
        };
        Ok((fit, a))
    })?;

    let ckpt_dir = out.join("checkpoints");
    let gen_dir = out.join("generated");
    let ae_seeds: Vec<(String, f64, u64)> = cfg
        .autoencoder
        .dropouts
        .iter()
        .map(|&d| {
            let label = ae_label(d);
            let s = seed::derive_named(cfg.seed, &label);
            (label, d, s)
        })
        .collect();
    for (label, _, s) in &ae_seeds {
        seeds.insert(label.clone(), *s);
    }
    let ae_corpora: Vec<(String, Vec<Vec<String>>)> = log.run("train-ae", || {
        if ckpt_dir.exists() {
            fs::remove_dir_all(&ckpt_dir)?;
        }
        ae_seeds
            .par_iter()
            .map(|(label, dropout, s)| {
                let generated = train_and_generate(cfg, &vocab, &adult, *dropout, *s, &ckpt_dir, label)
                    .with_context(|| format!("autoencoder {label}"))?;
                artifacts::write_corpus(&gen_dir.join(format!("{label}.txt")), &hash, &generated)?;
                Ok((label.clone(), generated))
            })
            .collect()
    })?;

    let ngram_corpora: Vec<(String, Vec<Vec<String>>)> = log.run("ngram", || {
        let ids: Vec<Vec<usize>> = adult.iter().map(|u| vocab.ids(u)).collect();
        cfg.ngram
            .orders
            .par_iter()
            .map(|&order| {
                let label = ngram_label(order).to_string();
                let model = KneserNeyModel::train(&ids, &vocab, order)?;
                artifacts::write_text(&out.join("models").join(format!("{label}.kn")), &hash, &model.to_text())?;
                let s = seed::derive_named(cfg.seed, &label);
                let generated: Vec<Vec<String>> = model
                    .generate_corpus(&ids, cfg.ngram.max_len, s)
                    .iter()
                    .map(|g| model.decode(g))
                    .collect();
                artifacts::write_corpus(&gen_dir.join(format!("{label}.txt")), &hash, &generated)?;
                Ok((label, generated))
            })
            .collect()
    })?;
    for &order in &cfg.ngram.orders {
        let label = ngram_label(order);
        seeds.insert(label.to_string(), seed::derive_named(cfg.seed, label));
    }

    let table = log.run("score", || {
        let mut corpora: Vec<(&str, &[Vec<String>])> = vec![("adult", &adult)];
        corpora.extend(ae_corpora.iter().map(|(l, c)| (l.as_str(), c.as_slice())));
        corpora.extend(ngram_corpora.iter().map(|(l, c)| (l.as_str(), c.as_slice())));
        let rows = corpora
            .iter()
            .map(|(label, c)| {
                let mc_seed = seed::derive_named(cfg.seed, &format!("mc-{label}"));
                score_corpus(label, c, &profile, &lexicon, zipf_a, cfg.overlap.mc_replicates, mc_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ResultTable { rows })
    })?;

    let results_csv = out.join("results.csv");
    let results_json = out.join("results.json");
    fs::write(&results_csv, table.to_csv(&hash))?;
    seeds.insert("run".into(), cfg.seed);
    artifacts::write_json(
        &results_json,
        &hash,
        &ResultsJson { rows: &table.rows, zipf_a, zipf_fit, seeds: &seeds, config: cfg },
    )?;

    let curve_path = out.join("epoch_curve.csv");
    let curve = log.run("epoch-curve", || {
        if cfg.autoencoder.dropouts.is_empty() || cfg.autoencoder.epochs == 0 {
            return Ok(Vec::new());
        }
        let rows = report_epoch_curve(&ckpt_dir, &adult, &lexicon, &profile, Some(&vocab))?;
        fs::write(&curve_path, curve_csv(&rows, &hash))?;
        Ok(rows)
    })?;

    Ok(PipelineOutput { table, curve, results_csv, results_json, curve_csv: curve_path, config_hash: hash })
}

/// Trains one autoencoder and reconstructs the training corpus.
pub fn train_and_generate(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    corpus: &[Vec<String>],
    dropout: f64,
    run_seed: u64,
    checkpoint_dir: &Path,
    label: &str,
) -> Result<Vec<Vec<String>>> {
    let ae = &cfg.autoencoder;
    let config = AeConfig {
        vocab_size: vocab.len(),
        max_len: cfg.corpus.max_len,
        emb_dim: ae.emb_dim,
        latent_dim: ae.latent_dim,
        dropout,
        placement: ae.placement,
        mask_pad: ae.mask_pad,
    };
    let encoded: Vec<_> = corpus.iter().map(|u| encode_utterance(u, vocab, config.max_len)).collect();
    let mut model = AutoencoderModel::new(config, seed::derive_named(run_seed, "init"))?;
    let opts = TrainOptions {
        epochs: ae.epochs,
        batch_size: ae.batch_size,
        seed: run_seed,
        adam: detprod::neural::AdamConfig { lr: ae.learning_rate, ..Default::default() },
        checkpoint_dir: Some(checkpoint_dir.to_path_buf()),
        checkpoint_prefix: label.to_string(),
        vocab: Some(vocab.clone()),
    };
    let log = model.train(&encoded, &opts)?;
    if let Some(last) = log.epochs.last() {
        info!("{label}: final mean loss {:.4}", last.mean_loss);
    }
    ae_generate(&model, vocab, corpus)
}
