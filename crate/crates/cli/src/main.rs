use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use detprod::{
    build_vocabulary, corpus_stats, encode_utterance, filter_child_directed, rank_frequencies, AeConfig,
    AutoencoderModel, DeterminerProfile, DropoutPlacement, KneserNeyModel, TrainOptions,
};
use detprod_cli::artifacts;
use detprod_cli::config::{config_hash, DATA_ROOT_ENV};
use detprod_cli::pipeline::{self, ZipfRecord};
use detprod_cli::{run_pipeline, RunConfig};
use log::info;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "detprod", version, about = "Determiner/noun productivity experiments")]
struct Cli {
    /// Base seed; every stochastic step derives its own stream from it.
    /// Defaults to 42, or to the config's seed for `pipeline`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory relative input paths are resolved against.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,

    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse transcripts, drop child speech, write a tokenized corpus.
    Ingest(IngestArgs),
    /// Fit the Zipf shape to a token-count TSV.
    FitZipf(FitZipfArgs),
    /// Train a modified Kneser-Ney model.
    TrainNgram(TrainNgramArgs),
    /// Generate one sentence per seed utterance from an n-gram model.
    Generate(GenerateArgs),
    /// Train the sequence autoencoder.
    TrainAe(TrainAeArgs),
    /// Reconstruct a corpus with a trained autoencoder.
    AeGenerate(AeGenerateArgs),
    /// Empirical and expected overlap of a tokenized corpus.
    Overlap(OverlapArgs),
    /// Overlap per saved checkpoint, for the epoch curve.
    Report(ReportArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// CHAT (.cha) or plain-text transcripts.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Tokenized corpus output.
    #[arg(long)]
    out: PathBuf,
    /// Speaker codes treated as children.
    #[arg(long = "child", default_value = "CHI")]
    child_speakers: Vec<String>,
    /// Also write the capped vocabulary.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    max_words: usize,
    /// Also write `token<TAB>count` for every word.
    #[arg(long)]
    counts_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FitZipfArgs {
    /// `token<TAB>count` (or vocabulary) TSV.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainNgramArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    order: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Each utterance's first token seeds one generated sentence.
    #[arg(long)]
    seeds_from: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainAeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 30)]
    emb_dim: usize,
    #[arg(long, default_value_t = 20)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Apply dropout to the embeddings only, not the decoder input.
    #[arg(long)]
    embedding_dropout_only: bool,
    #[arg(long)]
    checkpoint_dir: PathBuf,
    /// Final model path; defaults to `<checkpoint-dir>/final.ckpt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AeGenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Needed only when the checkpoint does not embed one.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct OverlapArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// One noun per line; the bundled list when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// `word:probability`, repeated.
    #[arg(long = "det", value_parser = parse_det, default_values = ["a:0.393", "the:0.607"])]
    determiners: Vec<(String, f64)>,
    #[arg(long, default_value_t = 1.06)]
    zipf_a: f64,
    /// Monte Carlo replicates for a check of the expected value; 0 skips it.
    #[arg(long, default_value_t = 0)]
    mc_reps: usize,
    /// JSON report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long)]
    checkpoint_dir: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long = "det", value_parser = parse_det, default_values = ["a:0.393", "the:0.607"])]
    determiners: Vec<(String, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the autoencoder epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config's Monte Carlo replicates.
    #[arg(long)]
    mc_reps: Option<usize>,
}

fn parse_det(s: &str) -> Result<(String, f64), String> {
    let (word, p) = s.rsplit_once(':').ok_or_else(|| format!("expected word:probability, got `{s}`"))?;
    let p: f64 = p.parse().map_err(|_| format!("bad probability in `{s}`"))?;
    Ok((word.to_string(), p))
}

/// Hash of a subcommand's arguments together with the global seed.
fn args_hash<T: Serialize>(args: &T, seed: u64) -> String {
    config_hash(&(args, seed))
}

const DEFAULT_SEED: u64 = 42;

struct Ctx {
    seed: u64,
    seed_given: bool,
    data_root: Option<PathBuf>,
}

impl Ctx {
    fn input(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    let ctx = Ctx { seed: cli.seed.unwrap_or(DEFAULT_SEED), seed_given: cli.seed.is_some(), data_root: cli.data_root };
    match run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(ctx, &a),
        Command::FitZipf(a) => fit_zipf(ctx, &a),
        Command::TrainNgram(a) => train_ngram(ctx, &a),
        Command::Generate(a) => generate(ctx, &a),
        Command::TrainAe(a) => train_ae(ctx, &a),
        Command::AeGenerate(a) => ae_generate(ctx, &a),
        Command::Overlap(a) => overlap(ctx, &a),
        Command::Report(a) => report(ctx, &a),
        Command::Pipeline(a) => pipeline_cmd(ctx, a),
    }
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let hash = args_hash(a, ctx.seed);
    let inputs: Vec<PathBuf> = a.inputs.iter().map(|p| ctx.input(p)).collect();
    let utts = artifacts::read_transcripts(&inputs)?;
    let child: BTreeSet<String> = a.child_speakers.iter().cloned().collect();
    let cds: Vec<Vec<String>> = filter_child_directed(&utts, &child)
        .into_iter()
        .map(|u| u.tokens)
        .filter(|t| !t.is_empty())
        .collect();
    artifacts::write_corpus(&a.out, &hash, &cds)?;
    let stats = corpus_stats(&cds);
    info!("{} utterances, {} tokens, {} types", stats.utterances, stats.tokens, stats.types);
    if let Some(p) = &a.vocab_out {
        artifacts::write_vocab(p, &hash, &build_vocabulary(&cds, a.max_words)?)?;
    }
    if let Some(p) = &a.counts_out {
        let mut counts = std::collections::HashMap::new();
        for t in cds.iter().flatten() {
            *counts.entry(t.clone()).or_insert(0u64) += 1;
        }
        artifacts::write_counts(p, &hash, &counts)?;
    }
    Ok(())
}

fn fit_zipf(ctx: &Ctx, a: &FitZipfArgs) -> Result<()> {
    let counts = artifacts::read_counts(&ctx.input(&a.counts))?;
    let fit = detprod::fit_zipf_shape(&rank_frequencies(&counts)?)?;
    let record = ZipfRecord { a: fit.a, r_squared: fit.r_squared, n: fit.n };
    artifacts::write_json(&a.out, &args_hash(a, ctx.seed), &record)
}

fn train_ngram(ctx: &Ctx, a: &TrainNgramArgs) -> Result<()> {
    let corpus = artifacts::read_corpus(&ctx.input(&a.corpus))?;
    let vocab = artifacts::read_vocab(&ctx.input(&a.vocab))?;
    let ids: Vec<Vec<usize>> = corpus.iter().map(|u| vocab.ids(u)).collect();
    let model = KneserNeyModel::train(&ids, &vocab, a.order as usize)?;
    artifacts::write_text(&a.out, &args_hash(a, ctx.seed), &model.to_text())
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let text = artifacts::read_text(&ctx.input(&a.model))?;
    let model = KneserNeyModel::from_text(artifacts::strip_header(&text))
        .with_context(|| format!("loading {}", a.model.display()))?;
    let sources = artifacts::read_corpus(&ctx.input(&a.seeds_from))?;
    let ids: Vec<Vec<usize>> = sources
        .iter()
        .map(|u| u.iter().map(|t| model.id(t).unwrap_or(detprod::corpus::OOV_ID)).collect())
        .collect();
    let generated: Vec<Vec<String>> =
        model.generate_corpus(&ids, a.max_len, ctx.seed).iter().map(|g| model.decode(g)).collect();
    artifacts::write_corpus(&a.out, &args_hash(a, ctx.seed), &generated)
}

fn train_ae(ctx: &Ctx, a: &TrainAeArgs) -> Result<()> {
    let corpus = artifacts::read_corpus(&ctx.input(&a.corpus))?;
    let vocab = artifacts::read_vocab(&ctx.input(&a.vocab))?;
    let config = AeConfig {
        vocab_size: vocab.len(),
        max_len: a.max_len,
        emb_dim: a.emb_dim,
        latent_dim: a.latent_dim,
        dropout: a.dropout,
        placement: if a.embedding_dropout_only { DropoutPlacement::Embedding } else { DropoutPlacement::Inputs },
        mask_pad: false,
    };
    let encoded: Vec<_> = corpus.iter().map(|u| encode_utterance(u, &vocab, a.max_len)).collect();
    let mut model = AutoencoderModel::new(config, detprod::seed::derive_named(ctx.seed, "init"))?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: ctx.seed,
        adam: detprod::neural::AdamConfig { lr: a.lr, ..Default::default() },
        checkpoint_dir: Some(a.checkpoint_dir.clone()),
        checkpoint_prefix: detprod_cli::config::ae_label(a.dropout),
        vocab: Some(vocab.clone()),
    };
    let log = model.train(&encoded, &opts)?;
    let out = a.out.clone().unwrap_or_else(|| a.checkpoint_dir.join("final.ckpt"));
    model.save(&out, Some(&vocab), log.epochs.len())?;
    let hash = args_hash(a, ctx.seed);
    artifacts::write_json(&a.checkpoint_dir.join("train_log.json"), &hash, &log)?;
    Ok(())
}

fn ae_generate(ctx: &Ctx, a: &AeGenerateArgs) -> Result<()> {
    let ck = AutoencoderModel::load(&ctx.input(&a.model))
        .with_context(|| format!("loading {}", a.model.display()))?;
    let vocab = match (&ck.vocab, &a.vocab) {
        (_, Some(p)) => artifacts::read_vocab(&ctx.input(p))?,
        (Some(v), None) => v.clone(),
        (None, None) => bail!("checkpoint has no vocabulary; pass --vocab"),
    };
    let corpus = artifacts::read_corpus(&ctx.input(&a.corpus))?;
    let generated = pipeline::ae_generate(&ck.model, &vocab, &corpus)?;
    artifacts::write_corpus(&a.out, &args_hash(a, ctx.seed), &generated)
}

fn profile_from(dets: &[(String, f64)]) -> Result<DeterminerProfile> {
    Ok(DeterminerProfile::new(dets.to_vec())?)
}

fn overlap(ctx: &Ctx, a: &OverlapArgs) -> Result<()> {
    let corpus = artifacts::read_corpus(&ctx.input(&a.corpus))?;
    let lexicon = artifacts::read_lexicon(a.lexicon.as_ref().map(|p| ctx.input(p)).as_deref())?;
    let profile = profile_from(&a.determiners)?;
    let row = pipeline::score_corpus("corpus", &corpus, &profile, &lexicon, a.zipf_a, a.mc_reps, ctx.seed)?;
    let report = serde_json::json!({
        "N": row.n,
        "S": row.s,
        "empirical": row.empirical_overlap,
        "expected": row.expected_overlap,
        "monte_carlo": row.monte_carlo,
        "zipf_a": a.zipf_a,
    });
    let hash = args_hash(a, ctx.seed);
    match &a.out {
        Some(p) => artifacts::write_json(p, &hash, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let corpus = artifacts::read_corpus(&ctx.input(&a.corpus))?;
    let lexicon = artifacts::read_lexicon(a.lexicon.as_ref().map(|p| ctx.input(p)).as_deref())?;
    let vocab = a.vocab.as_ref().map(|p| artifacts::read_vocab(&ctx.input(p))).transpose()?;
    let profile = profile_from(&a.determiners)?;
    let rows =
        pipeline::report_epoch_curve(&ctx.input(&a.checkpoint_dir), &corpus, &lexicon, &profile, vocab.as_ref())?;
    if rows.is_empty() {
        return Err(anyhow!("no checkpoint could be scored"));
    }
    fs::write(&a.out, pipeline::curve_csv(&rows, &args_hash(a, ctx.seed)))
        .with_context(|| format!("writing {}", a.out.display()))
}

fn pipeline_cmd(ctx: &Ctx, a: PipelineArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config, ctx.data_root.as_deref())?;
    if ctx.seed_given {
        cfg.seed = ctx.seed;
    }
    if let Some(out) = a.out {
        cfg.paths.output = out;
    }
    if let Some(e) = a.epochs {
        cfg.autoencoder.epochs = e;
    }
    if let Some(m) = a.mc_reps {
        cfg.overlap.mc_replicates = m;
    }
    let out = run_pipeline(&cfg)?;
    print!("{}", artifacts::strip_header(&fs::read_to_string(&out.results_csv)?));
    Ok(())
}
