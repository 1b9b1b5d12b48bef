//! Acceptance criteria, one line each. Run with
//! `cargo test -p detprod-cli --test acceptance -- --nocapture`.
//!
//! Criterion 9 needs real transcripts: point `DETPROD_ACCEPTANCE_CONFIG` at a
//! pipeline config for them, otherwise it is skipped.

#[path = "../../core/tests/support/kn_oracle.rs"]
mod kn_oracle;

use std::collections::HashMap;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use detprod::corpus::{EncodedUtterance, EOS_ID, PAD_ID};
use detprod::neural::{AdamConfig, Tensor};
use detprod::zipf::ZipfDistribution;
use detprod::{
    build_vocabulary, expected_overlap, fit_zipf_shape, monte_carlo_overlap, rank_frequencies, zipf_probability,
    AeConfig, AutoencoderModel, DeterminerProfile, KneserNeyModel, OverlapParams, RankedCounts, TrainOptions,
};
use detprod_cli::{run_pipeline, RunConfig};
use kn_oracle::Oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    Skip,
    Info,
}

struct Report {
    lines: Vec<(u32, Outcome, String)>,
}

impl Report {
    fn record(&mut self, id: u32, outcome: Outcome, detail: String) {
        let tag = match outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
            Outcome::Info => "INFO",
        };
        println!("[{tag}] criterion {id}: {detail}");
        self.lines.push((id, outcome, detail));
    }
}

fn pass_if(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn english() -> DeterminerProfile {
    DeterminerProfile::english_default()
}

const TABLE: [(&str, usize, u64, f64); 6] = [
    ("adult", 1390, 34138, 0.775),
    ("ae_30", 816, 31181, 0.908),
    ("ae_20", 870, 28817, 0.876),
    ("ae_10", 861, 29497, 0.884),
    ("bigram", 1780, 5177, 0.176),
    ("trigram", 2506, 4595, 0.112),
];

/// Per-row check at a = 1.06. Returns (all rows pass, deviations all share a sign).
fn criterion_1_strict() -> (bool, bool, String) {
    let mut passed = 0;
    let mut deviations = Vec::new();
    let mut slowest = Duration::ZERO;
    for (label, n, s, want) in TABLE {
        let started = Instant::now();
        let got = expected_overlap(&OverlapParams::new(n, s, 1.06, english()).unwrap());
        slowest = slowest.max(started.elapsed());
        let dev = got - want;
        let ok = dev.abs() <= 0.01;
        passed += usize::from(ok);
        println!("    {label:<8} N={n:<5} S={s:<6} expected {got:.4} table {want:.3} diff {dev:+.4} {}", if ok { "ok" } else { "off" });
        deviations.push(dev);
    }
    let fast = slowest < Duration::from_secs(1);
    let systematic = deviations.iter().all(|d| *d > 0.0) || deviations.iter().all(|d| *d < 0.0);
    let detail = format!("{passed}/6 rows within ±0.01 at a=1.06, slowest {slowest:?}");
    (passed == 6 && fast, systematic, detail)
}

/// Shapes on a 0.001 grid that bring every row within ±0.01.
fn consistent_shapes() -> Vec<f64> {
    (1000..=1200)
        .map(|k| k as f64 / 1000.0)
        .filter(|&a| {
            TABLE.iter().all(|&(_, n, s, want)| {
                (expected_overlap(&OverlapParams::new(n, s, a, english()).unwrap()) - want).abs() <= 0.01
            })
        })
        .collect()
}

fn criterion_2() -> (bool, String) {
    let started = Instant::now();
    let three = DeterminerProfile::new(vec![("a".into(), 0.5), ("the".into(), 0.3), ("this".into(), 0.2)]).unwrap();
    let (mut cells, mut within) = (0, 0);
    for n in [5, 10, 50] {
        for s in [10, 100, 1000] {
            for a in [0.8, 1.0, 1.06] {
                for profile in [english(), three.clone()] {
                    let params = OverlapParams::new(n, s, a, profile).unwrap();
                    let mc = monte_carlo_overlap(&params, 200_000, 99).unwrap();
                    cells += 1;
                    within += usize::from(mc.agrees_with(expected_overlap(&params), 3.0));
                }
            }
        }
    }
    let elapsed = started.elapsed();
    let ok = within as f64 >= 0.95 * cells as f64 && elapsed < Duration::from_secs(60);
    (ok, format!("{within}/{cells} grid cells within 3 SE at 200,000 replicates in {elapsed:.1?} (limit 60 s)"))
}

fn criterion_3() -> (bool, String) {
    let one = DeterminerProfile::new(vec![("the".into(), 1.0)]).unwrap();
    let d1 = [(10, 500, 1.0), (1, 1, 1.06), (3000, 100_000, 0.8)]
        .iter()
        .all(|&(n, s, a)| expected_overlap(&OverlapParams::new(n, s, a, one.clone()).unwrap()) == 0.0);
    let s0 = [(10, 1.0), (1390, 1.06), (1, 2.0)]
        .iter()
        .all(|&(n, a)| expected_overlap(&OverlapParams::new(n, 0, a, english()).unwrap()) == 0.0);
    let p1 = [0.5, 1.0, 1.06, 3.0].iter().all(|&a| zipf_probability(1, 1, a).unwrap() == 1.0);
    (d1 && s0 && p1, format!("D=1 exact zero: {d1}; S=0 exact zero: {s0}; single-rank p_1 = 1: {p1}"))
}

fn words(rng: &mut impl Rng, n: usize, vocab: usize, max_len: usize) -> Vec<Vec<String>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len).map(|_| format!("w{}", rng.random_range(0..vocab).min(rng.random_range(0..vocab)))).collect()
        })
        .collect()
}

fn criterion_4() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let big = words(&mut rng, 100, 30, 12);
    let vocab = build_vocabulary(&big, 3000).unwrap();
    let ids: Vec<Vec<usize>> = big.iter().map(|u| vocab.ids(u)).collect();
    let mut worst_mass = 0.0f64;
    let mut contexts_checked = 0;
    for order in [2, 3] {
        let model = KneserNeyModel::train(&ids, &vocab, order).unwrap();
        for ctx in every_context(vocab.len(), order - 1) {
            let total: f64 = (0..vocab.len()).map(|w| model.prob(&ctx, w)).sum();
            worst_mass = worst_mass.max((total - 1.0).abs());
            contexts_checked += 1;
        }
    }

    let small = words(&mut rng, 10, 6, 6);
    let vocab = build_vocabulary(&small, 3000).unwrap();
    let ids: Vec<Vec<usize>> = small.iter().map(|u| vocab.ids(u)).collect();
    let name = |id: usize| match id {
        PAD_ID => kn_oracle::BOS.to_string(),
        EOS_ID => kn_oracle::EOS.to_string(),
        _ => vocab.token(id).unwrap().to_string(),
    };
    let mut worst_oracle = 0.0f64;
    let mut probs_checked = 0;
    for order in [2, 3] {
        let model = KneserNeyModel::train(&ids, &vocab, order).unwrap();
        let oracle = Oracle::new(&small, order, (1..vocab.len()).map(name).collect());
        for ctx in every_context(vocab.len(), order - 1) {
            let names: Vec<String> = ctx.iter().map(|&i| name(i)).collect();
            for w in 1..vocab.len() {
                worst_oracle = worst_oracle.max((model.prob(&ctx, w) - oracle.prob(&names, &name(w))).abs());
                probs_checked += 1;
            }
        }
    }
    let ok = worst_mass <= 1e-9 && worst_oracle <= 1e-9;
    (
        ok,
        format!(
            "{contexts_checked} contexts, max |Σp−1| = {worst_mass:.1e}; {probs_checked} probabilities vs brute-force oracle, max diff {worst_oracle:.1e}"
        ),
    )
}

/// Every context over the id space except EOS, which never precedes a word.
fn every_context(v: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|c| (0..v).filter(|&i| i != EOS_ID).map(move |i| [c.clone(), vec![i]].concat()))
            .collect();
    }
    out
}

fn criterion_5() -> (bool, String) {
    let config = AeConfig { vocab_size: 8, max_len: 4, emb_dim: 4, latent_dim: 3, ..AeConfig::new(8) };
    let mut model = AutoencoderModel::new(config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in model.params().ids().collect::<Vec<_>>() {
        if model.params().get(id).name.contains(".b") {
            let shape = model.params().get(id).value.shape().to_vec();
            model.params_mut().get_mut(id).value = Tensor::uniform(&shape, 0.3, &mut rng);
        }
    }
    let batch: Vec<EncodedUtterance> = [[0, 3, 4, 5], [6, 7, 2, 1], [0, 0, 5, 3]]
        .iter()
        .map(|ids| EncodedUtterance::from_ids(ids.to_vec()))
        .collect();
    let refs: Vec<&EncodedUtterance> = batch.iter().collect();
    model.params_mut().zero_grad();
    model.accumulate_gradients(&refs, false, &mut rng).unwrap();
    let analytic = model.params().clone();
    let mut probe = model.clone();
    let h = 1e-5;
    let (mut worst, mut entries) = (0.0f64, 0);
    for id in analytic.ids() {
        for j in 0..analytic.get(id).value.len() {
            let orig = analytic.get(id).value.data()[j];
            probe.params_mut().get_mut(id).value.data_mut()[j] = orig + h;
            let up = probe.loss(&refs).unwrap();
            probe.params_mut().get_mut(id).value.data_mut()[j] = orig - h;
            let down = probe.loss(&refs).unwrap();
            probe.params_mut().get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            entries += 1;
        }
    }
    let tensors = analytic.len();
    (worst < 1e-4, format!("{entries} entries in {tensors} tensors, max relative error {worst:.2e} (limit 1e-4)"))
}

fn criterion_6() -> (bool, String) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = 15;
    let corpus: Vec<EncodedUtterance> = (0..20)
        .map(|_| {
            let len = rng.random_range(3..=10);
            let mut ids = vec![PAD_ID; 10 - len];
            ids.extend((0..len).map(|_| rng.random_range(3..3 + words)));
            EncodedUtterance::from_ids(ids)
        })
        .collect();
    let vocab_size = words + 3;
    let mut model = AutoencoderModel::new(AeConfig::new(vocab_size), 6).unwrap();
    let opts = TrainOptions {
        epochs: 500,
        batch_size: 4,
        seed: 6,
        adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
        ..TrainOptions::default()
    };
    let mut best = 0.0f64;
    let log = model
        .train_with(&corpus, &opts, |_, m| {
            best = best.max(m.token_accuracy(&corpus).unwrap());
            if best >= 0.95 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
    let first = log.epochs[0].mean_loss;
    let reference = (vocab_size as f64).ln();
    let first_ok = (first - reference).abs() <= 0.05 * reference;
    let elapsed = started.elapsed();
    let ok = best >= 0.95 && first_ok && elapsed < Duration::from_secs(300);
    (
        ok,
        format!(
            "accuracy {:.1}% after {} epochs; first-epoch loss {first:.4} vs ln {vocab_size} = {reference:.4} ({:+.1}%); {elapsed:.1?}",
            100.0 * best,
            log.epochs.len(),
            100.0 * (first - reference) / reference
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let mut worst_exact = 0.0f64;
    let mut worst_r2 = 0.0f64;
    for a in [0.5, 1.0, 1.06, 2.0] {
        let counts = RankedCounts::new((1..=200).map(|r| 1e6 * (r as f64).powf(-a)).collect()).unwrap();
        let fit = fit_zipf_shape(&counts).unwrap();
        worst_exact = worst_exact.max((fit.a - a).abs());
        worst_r2 = worst_r2.max(1.0 - fit.r_squared);
    }
    let zipf = ZipfDistribution::new(3000, 1.06).unwrap();
    let sampler = WeightedAliasIndex::new(zipf.probs().to_vec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for _ in 0..1_000_000 {
        *counts.entry(sampler.sample(&mut rng).to_string()).or_default() += 1;
    }
    let sampled = fit_zipf_shape(&rank_frequencies(&counts).unwrap()).unwrap();
    let ok = worst_exact < 1e-6 && worst_r2 <= 1e-9 && (sampled.a - 1.06).abs() < 0.05;
    (
        ok,
        format!(
            "exact power laws: max |â−a| {worst_exact:.1e}, min r² 1−{worst_r2:.1e}; 10^6 samples (a=1.06, N=3000): â = {:.4}",
            sampled.a
        ),
    )
}

fn sample_config(out: &Path) -> RunConfig {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample");
    let mut cfg = RunConfig::load(&root.join("pipeline.toml"), None).unwrap();
    cfg.paths.output = out.to_path_buf();
    cfg
}

fn text_artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "generated", "models", "checkpoints"] {
        let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
        let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
        files.sort();
        for f in files {
            // run.log holds timings; results.json records the output directory.
            if f.file_name().is_some_and(|n| n == "run.log" || n == "results.json") {
                continue;
            }
            let rel = f.strip_prefix(dir).unwrap().to_path_buf();
            out.push((rel, fs::read(&f).unwrap()));
        }
    }
    out
}

fn criterion_8() -> (bool, String) {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run_pipeline(&sample_config(&a));
    let second = run_pipeline(&sample_config(&b));
    let elapsed = started.elapsed();
    let (first, second) = match (first, second) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return (false, format!("pipeline failed: {e:#}")),
    };
    let labels: Vec<&str> = first.table.rows.iter().map(|r| r.source.as_str()).collect();
    let rows_ok = labels == ["adult", "ae_10", "ae_20", "ae_30", "bigram", "trigram"];
    let fa = text_artifacts(&a);
    let fb = text_artifacts(&b);
    let identical = fa == fb && first.table == second.table;
    let ok = rows_ok && identical && elapsed < Duration::from_secs(300);
    (
        ok,
        format!(
            "rows {labels:?}; {} artifacts byte-identical across reruns: {identical}; two runs in {elapsed:.1?} (limit 5 min each)",
            fa.len()
        ),
    )
}

fn criterion_9(report: &mut Report) {
    let Ok(path) = std::env::var("DETPROD_ACCEPTANCE_CONFIG") else {
        report.record(9, Outcome::Skip, "set DETPROD_ACCEPTANCE_CONFIG to a pipeline config for real transcripts".into());
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(Path::new(&path), None).unwrap();
    if std::env::var_os("DETPROD_ACCEPTANCE_KEEP_OUTPUT").is_none() {
        cfg.paths.output = tmp.path().to_path_buf();
    }
    let out = match run_pipeline(&cfg) {
        Ok(o) => o,
        Err(e) => return report.record(9, Outcome::Info, format!("pipeline failed: {e:#}")),
    };
    let t = &out.table;
    let adult = t.row("adult").unwrap();
    let adult_ok = (0.45..=0.70).contains(&adult.empirical_overlap);
    let ae_ok = t.row("ae_30").is_some_and(|r| (r.empirical_overlap - adult.empirical_overlap).abs() <= 0.10);
    let ngram_ok = ["bigram", "trigram"]
        .iter()
        .all(|l| t.row(l).is_some_and(|r| r.s < adult.s && r.n > adult.n));
    let all = adult_ok && ae_ok && ngram_ok;
    report.record(
        9,
        Outcome::Info,
        format!(
            "{}: adult empirical {:.3} in [0.45, 0.70]: {adult_ok}; ae_30 within ±0.10: {ae_ok}; n-gram S < adult S and N > adult N: {ngram_ok}",
            if all { "pattern matches" } else { "pattern differs" },
            adult.empirical_overlap
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { lines: Vec::new() };

    let (strict, systematic, detail) = criterion_1_strict();
    let (c2_ok, c2_detail) = criterion_2();
    if strict {
        report.record(1, Outcome::Pass, detail);
    } else {
        let shapes = consistent_shapes();
        let range = match (shapes.first(), shapes.last()) {
            (Some(lo), Some(hi)) => format!("a in [{lo:.3}, {hi:.3}] reproduces all six rows"),
            _ => "no single a reproduces all six rows".into(),
        };
        report.record(1, Outcome::Fail, format!("{detail}; mismatch systematic: {systematic}; {range}"));
        let fallback = systematic && c2_ok;
        report.record(
            1,
            pass_if(fallback),
            format!("fallback for a systematic mismatch: criterion 2 binding, discrepancy documented -> {}", if fallback { "met" } else { "not met" }),
        );
    }
    report.record(2, pass_if(c2_ok), c2_detail);

    for (id, run) in [
        (3, criterion_3 as fn() -> (bool, String)),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ] {
        let (ok, detail) = run();
        report.record(id, pass_if(ok), detail);
    }
    criterion_9(&mut report);

    // A criterion passes when its last recorded line passes.
    let mut last: HashMap<u32, Outcome> = HashMap::new();
    for (id, outcome, _) in &report.lines {
        last.insert(*id, *outcome);
    }
    let failed: Vec<u32> = (1..=8).filter(|id| last.get(id) != Some(&Outcome::Pass)).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
