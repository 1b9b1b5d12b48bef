use criterion::{black_box, criterion_group, criterion_main, Criterion};
use detprod::corpus::EncodedUtterance;
use detprod::neural::{Adam, AdamConfig};
use detprod::{build_vocabulary, AeConfig, AutoencoderModel, KneserNeyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, words: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=10);
            (0..len).map(|_| format!("w{}", rng.random_range(0..words).min(rng.random_range(0..words)))).collect()
        })
        .collect()
}

fn kneser_ney(c: &mut Criterion) {
    let utts = corpus(2000, 500);
    let vocab = build_vocabulary(&utts, 3000).unwrap();
    let ids: Vec<Vec<usize>> = utts.iter().map(|u| vocab.ids(u)).collect();
    let model = KneserNeyModel::train(&ids, &vocab, 3).unwrap();
    let context = ids[0][..2].to_vec();
    c.bench_function("kn trigram train 2000 utts", |b| b.iter(|| KneserNeyModel::train(black_box(&ids), &vocab, 3).unwrap()));
    c.bench_function("kn trigram distribution", |b| b.iter(|| model.distribution(black_box(&context))));
}

fn autoencoder(c: &mut Criterion) {
    let utts = corpus(64, 200);
    let vocab = build_vocabulary(&utts, 3000).unwrap();
    let batch: Vec<EncodedUtterance> = utts.iter().map(|u| vocab.encode(u, 10)).collect();
    let refs: Vec<&EncodedUtterance> = batch.iter().collect();
    let mut model = AutoencoderModel::new(AeConfig::new(vocab.len()).with_dropout(0.1), 1).unwrap();
    let mut adam = Adam::new(AdamConfig::default(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("autoencoder");
    group.sample_size(20);
    group.bench_function("train step batch 64", |b| {
        b.iter(|| {
            model.accumulate_gradients(black_box(&refs), true, &mut rng).unwrap();
            adam.step(model.params_mut());
        })
    });
    group.finish();
}

criterion_group!(benches, kneser_ney, autoencoder);
criterion_main!(benches);
