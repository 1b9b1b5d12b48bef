use detprod::corpus::EncodedUtterance;
use detprod::neural::{Graph, GruParams, ParamStore, Tensor, Var};
use detprod::{AeConfig, AutoencoderModel, DropoutPlacement};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares stored gradients against central differences of `loss`.
fn check_store(store: &mut ParamStore, loss: impl Fn(&ParamStore) -> f64) -> (usize, f64) {
    let ids: Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in ids {
        for j in 0..store.get(id).value.len() {
            let analytic = store.get(id).grad.data()[j];
            let orig = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + STEP;
            let up = loss(store);
            store.get_mut(id).value.data_mut()[j] = orig - STEP;
            let down = loss(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = rel_err(analytic, numeric);
            assert!(
                err < TOLERANCE,
                "{}[{j}]: analytic {analytic}, numeric {numeric}, rel err {err}",
                store.get(id).name
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    (checked, worst)
}

fn check_graph(store: &mut ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Var) {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    store.zero_grad();
    g.backward(loss, store).unwrap();
    let (checked, _) = check_store(store, |s| {
        let mut g = Graph::new();
        let l = build(&mut g, s);
        g.value(l).data()[0]
    });
    assert!(checked > 0);
}

#[test]
fn matmul_sum_has_column_sums_as_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let x = store.add("x", Tensor::matrix(3, 1, vec![0.5, -1.0, 2.0]).unwrap());
    let mut g = Graph::new();
    let (av, xv) = (g.param(&store, a), g.param(&store, x));
    let y = g.matmul(av, xv).unwrap();
    let loss = g.sum_all(y).unwrap();
    g.backward(loss, &mut store).unwrap();
    assert_eq!(store.get(x).grad.data(), &[5.0, 7.0, 9.0]);
    assert_eq!(store.get(a).grad.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let b = store.add("b", Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let bias = store.add("bias", Tensor::uniform(&[4], 1.0, &mut rng));
    let w = store.add("w", Tensor::uniform(&[8, 5], 1.0, &mut rng));
    check_graph(&mut store, |g, s| {
        let (a, b, bias, w) = (g.param(s, a), g.param(s, b), g.param(s, bias), g.param(s, w));
        let m = g.mul(a, b).unwrap();
        let t = g.tanh(m).unwrap();
        let d = g.sub(t, a).unwrap();
        let r = g.add_row(d, bias).unwrap();
        let sg = g.sigmoid(r).unwrap();
        let c = g.concat(sg, b).unwrap();
        let p = g.matmul(c, w).unwrap();
        let k = g.scale(p, 0.7).unwrap();
        let sq = g.mul(k, k).unwrap();
        g.sum_all(sq).unwrap()
    });
}

#[test]
fn embedding_dropout_and_softmax_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let table = store.add("table", Tensor::uniform(&[6, 4], 1.0, &mut rng));
    let w = store.add("w", Tensor::uniform(&[4, 6], 1.0, &mut rng));
    check_graph(&mut store, |g, s| {
        let (t, w) = (g.param(s, table), g.param(s, w));
        let x = g.embedding(t, &[1, 3, 3, 5, 0]).unwrap();
        // Same mask on every evaluation.
        let mut mask_rng = ChaCha8Rng::seed_from_u64(9);
        let x = g.dropout(x, 0.3, true, &mut mask_rng).unwrap();
        let logits = g.matmul(x, w).unwrap();
        g.softmax_cross_entropy(logits, &[2, 0, 5, 5, 1], &[0.2, 0.1, 0.3, 0.25, 0.15]).unwrap()
    });
}

#[test]
fn softmax_gradient_is_probabilities_minus_one_hot() {
    let logits = [0.3, -1.2, 2.0, 0.0];
    let (loss, probs) = detprod::neural::softmax_cross_entropy(&logits, 2).unwrap();
    let reference = detprod::neural::softmax(&logits);
    assert!((loss + reference[2].ln()).abs() < 1e-12);
    for (i, p) in probs.iter().enumerate() {
        assert!((p - reference[i]).abs() < 1e-12);
        let g = p - if i == 2 { 1.0 } else { 0.0 };
        let mut up = logits;
        up[i] += STEP;
        let mut down = logits;
        down[i] -= STEP;
        let fd = (detprod::neural::softmax_cross_entropy(&up, 2).unwrap().0
            - detprod::neural::softmax_cross_entropy(&down, 2).unwrap().0)
            / (2.0 * STEP);
        assert!(rel_err(g, fd) < TOLERANCE);
    }
}

#[test]
fn gru_unrolled_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let gru = GruParams::new(&mut store, "gru", 3, 4, &mut rng);
    // Non-zero biases so their gradients are exercised away from zero.
    for id in [gru.b_z, gru.b_r, gru.b_h] {
        for v in store.get_mut(id).value.data_mut() {
            *v = 0.1;
        }
    }
    let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[2, 3], 1.0, &mut rng)).collect();
    let h0 = Tensor::uniform(&[2, 4], 0.5, &mut rng);
    check_graph(&mut store, |g, s| {
        let cell = gru.bind(g, s);
        let mut h = g.input(h0.clone()).unwrap();
        for x in &xs {
            let x = g.input(x.clone()).unwrap();
            h = cell.step(g, x, h).unwrap();
        }
        let sq = g.mul(h, h).unwrap();
        g.sum_all(sq).unwrap()
    });
    assert_eq!(gru.ids().len(), 9);
}

fn batch() -> Vec<EncodedUtterance> {
    [[0, 3, 4, 5], [6, 7, 2, 1], [0, 0, 5, 3]]
        .iter()
        .map(|ids| EncodedUtterance::from_ids(ids.to_vec()))
        .collect()
}

fn check_autoencoder(config: AeConfig) -> (usize, f64) {
    let mut model = AutoencoderModel::new(config, 17).unwrap();
    // Move biases off zero.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for id in model.params().ids().collect::<Vec<_>>() {
        if model.params().get(id).name.contains(".b") {
            let shape = model.params().get(id).value.shape().to_vec();
            model.params_mut().get_mut(id).value = Tensor::uniform(&shape, 0.3, &mut rng);
        }
    }
    let data = batch();
    let refs: Vec<&EncodedUtterance> = data.iter().collect();
    model.params_mut().zero_grad();
    model.accumulate_gradients(&refs, false, &mut rng).unwrap();
    let template = model.clone();
    let mut store = model.params().clone();
    check_store(&mut store, |s| {
        let mut m = template.clone();
        *m.params_mut() = s.clone();
        m.loss(&refs).unwrap()
    })
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    let config = AeConfig { vocab_size: 8, max_len: 4, emb_dim: 4, latent_dim: 3, ..AeConfig::new(8) };
    let (checked, worst) = check_autoencoder(config);
    let embedding = 8 * 4;
    let encoder = 3 * (4 * 3 + 3 * 3 + 3);
    let decoder = 3 * (3 * 3 + 3 * 3 + 3);
    let output = 3 * 8 + 8;
    let expected = embedding + encoder + decoder + output;
    assert_eq!(checked, expected);
    eprintln!("{checked} entries, worst relative error {worst:.2e}");
    let masked = AeConfig { mask_pad: true, placement: DropoutPlacement::Embedding, ..config };
    check_autoencoder(masked);
}
