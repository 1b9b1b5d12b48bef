//! GRU sequence autoencoder.
//!
//! ```text
//! ids ─ embedding ─▶ encoder GRU (h₀ = 0) ─▶ latent = h_T
//! latent, latent, …, latent ─▶ decoder GRU (h₀ = 0) ─▶ shared dense + softmax per step
//! ```
//!
//! The decoder sees only the latent vector at every step, never its own
//! previous outputs. Reconstruction is greedy: the argmax token per step.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EncodedUtterance, Vocabulary, PAD_ID};
use crate::neural::{
    read_f64, read_u32, Adam, AdamConfig, Graph, GruParams, NeuralError, ParamId, ParamStore, Tensor, Var,
};
use crate::seed;

const AE_MAGIC: &[u8; 4] = b"DPAE";
const AE_VERSION: u32 = 1;

/// Batch size used for inference-only passes.
const INFERENCE_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum AeError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("utterance has length {got}, model expects {expected}")]
    Length { got: usize, expected: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    UnknownId { id: usize, vocab: usize },
    #[error("non-finite loss in epoch {epoch}; restored previous weights{}",
        .checkpoint.as_ref().map(|p| format!(" (saved to {})", p.display())).unwrap_or_default())]
    NonFiniteLoss { epoch: usize, checkpoint: Option<PathBuf> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Vocabulary(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, AeError>;

/// Where dropout is applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutPlacement {
    /// Embedding outputs only (the encoder's inputs).
    Embedding,
    /// Embedding outputs and the latent fed to the decoder at each step.
    #[default]
    Inputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Total id space, specials included.
    pub vocab_size: usize,
    pub max_len: usize,
    pub emb_dim: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub placement: DropoutPlacement,
    /// Exclude PAD targets from the loss.
    pub mask_pad: bool,
}

impl AeConfig {
    /// 10 steps, 30-dim embeddings, 20-dim latent, no dropout.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 10,
            emb_dim: 30,
            latent_dim: 20,
            dropout: 0.0,
            placement: DropoutPlacement::Inputs,
            mask_pad: false,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_len == 0 || self.emb_dim == 0 || self.latent_dim == 0 {
            return Err(AeConfig::err("dimensions must be positive and vocab_size ≥ 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AeConfig::err("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    fn err(msg: &str) -> AeError {
        AeError::Config(msg.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write `<prefix>_e<NN>.ckpt` here after each epoch.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_prefix: String,
    /// Stored in each checkpoint so it can be decoded standalone.
    pub vocab: Option<Vocabulary>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_dir: None,
            checkpoint_prefix: "ae".to_string(),
            vocab: None,
        }
    }
}

/// All trainable tensors plus their layout.
#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    config: AeConfig,
    store: ParamStore,
    embedding: ParamId,
    encoder: GruParams,
    decoder: GruParams,
    out_w: ParamId,
    out_b: ParamId,
}

struct Forward {
    latent: Var,
    logits: Vec<Var>,
}

impl AutoencoderModel {
    /// Glorot-uniform matrices, zero biases, embeddings on `(-0.05, 0.05)`.
    pub fn new(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedding = store.add(
            "embedding",
            Tensor::uniform(&[config.vocab_size, config.emb_dim], 0.05, &mut rng),
        );
        let encoder = GruParams::new(&mut store, "encoder", config.emb_dim, config.latent_dim, &mut rng);
        let decoder = GruParams::new(&mut store, "decoder", config.latent_dim, config.latent_dim, &mut rng);
        let out_w = store.add("output.w", Tensor::glorot(config.latent_dim, config.vocab_size, &mut rng));
        let out_b = store.add("output.b", Tensor::zeros(&[config.vocab_size]));
        Ok(Self { config, store, embedding, encoder, decoder, out_w, out_b })
    }

    /// Every parameter set to zero.
    pub fn zeroed(config: AeConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for id in m.store.ids().collect::<Vec<_>>() {
            m.store.get_mut(id).value.data_mut().fill(0.0);
        }
        Ok(m)
    }

    fn from_store(config: AeConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let missing = |n: &str| AeError::Format(format!("missing parameter {n}"));
        let embedding = store.find("embedding").ok_or_else(|| missing("embedding"))?;
        let encoder = GruParams::find(&store, "encoder").ok_or_else(|| missing("encoder.*"))?;
        let decoder = GruParams::find(&store, "decoder").ok_or_else(|| missing("decoder.*"))?;
        let out_w = store.find("output.w").ok_or_else(|| missing("output.w"))?;
        let out_b = store.find("output.b").ok_or_else(|| missing("output.b"))?;
        let dims_ok = store.get(embedding).value.dims() == (config.vocab_size, config.emb_dim)
            && (encoder.input_dim, encoder.hidden) == (config.emb_dim, config.latent_dim)
            && (decoder.input_dim, decoder.hidden) == (config.latent_dim, config.latent_dim)
            && store.get(out_w).value.dims() == (config.latent_dim, config.vocab_size)
            && store.get(out_b).value.len() == config.vocab_size;
        if !dims_ok {
            return Err(AeError::Format("parameter shapes do not match the config header".into()));
        }
        Ok(Self { config, store, embedding, encoder, decoder, out_w, out_b })
    }

    pub fn config(&self) -> &AeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &GruParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &GruParams {
        &self.decoder
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    pub fn output_ids(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    fn check_batch(&self, batch: &[&EncodedUtterance]) -> Result<()> {
        for u in batch {
            if u.len() != self.config.max_len {
                return Err(AeError::Length { got: u.len(), expected: self.config.max_len });
            }
            if let Some(&id) = u.ids().iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(AeError::UnknownId { id, vocab: self.config.vocab_size });
            }
        }
        Ok(())
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        batch: &[&EncodedUtterance],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let b = batch.len();
        let rate = cfg.dropout;
        let table = g.param(&self.store, self.embedding);
        let enc = self.encoder.bind(g, &self.store);
        let dec = self.decoder.bind(g, &self.store);
        let out_w = g.param(&self.store, self.out_w);
        let out_b = g.param(&self.store, self.out_b);

        let mut h = g.input(Tensor::zeros(&[b, cfg.latent_dim]))?;
        let mut ids = vec![0usize; b];
        for t in 0..cfg.max_len {
            for (slot, u) in ids.iter_mut().zip(batch) {
                *slot = u.ids()[t];
            }
            let x = g.embedding(table, &ids)?;
            let x = g.dropout(x, rate, training, rng)?;
            h = enc.step(g, x, h)?;
        }
        let latent = h;

        let mut hd = g.input(Tensor::zeros(&[b, cfg.latent_dim]))?;
        let mut logits = Vec::with_capacity(cfg.max_len);
        for _ in 0..cfg.max_len {
            let input = match cfg.placement {
                DropoutPlacement::Inputs => g.dropout(latent, rate, training, rng)?,
                DropoutPlacement::Embedding => latent,
            };
            hd = dec.step(g, input, hd)?;
            let l = g.matmul(hd, out_w)?;
            logits.push(g.add_row(l, out_b)?);
        }
        Ok(Forward { latent, logits })
    }

    /// Mean cross-entropy over every (utterance, step), or over non-PAD
    /// targets when `mask_pad` is set.
    fn loss_node(&self, g: &mut Graph, fwd: &Forward, batch: &[&EncodedUtterance]) -> Result<Var> {
        let t_len = self.config.max_len;
        let weight_of = |id: usize| if self.config.mask_pad && id == PAD_ID { 0.0 } else { 1.0 };
        let mut total: f64 = batch.iter().flat_map(|u| u.ids()).map(|&id| weight_of(id)).sum();
        let masked = total > 0.0 && self.config.mask_pad;
        if total == 0.0 {
            total = (batch.len() * t_len) as f64;
        }
        let mut loss: Option<Var> = None;
        for (t, &logits) in fwd.logits.iter().enumerate() {
            let targets: Vec<usize> = batch.iter().map(|u| u.ids()[t]).collect();
            let weights: Vec<f64> = targets
                .iter()
                .map(|&id| if masked { weight_of(id) } else { 1.0 } / total)
                .collect();
            let term = g.softmax_cross_entropy(logits, &targets, &weights)?;
            loss = Some(match loss {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(loss.expect("max_len ≥ 1"))
    }

    /// Loss on `batch` without dropout. Gradients are not touched.
    pub fn loss(&self, batch: &[&EncodedUtterance]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward(&mut g, batch, false, &mut rng)?;
        let loss = self.loss_node(&mut g, &fwd, batch)?;
        Ok(g.value(loss).data()[0])
    }

    /// Forward + backward on `batch`, adding gradients into the parameters.
    pub fn accumulate_gradients<R: Rng + ?Sized>(
        &mut self,
        batch: &[&EncodedUtterance],
        training: bool,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, training, rng)?;
        let loss = self.loss_node(&mut g, &fwd, batch)?;
        g.backward(loss, &mut self.store)?;
        Ok(g.value(loss).data()[0])
    }

    fn inference<T>(&self, batch: &[&EncodedUtterance], f: impl FnOnce(&Graph, &Forward) -> T) -> Result<T> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward(&mut g, batch, false, &mut rng)?;
        Ok(f(&g, &fwd))
    }

    /// Final encoder state for one utterance.
    pub fn encode(&self, u: &EncodedUtterance) -> Result<Vec<f64>> {
        self.inference(&[u], |g, fwd| g.value(fwd.latent).data().to_vec())
    }

    fn decode_graph(&self, latent: &[f64]) -> Result<(Graph, Vec<Var>, Vec<Var>)> {
        if latent.len() != self.config.latent_dim {
            return Err(AeError::Length { got: latent.len(), expected: self.config.latent_dim });
        }
        let mut g = Graph::new();
        let dec = self.decoder.bind(&mut g, &self.store);
        let out_w = g.param(&self.store, self.out_w);
        let out_b = g.param(&self.store, self.out_b);
        let z = g.input(Tensor::row(latent.to_vec()))?;
        let mut h = g.input(Tensor::zeros(&[1, self.config.latent_dim]))?;
        let (mut logits, mut hidden) = (Vec::new(), Vec::new());
        for _ in 0..self.config.max_len {
            h = dec.step(&mut g, z, h)?;
            hidden.push(h);
            let l = g.matmul(h, out_w)?;
            logits.push(g.add_row(l, out_b)?);
        }
        Ok((g, logits, hidden))
    }

    /// `max_len` logit vectors over the vocabulary.
    pub fn decode_logits(&self, latent: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (g, logits, _) = self.decode_graph(latent)?;
        Ok(logits.iter().map(|&v| g.value(v).data().to_vec()).collect())
    }

    /// Decoder hidden state after each step.
    pub fn decoder_states(&self, latent: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (g, _, hidden) = self.decode_graph(latent)?;
        Ok(hidden.iter().map(|&v| g.value(v).data().to_vec()).collect())
    }

    /// Greedy reconstruction; ties go to the lowest id.
    pub fn reconstruct(&self, u: &EncodedUtterance) -> Result<Vec<usize>> {
        Ok(self.reconstruct_batch(&[u])?.pop().expect("one row"))
    }

    pub fn reconstruct_batch(&self, batch: &[&EncodedUtterance]) -> Result<Vec<Vec<usize>>> {
        self.inference(batch, |g, fwd| {
            let mut out = vec![Vec::with_capacity(self.config.max_len); batch.len()];
            for &l in &fwd.logits {
                let v = g.value(l);
                for (i, row) in out.iter_mut().enumerate() {
                    row.push(argmax(v.row_slice(i)));
                }
            }
            out
        })
    }

    /// Reconstructs every utterance with dropout off and strips PAD ids.
    pub fn generate_corpus(&self, corpus: &[EncodedUtterance]) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(corpus.len());
        for chunk in corpus.chunks(INFERENCE_BATCH) {
            let refs: Vec<&EncodedUtterance> = chunk.iter().collect();
            for ids in self.reconstruct_batch(&refs)? {
                out.push(ids.into_iter().filter(|&id| id != PAD_ID).collect());
            }
        }
        Ok(out)
    }

    /// Share of positions where the greedy reconstruction equals the input.
    pub fn token_accuracy(&self, corpus: &[EncodedUtterance]) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for chunk in corpus.chunks(INFERENCE_BATCH) {
            let refs: Vec<&EncodedUtterance> = chunk.iter().collect();
            for (rec, u) in self.reconstruct_batch(&refs)?.iter().zip(chunk) {
                hits += rec.iter().zip(u.ids()).filter(|(a, b)| a == b).count();
                total += u.len();
            }
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }

    /// Trains with Adam, one step per batch, reshuffling each epoch.
    pub fn train(&mut self, corpus: &[EncodedUtterance], opts: &TrainOptions) -> Result<TrainLog> {
        self.train_with(corpus, opts, |_, _| ControlFlow::Continue(()))
    }

    /// As [`train`](Self::train), calling `on_epoch` after every epoch;
    /// returning `Break` stops early.
    pub fn train_with(
        &mut self,
        corpus: &[EncodedUtterance],
        opts: &TrainOptions,
        mut on_epoch: impl FnMut(&EpochRecord, &Self) -> ControlFlow<()>,
    ) -> Result<TrainLog> {
        if corpus.is_empty() {
            return Err(AeError::EmptyCorpus);
        }
        if opts.batch_size == 0 {
            return Err(AeConfig::err("batch size must be positive"));
        }
        let refs: Vec<&EncodedUtterance> = corpus.iter().collect();
        self.check_batch(&refs)?;
        if let Some(dir) = &opts.checkpoint_dir {
            fs::create_dir_all(dir)?;
        }

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive_named(opts.seed, "shuffle"));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed::derive_named(opts.seed, "dropout"));
        let mut adam = Adam::new(opts.adam, &self.store);
        self.store.zero_grad();
        let mut log = TrainLog::default();
        let mut order: Vec<usize> = (0..corpus.len()).collect();

        for epoch in 1..=opts.epochs {
            let started = Instant::now();
            let snapshot = self.store.clone();
            order.shuffle(&mut shuffle_rng);
            let mut weighted = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let batch: Vec<&EncodedUtterance> = chunk.iter().map(|&i| &corpus[i]).collect();
                let step = self.accumulate_gradients(&batch, true, &mut dropout_rng);
                match step {
                    Ok(loss) if loss.is_finite() => {
                        weighted += loss * batch.len() as f64;
                        adam.step(&mut self.store);
                    }
                    Ok(_) | Err(AeError::Neural(NeuralError::NonFinite { .. })) => {
                        self.store = snapshot;
                        self.store.zero_grad();
                        let checkpoint = match &opts.checkpoint_dir {
                            Some(dir) => {
                                let path = dir.join(format!("{}_e{:02}.ckpt", opts.checkpoint_prefix, epoch - 1));
                                self.save(&path, opts.vocab.as_ref(), epoch - 1)?;
                                Some(path)
                            }
                            None => None,
                        };
                        return Err(AeError::NonFiniteLoss { epoch, checkpoint });
                    }
                    Err(e) => return Err(e),
                }
            }
            let record = EpochRecord {
                epoch,
                mean_loss: weighted / corpus.len() as f64,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            info!("epoch {epoch}: mean loss {:.4}", record.mean_loss);
            if let Some(dir) = &opts.checkpoint_dir {
                let path = dir.join(format!("{}_e{:02}.ckpt", opts.checkpoint_prefix, epoch));
                self.save(&path, opts.vocab.as_ref(), epoch)?;
                log.checkpoints.push(path);
            }
            log.epochs.push(record);
            if on_epoch(&record, self).is_break() {
                break;
            }
        }
        Ok(log)
    }

    /// Checkpoint layout, little-endian:
    ///
    /// ```text
    /// "DPAE" u32 version
    /// u32 max_len, u32 vocab_size, u32 emb_dim, u32 latent_dim
    /// f64 dropout, u8 placement (0 embedding, 1 inputs), u8 mask_pad
    /// u32 epoch
    /// u32 n, n bytes of vocabulary TSV (n = 0 when absent)
    /// parameter block (see ParamStore::write_to)
    /// ```
    pub fn write_to<W: Write>(&self, w: &mut W, vocab: Option<&Vocabulary>, epoch: usize) -> Result<()> {
        let c = &self.config;
        w.write_all(AE_MAGIC)?;
        w.write_all(&AE_VERSION.to_le_bytes())?;
        for v in [c.max_len, c.vocab_size, c.emb_dim, c.latent_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.dropout.to_le_bytes())?;
        let placement = match c.placement {
            DropoutPlacement::Embedding => 0u8,
            DropoutPlacement::Inputs => 1u8,
        };
        w.write_all(&[placement, u8::from(c.mask_pad)])?;
        w.write_all(&(epoch as u32).to_le_bytes())?;
        let tsv = vocab.map(Vocabulary::to_tsv).unwrap_or_default();
        w.write_all(&(tsv.len() as u32).to_le_bytes())?;
        w.write_all(tsv.as_bytes())?;
        self.store.write_to(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != AE_MAGIC {
            return Err(AeError::Format("not an autoencoder checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != AE_VERSION {
            return Err(AeError::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(r)? as usize;
        }
        let dropout = read_f64(r)?;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let placement = match flags[0] {
            0 => DropoutPlacement::Embedding,
            1 => DropoutPlacement::Inputs,
            x => return Err(AeError::Format(format!("unknown dropout placement {x}"))),
        };
        let epoch = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let mut tsv = vec![0u8; n];
        r.read_exact(&mut tsv)?;
        let vocab = if n == 0 {
            None
        } else {
            let text = String::from_utf8(tsv).map_err(|_| AeError::Format("vocabulary is not UTF-8".into()))?;
            Some(Vocabulary::from_tsv(&text)?)
        };
        let config = AeConfig {
            max_len: dims[0],
            vocab_size: dims[1],
            emb_dim: dims[2],
            latent_dim: dims[3],
            dropout,
            placement,
            mask_pad: flags[1] != 0,
        };
        let store = ParamStore::read_from(r)?;
        let model = Self::from_store(config, store)?;
        if let Some(v) = &vocab {
            if v.len() != config.vocab_size {
                return Err(AeError::Format("embedded vocabulary does not match vocab_size".into()));
            }
        }
        Ok(Checkpoint { model, vocab, epoch })
    }

    pub fn save(&self, path: &Path, vocab: Option<&Vocabulary>, epoch: usize) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, vocab, epoch)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: AutoencoderModel,
    pub vocab: Option<Vocabulary>,
    pub epoch: usize,
}

/// Index of the largest value; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Lists `*.ckpt` files under `dir`, sorted by name.
pub fn list_checkpoints(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    out.sort();
    if out.is_empty() {
        warn!("no checkpoints in {}", dir.display());
    }
    Ok(out)
}
