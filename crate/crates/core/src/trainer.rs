//! Mini-batch teacher-forced training with Adam.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::CellType;
use crate::corpus::{EOS, PAD};
use crate::evaluation::{corpus_bleu, BleuConfig, EvalError};
use crate::model::{ModelConfig, ModelError, ScoreKind, Seq2SeqModel};
use crate::params::Parameters;
use crate::tensor::{argmax, cross_entropy, Matrix, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyCorpus,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("checkpoint callback failed: {0}")]
    Callback(Box<dyn std::error::Error + Send + Sync>),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cell: CellType,
    pub max_seq_len: usize,
    pub train_batch: usize,
    pub valid_batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Samples between periodic checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub d: usize,
    pub d_h: usize,
    #[serde(default)]
    pub score: ScoreKind,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cell: CellType::Lstm,
            max_seq_len: 44,
            train_batch: 80,
            valid_batch: 40,
            lr: 0.001,
            epochs: 10,
            checkpoint_every: 10_000,
            seed: 1,
            d: 128,
            d_h: 128,
            score: ScoreKind::General,
            clip_norm: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.max_seq_len == 0 || self.train_batch == 0 || self.valid_batch == 0 {
            return bad("lengths and batch sizes must be positive");
        }
        if self.d == 0 || self.d_h == 0 {
            return bad("dimensions must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("adam constants out of range");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            cell: self.cell,
            d: self.d,
            d_h: self.d_h,
            src_vocab,
            tgt_vocab,
            score: self.score,
        }
    }

    /// Decode cap for validation: room for a full-length sentence plus EOS.
    pub fn decode_max_len(&self) -> usize {
        self.max_seq_len + 1
    }
}

/// Token ids of one pair, without BOS or EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl EncodedPair {
    pub fn new(src: Vec<u32>, tgt: Vec<u32>) -> Self {
        Self { src, tgt }
    }

    /// Target followed by EOS, the sequence the decoder is scored on.
    pub fn gold(&self) -> Vec<u32> {
        let mut g = self.tgt.clone();
        g.push(EOS);
        g
    }
}

/// Drops pairs with either side longer than `max_seq_len` tokens.
pub fn filter_by_length(pairs: &[EncodedPair], max_seq_len: usize) -> Vec<EncodedPair> {
    pairs
        .iter()
        .filter(|p| p.src.len() <= max_seq_len && p.tgt.len() <= max_seq_len)
        .cloned()
        .collect()
}

/// A padded batch. Targets already end in EOS. Positions at or beyond a
/// row's length are PAD and never scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    pub src_lens: Vec<usize>,
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Self {
        let golds: Vec<Vec<u32>> = pairs.iter().map(|p| p.gold()).collect();
        let src_lens: Vec<usize> = pairs.iter().map(|p| p.src.len()).collect();
        let tgt_lens: Vec<usize> = golds.iter().map(Vec::len).collect();
        let pad = |rows: Vec<Vec<u32>>, width: usize| {
            rows.into_iter()
                .map(|mut r| {
                    r.resize(width, PAD);
                    r
                })
                .collect()
        };
        let sw = src_lens.iter().copied().max().unwrap_or(0);
        let tw = tgt_lens.iter().copied().max().unwrap_or(0);
        Self {
            src: pad(pairs.iter().map(|p| p.src.clone()).collect(), sw),
            tgt: pad(golds, tw),
            src_lens,
            tgt_lens,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Unpadded `(source, gold)` views.
    pub fn rows(&self) -> Vec<(&[u32], &[u32])> {
        (0..self.len())
            .map(|i| (&self.src[i][..self.src_lens[i]], &self.tgt[i][..self.tgt_lens[i]]))
            .collect()
    }
}

/// Shuffles with a generator keyed on `(seed, epoch)` and cuts into batches.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|idx| Batch::from_pairs(&idx.iter().map(|&i| &pairs[i]).collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m,
            v,
        }
    }

    pub fn for_model(model: &impl Parameters, config: &TrainConfig) -> Self {
        let shapes: Vec<_> = model.named_params().iter().map(|(_, m)| m.shape()).collect();
        Self::new(shapes, config.beta1, config.beta2, config.adam_eps)
    }

    fn check(&self, grads: &[Matrix]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                left: (grads.len(), 0),
                right: (self.m.len(), 0),
            }
            .into());
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    left: g.shape(),
                    right: m.shape(),
                }
                .into());
            }
        }
        Ok(())
    }

    fn apply(&mut self, k: usize, param: &mut Matrix, grad: &Matrix, lr: f64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let m = self.m[k].data_mut();
        let v = self.v[k].data_mut();
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// One bias-corrected Adam step over every parameter of `model`.
    pub fn step_model(&mut self, model: &mut impl Parameters, grads: &[Matrix], lr: f64) -> Result<()> {
        self.check(grads)?;
        let mut shapes_ok = true;
        let mut k = 0;
        model.visit_mut(&mut |p| {
            shapes_ok &= k < grads.len() && p.shape() == grads[k].shape();
            k += 1;
        });
        if !shapes_ok || k != grads.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                left: (k, 0),
                right: (grads.len(), 0),
            }
            .into());
        }
        self.t += 1;
        let mut k = 0;
        model.visit_mut(&mut |p| {
            self.apply(k, p, &grads[k], lr);
            k += 1;
        });
        Ok(())
    }
}

/// Adam on a plain list of matrices.
pub fn adam_update(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    state.check(grads)?;
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(TensorError::ShapeMismatch {
            op: "adam",
            left: (params.len(), 0),
            right: (grads.len(), 0),
        }
        .into());
    }
    state.t += 1;
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.apply(k, p, g, lr);
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// Validation numbers for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub bleu: f64,
    pub val_perplexity: f64,
    /// Percent of gold positions where the teacher-forced argmax was right.
    pub val_accuracy: f64,
    /// Mean natural-log probability of greedily decoded tokens.
    pub avg_pred_score: f64,
    pub pred_perplexity: f64,
}

pub const METRICS_HEADER: &str = "epoch\tbleu\tval_ppl\tval_acc\tavg_pred_score\tpred_ppl";

impl EpochMetrics {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\t{:.6}\t{:.6}",
            self.epoch, self.bleu, self.val_perplexity, self.val_accuracy, self.avg_pred_score, self.pred_perplexity
        )
    }
}

pub fn metrics_tsv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.tsv_row());
    }
    s
}

/// Scores `model` on `pairs`: teacher-forced accuracy and perplexity, then
/// greedy decoding for prediction score and BLEU. `epoch` is copied into the
/// result.
pub fn validate(
    model: &Seq2SeqModel,
    pairs: &[EncodedPair],
    valid_batch: usize,
    decode_max_len: usize,
    epoch: usize,
) -> Result<EpochMetrics> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let mut loss = 0.0;
    let mut tokens = 0usize;
    let mut correct = 0usize;
    let mut pred_logp = 0.0;
    let mut pred_tokens = 0usize;
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(valid_batch.max(1)) {
        let refs_chunk: Vec<&EncodedPair> = chunk.iter().collect();
        let batch = Batch::from_pairs(&refs_chunk);
        for (src, gold) in batch.rows() {
            for (step, &g) in model.teacher_forced(src, gold)?.iter().zip(gold) {
                loss += cross_entropy(&step.probs, g as usize)?;
                correct += usize::from(argmax(step.probs.as_slice()) == g as usize);
                tokens += 1;
            }
            let dec = model.greedy_decode(src, decode_max_len)?;
            let lps = dec.token_log_probs();
            pred_logp += lps.iter().sum::<f64>();
            pred_tokens += lps.len();
            hyps.push(dec.token_ids.into_iter().take_while(|&t| t != EOS).collect::<Vec<u32>>());
            refs.push(gold[..gold.len() - 1].to_vec());
        }
    }
    let avg_pred_score = pred_logp / pred_tokens as f64;
    Ok(EpochMetrics {
        epoch,
        bleu: corpus_bleu(&hyps, &refs, &BleuConfig::default())?.bleu,
        val_perplexity: (loss / tokens as f64).exp(),
        val_accuracy: 100.0 * correct as f64 / tokens as f64,
        avg_pred_score,
        pred_perplexity: (-avg_pred_score).exp(),
    })
}

/// Everything needed to resume or inspect a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Seq2SeqModel,
    pub adam: AdamState,
    pub samples_seen: u64,
    pub epochs_done: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Mean training loss in nats per token for each finished epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn new(config: TrainConfig, src_vocab: usize, tgt_vocab: usize) -> Result<Self> {
        config.validate()?;
        let model = Seq2SeqModel::random(config.model_config(src_vocab, tgt_vocab), config.seed);
        let adam = AdamState::for_model(&model, &config);
        Ok(Self {
            config,
            model,
            adam,
            samples_seen: 0,
            epochs_done: 0,
            metrics: Vec::new(),
            epoch_losses: Vec::new(),
        })
    }

    /// One optimizer step on `batch`; returns the mean loss per token
    /// before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, tokens, mut grads) = self.model.loss_and_grad(&batch.rows())?;
        let scale = 1.0 / tokens.max(1) as f64;
        for g in &mut grads {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
        if let Some(c) = self.config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        self.adam.step_model(&mut self.model, &grads, self.config.lr)?;
        self.samples_seen += batch.len() as u64;
        Ok(loss * scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointEvent {
    /// Another `checkpoint_every` samples went by.
    Periodic { samples: u64 },
    EpochEnd { epoch: usize },
    Final,
}

pub type CallbackResult = std::result::Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Runs `config.epochs` epochs from a freshly seeded model.
pub fn train(
    config: &TrainConfig,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    src_vocab: usize,
    tgt_vocab: usize,
    on_checkpoint: &mut dyn FnMut(CheckpointEvent, &TrainState) -> CallbackResult,
) -> Result<TrainState> {
    let mut state = TrainState::new(config.clone(), src_vocab, tgt_vocab)?;
    resume(&mut state, train_pairs, valid_pairs, on_checkpoint)?;
    Ok(state)
}

/// Continues `state` until `state.config.epochs` epochs are done.
pub fn resume(
    state: &mut TrainState,
    train_pairs: &[EncodedPair],
    valid_pairs: &[EncodedPair],
    on_checkpoint: &mut dyn FnMut(CheckpointEvent, &TrainState) -> CallbackResult,
) -> Result<()> {
    let config = state.config.clone();
    config.validate()?;
    let train_pairs = filter_by_length(train_pairs, config.max_seq_len);
    let valid_pairs = filter_by_length(valid_pairs, config.max_seq_len);
    if train_pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if config.epochs > state.epochs_done && valid_pairs.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let every = config.checkpoint_every as u64;
    while state.epochs_done < config.epochs {
        let epoch = state.epochs_done + 1;
        let batches = make_batches(&train_pairs, config.train_batch, config.seed, epoch as u64)?;
        let mut total = 0.0;
        let mut tokens = 0usize;
        for batch in &batches {
            let before = state.samples_seen;
            let n: usize = batch.tgt_lens.iter().sum();
            total += state.train_step(batch)? * n as f64;
            tokens += n;
            if before / every != state.samples_seen / every {
                on_checkpoint(
                    CheckpointEvent::Periodic {
                        samples: state.samples_seen,
                    },
                    state,
                )
                .map_err(TrainError::Callback)?;
            }
        }
        let mean = total / tokens as f64;
        state.epoch_losses.push(mean);
        let m = validate(&state.model, &valid_pairs, config.valid_batch, config.decode_max_len(), epoch)?;
        info!(
            "epoch {epoch}: train loss {mean:.4}, val ppl {:.3}, val acc {:.2}%, bleu {:.4}",
            m.val_perplexity, m.val_accuracy, m.bleu
        );
        debug!("{}", m.tsv_row());
        state.metrics.push(m);
        state.epochs_done = epoch;
        on_checkpoint(CheckpointEvent::EpochEnd { epoch }, state).map_err(TrainError::Callback)?;
    }
    on_checkpoint(CheckpointEvent::Final, state).map_err(TrainError::Callback)?;
    Ok(())
}
