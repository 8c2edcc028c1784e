//! Attention-based encoder-decoder.
//!
//! The encoder runs one recurrent cell over source embeddings; its hidden
//! states `e_0..e_{S-1}` are the attention memory and its final state seeds
//! the decoder. At each decoder step the previous decoder hidden state
//! scores every `e_t` with a bilinear form, the softmax of those scores
//! weights a context vector, and the decoder cell consumes the previous
//! target embedding concatenated with that context. A linear projection
//! and softmax give the next-token distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{BoundCell, CellError, CellParams, CellState, CellType, TapeState};
use crate::corpus::{BOS, EOS, PAD};
use crate::params::{join, uniform, Parameters};
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, cross_entropy, softmax, Matrix, TensorError, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("source sequence is empty")]
    EmptySource,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("max_len must be at least 1")]
    InvalidMaxLen,
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Attention score between the decoder query and one encoder state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `h^T W e` with a trained square `W`.
    #[default]
    General,
    /// `h^T e`; `W` is fixed to the identity and not trained.
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellType,
    /// Embedding width.
    pub d: usize,
    /// Hidden width.
    pub d_h: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    #[serde(default)]
    pub score: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Matrix,
}

impl EmbeddingTable {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        Self {
            table: Matrix::zeros(vocab, d),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    /// Row `id`; PAD always maps to the zero vector.
    pub fn lookup(&self, id: u32) -> Result<Vector> {
        self.check(id)?;
        if id == PAD {
            return Ok(Vector::zeros(self.dim()));
        }
        Ok(Vector::from(self.table.row(id as usize)))
    }

    fn check(&self, id: u32) -> Result<()> {
        if id as usize >= self.vocab_size() {
            return Err(ModelError::IdOutOfRange {
                id,
                size: self.vocab_size(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub kind: ScoreKind,
    pub score_w: Matrix,
}

impl AttentionParams {
    pub fn new(kind: ScoreKind, d_h: usize) -> Self {
        let score_w = match kind {
            ScoreKind::General => Matrix::zeros(d_h, d_h),
            ScoreKind::Dot => Matrix::identity(d_h),
        };
        Self { kind, score_w }
    }
}

/// Scores `e` against `h_prev`, normalises, and averages.
/// Returns `(context, weights)`.
pub fn attend(attn: &AttentionParams, h_prev: &Vector, e: &[Vector]) -> Result<(Vector, Vector)> {
    let first = e.first().ok_or(ModelError::EmptySource)?;
    let query = h_prev.matmul(&attn.score_w)?;
    let mut scores = Vec::with_capacity(e.len());
    for ei in e {
        if ei.len() != query.len() {
            return Err(TensorError::ShapeMismatch {
                op: "attend",
                left: (1, query.len()),
                right: (1, ei.len()),
            }
            .into());
        }
        scores.push(crate::tensor::dot(query.as_slice(), ei.as_slice()));
    }
    let weights = softmax(&Vector::from(scores));
    let mut ctx = vec![0.0; first.len()];
    for (w, ei) in weights.as_slice().iter().zip(e) {
        for (c, v) in ctx.iter_mut().zip(ei.as_slice()) {
            *c += w * v;
        }
    }
    Ok((Vector::from(ctx), weights))
}

/// One decoder step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub state: CellState,
    pub probs: Vector,
    pub attention: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub token_ids: Vec<u32>,
    pub per_step_probs: Vec<Vector>,
    pub attention_maps: Vec<Vector>,
}

impl DecodeResult {
    /// Natural-log probability the model gave each emitted token.
    pub fn token_log_probs(&self) -> Vec<f64> {
        self.token_ids
            .iter()
            .zip(&self.per_step_probs)
            .map(|(&t, p)| p[t as usize].ln())
            .collect()
    }
}

/// Encoder hidden states plus the final state handed to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub states: Vec<Vector>,
    pub final_state: CellState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub src_embed: EmbeddingTable,
    pub tgt_embed: EmbeddingTable,
    pub encoder: CellParams,
    pub decoder: CellParams,
    pub attn: AttentionParams,
    /// Output projection, `d_h x |V_tgt|`.
    pub out_w: Matrix,
    pub out_b: Matrix,
}

impl Seq2SeqModel {
    /// Every trainable entry zero (the dot-score identity excepted).
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig {
            cell,
            d,
            d_h,
            src_vocab,
            tgt_vocab,
            score,
        } = config;
        Self {
            config,
            src_embed: EmbeddingTable::zeros(src_vocab, d),
            tgt_embed: EmbeddingTable::zeros(tgt_vocab, d),
            encoder: CellParams::zeros(cell, d, d_h),
            decoder: CellParams::zeros(cell, d + d_h, d_h),
            attn: AttentionParams::new(score, d_h),
            out_w: Matrix::zeros(d_h, tgt_vocab),
            out_b: Matrix::zeros(1, tgt_vocab),
        }
    }

    /// Uniform(-0.1, 0.1) weights, zero biases except the LSTM forget gate,
    /// zero PAD embedding rows.
    pub fn random(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelConfig {
            cell,
            d,
            d_h,
            src_vocab,
            tgt_vocab,
            score,
        } = config;
        let mut src = uniform(src_vocab, d, &mut rng);
        let mut tgt = uniform(tgt_vocab, d, &mut rng);
        for t in [&mut src, &mut tgt] {
            if t.rows() > PAD as usize {
                t.row_mut(PAD as usize).fill(0.0);
            }
        }
        let encoder = CellParams::random(cell, d, d_h, &mut rng);
        let decoder = CellParams::random(cell, d + d_h, d_h, &mut rng);
        let mut attn = AttentionParams::new(score, d_h);
        if score == ScoreKind::General {
            attn.score_w = uniform(d_h, d_h, &mut rng);
        }
        Self {
            config,
            src_embed: EmbeddingTable { table: src },
            tgt_embed: EmbeddingTable { table: tgt },
            encoder,
            decoder,
            attn,
            out_w: uniform(d_h, tgt_vocab, &mut rng),
            out_b: Matrix::zeros(1, tgt_vocab),
        }
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.config.tgt_vocab
    }

    pub fn encode_full(&self, src_ids: &[u32]) -> Result<Encoding> {
        if src_ids.is_empty() {
            return Err(ModelError::EmptySource);
        }
        let mut state = self.encoder.zero_state();
        let mut states = Vec::with_capacity(src_ids.len());
        for &id in src_ids {
            let x = self.src_embed.lookup(id)?;
            state = self.encoder.step(&x, &state)?;
            states.push(state.h.clone());
        }
        Ok(Encoding {
            states,
            final_state: state,
        })
    }

    /// Encoder hidden state after each source token.
    pub fn encode(&self, src_ids: &[u32]) -> Result<Vec<Vector>> {
        Ok(self.encode_full(src_ids)?.states)
    }

    pub fn decode_step(&self, prev: &CellState, prev_token: u32, e: &[Vector]) -> Result<DecodeStep> {
        let (ctx, attention) = attend(&self.attn, &prev.h, e)?;
        let x = self.tgt_embed.lookup(prev_token)?.concat(&ctx);
        let state = self.decoder.step(&x, prev)?;
        let scores = state.h.matmul(&self.out_w)?.add(&Vector::from(self.out_b.data()))?;
        Ok(DecodeStep {
            state,
            probs: softmax(&scores),
            attention,
        })
    }

    /// Argmax decoding from BOS until EOS or `max_len` emitted tokens.
    /// The EOS, when reached, is part of the output.
    pub fn greedy_decode(&self, src_ids: &[u32], max_len: usize) -> Result<DecodeResult> {
        if max_len == 0 {
            return Err(ModelError::InvalidMaxLen);
        }
        let enc = self.encode_full(src_ids)?;
        let mut state = enc.final_state;
        let mut prev = BOS;
        let mut out = DecodeResult {
            token_ids: Vec::new(),
            per_step_probs: Vec::new(),
            attention_maps: Vec::new(),
        };
        for _ in 0..max_len {
            let step = self.decode_step(&state, prev, &enc.states)?;
            let next = argmax(step.probs.as_slice()) as u32;
            out.token_ids.push(next);
            out.per_step_probs.push(step.probs);
            out.attention_maps.push(step.attention);
            state = step.state;
            prev = next;
            if next == EOS {
                break;
            }
        }
        Ok(out)
    }

    /// Teacher-forced per-step distributions for `tgt_ids`.
    pub fn teacher_forced(&self, src_ids: &[u32], tgt_ids: &[u32]) -> Result<Vec<DecodeStep>> {
        if tgt_ids.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let enc = self.encode_full(src_ids)?;
        let mut state = enc.final_state;
        let mut prev = BOS;
        let mut steps = Vec::with_capacity(tgt_ids.len());
        for &gold in tgt_ids {
            if gold as usize >= self.tgt_vocab_size() {
                return Err(ModelError::IdOutOfRange {
                    id: gold,
                    size: self.tgt_vocab_size(),
                });
            }
            let step = self.decode_step(&state, prev, &enc.states)?;
            state = step.state.clone();
            steps.push(step);
            prev = gold;
        }
        Ok(steps)
    }

    /// Summed teacher-forced cross-entropy over `tgt_ids` (callers append
    /// EOS) and the number of scored tokens.
    pub fn sequence_loss(&self, src_ids: &[u32], tgt_ids: &[u32]) -> Result<(f64, usize)> {
        let steps = self.teacher_forced(src_ids, tgt_ids)?;
        let mut loss = 0.0;
        for (step, &gold) in steps.iter().zip(tgt_ids) {
            loss += cross_entropy(&step.probs, gold as usize)?;
        }
        Ok((loss, tgt_ids.len()))
    }

    fn validate_ids(&self, src_ids: &[u32], tgt_ids: &[u32]) -> Result<()> {
        if src_ids.is_empty() {
            return Err(ModelError::EmptySource);
        }
        if tgt_ids.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        for &id in src_ids {
            self.src_embed.check(id)?;
        }
        for &id in tgt_ids {
            self.tgt_embed.check(id)?;
        }
        Ok(())
    }

    /// Summed loss, token count and gradients (in [`Parameters`] order) over
    /// a set of `(source, target)` pairs, computed on one tape.
    pub fn loss_and_grad<S, T>(&self, pairs: &[(S, T)]) -> Result<(f64, usize, Vec<Matrix>)>
    where
        S: AsRef<[u32]>,
        T: AsRef<[u32]>,
    {
        for (s, t) in pairs {
            self.validate_ids(s.as_ref(), t.as_ref())?;
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut terms = Vec::new();
        let mut tokens = 0;
        for (s, t) in pairs {
            let t = t.as_ref();
            tokens += t.len();
            bound.sequence_terms(self, &mut tape, s.as_ref(), t, &mut terms);
        }
        if terms.is_empty() {
            let grads = self.param_matrices().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
            return Ok((0.0, 0, grads));
        }
        let loss = tape.sum(&terms);
        let grads = tape.backward(loss);
        Ok((tape.scalar(loss), tokens, grads))
    }

    fn bind(&self, tape: &mut Tape) -> BoundModel {
        let src_embed = tape.param(&self.src_embed.table);
        let tgt_embed = tape.param(&self.tgt_embed.table);
        let encoder = self.encoder.bind(tape);
        let decoder = self.decoder.bind(tape);
        let score_w = match self.attn.kind {
            ScoreKind::General => Some(tape.param(&self.attn.score_w)),
            ScoreKind::Dot => None,
        };
        let out_w = tape.param(&self.out_w);
        let out_b = tape.param(&self.out_b);
        BoundModel {
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            score_w,
            out_w,
            out_b,
        }
    }
}

impl Parameters for Seq2SeqModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(join(prefix, "src_embed"), &self.src_embed.table);
        f(join(prefix, "tgt_embed"), &self.tgt_embed.table);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        if self.attn.kind == ScoreKind::General {
            f(join(prefix, "attn.score_w"), &self.attn.score_w);
        }
        f(join(prefix, "out_w"), &self.out_w);
        f(join(prefix, "out_b"), &self.out_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Matrix)) {
        f(&mut self.src_embed.table);
        f(&mut self.tgt_embed.table);
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
        if self.attn.kind == ScoreKind::General {
            f(&mut self.attn.score_w);
        }
        f(&mut self.out_w);
        f(&mut self.out_b);
    }
}

struct BoundModel {
    src_embed: Var,
    tgt_embed: Var,
    encoder: BoundCell,
    decoder: BoundCell,
    score_w: Option<Var>,
    out_w: Var,
    out_b: Var,
}

impl BoundModel {
    fn embed(tape: &mut Tape, table: Var, id: u32) -> Var {
        if id == PAD {
            let d = tape.value(table).cols();
            tape.constant(Matrix::zeros(1, d))
        } else {
            tape.gather(table, id as usize)
        }
    }

    fn zero_state(model: &Seq2SeqModel, tape: &mut Tape) -> TapeState {
        let d_h = model.config.d_h;
        TapeState {
            h: tape.constant(Matrix::zeros(1, d_h)),
            c: (model.config.cell == CellType::Lstm).then(|| tape.constant(Matrix::zeros(1, d_h))),
        }
    }

    /// Records one sentence and pushes its per-token loss nodes.
    fn sequence_terms(&self, model: &Seq2SeqModel, tape: &mut Tape, src: &[u32], tgt: &[u32], terms: &mut Vec<Var>) {
        let mut state = Self::zero_state(model, tape);
        let mut e = Vec::with_capacity(src.len());
        for &id in src {
            let x = Self::embed(tape, self.src_embed, id);
            state = self.encoder.step(tape, x, state);
            e.push(state.h);
        }
        let memory = tape.stack_rows(&e);
        let mut prev = BOS;
        for &gold in tgt {
            let query = match self.score_w {
                Some(w) => tape.matmul(state.h, w),
                None => state.h,
            };
            let scores = tape.matmul_t(query, memory);
            let weights = tape.softmax(scores);
            let ctx = tape.matmul(weights, memory);
            let emb = Self::embed(tape, self.tgt_embed, prev);
            let x = tape.concat(emb, ctx);
            state = self.decoder.step(tape, x, state);
            let proj = tape.matmul(state.h, self.out_w);
            let logits = tape.add(proj, self.out_b);
            let probs = tape.softmax(logits);
            terms.push(tape.neg_log_pick(probs, gold as usize));
            prev = gold;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_relative_error, sigmoid_scalar};
    use rand::Rng;

    fn cfg(cell: CellType, d: usize, d_h: usize, v: usize) -> ModelConfig {
        ModelConfig {
            cell,
            d,
            d_h,
            src_vocab: v,
            tgt_vocab: v,
            score: ScoreKind::General,
        }
    }

    /// Pushes every parameter away from the small init so the check is not
    /// done in the near-linear regime.
    fn scrambled(config: ModelConfig, seed: u64) -> Seq2SeqModel {
        let mut m = Seq2SeqModel::random(config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        m.visit_mut(&mut |mat| {
            for v in mat.data_mut() {
                *v = rng.random_range(-0.6..0.6);
            }
        });
        m.src_embed.table.row_mut(0).fill(0.0);
        m.tgt_embed.table.row_mut(0).fill(0.0);
        m
    }

    #[test]
    fn pad_embeds_to_zero() {
        let m = scrambled(cfg(CellType::Lstm, 3, 4, 6), 1);
        assert_eq!(m.src_embed.lookup(PAD).unwrap(), Vector::zeros(3));
        assert!(matches!(m.src_embed.lookup(6), Err(ModelError::IdOutOfRange { id: 6, size: 6 })));
        let r = Seq2SeqModel::random(cfg(CellType::Gru, 3, 4, 6), 2);
        assert!(r.tgt_embed.table.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_single_and_zero() {
        let m = scrambled(cfg(CellType::Gru, 3, 4, 6), 3);
        let e = m.encode(&[5]).unwrap();
        let expected = m.encoder.step(&m.src_embed.lookup(5).unwrap(), &m.encoder.zero_state()).unwrap();
        assert_eq!(e, vec![expected.h]);
        assert_eq!(m.encode(&[]).unwrap_err(), ModelError::EmptySource);

        let z = Seq2SeqModel::zeros(cfg(CellType::Lstm, 3, 4, 6));
        assert!(z.encode(&[4, 5, 1]).unwrap().iter().all(|e| *e == Vector::zeros(4)));
    }

    #[test]
    fn encode_matches_scalar_expansion() {
        // d = d_h = 2 LSTM, expanded coordinate by coordinate
        let m = scrambled(cfg(CellType::Lstm, 2, 2, 5), 11);
        let CellParams::Lstm(p) = &m.encoder else { unreachable!() };
        let ids = [4u32, 2, 3];
        let (mut h, mut c) = ([0.0f64; 2], [0.0f64; 2]);
        let mut expected = Vec::new();
        for &id in &ids {
            let x = [m.src_embed.table.get(id as usize, 0), m.src_embed.table.get(id as usize, 1)];
            let pre = |u: &Matrix, w: &Matrix, b: &Matrix, j: usize| {
                x[0] * u.get(0, j) + x[1] * u.get(1, j) + h[0] * w.get(0, j) + h[1] * w.get(1, j) + b.get(0, j)
            };
            let mut nh = [0.0; 2];
            let mut nc = [0.0; 2];
            for j in 0..2 {
                let i = sigmoid_scalar(pre(&p.u_i, &p.w_i, &p.b_i, j));
                let f = sigmoid_scalar(pre(&p.u_f, &p.w_f, &p.b_f, j));
                let o = sigmoid_scalar(pre(&p.u_o, &p.w_o, &p.b_o, j));
                let g = pre(&p.u_c, &p.w_c, &p.b_c, j).tanh();
                nc[j] = f * c[j] + i * g;
                nh[j] = o * nc[j].tanh();
            }
            h = nh;
            c = nc;
            expected.push(h);
        }
        let e = m.encode(&ids).unwrap();
        for (got, want) in e.iter().zip(&expected) {
            for j in 0..2 {
                assert!((got[j] - want[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn attend_singleton_and_uniform() {
        let attn = AttentionParams {
            kind: ScoreKind::General,
            score_w: Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5]]),
        };
        let e0 = Vector::from(vec![0.4, -0.2]);
        let (ctx, w) = attend(&attn, &Vector::from(vec![1.0, 2.0]), std::slice::from_ref(&e0)).unwrap();
        assert_eq!(w, Vector::from(vec![1.0]));
        assert_eq!(ctx, e0);

        let same = vec![e0.clone(); 4];
        let (ctx, w) = attend(&attn, &Vector::from(vec![0.7, -0.1]), &same).unwrap();
        for &x in w.as_slice() {
            assert!((x - 0.25).abs() < 1e-15);
        }
        for j in 0..2 {
            assert!((ctx[j] - e0[j]).abs() < 1e-15);
        }
        assert!(attend(&attn, &Vector::zeros(2), &[]).is_err());
        assert!(attend(&attn, &Vector::zeros(2), &[Vector::zeros(3)]).is_err());
    }

    #[test]
    fn attend_closed_form() {
        let attn = AttentionParams::new(ScoreKind::Dot, 2);
        let e = vec![Vector::from(vec![5.0, 0.0]), Vector::from(vec![0.0, 5.0])];
        let (ctx, w) = attend(&attn, &Vector::from(vec![1.0, 0.0]), &e).unwrap();
        let z = 5f64.exp() + 1.0;
        assert!((w[0] - 5f64.exp() / z).abs() < 1e-15);
        assert!((w[1] - 1.0 / z).abs() < 1e-15);
        assert!((w[0] - 0.9933).abs() < 1e-4);
        assert!((ctx[0] - 5.0 * w[0]).abs() < 1e-14);
    }

    #[test]
    fn decode_step_closed_forms() {
        let z = Seq2SeqModel::zeros(cfg(CellType::Lstm, 3, 4, 7));
        let e = z.encode(&[4, 5]).unwrap();
        let step = z.decode_step(&z.decoder.zero_state(), BOS, &e).unwrap();
        assert!(step.probs.as_slice().iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-15));

        let mut two = Seq2SeqModel::zeros(ModelConfig {
            tgt_vocab: 2,
            ..cfg(CellType::Gru, 3, 4, 7)
        });
        two.out_b.data_mut()[1] = 3f64.ln();
        let e = two.encode(&[4]).unwrap();
        let step = two.decode_step(&two.decoder.zero_state(), 0, &e).unwrap();
        assert!((step.probs[0] - 0.25).abs() < 1e-15);
        assert!((step.probs[1] - 0.75).abs() < 1e-15);
        assert!(matches!(
            two.decode_step(&two.decoder.zero_state(), 2, &e),
            Err(ModelError::IdOutOfRange { id: 2, size: 2 })
        ));
    }

    #[test]
    fn greedy_decode_stops_and_caps() {
        let mut m = Seq2SeqModel::zeros(cfg(CellType::Lstm, 3, 4, 8));
        m.out_b.data_mut()[EOS as usize] = 50.0;
        let r = m.greedy_decode(&[4, 5], 10).unwrap();
        assert_eq!(r.token_ids, vec![EOS]);

        let mut m = Seq2SeqModel::zeros(cfg(CellType::Gru, 3, 4, 8));
        m.out_b.data_mut()[6] = 5.0;
        let r = m.greedy_decode(&[4, 5], 3).unwrap();
        assert_eq!(r.token_ids, vec![6, 6, 6]);
        assert_eq!(r.attention_maps.len(), 3);
        assert!(r.attention_maps.iter().all(|a| a.len() == 2));
        assert_eq!(m.greedy_decode(&[4], 0).unwrap_err(), ModelError::InvalidMaxLen);
        assert_eq!(m.greedy_decode(&[], 3).unwrap_err(), ModelError::EmptySource);
    }

    #[test]
    fn zero_model_ties_go_to_lowest_id() {
        let m = Seq2SeqModel::zeros(cfg(CellType::Lstm, 3, 4, 8));
        assert_eq!(m.greedy_decode(&[5], 2).unwrap().token_ids, vec![0, 0]);
    }

    #[test]
    fn zero_model_loss_is_uniform() {
        for cell in [CellType::Lstm, CellType::Gru] {
            let m = Seq2SeqModel::zeros(ModelConfig {
                tgt_vocab: 4,
                ..cfg(cell, 3, 4, 9)
            });
            let (loss, n) = m.sequence_loss(&[5, 6, 7], &[3, EOS]).unwrap();
            assert_eq!(n, 2);
            assert!((loss - 2.0 * 4f64.ln()).abs() < 1e-10);
        }
        let m = Seq2SeqModel::zeros(cfg(CellType::Lstm, 3, 4, 9));
        assert_eq!(m.sequence_loss(&[5], &[]).unwrap_err(), ModelError::EmptyTarget);
        assert_eq!(m.sequence_loss(&[], &[5]).unwrap_err(), ModelError::EmptySource);
    }

    #[test]
    fn confident_model_has_near_zero_loss() {
        // out_b alone decides; gold is always the favoured token
        let mut m = Seq2SeqModel::zeros(cfg(CellType::Gru, 3, 4, 9));
        m.out_b.data_mut()[7] = 60.0;
        let (loss, _) = m.sequence_loss(&[4], &[7, 7, 7]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn tape_and_value_routes_agree() {
        for cell in [CellType::Lstm, CellType::Gru] {
            let m = scrambled(cfg(cell, 3, 5, 9), 21);
            let pairs = [(vec![4u32, 5, 6], vec![7u32, 8, EOS]), (vec![8u32], vec![4u32, EOS])];
            let (tape_loss, tokens, _) = m.loss_and_grad(&pairs).unwrap();
            let value_loss: f64 = pairs.iter().map(|(s, t)| m.sequence_loss(s, t).unwrap().0).sum();
            assert_eq!(tokens, 5);
            assert!((tape_loss - value_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        for (cell, score) in [
            (CellType::Lstm, ScoreKind::General),
            (CellType::Gru, ScoreKind::General),
            (CellType::Lstm, ScoreKind::Dot),
        ] {
            let config = ModelConfig {
                score,
                ..cfg(cell, 3, 4, 8)
            };
            let m = scrambled(config, 5);
            let pairs = [(vec![4u32, 0, 6], vec![7u32, 5, EOS])];
            let (_, _, analytic) = m.loss_and_grad(&pairs).unwrap();
            let numeric = finite_diff_grad(
                |ps| {
                    let mut mm = m.clone();
                    mm.load_matrices(ps);
                    mm.sequence_loss(&pairs[0].0, &pairs[0].1).unwrap().0
                },
                &m.param_matrices(),
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-5, "{cell}/{score:?}: {err}");
        }
    }

    #[test]
    fn parameter_layout() {
        let m = Seq2SeqModel::random(cfg(CellType::Lstm, 3, 4, 6), 0);
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "src_embed");
        assert!(names.contains(&"decoder.u_i".to_string()));
        assert_eq!(m.decoder.d_in(), 3 + 4);
        assert_eq!(m.out_w.shape(), (4, 6));
        let dot = Seq2SeqModel::random(ModelConfig { score: ScoreKind::Dot, ..cfg(CellType::Lstm, 3, 4, 6) }, 0);
        assert_eq!(m.param_count() - dot.param_count(), 16);
    }
}
