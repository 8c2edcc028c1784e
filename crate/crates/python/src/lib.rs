//! Python bindings: tokeniser, scoring functions, models and checkpoints.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use nmt_core::cells::CellType;
use nmt_core::checkpoint::{self, CheckpointError};
use nmt_core::corpus::strip_punctuation_and_tokenize;
use nmt_core::evaluation::{self, BleuConfig, Smoothing};
use nmt_core::model::{ModelConfig, ScoreKind, Seq2SeqModel};
use nmt_core::params::Parameters;
use nmt_core::trainer::{self, EncodedPair, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ckpt_err(e: CheckpointError) -> PyErr {
    match e {
        CheckpointError::Io(io) => PyIOError::new_err(io.to_string()),
        e => value_err(e),
    }
}

/// Strip punctuation (and optionally Arabic diacritics) and split on whitespace.
#[pyfunction]
#[pyo3(signature = (text, keep_diacritics = true))]
fn tokenize(text: &str, keep_diacritics: bool) -> Vec<String> {
    strip_punctuation_and_tokenize(text, keep_diacritics)
}

#[pyclass(frozen, get_all)]
struct BleuReport {
    bleu: f64,
    precisions: Vec<f64>,
    brevity_penalty: f64,
    candidate_len: usize,
    reference_len: usize,
}

#[pymethods]
impl BleuReport {
    fn __repr__(&self) -> String {
        format!(
            "BleuReport(bleu={:.6}, precisions={:?}, brevity_penalty={:.6}, candidate_len={}, reference_len={})",
            self.bleu, self.precisions, self.brevity_penalty, self.candidate_len, self.reference_len
        )
    }
}

fn smoothing(name: &str) -> PyResult<Smoothing> {
    match name {
        "none" => Ok(Smoothing::None),
        "epsilon" => Ok(Smoothing::Epsilon),
        other => Err(value_err(format!("unknown smoothing {other:?}; use 'none' or 'epsilon'"))),
    }
}

/// Corpus BLEU over token lists, one reference per candidate.
#[pyfunction]
#[pyo3(signature = (candidates, references, max_n = 4, smoothing = "epsilon"))]
fn corpus_bleu(
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    max_n: usize,
    smoothing: &str,
) -> PyResult<BleuReport> {
    let config = BleuConfig {
        max_n,
        smoothing: self::smoothing(smoothing)?,
    };
    let r = evaluation::corpus_bleu(&candidates, &references, &config).map_err(value_err)?;
    Ok(BleuReport {
        bleu: r.bleu,
        precisions: r.precisions,
        brevity_penalty: r.brevity_penalty,
        candidate_len: r.candidate_len,
        reference_len: r.reference_len,
    })
}

#[pyfunction]
fn ngram_precision(candidates: Vec<Vec<String>>, references: Vec<Vec<String>>, n: usize) -> PyResult<f64> {
    evaluation::ngram_precision(&candidates, &references, n).map_err(value_err)
}

#[pyfunction]
fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    evaluation::brevity_penalty(candidate_len, reference_len)
}

/// `exp(-mean(log_probs))` for natural-log token probabilities.
#[pyfunction]
fn perplexity(log_probs: Vec<f64>) -> PyResult<f64> {
    evaluation::perplexity(&log_probs).map_err(value_err)
}

fn cell_type(name: &str) -> PyResult<CellType> {
    name.parse().map_err(|_| value_err(format!("unknown cell {name:?}; use 'lstm' or 'gru'")))
}

/// Attention encoder-decoder over token ids.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Seq2SeqModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (src_vocab, tgt_vocab, cell = "lstm", d = 128, d_h = 128, seed = 1, dot_score = false))]
    fn new(src_vocab: usize, tgt_vocab: usize, cell: &str, d: usize, d_h: usize, seed: u64, dot_score: bool) -> PyResult<Self> {
        let config = ModelConfig {
            cell: cell_type(cell)?,
            d,
            d_h,
            src_vocab,
            tgt_vocab,
            score: if dot_score { ScoreKind::Dot } else { ScoreKind::General },
        };
        Ok(Self {
            inner: Seq2SeqModel::random(config, seed),
        })
    }

    #[getter]
    fn cell(&self) -> String {
        self.inner.config.cell.to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Emitted ids (EOS included when reached) and per-step attention weights.
    #[pyo3(signature = (src_ids, max_len = 44))]
    fn greedy_decode(&self, py: Python<'_>, src_ids: Vec<u32>, max_len: usize) -> PyResult<(Vec<u32>, Vec<Vec<f64>>)> {
        let r = py
            .detach(|| self.inner.greedy_decode(&src_ids, max_len))
            .map_err(value_err)?;
        let attn = r.attention_maps.into_iter().map(|a| a.into_vec()).collect();
        Ok((r.token_ids, attn))
    }

    /// Teacher-forced loss in nats and the number of scored tokens.
    fn sequence_loss(&self, src_ids: Vec<u32>, tgt_ids: Vec<u32>) -> PyResult<(f64, usize)> {
        self.inner.sequence_loss(&src_ids, &tgt_ids).map_err(value_err)
    }

    /// Trains on `(src_ids, tgt_ids)` pairs (targets without EOS) and keeps
    /// the result. Returns the mean training loss per epoch.
    #[pyo3(signature = (pairs, epochs = 10, batch = 80, lr = 0.001, seed = 1))]
    fn fit(&mut self, py: Python<'_>, pairs: Vec<(Vec<u32>, Vec<u32>)>, epochs: usize, batch: usize, lr: f64, seed: u64) -> PyResult<Vec<f64>> {
        let cfg = self.inner.config;
        let config = TrainConfig {
            cell: cfg.cell,
            d: cfg.d,
            d_h: cfg.d_h,
            score: cfg.score,
            epochs,
            train_batch: batch,
            lr,
            seed,
            ..TrainConfig::default()
        };
        let pairs: Vec<EncodedPair> = pairs.into_iter().map(|(s, t)| EncodedPair::new(s, t)).collect();
        let model = self.inner.clone();
        let state = py
            .detach(|| -> Result<_, trainer::TrainError> {
                let mut state = trainer::TrainState::new(config, cfg.src_vocab, cfg.tgt_vocab)?;
                state.model = model;
                trainer::resume(&mut state, &pairs, &pairs, &mut |_, _| Ok(()))?;
                Ok(state)
            })
            .map_err(value_err)?;
        self.inner = state.model;
        Ok(state.epoch_losses)
    }
}

/// A trained checkpoint with its vocabularies.
#[pyclass]
struct Translator {
    ckpt: checkpoint::Checkpoint,
}

#[pymethods]
impl Translator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ckpt: checkpoint::load(&path).map_err(ckpt_err)?,
        })
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.ckpt.state.epochs_done
    }

    /// Greedy translation of one raw sentence.
    #[pyo3(signature = (text, max_len = 44, keep_diacritics = true))]
    fn translate(&self, text: &str, max_len: usize, keep_diacritics: bool) -> PyResult<String> {
        let toks = strip_punctuation_and_tokenize(text, keep_diacritics);
        if toks.is_empty() {
            return Ok(String::new());
        }
        let ids = self.ckpt.src_vocab.encode(&toks);
        let out = self.ckpt.state.model.greedy_decode(&ids, max_len).map_err(value_err)?;
        Ok(self.ckpt.tgt_vocab.decode(&out.token_ids).join(" "))
    }

    fn model(&self) -> PyModel {
        PyModel {
            inner: self.ckpt.state.model.clone(),
        }
    }
}

#[pymodule]
fn nmt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_precision, m)?)?;
    m.add_function(wrap_pyfunction!(brevity_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(perplexity, m)?)?;
    m.add_class::<BleuReport>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<Translator>()?;
    m.add("PAD", nmt_core::corpus::PAD)?;
    m.add("BOS", nmt_core::corpus::BOS)?;
    m.add("EOS", nmt_core::corpus::EOS)?;
    m.add("UNK", nmt_core::corpus::UNK)?;
    Ok(())
}
