//! Corpus BLEU, perplexity and multi-system comparison tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("system {system}: {candidates} candidates but {references} references")]
    SystemLengthMismatch {
        system: String,
        candidates: usize,
        references: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("log-probability {0} is positive")]
    PositiveLogProb(f64),
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Numerator substituted for a zero match count under epsilon smoothing.
pub const SMOOTHING_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    None,
    #[default]
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::Epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

/// Clipped n-gram counts over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramCounts {
    pub matches: u64,
    pub total: u64,
}

impl NgramCounts {
    pub fn precision(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matches as f64 / self.total as f64
        }
    }
}

fn ngrams<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

fn check_aligned<A, B>(candidates: &[A], references: &[B]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    Ok(())
}

/// Modified precision: each candidate n-gram counts at most as often as it
/// occurs in the paired reference.
pub fn ngram_counts<T, C, R>(candidates: &[C], references: &[R], n: usize) -> Result<NgramCounts>
where
    T: Hash + Eq,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    check_aligned(candidates, references)?;
    if n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    let mut counts = NgramCounts { matches: 0, total: 0 };
    for (c, r) in candidates.iter().zip(references) {
        let cand = ngrams(c.as_ref(), n);
        let refs = ngrams(r.as_ref(), n);
        for (g, &k) in &cand {
            counts.total += k;
            counts.matches += k.min(refs.get(g).copied().unwrap_or(0));
        }
    }
    Ok(counts)
}

pub fn ngram_precision<T, C, R>(candidates: &[C], references: &[R], n: usize) -> Result<f64>
where
    T: Hash + Eq,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    Ok(ngram_counts(candidates, references, n)?.precision())
}

pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len >= reference_len {
        1.0
    } else if candidate_len == 0 {
        0.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// `BP * exp(sum_n w_n ln p_n)` with uniform weights over n = 1..max_n.
pub fn corpus_bleu<T, C, R>(candidates: &[C], references: &[R], config: &BleuConfig) -> Result<BleuReport>
where
    T: Hash + Eq,
    C: AsRef<[T]>,
    R: AsRef<[T]>,
{
    check_aligned(candidates, references)?;
    if candidates.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if config.max_n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    let candidate_len = candidates.iter().map(|c| c.as_ref().len()).sum();
    let reference_len = references.iter().map(|r| r.as_ref().len()).sum();
    let bp = brevity_penalty(candidate_len, reference_len);

    let w = 1.0 / config.max_n as f64;
    let mut precisions = Vec::with_capacity(config.max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 1..=config.max_n {
        let counts = ngram_counts(candidates, references, n)?;
        let p = counts.precision();
        precisions.push(p);
        let effective = if counts.matches > 0 {
            p
        } else {
            match config.smoothing {
                Smoothing::None => {
                    zero = true;
                    continue;
                }
                Smoothing::Epsilon => SMOOTHING_EPSILON / counts.total.max(1) as f64,
            }
        };
        log_sum += w * effective.ln();
    }
    let bleu = if zero { 0.0 } else { bp * log_sum.exp() };
    Ok(BleuReport {
        bleu: bleu.clamp(0.0, 1.0),
        precisions,
        brevity_penalty: bp,
        candidate_len,
        reference_len,
    })
}

/// `exp(-mean(log_probs))` for natural-log token probabilities.
pub fn perplexity(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(&bad) = log_probs.iter().find(|&&lp| lp > 0.0 || lp.is_nan()) {
        return Err(EvalError::PositiveLogProb(bad));
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemScore {
    pub system: String,
    pub report: BleuReport,
}

/// One report per system, best BLEU first; ties keep input order.
pub fn compare_systems<S: AsRef<str>>(
    systems: &[(S, Vec<Vec<String>>)],
    references: &[Vec<String>],
    config: &BleuConfig,
) -> Result<Vec<SystemScore>> {
    let mut out = Vec::with_capacity(systems.len());
    for (name, cands) in systems {
        if cands.len() != references.len() {
            return Err(EvalError::SystemLengthMismatch {
                system: name.as_ref().to_string(),
                candidates: cands.len(),
                references: references.len(),
            });
        }
        out.push(SystemScore {
            system: name.as_ref().to_string(),
            report: corpus_bleu(cands, references, config)?,
        });
    }
    out.sort_by(|a, b| b.report.bleu.total_cmp(&a.report.bleu));
    Ok(out)
}

pub const REPORT_HEADER: &str = "system\tbleu\tp1\tp2\tp3\tp4\tBP\tcand_len\tref_len";

/// Report rows as TSV. Precision columns past `max_n` are left empty.
pub fn report_tsv(scores: &[SystemScore]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for sc in scores {
        let r = &sc.report;
        let _ = write!(s, "{}\t{:.6}", sc.system, r.bleu);
        for n in 0..4 {
            match r.precisions.get(n) {
                Some(p) => {
                    let _ = write!(s, "\t{p:.6}");
                }
                None => s.push('\t'),
            }
        }
        let _ = writeln!(s, "\t{:.6}\t{}\t{}", r.brevity_penalty, r.candidate_len, r.reference_len);
    }
    s
}

/// Bar-chart data: system name and BLEU as a percentage.
pub fn comparison_csv(scores: &[SystemScore]) -> String {
    let mut s = String::from("system,bleu_percent\n");
    for sc in scores {
        let _ = writeln!(s, "{},{:.2}", csv_field(&sc.system), sc.report.bleu * 100.0);
    }
    s
}

fn csv_field(f: &str) -> String {
    if f.contains([',', '"', '\n']) {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_string()
    }
}
