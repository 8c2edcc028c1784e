//! Parallel corpus construction: ingest verse-aligned text, normalise the
//! opening formula, tokenise, align sentence pairs, split and build
//! vocabularies.
//!
//! The pipeline is a pure function of the input bytes, the options and the
//! split seed.

mod files;
mod tanzil;
mod tokenize;
mod vocab;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use files::{read_token_lines, write_lines, write_split, write_token_lines};
pub use tanzil::{
    normalize_basmala, normalize_basmala_with, parse_tanzil, split_basmala_prefix, InputFormat,
    ARABIC_BASMALA,
};
pub use tokenize::{is_arabic_diacritic, is_punctuation, strip_punctuation_and_tokenize};
pub use vocab::{build_vocab, Side, Vocabulary, BOS, EOS, PAD, RESERVED_TOKENS, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("invalid UTF-8 on line {line_no}")]
    InvalidEncoding { line_no: usize },
    #[error("alignment mismatch in chapter {chapter}: {source_count} source vs {target_count} target records")]
    ChapterMismatch {
        chapter: u32,
        source_count: usize,
        target_count: usize,
    },
    #[error("alignment mismatch at {chapter}:{verse}: {source_count} source vs {target_count} target sentences")]
    AlignmentMismatch {
        chapter: u32,
        verse: u32,
        source_count: usize,
        target_count: usize,
    },
    #[error("records are not sorted by (chapter, verse) near {chapter}:{verse}")]
    Unsorted { chapter: u32, verse: u32 },
    #[error("sentence {chapter}:{verse}#{index} has no tokens on the {side} side")]
    EmptySentence {
        chapter: u32,
        verse: u32,
        index: usize,
        side: &'static str,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("bad vocabulary file: {0}")]
    BadVocabulary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One verse (or one pre-split sentence of a verse) of one side of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerseRecord {
    pub chapter: u32,
    pub verse: u32,
    pub text: String,
}

impl VerseRecord {
    /// Validates the numbering and NFC-normalises the text.
    pub fn new(chapter: u32, verse: u32, text: &str) -> std::result::Result<Self, String> {
        use unicode_normalization::UnicodeNormalization;
        if chapter == 0 || verse == 0 {
            return Err(format!("chapter and verse must be positive, got {chapter}:{verse}"));
        }
        let text: String = text.trim().nfc().collect();
        if text.is_empty() {
            return Err("empty text".into());
        }
        Ok(Self {
            chapter,
            verse,
            text,
        })
    }

    pub fn key(&self) -> (u32, u32) {
        (self.chapter, self.verse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Origin {
    pub chapter: u32,
    pub verse: u32,
    /// Position of the sentence within its verse.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub origin: Origin,
}

/// Groups consecutive records sharing `(chapter, verse)`.
fn group_by_verse(records: &[VerseRecord]) -> BTreeMap<(u32, u32), Vec<&VerseRecord>> {
    let mut out: BTreeMap<(u32, u32), Vec<&VerseRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.key()).or_default().push(r);
    }
    out
}

/// Pairs the sentences of each verse in order. Both sides must carry the
/// same number of sentences for every verse.
pub fn align_pairs(
    source: &[VerseRecord],
    target: &[VerseRecord],
    keep_diacritics: bool,
) -> Result<Vec<SentencePair>> {
    let src = group_by_verse(source);
    let tgt = group_by_verse(target);
    let mut keys: Vec<(u32, u32)> = src.keys().chain(tgt.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();

    let empty = Vec::new();
    let mut pairs = Vec::new();
    for (chapter, verse) in keys {
        let s = src.get(&(chapter, verse)).unwrap_or(&empty);
        let t = tgt.get(&(chapter, verse)).unwrap_or(&empty);
        if s.len() != t.len() {
            return Err(CorpusError::AlignmentMismatch {
                chapter,
                verse,
                source_count: s.len(),
                target_count: t.len(),
            });
        }
        for (index, (sr, tr)) in s.iter().zip(t).enumerate() {
            let source_tokens = strip_punctuation_and_tokenize(&sr.text, keep_diacritics);
            let target_tokens = strip_punctuation_and_tokenize(&tr.text, keep_diacritics);
            for (side, toks) in [("source", &source_tokens), ("target", &target_tokens)] {
                if toks.is_empty() {
                    return Err(CorpusError::EmptySentence {
                        chapter,
                        verse,
                        index,
                        side,
                    });
                }
            }
            pairs.push(SentencePair {
                source_tokens,
                target_tokens,
                origin: Origin {
                    chapter,
                    verse,
                    index,
                },
            });
        }
    }
    Ok(pairs)
}

/// `round(fraction * n)` with halves rounded up.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64) + 0.5).floor() as usize
}

/// Seeded shuffle, then the first `train_size` shuffled items go to train.
/// Both halves are returned in their original corpus order.
pub fn split_corpus<T: Clone>(pairs: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n_train = train_size(pairs.len(), train_fraction).min(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; pairs.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::new());
    for (p, keep) in pairs.iter().zip(in_train) {
        if keep {
            train.push(p.clone());
        } else {
            test.push(p.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub split_seed: u64,
}

impl ParallelCorpus {
    /// Builds both vocabularies from every pair.
    pub fn build(pairs: Vec<SentencePair>, min_count: u64, split_seed: u64) -> Result<Self> {
        let src_vocab = build_vocab(&pairs, Side::Source, min_count)?;
        let tgt_vocab = build_vocab(&pairs, Side::Target, min_count)?;
        Ok(Self {
            pairs,
            src_vocab,
            tgt_vocab,
            split_seed,
        })
    }

    pub fn split(&self, train_fraction: f64) -> Result<(Vec<SentencePair>, Vec<SentencePair>)> {
        split_corpus(&self.pairs, train_fraction, self.split_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: u32, v: u32, t: &str) -> VerseRecord {
        VerseRecord::new(c, v, t).unwrap()
    }

    #[test]
    fn record_invariants() {
        assert!(VerseRecord::new(0, 1, "x").is_err());
        assert!(VerseRecord::new(1, 0, "x").is_err());
        assert!(VerseRecord::new(1, 1, "   ").is_err());
        // NFC: A + combining ring composes
        assert_eq!(rec(1, 1, "A\u{030A}").text, "\u{00C5}");
    }

    #[test]
    fn verse_2_282_aligns_into_21_pairs() {
        let src: Vec<_> = (0..21).map(|i| rec(2, 282, &format!("ምንጭ{i} ቃል!"))).collect();
        let tgt: Vec<_> = (0..21).map(|i| rec(2, 282, &format!("هدف{i} كلمة،"))).collect();
        let pairs = align_pairs(&src, &tgt, true).unwrap();
        assert_eq!(pairs.len(), 21);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.origin, Origin { chapter: 2, verse: 282, index: i });
            assert_eq!(p.source_tokens, vec![format!("ምንጭ{i}"), "ቃል".to_string()]);
            assert_eq!(p.target_tokens, vec![format!("هدف{i}"), "كلمة".to_string()]);
        }
    }

    #[test]
    fn single_pair() {
        let pairs = align_pairs(&[rec(1, 1, "a b")], &[rec(1, 1, "c")], true).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn mismatch_reports_verse_and_counts() {
        let src = vec![rec(2, 282, "a"), rec(2, 282, "b"), rec(2, 282, "c")];
        let tgt = vec![rec(2, 282, "x"), rec(2, 282, "y")];
        match align_pairs(&src, &tgt, true).unwrap_err() {
            CorpusError::AlignmentMismatch {
                chapter,
                verse,
                source_count,
                target_count,
            } => assert_eq!((chapter, verse, source_count, target_count), (2, 282, 3, 2)),
            e => panic!("unexpected {e}"),
        }
        // verse present on one side only
        assert!(matches!(
            align_pairs(&[rec(1, 1, "a"), rec(1, 2, "b")], &[rec(1, 1, "x")], true),
            Err(CorpusError::AlignmentMismatch { verse: 2, target_count: 0, .. })
        ));
    }

    #[test]
    fn punctuation_only_sentence_is_rejected() {
        let err = align_pairs(&[rec(1, 1, "!!")], &[rec(1, 1, "x")], true).unwrap_err();
        assert!(matches!(err, CorpusError::EmptySentence { side: "source", .. }));
    }

    #[test]
    fn alignment_conserves_counts() {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut expected = 0;
        for v in 1..=30u32 {
            let k = (v % 4 + 1) as usize;
            expected += k;
            for i in 0..k {
                src.push(rec(3, v, &format!("s{v}_{i}")));
                tgt.push(rec(3, v, &format!("t{v}_{i}")));
            }
        }
        assert_eq!(align_pairs(&src, &tgt, true).unwrap().len(), expected);
    }

    #[test]
    fn split_sizes() {
        assert_eq!(train_size(13_501, 0.8), 10_801);
        let items: Vec<u32> = (0..13_501).collect();
        let (train, test) = split_corpus(&items, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (10_801, 2_700));

        let (train, test) = split_corpus(&[42], 0.8, 3).unwrap();
        assert_eq!((train, test), (vec![42], vec![]));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_corpus::<u8>(&[], 0.8, 0), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(split_corpus(&[1], 1.0, 0), Err(CorpusError::InvalidFraction(_))));
        assert!(matches!(split_corpus(&[1], 0.0, 0), Err(CorpusError::InvalidFraction(_))));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let items: Vec<u32> = (0..100).collect();
        let a = split_corpus(&items, 0.8, 7).unwrap();
        let b = split_corpus(&items, 0.8, 7).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(&items, 0.8, 8).unwrap();
        assert_ne!(a.1, c.1);
        let mut all: Vec<u32> = a.0.iter().chain(&a.1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(a.0.iter().all(|x| !a.1.contains(x)));
    }

    #[test]
    fn corpus_build_covers_every_token() {
        let pairs = align_pairs(
            &[rec(1, 1, "a b a"), rec(1, 2, "c")],
            &[rec(1, 1, "x"), rec(1, 2, "y y")],
            true,
        )
        .unwrap();
        let corpus = ParallelCorpus::build(pairs, 1, 5).unwrap();
        for p in &corpus.pairs {
            for t in &p.source_tokens {
                assert_ne!(corpus.src_vocab.id_of(t), UNK);
            }
            for t in &p.target_tokens {
                assert_ne!(corpus.tgt_vocab.id_of(t), UNK);
            }
        }
        let (train, test) = corpus.split(0.5).unwrap();
        assert_eq!(train.len() + test.len(), corpus.pairs.len());
    }
}
