//! Verse-structured input and the opening-formula (basmala) alignment rule.
//!
//! The Arabic side carries the basmala merged into verse 1 of every chapter
//! except the first, where it is verse 1 by itself. The translated side
//! carries it only in chapter 1. Normalisation splits it off on the Arabic
//! side and copies the chapter-1 translation in front of every chapter where
//! a split happened, so both sides have the same records per chapter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use super::tokenize::is_arabic_diacritic;
use super::{CorpusError, Result, VerseRecord};

pub const ARABIC_BASMALA: &str = "بِسْمِ اللَّهِ الرَّحْمَنِ الرَّحِيمِ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// `chapter|verse|text` per line. Repeated `chapter|verse` keys are
    /// successive sentences of one verse.
    PipeDelimited,
    /// One sentence per line. Records are numbered chapter 1, verse = line
    /// number, so two files align line by line.
    LineAligned,
}

/// Reads records from `raw`. Blank lines are skipped; in pipe-delimited
/// input so are `#` comment lines (Tanzil appends its licence that way).
pub fn parse_tanzil<R: BufRead>(mut raw: R, format: InputFormat) -> Result<Vec<VerseRecord>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        if raw.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| CorpusError::InvalidEncoding { line_no })?;
        let line = line.trim_end_matches(['\n', '\r']).trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine { line_no, reason };
        let record = match format {
            InputFormat::PipeDelimited => {
                if line.starts_with('#') {
                    continue;
                }
                let mut fields = line.splitn(3, '|');
                let (Some(c), Some(v), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
                    return Err(malformed("expected chapter|verse|text".into()));
                };
                let chapter: u32 = c
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("chapter {c:?} is not a number")))?;
                let verse: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("verse {v:?} is not a number")))?;
                VerseRecord::new(chapter, verse, text).map_err(malformed)?
            }
            InputFormat::LineAligned => {
                let verse = u32::try_from(line_no).map_err(|_| malformed("too many lines".into()))?;
                VerseRecord::new(1, verse, line).map_err(malformed)?
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Letters that identify the basmala regardless of vocalisation.
fn skeleton(c: char) -> Option<char> {
    if c.is_whitespace() || is_arabic_diacritic(c) || matches!(c, '\u{0640}' | '\u{06D6}'..='\u{06ED}') {
        return None;
    }
    // alef wasla spells the same letter
    Some(if c == '\u{0671}' { '\u{0627}' } else { c })
}

/// If `text` opens with `basmala` (compared on unvocalised letters and ending
/// on a word boundary), returns `(prefix, rest)` with both trimmed.
pub fn split_basmala_prefix<'a>(text: &'a str, basmala: &str) -> Option<(&'a str, &'a str)> {
    let wanted: Vec<char> = basmala.chars().filter_map(skeleton).collect();
    if wanted.is_empty() {
        return None;
    }
    let mut matched = 0;
    let mut end = text.len();
    for (i, c) in text.char_indices() {
        let Some(s) = skeleton(c) else { continue };
        if matched == wanted.len() {
            end = i;
            break;
        }
        if s != wanted[matched] {
            return None;
        }
        matched += 1;
    }
    if matched < wanted.len() {
        return None;
    }
    let prefix = &text[..end];
    if end < text.len() && !prefix.ends_with(char::is_whitespace) {
        return None;
    }
    Some((prefix.trim(), text[end..].trim()))
}

fn check_sorted(records: &[VerseRecord]) -> Result<()> {
    for w in records.windows(2) {
        if w[1].key() < w[0].key() {
            return Err(CorpusError::Unsorted {
                chapter: w[1].chapter,
                verse: w[1].verse,
            });
        }
    }
    Ok(())
}

fn per_chapter(records: &[VerseRecord]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.chapter).or_insert(0) += 1;
    }
    counts
}

/// [`normalize_basmala_with`] using the standard Arabic formula and the
/// source side's first record of chapter 1 as its translation.
pub fn normalize_basmala(
    source: &[VerseRecord],
    target: &[VerseRecord],
) -> Result<(Vec<VerseRecord>, Vec<VerseRecord>)> {
    let translated = source
        .iter()
        .find(|r| r.chapter == 1 && r.verse == 1)
        .map(|r| r.text.clone());
    normalize_basmala_with(source, target, ARABIC_BASMALA, translated.as_deref())
}

/// Splits `target_basmala` out of the first record of each target chapter
/// (chapter 1 excepted) and inserts `source_basmala` before the first
/// record of the same chapters on the source side. Fails with
/// [`CorpusError::ChapterMismatch`] if the per-chapter record counts still
/// differ afterwards. Idempotent.
pub fn normalize_basmala_with(
    source: &[VerseRecord],
    target: &[VerseRecord],
    target_basmala: &str,
    source_basmala: Option<&str>,
) -> Result<(Vec<VerseRecord>, Vec<VerseRecord>)> {
    check_sorted(source)?;
    check_sorted(target)?;

    let mut split_chapters = BTreeSet::new();
    let mut new_target = Vec::with_capacity(target.len() + 114);
    let mut prev_chapter = None;
    for r in target {
        let first_of_chapter = prev_chapter != Some(r.chapter);
        prev_chapter = Some(r.chapter);
        if first_of_chapter && r.chapter != 1 && r.verse == 1 {
            if let Some((prefix, rest)) = split_basmala_prefix(&r.text, target_basmala) {
                if !rest.is_empty() {
                    split_chapters.insert(r.chapter);
                    new_target.push(VerseRecord {
                        chapter: r.chapter,
                        verse: 1,
                        text: prefix.to_string(),
                    });
                    new_target.push(VerseRecord {
                        chapter: r.chapter,
                        verse: 1,
                        text: rest.to_string(),
                    });
                    continue;
                }
            }
        }
        new_target.push(r.clone());
    }

    let mut new_source = Vec::with_capacity(source.len() + split_chapters.len());
    let mut prev_chapter = None;
    for r in source {
        let first_of_chapter = prev_chapter != Some(r.chapter);
        prev_chapter = Some(r.chapter);
        if first_of_chapter && split_chapters.contains(&r.chapter) {
            if let Some(basmala) = source_basmala {
                if r.text != basmala {
                    new_source.push(VerseRecord {
                        chapter: r.chapter,
                        verse: 1,
                        text: basmala.to_string(),
                    });
                }
            }
        }
        new_source.push(r.clone());
    }

    let src_counts = per_chapter(&new_source);
    let tgt_counts = per_chapter(&new_target);
    let chapters: BTreeSet<u32> = src_counts.keys().chain(tgt_counts.keys()).copied().collect();
    for chapter in chapters {
        let s = src_counts.get(&chapter).copied().unwrap_or(0);
        let t = tgt_counts.get(&chapter).copied().unwrap_or(0);
        if s != t {
            return Err(CorpusError::ChapterMismatch {
                chapter,
                source_count: s,
                target_count: t,
            });
        }
    }
    Ok((new_source, new_target))
}
