use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Result, SentencePair};

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: impl IntoIterator<Item = S>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        w.write_all(l.as_ref().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes space-joined token lines, one sentence per line, LF endings.
pub fn write_token_lines(path: &Path, sentences: &[Vec<String>]) -> std::io::Result<()> {
    write_lines(path, sentences.iter().map(|s| s.join(" ")))
}

/// Reads a tokenised file back into token lists. Empty lines become empty
/// token lists so line numbers stay aligned.
pub fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        out.push(line?.split_whitespace().map(str::to_owned).collect());
    }
    Ok(out)
}

/// Writes `train.src`, `train.tgt`, `test.src` and `test.tgt` into `dir`.
pub fn write_split(dir: &Path, train: &[SentencePair], test: &[SentencePair]) -> std::io::Result<()> {
    for (name, part) in [("train", train), ("test", test)] {
        let src: Vec<Vec<String>> = part.iter().map(|p| p.source_tokens.clone()).collect();
        let tgt: Vec<Vec<String>> = part.iter().map(|p| p.target_tokens.clone()).collect();
        write_token_lines(&dir.join(format!("{name}.src")), &src)?;
        write_token_lines(&dir.join(format!("{name}.tgt")), &tgt)?;
    }
    Ok(())
}
