use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{CorpusError, Result, SentencePair};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Dense token/id bijection with four reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            tokens,
            counts: vec![0; RESERVED_TOKENS.len()],
            index,
        }
    }

    /// Appends corpus tokens in the given order; reserved spellings and
    /// duplicates are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut v = Self::reserved_only();
        for (tok, count) in tokens {
            let tok = tok.into();
            if v.index.contains_key(&tok) {
                continue;
            }
            v.index.insert(tok.clone(), v.tokens.len() as u32);
            v.tokens.push(tok);
            v.counts.push(count);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id_of(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count_of(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    /// Tokens for `ids`, dropping PAD/BOS/EOS and stopping at the first EOS.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token_of(id).unwrap_or(RESERVED_TOKENS[UNK as usize]).to_string())
            .collect()
    }

    /// `id<TAB>token<TAB>count` per line.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{i}\t{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| CorpusError::BadVocabulary(m);
        let mut entries = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, tok, count] = fields[..] else {
                return Err(bad(format!("line {}: expected 3 fields", n + 1)));
            };
            let id: usize = id.parse().map_err(|_| bad(format!("line {}: bad id", n + 1)))?;
            let count: u64 = count.parse().map_err(|_| bad(format!("line {}: bad count", n + 1)))?;
            if id != entries.len() {
                return Err(bad(format!("line {}: ids must be dense, expected {}", n + 1, entries.len())));
            }
            entries.push((tok.to_string(), count));
        }
        if entries.len() < RESERVED_TOKENS.len()
            || entries.iter().zip(RESERVED_TOKENS).any(|((t, _), r)| t != r)
        {
            return Err(bad("reserved tokens missing or out of place".into()));
        }
        let v = Self::from_tokens(entries.iter().skip(RESERVED_TOKENS.len()).cloned());
        if v.len() != entries.len() {
            return Err(bad("duplicate token".into()));
        }
        Ok(v)
    }
}

/// Tokens seen at least `min_count` times get ids from 4 upward, most
/// frequent first, ties broken lexicographically.
pub fn build_vocab(pairs: &[SentencePair], side: Side, min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(CorpusError::InvalidMinCount);
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for p in pairs {
        let toks = match side {
            Side::Source => &p.source_tokens,
            Side::Target => &p.target_tokens,
        };
        for t in toks {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(t, c)| c >= min_count && !RESERVED_TOKENS.contains(&t))
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(kept))
}

#[cfg(test)]
mod tests {
    use super::super::Origin;
    use super::*;
    use proptest::prelude::*;

    fn pair(src: &[&str]) -> SentencePair {
        SentencePair {
            source_tokens: src.iter().map(|s| s.to_string()).collect(),
            target_tokens: vec!["t".into()],
            origin: Origin {
                chapter: 1,
                verse: 1,
                index: 0,
            },
        }
    }

    #[test]
    fn min_count_prunes() {
        let pairs = vec![pair(&["a", "b", "a"]), pair(&["a"])];
        let v = build_vocab(&pairs, Side::Source, 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.id_of("b"), UNK);
    }

    #[test]
    fn empty_gives_reserved_only() {
        let v = build_vocab(&[], Side::Target, 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.tokens(), &RESERVED_TOKENS.map(String::from));
    }

    #[test]
    fn ties_break_lexicographically() {
        let pairs = vec![pair(&["b", "a", "c", "a", "b"])];
        let v = build_vocab(&pairs, Side::Source, 1).unwrap();
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.get("b"), Some(5));
        assert_eq!(v.get("c"), Some(6));
    }

    #[test]
    fn reserved_spellings_do_not_collide() {
        let pairs = vec![pair(&["<unk>", "<s>", "x"])];
        let v = build_vocab(&pairs, Side::Source, 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.get("<unk>"), Some(UNK));
        assert!(matches!(build_vocab(&pairs, Side::Source, 0), Err(CorpusError::InvalidMinCount)));
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocabulary::from_tokens([("x", 1), ("y", 1)]);
        assert_eq!(v.decode(&[BOS, 4, PAD, 5, EOS, 4]), vec!["x", "y"]);
    }

    #[test]
    fn tsv_round_trip_and_errors() {
        let v = Vocabulary::from_tokens([("ሰላም", 3), ("سلام", 2)]);
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("0\t<pad>\t0\n1\t<s>\t0\n2\t</s>\t0\n3\t<unk>\t0\n4\tሰላም\t3\n"));
        assert_eq!(Vocabulary::read_tsv(&buf[..]).unwrap(), v);
        assert!(Vocabulary::read_tsv(&b"0\t<pad>\t0\n"[..]).is_err());
        assert!(Vocabulary::read_tsv(&b"0\t<pad>\t0\n2\t<s>\t0\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn ids_and_tokens_are_inverse(words in prop::collection::vec("[a-z]{1,4}", 0..40)) {
            let pairs = vec![pair(&words.iter().map(String::as_str).collect::<Vec<_>>())];
            let v = build_vocab(&pairs, Side::Source, 1).unwrap();
            for id in 0..v.len() as u32 {
                prop_assert_eq!(v.get(v.token_of(id).unwrap()), Some(id));
            }
            for w in &words {
                prop_assert_eq!(v.token_of(v.id_of(w)), Some(w.as_str()));
            }
        }
    }
}
