//! Binary checkpoint files.
//!
//! Layout: the four bytes `ANMT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the UTF-8 JSON header, then every
//! tensor as raw little-endian `f64` values in manifest order. Manifest
//! offsets count bytes from the start of the tensor section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Vocabulary, RESERVED_TOKENS};
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::params::Parameters;
use crate::tensor::Matrix;
use crate::trainer::{AdamState, EpochMetrics, TrainConfig, TrainState};

pub const MAGIC: &[u8; 4] = b"ANMT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint file is truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// A training state plus the vocabularies that give its ids meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl VocabHeader {
    fn from_vocab(v: &Vocabulary) -> Self {
        Self {
            tokens: v.tokens().to_vec(),
            counts: (0..v.len() as u32).map(|i| v.count_of(i).unwrap_or(0)).collect(),
        }
    }

    fn into_vocab(self) -> Result<Vocabulary> {
        let bad = |m: &str| CheckpointError::Header(m.to_string());
        if self.tokens.len() != self.counts.len() {
            return Err(bad("vocabulary tokens and counts differ in length"));
        }
        if self.tokens.len() < RESERVED_TOKENS.len() || self.tokens.iter().zip(RESERVED_TOKENS).any(|(t, r)| t != r) {
            return Err(bad("vocabulary reserved tokens missing"));
        }
        let n = RESERVED_TOKENS.len();
        let v = Vocabulary::from_tokens(self.tokens[n..].iter().cloned().zip(self.counts[n..].iter().copied()));
        if v.len() != self.tokens.len() {
            return Err(bad("vocabulary has duplicate tokens"));
        }
        Ok(v)
    }
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    model_config: ModelConfig,
    src_vocab: VocabHeader,
    tgt_vocab: VocabHeader,
    samples_seen: u64,
    epochs_done: usize,
    metrics: Vec<EpochMetrics>,
    epoch_losses: Vec<f64>,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

fn tensor_list(ckpt: &Checkpoint) -> Vec<(String, &Matrix)> {
    let params = ckpt.state.model.named_params();
    let mut out: Vec<(String, &Matrix)> = params.iter().map(|(n, m)| (n.clone(), *m)).collect();
    for (kind, list) in [("m", &ckpt.state.adam.m), ("v", &ckpt.state.adam.v)] {
        for ((n, _), m) in params.iter().zip(list) {
            out.push((format!("adam.{kind}.{n}"), m));
        }
    }
    out
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let tensors = tensor_list(ckpt);
    let mut offset = 0u64;
    let manifest = tensors
        .iter()
        .map(|(name, m)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: [m.rows(), m.cols()],
                offset,
            };
            offset += 8 * m.len() as u64;
            e
        })
        .collect();
    let st = &ckpt.state;
    let header = Header {
        train_config: st.config.clone(),
        model_config: st.model.config,
        src_vocab: VocabHeader::from_vocab(&ckpt.src_vocab),
        tgt_vocab: VocabHeader::from_vocab(&ckpt.tgt_vocab),
        samples_seen: st.samples_seen,
        epochs_done: st.epochs_done,
        metrics: st.metrics.clone(),
        epoch_losses: st.epoch_losses.clone(),
        adam: AdamHeader {
            beta1: st.adam.beta1,
            beta2: st.adam.beta2,
            eps: st.adam.eps,
            t: st.adam.t,
        },
        tensors: manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m) in &tensors {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
        _ => CheckpointError::Io(e),
    })
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic).map_err(|e| match e {
        CheckpointError::Truncated => CheckpointError::BadMagic,
        e => e,
    })?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| CheckpointError::Truncated)?;
    let mut json = Vec::new();
    r.by_ref().take(len as u64).read_to_end(&mut json)?;
    if json.len() != len {
        return Err(CheckpointError::Truncated);
    }
    let header: Header = serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;

    let mut model = Seq2SeqModel::zeros(header.model_config);
    let names: Vec<(String, (usize, usize))> =
        model.named_params().into_iter().map(|(n, m)| (n, m.shape())).collect();
    let expected: Vec<(String, (usize, usize))> = names
        .iter()
        .cloned()
        .chain(["m", "v"].iter().flat_map(|k| names.iter().map(move |(n, s)| (format!("adam.{k}.{n}"), *s))))
        .collect();
    if header.tensors.len() != expected.len() {
        return Err(CheckpointError::Manifest(format!(
            "{} tensors listed, model needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut mats = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || (entry.shape[0], entry.shape[1]) != *shape {
            return Err(CheckpointError::Manifest(format!(
                "expected {name} {shape:?}, found {} {:?}",
                entry.name, entry.shape
            )));
        }
        let start = usize::try_from(entry.offset).map_err(|_| CheckpointError::Truncated)?;
        let n = shape.0 * shape.1;
        let bytes = blob.get(start..start + 8 * n).ok_or(CheckpointError::Truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        mats.push(Matrix::from_vec(shape.0, shape.1, data).expect("shape checked"));
    }
    let k = names.len();
    model.load_matrices(&mats[..k]);
    let adam = AdamState {
        beta1: header.adam.beta1,
        beta2: header.adam.beta2,
        eps: header.adam.eps,
        t: header.adam.t,
        m: mats[k..2 * k].to_vec(),
        v: mats[2 * k..].to_vec(),
    };
    let src_vocab = header.src_vocab.into_vocab()?;
    let tgt_vocab = header.tgt_vocab.into_vocab()?;
    if src_vocab.len() != header.model_config.src_vocab || tgt_vocab.len() != header.model_config.tgt_vocab {
        return Err(CheckpointError::Header("vocabulary size does not match model".into()));
    }
    Ok(Checkpoint {
        state: TrainState {
            config: header.train_config,
            model,
            adam,
            samples_seen: header.samples_seen,
            epochs_done: header.epochs_done,
            metrics: header.metrics,
            epoch_losses: header.epoch_losses,
        },
        src_vocab,
        tgt_vocab,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellType;
    use crate::trainer::{resume, train, validate, EncodedPair};

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n - 4).map(|i| (format!("w{i}"), (n - i) as u64)))
    }

    fn trained(cell: CellType) -> Checkpoint {
        let config = TrainConfig {
            cell,
            d: 4,
            d_h: 6,
            epochs: 2,
            train_batch: 2,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let pairs: Vec<_> = (0..5u32).map(|i| EncodedPair::new(vec![4 + i, 5], vec![6 + i % 2, 4])).collect();
        let state = train(&config, &pairs, &pairs, 10, 9, &mut |_, _| Ok(())).unwrap();
        Checkpoint {
            state,
            src_vocab: vocab(10),
            tgt_vocab: vocab(9),
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(c, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for cell in [CellType::Lstm, CellType::Gru] {
            let c = trained(cell);
            let buf = bytes(&c);
            assert_eq!(&buf[..4], b"ANMT");
            assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), FORMAT_VERSION);
            let back = read_checkpoint(&buf[..]).unwrap();
            assert_eq!(back, c);
            assert_eq!(bytes(&back), buf);

            let pairs = vec![EncodedPair::new(vec![4, 7], vec![6])];
            let a = validate(&c.state.model, &pairs, 40, 5, 1).unwrap();
            let b = validate(&back.state.model, &pairs, 40, 5, 1).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_damage() {
        let buf = bytes(&trained(CellType::Gru));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(CheckpointError::BadMagic)));
        assert!(matches!(read_checkpoint(&b"AN"[..]), Err(CheckpointError::BadMagic)));

        let mut bad = buf.clone();
        bad[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(&bad[..]),
            Err(CheckpointError::UnsupportedVersion { found: 7, expected: 1 })
        ));

        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(CheckpointError::Truncated)));
        assert!(matches!(read_checkpoint(&buf[..20]), Err(CheckpointError::Truncated)));

        let mut bad = buf.clone();
        bad[16] = b'#';
        assert!(matches!(read_checkpoint(&bad[..]), Err(CheckpointError::Header(_))));
    }

    #[test]
    fn resume_from_saved_state_matches_uninterrupted_run() {
        let config = TrainConfig {
            cell: CellType::Gru,
            d: 4,
            d_h: 6,
            epochs: 3,
            train_batch: 2,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let pairs: Vec<_> = (0..5u32).map(|i| EncodedPair::new(vec![4 + i, 5], vec![6 + i % 2, 4])).collect();
        let full = train(&config, &pairs, &pairs, 10, 9, &mut |_, _| Ok(())).unwrap();

        let first = TrainConfig { epochs: 1, ..config.clone() };
        let part = train(&first, &pairs, &pairs, 10, 9, &mut |_, _| Ok(())).unwrap();
        let saved = bytes(&Checkpoint {
            state: part,
            src_vocab: vocab(10),
            tgt_vocab: vocab(9),
        });
        let mut state = read_checkpoint(&saved[..]).unwrap().state;
        state.config.epochs = 3;
        resume(&mut state, &pairs, &pairs, &mut |_, _| Ok(())).unwrap();
        assert_eq!(state, full);
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.anmt");
        let c = trained(CellType::Lstm);
        save(&path, &c).unwrap();
        assert_eq!(load(&path).unwrap(), c);
        assert!(matches!(load(&dir.path().join("missing")), Err(CheckpointError::Io(_))));
    }
}
